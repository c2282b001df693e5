#pragma once

// Umbrella header.

#include "tdp/bellman.hpp"
#include "tdp/funcs.hpp"
#include "tdp/model.hpp"
#include "tdp/oracle.hpp"
#include "tdp/polyhedron.hpp"
#include "tdp/pomdp.hpp"
#include "tdp/sampling.hpp"
#include "tdp/selection.hpp"
#include "tdp/solver.hpp"
#include "tdp/subsolve.hpp"
#include "tdp/types.hpp"
