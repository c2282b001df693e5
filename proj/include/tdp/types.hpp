#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace tdp {

using Real = double;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr Real kInf = std::numeric_limits<Real>::infinity();

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input data or violated model invariant.
struct ValidationError : Error {
    using Error::Error;
};

/// A subproblem solver gave up (pivot budget, inconsistent KKT system, ...).
struct NumericalError : Error {
    using Error::Error;
};

/// Scenario tree exceeds the deterministic-equivalent size cap.
struct TreeSizeError : Error {
    using Error::Error;
};

/// Belief update conditioned on an observation of probability zero.
struct ImpossibleObservation : Error {
    using Error::Error;
};

/// No feasible control at (t, noise, state): the recourse assumption fails there.
struct RecourseError : Error {
    int t;
    int noise;
    Vec state;

    RecourseError(int t_, int noise_, Vec state_, const std::string& msg)
        : Error(msg), t(t_), noise(noise_), state(std::move(state_)) {}
};

} // namespace tdp
