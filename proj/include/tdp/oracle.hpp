#pragma once

#include "tdp/model.hpp"
#include "tdp/subsolve.hpp"
#include "tdp/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace tdp {

// ---------------------------------------------------------------------------
// Scenario-tree deterministic equivalent
// ---------------------------------------------------------------------------

namespace detail {

/// Nodes per level of the subtree rooted at stage t0.
inline std::vector<long> tree_level_sizes(const MspInstance& instance, int t0) {
    std::vector<long> sizes{1};
    for (int t = t0; t < instance.horizon; ++t) {
        long next = sizes.back() * instance.branch_count(t);
        if (next > 100000) throw TreeSizeError("scenario tree too large");
        sizes.push_back(next);
    }
    return sizes;
}

} // namespace detail

/// V_t(x) by one linear program over the full noise subtree rooted at (t, x):
/// controls and epigraph variables per node, expectation objective with path
/// probabilities, dynamics as equality rows.
inline Real exact_value_at(const MspInstance& instance, int t0, const Vec& x_init) {
    if (!instance.state_domain(t0).contains(x_init, 1e-9))
        throw ValidationError("oracle query point outside the stage domain");
    const int n = instance.state_dim;
    const int m = instance.control_dim;
    const int horizon = instance.horizon;
    if (t0 == horizon) return instance.final_cost.eval_state(x_init, instance.config.lp_tol);
    std::vector<long> sizes = detail::tree_level_sizes(instance, t0);
    const int levels = static_cast<int>(sizes.size()); // stages t0..T

    // Variable layout: states per node per level, then (controls, cost
    // epigraph) per edge, then final epigraph per leaf.
    std::vector<long> x_offset(levels);
    long cursor = 0;
    for (int l = 0; l < levels; ++l) {
        x_offset[l] = cursor;
        cursor += sizes[l] * n;
    }
    std::vector<long> u_offset(levels - 1), sigma_offset(levels - 1);
    for (int l = 0; l + 1 < levels; ++l) {
        int nb = instance.branch_count(t0 + l);
        u_offset[l] = cursor;
        cursor += sizes[l] * nb * m;
        sigma_offset[l] = cursor;
        cursor += sizes[l] * nb;
    }
    long psi_offset = cursor;
    cursor += sizes[levels - 1];
    LinearProgram lp = LinearProgram::make(static_cast<int>(cursor));

    // Path probabilities per node per level.
    std::vector<std::vector<Real>> path_prob(levels);
    path_prob[0] = {1.0};
    for (int l = 0; l + 1 < levels; ++l) {
        int t = t0 + l;
        int nb = instance.branch_count(t);
        path_prob[l + 1].resize(sizes[l + 1]);
        for (long node = 0; node < sizes[l]; ++node)
            for (int w = 0; w < nb; ++w)
                path_prob[l + 1][node * nb + w] =
                    path_prob[l][node] * instance.stages[t].branches[w].prob;
    }

    // Root state is fixed through its bounds.
    for (int i = 0; i < n; ++i) {
        lp.lower[x_offset[0] + i] = x_init[i];
        lp.upper[x_offset[0] + i] = x_init[i];
    }

    for (int l = 0; l + 1 < levels; ++l) {
        int t = t0 + l;
        int nb = instance.branch_count(t);
        for (long node = 0; node < sizes[l]; ++node) {
            long xvar = x_offset[l] + node * n;
            for (int w = 0; w < nb; ++w) {
                const NoiseBranch& br = instance.stages[t].branches[w];
                long uvar = u_offset[l] + (node * nb + w) * m;
                long svar = sigma_offset[l] + node * nb + w;
                long xnext = x_offset[l + 1] + (node * nb + w) * n;
                lp.objective[svar] = path_prob[l + 1][node * nb + w];
                // x' = A x + B u + f
                for (int i = 0; i < n; ++i) {
                    Vec row = Vec::Zero(lp.num_vars());
                    row[xnext + i] = 1.0;
                    for (int c = 0; c < n; ++c) row[xvar + c] -= br.dyn_state(i, c);
                    for (int c = 0; c < m; ++c) row[uvar + c] -= br.dyn_control(i, c);
                    lp.add_row(row, Relation::Eq, br.dyn_offset[i]);
                }
                for (const CostTerm& term : br.cost.terms) {
                    Vec row = Vec::Zero(lp.num_vars());
                    for (int c = 0; c < n; ++c) row[xvar + c] = term.state_coeff[c];
                    for (int c = 0; c < m; ++c) row[uvar + c] = term.control_coeff[c];
                    row[svar] = -1.0;
                    lp.add_row(row, Relation::LessEq, -term.offset);
                }
                const Polyhedron& p = br.cost.feasible_set;
                for (int r = 0; r < p.rows(); ++r) {
                    Vec row = Vec::Zero(lp.num_vars());
                    for (int c = 0; c < n; ++c) row[xvar + c] = p.state_coeffs(r, c);
                    for (int c = 0; c < m; ++c) row[uvar + c] = p.control_coeffs(r, c);
                    lp.add_row(row, Relation::LessEq, p.bound[r]);
                }
                // The next state must stay in its value-function domain.
                const Polyhedron& next = instance.state_domain(t + 1);
                for (int r = 0; r < next.rows(); ++r) {
                    Vec row = Vec::Zero(lp.num_vars());
                    for (int c = 0; c < n; ++c) row[xnext + c] = next.state_coeffs(r, c);
                    lp.add_row(row, Relation::LessEq, next.bound[r]);
                }
            }
        }
    }
    // Final-cost epigraph per leaf.
    for (long node = 0; node < sizes[levels - 1]; ++node) {
        long xvar = x_offset[levels - 1] + node * n;
        long svar = psi_offset + node;
        lp.objective[svar] = path_prob[levels - 1][node];
        for (const CostTerm& term : instance.final_cost.terms) {
            Vec row = Vec::Zero(lp.num_vars());
            for (int c = 0; c < n; ++c) row[xvar + c] = term.state_coeff[c];
            row[svar] = -1.0;
            lp.add_row(row, Relation::LessEq, -term.offset);
        }
    }
    SolveResult res = solve_lp(lp, instance.config.lp_tol);
    if (res.status == SolveStatus::Infeasible)
        throw RecourseError(t0, -1, x_init, "infeasible tree node (recourse violation)");
    if (res.status != SolveStatus::Optimal)
        throw NumericalError("scenario-tree LP did not reach optimality");
    return res.value;
}

inline Real exact_root_value(const MspInstance& instance) {
    return exact_value_at(instance, 0, instance.x0);
}

/// Uniform 1-D profile of the exact value function (figure data).
inline std::vector<std::pair<Real, Real>> grid_profile(const MspInstance& instance, int t, Real lo,
                                                       Real hi, int steps) {
    if (instance.state_dim != 1) throw ValidationError("grid_profile needs a 1-D state");
    if (steps < 1) throw ValidationError("grid_profile needs at least one step");
    std::vector<std::pair<Real, Real>> profile;
    for (int i = 0; i < steps; ++i) {
        Real x = steps == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (steps - 1);
        Vec xv(1);
        xv << x;
        profile.emplace_back(x, exact_value_at(instance, t, xv));
    }
    return profile;
}

// ---------------------------------------------------------------------------
// Stage-wise grid dynamic programming (the independent second oracle; no
// linear programming anywhere on this path).
// ---------------------------------------------------------------------------

namespace detail {

/// [lo, hi] of a 1-D state-only polyhedron by direct row scanning.
inline std::pair<Real, Real> interval_of(const Polyhedron& domain) {
    Real lo = -kInf, hi = kInf;
    for (int r = 0; r < domain.rows(); ++r) {
        Real g = domain.state_coeffs(r, 0);
        Real h = domain.bound[r];
        if (g > 1e-14)
            hi = std::min(hi, h / g);
        else if (g < -1e-14)
            lo = std::max(lo, h / g);
        else if (h < -1e-12)
            return {1.0, 0.0}; // empty
    }
    return {lo, hi};
}

/// Feasible control interval of a branch at a fixed scalar state.
inline std::pair<Real, Real> control_interval(const NoiseBranch& br, Real x, Real next_lo,
                                              Real next_hi) {
    Real lo = -kInf, hi = kInf;
    const Polyhedron& p = br.cost.feasible_set;
    for (int r = 0; r < p.rows(); ++r) {
        Real gu = p.control_coeffs(r, 0);
        Real rhs = p.bound[r] - p.state_coeffs(r, 0) * x;
        if (gu > 1e-14)
            hi = std::min(hi, rhs / gu);
        else if (gu < -1e-14)
            lo = std::max(lo, rhs / gu);
        else if (rhs < -1e-10)
            return {1.0, 0.0};
    }
    Real a = br.dyn_state(0, 0), b = br.dyn_control(0, 0), f = br.dyn_offset[0];
    Real base = a * x + f;
    if (std::abs(b) > 1e-14) {
        Real u1 = (next_lo - base) / b, u2 = (next_hi - base) / b;
        lo = std::max(lo, std::min(u1, u2));
        hi = std::min(hi, std::max(u1, u2));
    } else if (base < next_lo - 1e-10 || base > next_hi + 1e-10) {
        return {1.0, 0.0};
    }
    return {lo, hi};
}

inline Real scalar_cost(const NoiseBranch& br, Real x, Real u) {
    Real best = -kInf;
    for (const CostTerm& term : br.cost.terms)
        best = std::max(best, term.state_coeff[0] * x + term.control_coeff[0] * u + term.offset);
    return best;
}

} // namespace detail

/// Tabulated value functions on uniform state grids, built backward with a
/// brute-force control scan and piecewise-linear interpolation.
struct GridDp {
    std::vector<std::vector<Real>> x_grid; // per stage 0..T
    std::vector<std::vector<Real>> values; // per stage, aligned with x_grid
    int control_steps = 0;

    Real interpolate(int t, Real x) const {
        const auto& g = x_grid[t];
        const auto& v = values[t];
        if (g.size() == 1) return v[0];
        Real lo = g.front(), hi = g.back();
        Real clamped = std::min(std::max(x, lo), hi);
        Real pos = (clamped - lo) / (hi - lo) * (g.size() - 1);
        auto i = static_cast<std::size_t>(std::min<Real>(pos, static_cast<Real>(g.size() - 2)));
        Real frac = pos - static_cast<Real>(i);
        return v[i] * (1 - frac) + v[i + 1] * frac;
    }
};

/// Independent reference for 1-D instances: exact final stage, then per grid
/// state the probability-weighted best control over a uniform control scan.
inline GridDp grid_dp(const MspInstance& instance, int x_steps, int u_steps) {
    if (instance.state_dim != 1 || instance.control_dim != 1)
        throw ValidationError("grid_dp supports n = m = 1 instances");
    GridDp dp;
    dp.control_steps = u_steps;
    const int horizon = instance.horizon;
    dp.x_grid.resize(horizon + 1);
    dp.values.resize(horizon + 1);
    for (int t = 0; t <= horizon; ++t) {
        auto [lo, hi] = detail::interval_of(instance.state_domain(t));
        if (lo > hi) throw ValidationError("empty stage domain in grid_dp");
        dp.x_grid[t].resize(x_steps);
        for (int i = 0; i < x_steps; ++i)
            dp.x_grid[t][i] =
                x_steps == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (x_steps - 1);
    }
    dp.values[horizon].resize(dp.x_grid[horizon].size());
    for (std::size_t i = 0; i < dp.x_grid[horizon].size(); ++i) {
        Real best = -kInf;
        for (const CostTerm& term : instance.final_cost.terms)
            best = std::max(best, term.state_coeff[0] * dp.x_grid[horizon][i] + term.offset);
        dp.values[horizon][i] = best;
    }
    for (int t = horizon - 1; t >= 0; --t) {
        auto [next_lo, next_hi] = detail::interval_of(instance.state_domain(t + 1));
        dp.values[t].assign(dp.x_grid[t].size(), 0.0);
        for (std::size_t i = 0; i < dp.x_grid[t].size(); ++i) {
            Real x = dp.x_grid[t][i];
            Real acc = 0;
            for (const NoiseBranch& br : instance.stages[t].branches) {
                auto [ulo, uhi] = detail::control_interval(br, x, next_lo, next_hi);
                if (ulo > uhi) {
                    acc = kInf;
                    break;
                }
                Real best = kInf;
                for (int k = 0; k < u_steps; ++k) {
                    Real u = u_steps == 1 ? 0.5 * (ulo + uhi)
                                          : ulo + (uhi - ulo) * k / (u_steps - 1);
                    Real y = br.dyn_state(0, 0) * x + br.dyn_control(0, 0) * u + br.dyn_offset[0];
                    Real v = detail::scalar_cost(br, x, u) + dp.interpolate(t + 1, y);
                    best = std::min(best, v);
                }
                acc += br.prob * best;
            }
            dp.values[t][i] = acc;
        }
    }
    return dp;
}

/// Root value under the grid oracle, with a fresh (typically finer) control
/// scan at x0 itself rather than grid interpolation at stage 0.
inline Real grid_dp_root(const MspInstance& instance, const GridDp& dp, int root_u_steps) {
    if (instance.horizon == 0)
        return instance.final_cost.eval_state(instance.x0, instance.config.lp_tol);
    Real x = instance.x0[0];
    auto [next_lo, next_hi] = detail::interval_of(instance.state_domain(1));
    Real acc = 0;
    for (const NoiseBranch& br : instance.stages[0].branches) {
        auto [ulo, uhi] = detail::control_interval(br, x, next_lo, next_hi);
        if (ulo > uhi) throw ValidationError("x0 has no feasible control in grid_dp_root");
        Real best = kInf;
        for (int k = 0; k < root_u_steps; ++k) {
            Real u = root_u_steps == 1 ? 0.5 * (ulo + uhi)
                                       : ulo + (uhi - ulo) * k / (root_u_steps - 1);
            Real y = br.dyn_state(0, 0) * x + br.dyn_control(0, 0) * u + br.dyn_offset[0];
            Real v = detail::scalar_cost(br, x, u) + dp.interpolate(1, y);
            best = std::min(best, v);
        }
        acc += br.prob * best;
    }
    return acc;
}

} // namespace tdp
