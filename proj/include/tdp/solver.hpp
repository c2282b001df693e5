#pragma once

#include "tdp/bellman.hpp"
#include "tdp/funcs.hpp"
#include "tdp/model.hpp"
#include "tdp/selection.hpp"
#include "tdp/types.hpp"

#include <json.hpp>

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace tdp {

/// One forward pass: the problem-child states, the per-noise optimal controls
/// of the lower model, the worst-noise choice per stage, and the upper-lower
/// gaps at the visited states. `gaps` is measured with the approximations the
/// pass ran under; `post_gaps` is re-measured after the following backward
/// pass (the two sides of the telescoping inequality).
struct TrajectoryRecord {
    std::vector<Vec> states;                // 0..T
    std::vector<std::vector<Vec>> controls; // per t, per noise index
    std::vector<int> worst_noise;           // per t
    std::vector<Real> gaps;                 // per 0..T
    std::vector<Real> post_gaps;            // per 0..T, filled by backward_pass
};

struct RunState {
    int iteration = 0;
    std::vector<Approximation> lower; // max-plus, per stage 0..T
    std::vector<Approximation> upper; // min-plus, per stage 0..T
    std::vector<TrajectoryRecord> history;
    std::vector<Real> gap_at_root;
};

namespace detail {

/// min/max of one stage's polyhedral cost over its own polyhedron plus the
/// stage state domain (an epigraph LP per extreme).
inline Real stage_cost_extreme(const MspInstance& instance, int t, bool maximize) {
    const int n = instance.state_dim;
    const int m = instance.control_dim;
    Real extreme = maximize ? -kInf : kInf;
    for (const NoiseBranch& br : instance.stages[t].branches) {
        if (maximize) {
            // max over (x,u) of a max of terms: one linear maximization per
            // term (the epigraph trick only works for the min direction).
            Real best = -kInf;
            for (const CostTerm& term : br.cost.terms) {
                LinearProgram one = LinearProgram::make(n + m);
                one.objective.head(n) = -term.state_coeff;
                one.objective.tail(m) = -term.control_coeff;
                const Polyhedron& p = br.cost.feasible_set;
                for (int r = 0; r < p.rows(); ++r) {
                    Vec row(n + m);
                    row.head(n) = p.state_coeffs.row(r);
                    row.tail(m) = p.control_coeffs.row(r);
                    one.add_row(row, Relation::LessEq, p.bound[r]);
                }
                const Polyhedron& dom = instance.stages[t].domain;
                for (int r = 0; r < dom.rows(); ++r) {
                    Vec row = Vec::Zero(n + m);
                    row.head(n) = dom.state_coeffs.row(r);
                    one.add_row(row, Relation::LessEq, dom.bound[r]);
                }
                SolveResult res = solve_lp(one, instance.config.lp_tol);
                if (res.status == SolveStatus::Unbounded)
                    throw ValidationError("seed bound LP unbounded: stage cost not compact");
                if (res.status != SolveStatus::Optimal)
                    throw NumericalError("seed bound LP failed");
                best = std::max(best, -res.value + term.offset);
            }
            extreme = std::max(extreme, best);
            continue;
        }
        // Variables (x, u, sigma); epigraph rows keep sigma above every term.
        LinearProgram lp = LinearProgram::make(n + m + 1);
        lp.objective[n + m] = 1.0;
        for (const CostTerm& term : br.cost.terms) {
            Vec row = Vec::Zero(n + m + 1);
            row.head(n) = term.state_coeff;
            row.segment(n, m) = term.control_coeff;
            row[n + m] = -1.0;
            lp.add_row(row, Relation::LessEq, -term.offset);
        }
        const Polyhedron& p = br.cost.feasible_set;
        for (int r = 0; r < p.rows(); ++r) {
            Vec row = Vec::Zero(n + m + 1);
            row.head(n) = p.state_coeffs.row(r);
            row.segment(n, m) = p.control_coeffs.row(r);
            lp.add_row(row, Relation::LessEq, p.bound[r]);
        }
        const Polyhedron& dom = instance.stages[t].domain;
        for (int r = 0; r < dom.rows(); ++r) {
            Vec row = Vec::Zero(n + m + 1);
            row.head(n) = dom.state_coeffs.row(r);
            lp.add_row(row, Relation::LessEq, dom.bound[r]);
        }
        SolveResult res = solve_lp(lp, instance.config.lp_tol);
        if (res.status == SolveStatus::Unbounded)
            throw ValidationError("seed bound LP unbounded: stage cost not compact");
        if (res.status != SolveStatus::Optimal) throw NumericalError("seed bound LP failed");
        extreme = std::min(extreme, res.value);
    }
    return extreme;
}

inline Real final_cost_extreme(const MspInstance& instance, bool maximize) {
    const int n = instance.state_dim;
    Real best = maximize ? -kInf : kInf;
    const Polyhedron& dom = instance.final_cost.feasible_set;
    if (maximize) {
        for (const CostTerm& term : instance.final_cost.terms) {
            LinearProgram lp = LinearProgram::make(n);
            lp.objective = -term.state_coeff;
            for (int r = 0; r < dom.rows(); ++r)
                lp.add_row(dom.state_coeffs.row(r).transpose(), Relation::LessEq, dom.bound[r]);
            SolveResult res = solve_lp(lp, instance.config.lp_tol);
            if (res.status != SolveStatus::Optimal)
                throw ValidationError("seed bound LP failed on the final cost");
            best = std::max(best, -res.value + term.offset);
        }
        return best;
    }
    LinearProgram lp = LinearProgram::make(n + 1);
    lp.objective[n] = 1.0;
    for (const CostTerm& term : instance.final_cost.terms) {
        Vec row(n + 1);
        row.head(n) = term.state_coeff;
        row[n] = -1.0;
        lp.add_row(row, Relation::LessEq, -term.offset);
    }
    for (int r = 0; r < dom.rows(); ++r) {
        Vec row = Vec::Zero(n + 1);
        row.head(n) = dom.state_coeffs.row(r);
        lp.add_row(row, Relation::LessEq, dom.bound[r]);
    }
    SolveResult res = solve_lp(lp, instance.config.lp_tol);
    if (res.status != SolveStatus::Optimal)
        throw ValidationError("seed bound LP failed on the final cost");
    return res.value;
}

} // namespace detail

/// Seeds every stage with one globally valid constant per side: cumulative
/// minima of stage costs below, cumulative maxima above. Both are 0-Lipschitz
/// basic functions, so every invariant holds from iteration 0.
inline RunState seed(const MspInstance& instance) {
    RunState state;
    const int horizon = instance.horizon;
    std::vector<Real> stage_min(horizon), stage_max(horizon);
    for (int t = 0; t < horizon; ++t) {
        stage_min[t] = detail::stage_cost_extreme(instance, t, false);
        stage_max[t] = detail::stage_cost_extreme(instance, t, true);
    }
    state.lower.resize(horizon + 1);
    state.upper.resize(horizon + 1);
    std::vector<Real> lower_bound(horizon + 1), upper_bound(horizon + 1);
    lower_bound[horizon] = detail::final_cost_extreme(instance, false);
    upper_bound[horizon] = detail::final_cost_extreme(instance, true);
    for (int t = horizon - 1; t >= 0; --t) {
        lower_bound[t] = stage_min[t] + lower_bound[t + 1];
        upper_bound[t] = stage_max[t] + upper_bound[t + 1];
    }
    for (int t = 0; t <= horizon; ++t) {
        state.lower[t] = Approximation(AggregationMode::MaxPlus, t);
        state.upper[t] = Approximation(AggregationMode::MinPlus, t);
        state.lower[t].append(make_constant(lower_bound[t], instance.state_domain(t)));
        state.upper[t].append(make_constant(upper_bound[t], instance.state_domain(t)));
    }
    return state;
}

/// Algorithm: from x0, solve the lower-model control problem per noise,
/// evaluate the future gap at each candidate next state, and follow the noise
/// maximizing it (ties to the smallest support index).
inline TrajectoryRecord forward_pass(const MspInstance& instance, const RunState& state) {
    TrajectoryRecord rec;
    Vec x = instance.x0;
    rec.states.push_back(x);
    rec.gaps.push_back(state.upper[0].eval(x) - state.lower[0].eval(x));
    for (int t = 0; t < instance.horizon; ++t) {
        const Stage& stage = instance.stages[t];
        std::vector<Vec> controls;
        std::vector<Vec> candidates;
        std::vector<Real> future_gap;
        for (int w = 0; w < static_cast<int>(stage.branches.size()); ++w) {
            BellmanEval eval = pointwise_lower(instance, t, w, state.lower[t + 1], x);
            const NoiseBranch& br = stage.branches[w];
            Vec y = br.dyn_state * x + br.dyn_control * eval.control + br.dyn_offset;
            future_gap.push_back(state.upper[t + 1].eval(y) - state.lower[t + 1].eval(y));
            controls.push_back(std::move(eval.control));
            candidates.push_back(std::move(y));
        }
        int worst = 0;
        for (int w = 1; w < static_cast<int>(future_gap.size()); ++w)
            if (future_gap[w] > future_gap[worst] + 1e-12) worst = w;
        rec.controls.push_back(std::move(controls));
        rec.worst_noise.push_back(worst);
        x = candidates[worst];
        rec.states.push_back(x);
        rec.gaps.push_back(future_gap[worst]);
    }
    return rec;
}

/// Backward phase: terminal selections at x_T, then stage selections against
/// the already-refined next-stage collections. Records the post-refinement
/// gaps along the trajectory and archives the record.
inline void backward_pass(const MspInstance& instance, RunState& state,
                          TrajectoryRecord trajectory, SelectionKind lower_kind,
                          SelectionKind upper_kind) {
    const int horizon = instance.horizon;
    state.lower[horizon].append(select_terminal(instance, lower_kind, trajectory.states[horizon]));
    state.upper[horizon].append(select_terminal(instance, upper_kind, trajectory.states[horizon]));
    for (int t = horizon - 1; t >= 0; --t) {
        const Vec& x = trajectory.states[t];
        state.lower[t].append(select_interior(instance, t, lower_kind, state.lower[t + 1], x));
        state.upper[t].append(select_interior(instance, t, upper_kind, state.upper[t + 1], x));
    }
    trajectory.post_gaps.clear();
    for (int t = 0; t <= horizon; ++t) {
        const Vec& x = trajectory.states[t];
        trajectory.post_gaps.push_back(state.upper[t].eval(x) - state.lower[t].eval(x));
    }
    state.history.push_back(std::move(trajectory));
    state.iteration += 1;
}

struct StopRule {
    int max_iters = 200;
    Real gap_tol = 1e-6;
};

struct RunOutput {
    RunState state;
    bool converged = false;
    Real root_lower = 0;
    Real root_upper = 0;
};

/// The main loop: alternate forward and backward phases until the root gap
/// falls below gap_tol * (1 + |lower root value|) or the budget runs out.
inline RunOutput run(const MspInstance& instance, SelectionKind lower_kind,
                     SelectionKind upper_kind, const StopRule& stop) {
    if (lower_kind != SelectionKind::SddpLower)
        throw ValidationError("the lower selection must be the SDDP cut rule");
    if (!is_upper_kind(upper_kind))
        throw ValidationError("the upper selection must be the U or V rule");
    RunOutput out;
    out.state = seed(instance);
    for (int k = 0; k < stop.max_iters; ++k) {
        TrajectoryRecord rec = forward_pass(instance, out.state);
        backward_pass(instance, out.state, std::move(rec), lower_kind, upper_kind);
        Real root_lower = out.state.lower[0].eval(instance.x0);
        Real root_upper = out.state.upper[0].eval(instance.x0);
        Real gap = root_upper - root_lower;
        out.state.gap_at_root.push_back(gap);
        if (gap <= stop.gap_tol * (1.0 + std::abs(root_lower))) {
            out.converged = true;
            break;
        }
    }
    out.root_lower = out.state.lower[0].eval(instance.x0);
    out.root_upper = out.state.upper[0].eval(instance.x0);
    return out;
}

// ---------------------------------------------------------------------------
// Run exports
// ---------------------------------------------------------------------------

namespace detail {

inline std::string csv_number(Real v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
}

inline std::string state_cell(const Vec& x) {
    std::string s = "\"[";
    for (int i = 0; i < x.size(); ++i) {
        if (i) s += ",";
        s += csv_number(x[i]);
    }
    s += "]\"";
    return s;
}

} // namespace detail

/// Gap log: one row per (iteration, stage) with the sandwich values at the
/// visited state under the collections as refined by that iteration.
inline void write_gap_csv(std::ostream& os, const MspInstance& instance, const RunState& state) {
    os << "iter,t,x_t,gap,lower_at_x,upper_at_x\r\n";
    for (std::size_t k = 0; k < state.history.size(); ++k) {
        const TrajectoryRecord& rec = state.history[k];
        for (int t = 0; t <= instance.horizon; ++t) {
            const Vec& x = rec.states[t];
            // Values under the collections as refined by this iteration:
            // member prefix of length seed + k + 1.
            Real lo = state.lower[t].eval_prefix(x, k + 2);
            Real hi = state.upper[t].eval_prefix(x, k + 2);
            os << k << "," << t << "," << detail::state_cell(x) << ","
               << detail::csv_number(hi - lo) << "," << detail::csv_number(lo) << ","
               << detail::csv_number(hi) << "\r\n";
        }
    }
}

/// Full dump of both collections per stage. Members are stored in insertion
/// order: one seed constant followed by one member per iteration, so every
/// intermediate approximation is a prefix of the list.
inline nlohmann::json run_to_json(const MspInstance& instance, const RunState& state) {
    nlohmann::json j;
    j["iterations"] = state.iteration;
    j["config"] = {{"lp_tol", instance.config.lp_tol},
                   {"tight_tol", instance.config.tight_tol},
                   {"max_iters", instance.config.max_iters},
                   {"gap_tol", instance.config.gap_tol}};
    j["gap_at_root"] = state.gap_at_root;
    j["stages"] = nlohmann::json::array();
    for (int t = 0; t <= instance.horizon; ++t) {
        nlohmann::json js;
        js["stage"] = t;
        js["lower"] = approximation_to_json(state.lower[t]);
        js["upper"] = approximation_to_json(state.upper[t]);
        j["stages"].push_back(std::move(js));
    }
    return j;
}

} // namespace tdp
