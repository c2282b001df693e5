#pragma once

#include "tdp/funcs.hpp"
#include "tdp/model.hpp"
#include "tdp/subsolve.hpp"
#include "tdp/types.hpp"

#include <string>
#include <vector>

namespace tdp {

/// Result of one pointwise Bellman evaluation at (t, noise, x): optimal
/// value, minimizing control, and a subgradient with respect to x assembled
/// from the dual multipliers of every x-bearing constraint.
struct BellmanEval {
    Real value = 0;
    Vec control;
    Vec subgradient;
    int noise_index = 0;
};

enum class BellmanKind { Lower, UpperU, UpperV };

namespace detail {

/// Constraint system of a one-stage subproblem with the state x held fixed.
/// Every row tracks d(rhs)/dx so value sensitivities can be chained from the
/// row duals: dv/dx = sum_i dual_i * rhs_x_i (+ any explicit objective term).
struct StageSystem {
    int num_vars = 0;
    std::vector<Vec> row_coeffs;
    std::vector<Real> row_rhs;
    std::vector<Vec> row_rhs_x;

    explicit StageSystem(int nv) : num_vars(nv) {}

    void add(const Vec& coeffs, Real rhs, const Vec& rhs_x) {
        row_coeffs.push_back(coeffs);
        row_rhs.push_back(rhs);
        row_rhs_x.push_back(rhs_x);
    }

    void fill(Mat& rows, std::vector<Relation>& relations, Vec& rhs) const {
        rows = Mat::Zero(static_cast<int>(row_coeffs.size()), num_vars);
        rhs = Vec::Zero(static_cast<int>(row_coeffs.size()));
        relations.assign(row_coeffs.size(), Relation::LessEq);
        for (std::size_t r = 0; r < row_coeffs.size(); ++r) {
            rows.row(static_cast<int>(r)) = row_coeffs[r].transpose();
            rhs[static_cast<int>(r)] = row_rhs[r];
        }
    }

    Vec chain_subgradient(const Vec& duals) const {
        Vec g = Vec::Zero(row_rhs_x.empty() ? 0 : row_rhs_x.front().size());
        for (std::size_t r = 0; r < row_rhs_x.size(); ++r) g += duals[static_cast<int>(r)] * row_rhs_x[r];
        return g;
    }
};

/// Shared rows of every pointwise subproblem: the stage-cost epigraph
/// (variable `sigma_index`), the stage polyhedron, and the next-domain
/// constraint A x + B u + f in X_{t+1}. Controls occupy variables 0..m-1.
inline void add_common_rows(StageSystem& sys, const MspInstance& instance, int t,
                            const NoiseBranch& br, const Vec& x, int sigma_index) {
    const int n = instance.state_dim;
    const int m = instance.control_dim;
    for (const CostTerm& term : br.cost.terms) {
        Vec coeffs = Vec::Zero(sys.num_vars);
        coeffs.head(m) = term.control_coeff;
        coeffs[sigma_index] = -1.0;
        sys.add(coeffs, -term.offset - term.state_coeff.dot(x), -term.state_coeff);
    }
    const Polyhedron& p = br.cost.feasible_set;
    for (int r = 0; r < p.rows(); ++r) {
        Vec coeffs = Vec::Zero(sys.num_vars);
        coeffs.head(m) = p.control_coeffs.row(r).transpose();
        sys.add(coeffs, p.bound[r] - p.state_coeffs.row(r).dot(x),
                -p.state_coeffs.row(r).transpose());
    }
    const Polyhedron& next = instance.state_domain(t + 1);
    Vec shift = br.dyn_state * x + br.dyn_offset;
    for (int r = 0; r < next.rows(); ++r) {
        Vec coeffs = Vec::Zero(sys.num_vars);
        coeffs.head(m) = (next.state_coeffs.row(r) * br.dyn_control).transpose();
        sys.add(coeffs, next.bound[r] - next.state_coeffs.row(r).dot(shift),
                -(next.state_coeffs.row(r) * br.dyn_state).transpose());
    }
    (void)n;
}

[[noreturn]] inline void raise_recourse(const MspInstance&, int t, int w, const Vec& x) {
    throw RecourseError(t, w, x,
                        "infeasible one-stage subproblem at (t=" + std::to_string(t) +
                            ", w=" + std::to_string(w) + "): recourse violation");
}

inline void require_members(const Approximation& approx, const char* who) {
    if (approx.empty())
        throw ValidationError(std::string(who) + ": empty approximation at the next stage");
}

} // namespace detail

/// B_t^w applied to a max-plus (cuts) approximation: one LP over
/// (u, sigma, theta) with theta >= every cut evaluated at A x + B u + f.
inline BellmanEval pointwise_lower(const MspInstance& instance, int t, int w,
                                   const Approximation& cuts, const Vec& x) {
    detail::require_members(cuts, "pointwise_lower");
    const int m = instance.control_dim;
    const NoiseBranch& br = instance.stages[t].branches[w];
    const int sigma = m;
    const int theta = m + 1;
    detail::StageSystem sys(m + 2);
    detail::add_common_rows(sys, instance, t, br, x, sigma);
    for (const BasicFunction& member : cuts.members()) {
        Vec slope;
        Real offset;
        if (const auto* aff = std::get_if<AffineFn>(&member.form)) {
            slope = aff->slope;
            offset = aff->offset;
        } else if (const auto* cst = std::get_if<ConstantFn>(&member.form)) {
            slope = Vec::Zero(instance.state_dim);
            offset = cst->offset;
        } else {
            throw ValidationError("pointwise_lower expects affine or constant members");
        }
        // theta >= <a, A x + B u + f> + b
        Vec coeffs = Vec::Zero(sys.num_vars);
        coeffs.head(m) = br.dyn_control.transpose() * slope;
        coeffs[theta] = -1.0;
        sys.add(coeffs, -offset - slope.dot(br.dyn_state * x + br.dyn_offset),
                -(br.dyn_state.transpose() * slope));
    }
    LinearProgram lp = LinearProgram::make(sys.num_vars);
    lp.objective[sigma] = 1.0;
    lp.objective[theta] = 1.0;
    sys.fill(lp.rows, lp.relations, lp.rhs);
    SolveResult res = solve_lp(lp, instance.config.lp_tol);
    if (res.status == SolveStatus::Infeasible) detail::raise_recourse(instance, t, w, x);
    if (res.status != SolveStatus::Optimal)
        throw NumericalError("pointwise_lower LP did not reach optimality");
    BellmanEval eval;
    eval.value = res.value;
    eval.control = res.primal.head(m);
    eval.subgradient = sys.chain_subgradient(res.duals);
    eval.noise_index = w;
    return eval;
}

/// B_t^w applied to a min-plus collection of c-quadratics: one QP per member
/// (min-additivity), keeping the best. The winning member's KKT multipliers
/// give the envelope subgradient.
inline BellmanEval pointwise_upper_u(const MspInstance& instance, int t, int w,
                                     const Approximation& quads, const Vec& x) {
    detail::require_members(quads, "pointwise_upper_u");
    const int m = instance.control_dim;
    const NoiseBranch& br = instance.stages[t].branches[w];
    BellmanEval best;
    bool have = false;
    for (const BasicFunction& member : quads.members()) {
        const int sigma = m;
        detail::StageSystem sys(m + 1);
        detail::add_common_rows(sys, instance, t, br, x, sigma);
        QuadraticProgram qp = QuadraticProgram::make(sys.num_vars);
        sys.fill(qp.rows, qp.relations, qp.rhs);
        qp.linear[sigma] = 1.0;
        Real constant = 0;
        Vec explicit_grad = Vec::Zero(instance.state_dim);
        if (const auto* quad = std::get_if<CQuadraticFn>(&member.form)) {
            // (c/2) || A x + B u + f - a ||^2 expanded in u.
            Vec residual = br.dyn_state * x + br.dyn_offset - quad->center;
            qp.quadratic.topLeftCorner(m, m) =
                quad->curvature * br.dyn_control.transpose() * br.dyn_control;
            qp.linear.head(m) += quad->curvature * br.dyn_control.transpose() * residual;
            constant = 0.5 * quad->curvature * residual.squaredNorm() + quad->offset;
        } else if (const auto* cst = std::get_if<ConstantFn>(&member.form)) {
            constant = cst->offset;
        } else {
            throw ValidationError("pointwise_upper_u expects c-quadratic or constant members");
        }
        SolveResult res = solve_qp(qp, instance.config.lp_tol);
        if (res.status == SolveStatus::Infeasible) detail::raise_recourse(instance, t, w, x);
        if (res.status != SolveStatus::Optimal)
            throw NumericalError("pointwise_upper_u QP did not reach optimality");
        Real value = res.value + constant;
        if (const auto* quad = std::get_if<CQuadraticFn>(&member.form)) {
            Vec y = br.dyn_state * x + br.dyn_control * res.primal.head(m) + br.dyn_offset;
            explicit_grad = quad->curvature * br.dyn_state.transpose() * (y - quad->center);
        }
        if (!have || value < best.value - 1e-14) {
            best.value = value;
            best.control = res.primal.head(m);
            best.subgradient = sys.chain_subgradient(res.duals) + explicit_grad;
            best.noise_index = w;
            have = true;
        }
    }
    return best;
}

/// B_t^w applied to a min-plus collection of V-shaped cones: one LP per
/// member with the l1 epigraph linearized through auxiliary variables.
inline BellmanEval pointwise_upper_v(const MspInstance& instance, int t, int w,
                                     const Approximation& vshapes, const Vec& x) {
    detail::require_members(vshapes, "pointwise_upper_v");
    const int m = instance.control_dim;
    const int n = instance.state_dim;
    const NoiseBranch& br = instance.stages[t].branches[w];
    BellmanEval best;
    bool have = false;
    for (const BasicFunction& member : vshapes.members()) {
        const int sigma = m;
        if (const auto* cst = std::get_if<ConstantFn>(&member.form)) {
            detail::StageSystem sys(m + 1);
            detail::add_common_rows(sys, instance, t, br, x, sigma);
            LinearProgram lp = LinearProgram::make(sys.num_vars);
            lp.objective[sigma] = 1.0;
            sys.fill(lp.rows, lp.relations, lp.rhs);
            SolveResult res = solve_lp(lp, instance.config.lp_tol);
            if (res.status == SolveStatus::Infeasible) detail::raise_recourse(instance, t, w, x);
            if (res.status != SolveStatus::Optimal)
                throw NumericalError("pointwise_upper_v LP did not reach optimality");
            Real value = res.value + cst->offset;
            if (!have || value < best.value - 1e-14) {
                best.value = value;
                best.control = res.primal.head(m);
                best.subgradient = sys.chain_subgradient(res.duals);
                best.noise_index = w;
                have = true;
            }
            continue;
        }
        const auto* vs = std::get_if<VShapeFn>(&member.form);
        if (vs == nullptr)
            throw ValidationError("pointwise_upper_v expects v-shaped or constant members");
        detail::StageSystem sys(m + 1 + n);
        detail::add_common_rows(sys, instance, t, br, x, sigma);
        Vec shift = br.dyn_state * x + br.dyn_offset;
        for (int i = 0; i < n; ++i) {
            // s_i >= +-((A x + B u + f)_i - a_i)
            Vec up = Vec::Zero(sys.num_vars);
            up.head(m) = br.dyn_control.row(i).transpose();
            up[m + 1 + i] = -1.0;
            sys.add(up, vs->apex[i] - shift[i], -br.dyn_state.row(i).transpose());
            Vec down = Vec::Zero(sys.num_vars);
            down.head(m) = -br.dyn_control.row(i).transpose();
            down[m + 1 + i] = -1.0;
            sys.add(down, shift[i] - vs->apex[i], br.dyn_state.row(i).transpose());
        }
        LinearProgram lp = LinearProgram::make(sys.num_vars);
        lp.objective[sigma] = 1.0;
        lp.objective.tail(n).setConstant(vs->slope);
        sys.fill(lp.rows, lp.relations, lp.rhs);
        SolveResult res = solve_lp(lp, instance.config.lp_tol);
        if (res.status == SolveStatus::Infeasible) detail::raise_recourse(instance, t, w, x);
        if (res.status != SolveStatus::Optimal)
            throw NumericalError("pointwise_upper_v LP did not reach optimality");
        Real value = res.value + vs->offset;
        if (!have || value < best.value - 1e-14) {
            best.value = value;
            best.control = res.primal.head(m);
            best.subgradient = sys.chain_subgradient(res.duals);
            best.noise_index = w;
            have = true;
        }
    }
    return best;
}

inline BellmanEval pointwise_bellman(const MspInstance& instance, int t, int w,
                                     const Approximation& next, const Vec& x, BellmanKind kind) {
    switch (kind) {
    case BellmanKind::Lower: return pointwise_lower(instance, t, w, next, x);
    case BellmanKind::UpperU: return pointwise_upper_u(instance, t, w, next, x);
    case BellmanKind::UpperV: return pointwise_upper_v(instance, t, w, next, x);
    }
    throw ValidationError("unknown Bellman kind");
}

/// Probability-weighted aggregate of the pointwise evaluations, reduced in
/// fixed support order.
struct AverageEval {
    std::vector<BellmanEval> per_noise;
    Real value = 0;
    Vec subgradient;
};

inline AverageEval average_bellman(const MspInstance& instance, int t, const Approximation& next,
                                   const Vec& x, BellmanKind kind) {
    detail::require_members(next, "average_bellman");
    AverageEval out;
    out.subgradient = Vec::Zero(instance.state_dim);
    const Stage& stage = instance.stages[t];
    for (int w = 0; w < static_cast<int>(stage.branches.size()); ++w) {
        BellmanEval eval = pointwise_bellman(instance, t, w, next, x, kind);
        out.value += stage.branches[w].prob * eval.value;
        out.subgradient += stage.branches[w].prob * eval.subgradient;
        out.per_noise.push_back(std::move(eval));
    }
    return out;
}

} // namespace tdp
