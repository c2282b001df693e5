#pragma once

#include "tdp/bellman.hpp"
#include "tdp/funcs.hpp"
#include "tdp/model.hpp"
#include "tdp/types.hpp"

#include <cmath>
#include <vector>

namespace tdp {

/// The three refinement rules. SddpLower grows max-plus collections; the
/// other two grow min-plus collections.
enum class SelectionKind { SddpLower, UQuad, VShapeUpper };

inline bool is_upper_kind(SelectionKind kind) { return kind != SelectionKind::SddpLower; }

namespace detail {

inline Real cquad_lip_on_box(Real curvature, const Vec& center, const Box& box) {
    Real sq = 0;
    for (int i = 0; i < center.size(); ++i) {
        Real d = std::max(std::abs(box.lo[i] - center[i]), std::abs(box.hi[i] - center[i]));
        sq += d * d;
    }
    return curvature * std::sqrt(sq);
}

inline void require_in_domain(const MspInstance& instance, int t, const Vec& x) {
    if (!instance.state_domain(t).contains(x, 1e-9))
        throw ValidationError("trial point outside the stage-" + std::to_string(t) + " domain");
}

} // namespace detail

/// Final-stage selection: a basic function tight at x against the final cost
/// itself. The lower cut and the c-quadratic use the first max-term active at
/// x as the subgradient, which is the deterministic choice at kinks.
inline BasicFunction select_terminal(const MspInstance& instance, SelectionKind kind,
                                     const Vec& x) {
    detail::require_in_domain(instance, instance.horizon, x);
    const Polyhedron& domain = instance.final_cost.feasible_set;
    const Real psi = instance.final_cost.eval_state(x, 1e-9);
    const Real lip = instance.lip_values[instance.horizon];
    switch (kind) {
    case SelectionKind::SddpLower: {
        Vec a = instance.final_cost.active_state_term(x).state_coeff;
        return make_affine(a, psi - a.dot(x), domain, lip);
    }
    case SelectionKind::UQuad: {
        if (instance.config.c_quad.empty())
            throw ValidationError("c_quad configuration required for the U selection");
        Real c = instance.config.c_quad[instance.horizon];
        Vec lambda = instance.final_cost.active_state_term(x).state_coeff;
        Vec center = x - lambda / c;
        Real offset = psi - lambda.squaredNorm() / (2.0 * c);
        return make_cquadratic(
            c, center, offset, domain,
            detail::cquad_lip_on_box(c, center, instance.domain_boxes[instance.horizon]));
    }
    case SelectionKind::VShapeUpper: {
        Real n = static_cast<Real>(instance.state_dim);
        // A zero-Lipschitz final cost degenerates the cone to a constant.
        if (lip <= 0) return make_constant(psi, domain);
        return make_vshape(lip / std::sqrt(n), x, psi, domain);
    }
    }
    throw ValidationError("unknown selection kind");
}

/// SDDP cut: per-noise lower Bellman solves, then the probability-weighted
/// average of values and subgradients. Tight at x, valid everywhere, and its
/// slope stays within the stage Lipschitz certificate by construction.
inline BasicFunction select_sddp(const MspInstance& instance, int t, const Approximation& cuts_next,
                                 const Vec& x) {
    detail::require_in_domain(instance, t, x);
    AverageEval avg = average_bellman(instance, t, cuts_next, x, BellmanKind::Lower);
    return make_affine(avg.subgradient, avg.value - avg.subgradient.dot(x),
                       instance.stages[t].domain, instance.lip_values[t]);
}

/// U selection: per-noise quadratic solves give (a^w, v^w, lambda^w); the
/// centers average and the offset is pinned so the new quadratic is exactly
/// tight at x. Tight but possibly invalid near kinks of the Bellman image.
inline BasicFunction select_u(const MspInstance& instance, int t, const Approximation& quads_next,
                              const Vec& x) {
    detail::require_in_domain(instance, t, x);
    if (instance.config.c_quad.empty())
        throw ValidationError("c_quad configuration required for the U selection");
    const Real c = instance.config.c_quad[t];
    const Stage& stage = instance.stages[t];
    Vec center = Vec::Zero(instance.state_dim);
    Real mean_value = 0;
    for (int w = 0; w < static_cast<int>(stage.branches.size()); ++w) {
        BellmanEval eval = pointwise_upper_u(instance, t, w, quads_next, x);
        center += stage.branches[w].prob * (x - eval.subgradient / c);
        mean_value += stage.branches[w].prob * eval.value;
    }
    Real offset = mean_value - 0.5 * c * (x - center).squaredNorm();
    return make_cquadratic(c, center, offset, stage.domain,
                           detail::cquad_lip_on_box(c, center, instance.domain_boxes[t]));
}

/// V selection: one averaged Bellman value, then a cone through (x, value)
/// with the certified slope. No averaging of functions takes place.
inline BasicFunction select_v(const MspInstance& instance, int t, const Approximation& uppers_next,
                              const Vec& x) {
    detail::require_in_domain(instance, t, x);
    AverageEval avg = average_bellman(instance, t, uppers_next, x, BellmanKind::UpperV);
    Real n = static_cast<Real>(instance.state_dim);
    if (instance.lip_values[t] <= 0) return make_constant(avg.value, instance.stages[t].domain);
    return make_vshape(instance.lip_values[t] / std::sqrt(n), x, avg.value,
                       instance.stages[t].domain);
}

inline BasicFunction select_interior(const MspInstance& instance, int t, SelectionKind kind,
                                     const Approximation& next, const Vec& x) {
    switch (kind) {
    case SelectionKind::SddpLower: return select_sddp(instance, t, next, x);
    case SelectionKind::UQuad: return select_u(instance, t, next, x);
    case SelectionKind::VShapeUpper: return select_v(instance, t, next, x);
    }
    throw ValidationError("unknown selection kind");
}

// ---------------------------------------------------------------------------
// Tightness / validity audits
// ---------------------------------------------------------------------------

struct SelectionAudit {
    bool tight = false;
    Real max_validity_violation = -kInf;
    Real tight_residual = 0;
};

namespace detail {

inline Real bellman_reference(const MspInstance& instance, int t, SelectionKind kind,
                              const Approximation& next, const Vec& g) {
    if (t == instance.horizon) return instance.final_cost.eval_state(g, 1e-9);
    switch (kind) {
    case SelectionKind::SddpLower:
        return average_bellman(instance, t, next, g, BellmanKind::Lower).value;
    case SelectionKind::UQuad:
        return average_bellman(instance, t, next, g, BellmanKind::UpperU).value;
    case SelectionKind::VShapeUpper:
        return average_bellman(instance, t, next, g, BellmanKind::UpperV).value;
    }
    throw ValidationError("unknown selection kind");
}

} // namespace detail

/// Audit of an already-built member against the Bellman image of `next`
/// (used on recorded runs).
inline SelectionAudit audit_member(const MspInstance& instance, int t, SelectionKind kind,
                                   const Approximation& next, const BasicFunction& member,
                                   const Vec& x, const std::vector<Vec>& grid) {
    SelectionAudit audit;
    Real at_x = eval_basic(member, x);
    Real ref_x = detail::bellman_reference(instance, t, kind, next, x);
    audit.tight_residual = std::abs(at_x - ref_x);
    audit.tight = audit.tight_residual <= instance.config.tight_tol;
    for (const Vec& g : grid) {
        Real ref = detail::bellman_reference(instance, t, kind, next, g);
        Real val = eval_basic(member, g);
        Real violation = is_upper_kind(kind) ? ref - val : val - ref;
        audit.max_validity_violation = std::max(audit.max_validity_violation, violation);
    }
    return audit;
}

/// Reruns the selection at x and measures tightness there plus the largest
/// signed validity violation over the grid (positive numbers mean the member
/// crosses the Bellman image on the wrong side). For t = T the reference is
/// the final cost itself; `next` is ignored then.
inline SelectionAudit audit_selection(const MspInstance& instance, int t, SelectionKind kind,
                                      const Approximation& next, const Vec& x,
                                      const std::vector<Vec>& grid) {
    BasicFunction member = (t == instance.horizon)
                               ? select_terminal(instance, kind, x)
                               : select_interior(instance, t, kind, next, x);
    return audit_member(instance, t, kind, next, member, x, grid);
}

} // namespace tdp
