#pragma once

#include "tdp/funcs.hpp"
#include "tdp/polyhedron.hpp"
#include "tdp/sampling.hpp"
#include "tdp/subsolve.hpp"
#include "tdp/types.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace tdp {

/// One max-term of a polyhedral cost: <c_x,x> + <c_u,u> + d.
struct CostTerm {
    Vec state_coeff;
    Vec control_coeff;
    Real offset = 0;
};

/// max over terms, plus the indicator of the feasible set.
struct PolyhedralCost {
    std::vector<CostTerm> terms;
    Polyhedron feasible_set;

    Real eval(const Vec& x, const Vec& u, Real tol) const {
        if (!feasible_set.contains(x, u, tol)) return kInf;
        Real best = -kInf;
        for (const auto& t : terms)
            best = std::max(best, t.state_coeff.dot(x) + t.control_coeff.dot(u) + t.offset);
        return best;
    }

    /// State-only evaluation (final cost).
    Real eval_state(const Vec& x, Real tol) const {
        if (!feasible_set.contains(x, tol)) return kInf;
        Real best = -kInf;
        for (const auto& t : terms) best = std::max(best, t.state_coeff.dot(x) + t.offset);
        return best;
    }

    /// First term attaining the max at a state point: the deterministic
    /// subgradient choice at kinks.
    const CostTerm& active_state_term(const Vec& x) const {
        Real best = -kInf;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < terms.size(); ++i) {
            Real v = terms[i].state_coeff.dot(x) + terms[i].offset;
            if (v > best + 1e-12) {
                best = v;
                arg = i;
            }
        }
        return terms[arg];
    }
};

/// One noise atom: x' = A x + B u + f, with its probability and stage cost.
struct NoiseBranch {
    Real prob = 0;
    Mat dyn_state;   // A, n x n
    Mat dyn_control; // B, n x m
    Vec dyn_offset;  // f, n (zero when the dynamics are strictly linear)
    PolyhedralCost cost;
};

struct Stage {
    std::vector<NoiseBranch> branches;
    Polyhedron domain; // X_t, state-only
};

struct SolverConfig {
    std::vector<std::vector<Real>> lip_constraint; // L_U, per stage per noise
    std::vector<Real> c_quad;                      // per stage 0..T
    Real lp_tol = 1e-9;
    Real tight_tol = 1e-7;
    int max_iters = 200;
    Real gap_tol = 1e-6;
};

struct MspInstance {
    int horizon = 0; // T
    int state_dim = 0;
    int control_dim = 0;
    Vec x0;
    std::vector<Stage> stages; // T entries
    PolyhedralCost final_cost; // state-only feasible set = X_T
    SolverConfig config;

    std::vector<Box> domain_boxes;  // per stage 0..T, filled by validate()
    std::vector<Real> lip_values;   // L_V, per stage 0..T, filled by validate()

    const Polyhedron& state_domain(int t) const {
        return t < horizon ? stages[t].domain : final_cost.feasible_set;
    }
    int branch_count(int t) const { return static_cast<int>(stages[t].branches.size()); }
};

// ---------------------------------------------------------------------------
// Lipschitz-constant recursion
// ---------------------------------------------------------------------------

namespace detail {

inline Real spectral_norm(const Mat& m) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues()(0);
}

inline Real cost_lipschitz(const PolyhedralCost& cost) {
    Real best = 0;
    for (const auto& t : cost.terms) {
        Real norm2 = t.state_coeff.squaredNorm() + t.control_coeff.squaredNorm();
        best = std::max(best, std::sqrt(norm2));
    }
    return best;
}

inline Real final_cost_lipschitz(const PolyhedralCost& cost) {
    Real best = 0;
    for (const auto& t : cost.terms) best = std::max(best, t.state_coeff.norm());
    return best;
}

} // namespace detail

/// Default constraint-mapping constant when the instance supplies none:
/// 1 + ||(A|B)||. A documented placeholder, not a certified bound.
inline Real default_constraint_lipschitz(const NoiseBranch& branch) {
    Mat stacked(branch.dyn_state.rows(), branch.dyn_state.cols() + branch.dyn_control.cols());
    stacked << branch.dyn_state, branch.dyn_control;
    return 1.0 + detail::spectral_norm(stacked);
}

/// Backward recursion for the value-function Lipschitz constants:
/// L_V[T] from the final cost, then per noise
/// L_w = max(L_cost, L_V[t+1] * L_dyn) * (1 + L_U[t][w]) and
/// L_V[t] = sum_w p_w L_w.
inline std::vector<Real> lipschitz_bounds(const MspInstance& instance) {
    std::vector<Real> lv(instance.horizon + 1, 0.0);
    lv[instance.horizon] = detail::final_cost_lipschitz(instance.final_cost);
    for (int t = instance.horizon - 1; t >= 0; --t) {
        const Stage& stage = instance.stages[t];
        Real acc = 0;
        for (std::size_t w = 0; w < stage.branches.size(); ++w) {
            const NoiseBranch& br = stage.branches[w];
            if (t >= static_cast<int>(instance.config.lip_constraint.size()) ||
                w >= instance.config.lip_constraint[t].size())
                throw ValidationError("missing L_U entry for stage " + std::to_string(t));
            Real l_u = instance.config.lip_constraint[t][w];
            Mat stacked(br.dyn_state.rows(), br.dyn_state.cols() + br.dyn_control.cols());
            stacked << br.dyn_state, br.dyn_control;
            Real l_dyn = detail::spectral_norm(stacked);
            Real l_cost = detail::cost_lipschitz(br.cost);
            Real l_w = std::max(l_cost, lv[t + 1] * l_dyn) * (1.0 + l_u);
            acc += br.prob * l_w;
        }
        lv[t] = acc;
    }
    return lv;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_number(Real v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

} // namespace detail

/// Checks every type invariant; fills the cached domain boxes and L_V values.
inline void validate_instance(MspInstance& instance) {
    const int n = instance.state_dim;
    const int m = instance.control_dim;
    if (instance.horizon < 0) throw ValidationError("schema violation: negative horizon");
    if (static_cast<int>(instance.stages.size()) != instance.horizon)
        throw ValidationError("schema violation: stage count differs from T");
    if (instance.x0.size() != n) throw ValidationError("schema violation: x0 dimension");

    for (int t = 0; t < instance.horizon; ++t) {
        Stage& stage = instance.stages[t];
        if (stage.branches.empty())
            throw ValidationError("stage " + std::to_string(t) + " has no noise branches");
        Real psum = 0;
        for (const NoiseBranch& br : stage.branches) {
            if (br.prob <= 0)
                throw ValidationError("stage " + std::to_string(t) +
                                      " carries a branch with non-positive probability");
            psum += br.prob;
            if (br.dyn_state.rows() != n || br.dyn_state.cols() != n ||
                br.dyn_control.rows() != n || br.dyn_control.cols() != m ||
                br.dyn_offset.size() != n)
                throw ValidationError("schema violation: dynamics dimensions at stage " +
                                      std::to_string(t));
            if (br.cost.terms.empty())
                throw ValidationError("cost without terms at stage " + std::to_string(t));
            for (const CostTerm& term : br.cost.terms)
                if (term.state_coeff.size() != n || term.control_coeff.size() != m)
                    throw ValidationError("schema violation: cost term dimensions at stage " +
                                          std::to_string(t));
            if (br.cost.feasible_set.state_dim() != n || br.cost.feasible_set.control_dim() != m)
                throw ValidationError("schema violation: cost polyhedron dimensions at stage " +
                                      std::to_string(t));
        }
        if (std::abs(psum - 1.0) > 1e-12)
            throw ValidationError("probabilities sum to " + detail::format_number(psum) +
                                  " at stage " + std::to_string(t));
        if (!stage.domain.state_only() || stage.domain.state_dim() != n)
            throw ValidationError("schema violation: stage domain must constrain the state only");
    }
    if (instance.final_cost.terms.empty()) throw ValidationError("final cost without terms");
    for (const CostTerm& term : instance.final_cost.terms)
        if (term.state_coeff.size() != n || term.control_coeff.size() != 0)
            throw ValidationError("schema violation: final cost term dimensions");
    if (!instance.final_cost.feasible_set.state_only())
        throw ValidationError("schema violation: final cost feasible set must be state-only");

    // Fill defaults for the constraint-mapping constants before the recursion.
    if (instance.config.lip_constraint.empty()) {
        for (int t = 0; t < instance.horizon; ++t) {
            std::vector<Real> row;
            for (const NoiseBranch& br : instance.stages[t].branches)
                row.push_back(default_constraint_lipschitz(br));
            instance.config.lip_constraint.push_back(std::move(row));
        }
    }
    if (instance.config.lp_tol <= 0 || instance.config.tight_tol <= 0 ||
        instance.config.gap_tol <= 0)
        throw ValidationError("tolerances must be positive");

    // Domain compactness: 2n support LPs per stage; also caches the boxes.
    instance.domain_boxes.clear();
    for (int t = 0; t <= instance.horizon; ++t) {
        try {
            instance.domain_boxes.push_back(
                detail::bounding_box(instance.state_domain(t), instance.config.lp_tol));
        } catch (const ValidationError& err) {
            throw ValidationError(std::string(err.what()) + " at stage " + std::to_string(t));
        }
    }

    if (!instance.stages.empty() && !instance.stages[0].domain.contains(instance.x0, 1e-9))
        throw ValidationError("x0 infeasible: outside the stage-0 domain");
    if (instance.stages.empty() && !instance.final_cost.feasible_set.contains(instance.x0, 1e-9))
        throw ValidationError("x0 infeasible: outside the final domain");

    instance.lip_values = lipschitz_bounds(instance);
    if (!instance.config.c_quad.empty()) {
        if (static_cast<int>(instance.config.c_quad.size()) != instance.horizon + 1)
            throw ValidationError("schema violation: c_quad needs one entry per stage 0..T");
        for (int t = 0; t <= instance.horizon; ++t)
            if (instance.config.c_quad[t] <= instance.lip_values[t])
                throw ValidationError("c_quad[" + std::to_string(t) +
                                      "] must exceed the value-function Lipschitz constant " +
                                      detail::format_number(instance.lip_values[t]));
    }
}

// ---------------------------------------------------------------------------
// JSON ingestion / serialization
// ---------------------------------------------------------------------------

namespace detail {

inline Mat mat_from_json(const nlohmann::json& j, const char* what) {
    if (!j.is_array()) throw ValidationError(std::string("schema violation: ") + what);
    int rows = static_cast<int>(j.size());
    int cols = rows > 0 ? static_cast<int>(j[0].size()) : 0;
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols)
            throw ValidationError(std::string("schema violation: ragged matrix in ") + what);
        for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<Real>();
    }
    return m;
}

inline nlohmann::json mat_to_json(const Mat& m) {
    nlohmann::json j = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        j.push_back(row);
    }
    return j;
}

inline nlohmann::json vec_to_json(const Vec& v) {
    nlohmann::json j = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

} // namespace detail

inline MspInstance load_instance(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& err) {
        throw ValidationError(std::string("schema violation: ") + err.what());
    }
    MspInstance instance;
    try {
        instance.horizon = j.at("T").get<int>();
        instance.state_dim = j.at("n").get<int>();
        instance.control_dim = j.at("m").get<int>();
        instance.x0 = vec_from_json(j.at("x0"));
        const int n = instance.state_dim;
        const int m = instance.control_dim;
        for (const auto& js : j.at("stages")) {
            Stage stage;
            const auto& jd = js.at("domain");
            stage.domain = Polyhedron::make_state_only(detail::mat_from_json(jd.at("G"), "domain.G"),
                                                       vec_from_json(jd.at("h")));
            for (const auto& jb : js.at("branches")) {
                NoiseBranch br;
                br.prob = jb.at("prob").get<Real>();
                br.dyn_state = detail::mat_from_json(jb.at("A"), "A");
                br.dyn_control = detail::mat_from_json(jb.at("B"), "B");
                br.dyn_offset = jb.contains("f") ? vec_from_json(jb.at("f")) : Vec::Zero(n);
                const auto& jc = jb.at("cost");
                for (const auto& jt : jc.at("terms")) {
                    CostTerm term;
                    term.state_coeff = vec_from_json(jt.at("c_x"));
                    term.control_coeff = vec_from_json(jt.at("c_u"));
                    term.offset = jt.at("d").get<Real>();
                    br.cost.terms.push_back(std::move(term));
                }
                br.cost.feasible_set =
                    Polyhedron::make(detail::mat_from_json(jc.at("G_x"), "G_x"),
                                     detail::mat_from_json(jc.at("G_u"), "G_u"),
                                     vec_from_json(jc.at("h")));
                if (br.cost.feasible_set.control_dim() == 0 && m > 0)
                    br.cost.feasible_set.control_coeffs =
                        Mat::Zero(br.cost.feasible_set.rows(), m);
                stage.branches.push_back(std::move(br));
            }
            instance.stages.push_back(std::move(stage));
        }
        const auto& jf = j.at("final_cost");
        for (const auto& jt : jf.at("terms")) {
            CostTerm term;
            term.state_coeff = vec_from_json(jt.at("c_x"));
            term.control_coeff = Vec::Zero(0);
            term.offset = jt.at("d").get<Real>();
            instance.final_cost.terms.push_back(std::move(term));
        }
        instance.final_cost.feasible_set = Polyhedron::make_state_only(
            detail::mat_from_json(jf.at("G"), "final_cost.G"), vec_from_json(jf.at("h")));
        const auto& jc = j.at("config");
        if (jc.contains("L_U")) {
            for (const auto& row : jc.at("L_U"))
                instance.config.lip_constraint.push_back(row.get<std::vector<Real>>());
        }
        if (jc.contains("c_quad")) instance.config.c_quad = jc.at("c_quad").get<std::vector<Real>>();
        instance.config.lp_tol = jc.at("lp_tol").get<Real>();
        instance.config.tight_tol = jc.at("tight_tol").get<Real>();
        instance.config.max_iters = jc.at("max_iters").get<int>();
        instance.config.gap_tol = jc.at("gap_tol").get<Real>();
    } catch (const nlohmann::json::exception& err) {
        throw ValidationError(std::string("schema violation: ") + err.what());
    }
    validate_instance(instance);
    return instance;
}

inline std::string save_instance(const MspInstance& instance) {
    nlohmann::json j;
    j["T"] = instance.horizon;
    j["n"] = instance.state_dim;
    j["m"] = instance.control_dim;
    j["x0"] = detail::vec_to_json(instance.x0);
    j["stages"] = nlohmann::json::array();
    for (const Stage& stage : instance.stages) {
        nlohmann::json js;
        js["domain"] = {{"G", detail::mat_to_json(stage.domain.state_coeffs)},
                        {"h", detail::vec_to_json(stage.domain.bound)}};
        js["branches"] = nlohmann::json::array();
        for (const NoiseBranch& br : stage.branches) {
            nlohmann::json jb;
            jb["prob"] = br.prob;
            jb["A"] = detail::mat_to_json(br.dyn_state);
            jb["B"] = detail::mat_to_json(br.dyn_control);
            jb["f"] = detail::vec_to_json(br.dyn_offset);
            nlohmann::json jcost;
            jcost["terms"] = nlohmann::json::array();
            for (const CostTerm& term : br.cost.terms)
                jcost["terms"].push_back({{"c_x", detail::vec_to_json(term.state_coeff)},
                                          {"c_u", detail::vec_to_json(term.control_coeff)},
                                          {"d", term.offset}});
            jcost["G_x"] = detail::mat_to_json(br.cost.feasible_set.state_coeffs);
            jcost["G_u"] = detail::mat_to_json(br.cost.feasible_set.control_coeffs);
            jcost["h"] = detail::vec_to_json(br.cost.feasible_set.bound);
            jb["cost"] = std::move(jcost);
            js["branches"].push_back(std::move(jb));
        }
        j["stages"].push_back(std::move(js));
    }
    nlohmann::json jf;
    jf["terms"] = nlohmann::json::array();
    for (const CostTerm& term : instance.final_cost.terms)
        jf["terms"].push_back({{"c_x", detail::vec_to_json(term.state_coeff)}, {"d", term.offset}});
    jf["G"] = detail::mat_to_json(instance.final_cost.feasible_set.state_coeffs);
    jf["h"] = detail::vec_to_json(instance.final_cost.feasible_set.bound);
    j["final_cost"] = std::move(jf);
    nlohmann::json jc;
    jc["L_U"] = instance.config.lip_constraint;
    if (!instance.config.c_quad.empty()) jc["c_quad"] = instance.config.c_quad;
    jc["lp_tol"] = instance.config.lp_tol;
    jc["tight_tol"] = instance.config.tight_tol;
    jc["max_iters"] = instance.config.max_iters;
    jc["gap_tol"] = instance.config.gap_tol;
    j["config"] = std::move(jc);
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Recourse verification by sampling
// ---------------------------------------------------------------------------

struct RecourseViolation {
    int t = 0;
    int noise = 0;
    Vec state;
};

namespace detail {

/// Vertices of a state-only polyhedron for n <= 2 (interval endpoints in 1-D,
/// pairwise row intersections in 2-D).
inline std::vector<Vec> domain_vertices(const Polyhedron& domain, const Box& box, Real tol) {
    std::vector<Vec> verts;
    int n = domain.state_dim();
    if (n == 1) {
        verts.push_back(box.lo);
        verts.push_back(box.hi);
        return verts;
    }
    if (n != 2) return verts;
    const Mat& g = domain.state_coeffs;
    const Vec& h = domain.bound;
    for (int i = 0; i < g.rows(); ++i) {
        for (int k = i + 1; k < g.rows(); ++k) {
            Mat a(2, 2);
            a.row(0) = g.row(i);
            a.row(1) = g.row(k);
            if (std::abs(a.determinant()) < 1e-10) continue;
            Vec rhs(2);
            rhs << h[i], h[k];
            Vec x = a.fullPivLu().solve(rhs);
            if (!domain.contains(x, 1e-8)) continue;
            bool dup = false;
            for (const Vec& v : verts)
                if ((v - x).norm() < 1e-9) dup = true;
            if (!dup) verts.push_back(x);
        }
    }
    (void)tol;
    return verts;
}

/// Feasibility of {u : (x,u) in P, A x + B u + f in X_next} via one LP.
inline bool recourse_feasible(const MspInstance& instance, int t, const NoiseBranch& br,
                              const Vec& x) {
    const int m = instance.control_dim;
    const Polyhedron& next = instance.state_domain(t + 1);
    LinearProgram lp = LinearProgram::make(std::max(m, 1));
    if (m == 0) {
        // No controls: feasibility is a direct membership test.
        return br.cost.feasible_set.contains(x, Vec::Zero(0), instance.config.lp_tol) &&
               next.contains(br.dyn_state * x + br.dyn_offset, instance.config.lp_tol);
    }
    const Polyhedron& p = br.cost.feasible_set;
    for (int r = 0; r < p.rows(); ++r)
        lp.add_row(p.control_coeffs.row(r).transpose(), Relation::LessEq,
                   p.bound[r] - p.state_coeffs.row(r).dot(x));
    Vec shift = br.dyn_state * x + br.dyn_offset;
    for (int r = 0; r < next.rows(); ++r)
        lp.add_row((next.state_coeffs.row(r) * br.dyn_control).transpose(), Relation::LessEq,
                   next.bound[r] - next.state_coeffs.row(r).dot(shift));
    SolveResult res = solve_lp(lp, instance.config.lp_tol);
    return res.status == SolveStatus::Optimal;
}

} // namespace detail

/// Samples each stage domain on a deterministic low-discrepancy sequence
/// (plus all vertices when n <= 2) and reports every (t, noise, x) whose
/// control set is empty. An empty report is the pass condition.
inline std::vector<RecourseViolation> check_recourse(const MspInstance& instance, int samples) {
    std::vector<RecourseViolation> report;
    for (int t = 0; t < instance.horizon; ++t) {
        const Box& box = instance.domain_boxes[t];
        std::vector<Vec> points =
            detail::domain_vertices(instance.stages[t].domain, box, instance.config.lp_tol);
        std::uint64_t index = 0;
        int accepted = 0;
        std::uint64_t guard = 0;
        while (accepted < samples && guard < 200ull * static_cast<std::uint64_t>(samples) + 1000) {
            Vec x = box_halton(box.lo, box.hi, index++);
            ++guard;
            if (!instance.stages[t].domain.contains(x, 1e-12)) continue;
            points.push_back(x);
            ++accepted;
        }
        for (const Vec& x : points) {
            for (int w = 0; w < instance.branch_count(t); ++w) {
                if (!detail::recourse_feasible(instance, t, instance.stages[t].branches[w], x))
                    report.push_back(RecourseViolation{t, w, x});
            }
        }
    }
    return report;
}

} // namespace tdp
