#pragma once

#include "tdp/polyhedron.hpp"
#include "tdp/sampling.hpp"
#include "tdp/subsolve.hpp"
#include "tdp/types.hpp"

#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <variant>
#include <vector>

namespace tdp {

// ---------------------------------------------------------------------------
// Basic functions: the elementary shapes combined by min-plus / max-plus
// aggregation. Every instance carries the domain it is restricted to and a
// Lipschitz certificate valid on that domain.
// ---------------------------------------------------------------------------

struct AffineFn {
    Vec slope;   // a
    Real offset; // b
};

struct CQuadraticFn {
    Real curvature; // c > 0
    Vec center;     // a
    Real offset;    // b
};

struct VShapeFn {
    Real slope;  // L > 0, applied to the l1 norm
    Vec apex;    // a
    Real offset; // b
};

struct ConstantFn {
    Real offset; // b
};

struct BasicFunction {
    std::variant<AffineFn, CQuadraticFn, VShapeFn, ConstantFn> form;
    Polyhedron domain; // state-only X_t
    Real lip_bound = 0;
};

inline BasicFunction make_affine(Vec slope, Real offset, Polyhedron domain, Real lip_bound) {
    if (slope.norm() > lip_bound + 1e-9)
        throw ValidationError("affine slope norm exceeds the Lipschitz certificate");
    BasicFunction f;
    f.form = AffineFn{std::move(slope), offset};
    f.domain = std::move(domain);
    f.lip_bound = lip_bound;
    return f;
}

inline BasicFunction make_cquadratic(Real curvature, Vec center, Real offset, Polyhedron domain,
                                     Real lip_bound) {
    if (curvature <= 0) throw ValidationError("c-quadratic needs positive curvature");
    BasicFunction f;
    f.form = CQuadraticFn{curvature, std::move(center), offset};
    f.domain = std::move(domain);
    f.lip_bound = lip_bound;
    return f;
}

inline BasicFunction make_vshape(Real slope, Vec apex, Real offset, Polyhedron domain) {
    if (slope <= 0) throw ValidationError("v-shape needs positive slope");
    Real n = static_cast<Real>(apex.size());
    BasicFunction f;
    f.lip_bound = slope * std::sqrt(n); // euclidean constant of L * l1-norm
    f.form = VShapeFn{slope, std::move(apex), offset};
    f.domain = std::move(domain);
    return f;
}

inline BasicFunction make_constant(Real offset, Polyhedron domain) {
    BasicFunction f;
    f.form = ConstantFn{offset};
    f.domain = std::move(domain);
    f.lip_bound = 0;
    return f;
}

/// Evaluates the variant formula plus the domain indicator; +infinity outside
/// the domain for every variant (upper and lower members alike).
inline Real eval_basic(const BasicFunction& f, const Vec& x, Real tol = 1e-9) {
    if (!f.domain.contains(x, tol)) return kInf;
    struct Visitor {
        const Vec& x;
        Real operator()(const AffineFn& a) const { return a.slope.dot(x) + a.offset; }
        Real operator()(const CQuadraticFn& q) const {
            return 0.5 * q.curvature * (x - q.center).squaredNorm() + q.offset;
        }
        Real operator()(const VShapeFn& v) const {
            return v.slope * (x - v.apex).lpNorm<1>() + v.offset;
        }
        Real operator()(const ConstantFn& c) const { return c.offset; }
    };
    return std::visit(Visitor{x}, f.form);
}

// ---------------------------------------------------------------------------
// Aggregations
// ---------------------------------------------------------------------------

enum class AggregationMode { MinPlus, MaxPlus };

/// Append-only ordered collection of basic functions. Min-plus evaluates the
/// pointwise minimum, max-plus the maximum; ties resolve to the earliest
/// member. Empty min-plus is +inf, empty max-plus is -inf (observable only
/// before seeding).
class Approximation {
  public:
    Approximation() = default;
    Approximation(AggregationMode mode, int stage) : mode_(mode), stage_(stage) {}

    AggregationMode mode() const { return mode_; }
    int stage() const { return stage_; }
    const std::vector<BasicFunction>& members() const { return members_; }
    std::size_t size() const { return members_.size(); }
    bool empty() const { return members_.empty(); }

    void append(BasicFunction f) { members_.push_back(std::move(f)); }

    Real eval(const Vec& x, Real tol = 1e-9) const { return eval_prefix(x, members_.size(), tol); }

    /// Evaluates using only the first `count` members: the approximation as it
    /// stood after the corresponding earlier iteration.
    Real eval_prefix(const Vec& x, std::size_t count, Real tol = 1e-9) const {
        Real best = (mode_ == AggregationMode::MinPlus) ? kInf : -kInf;
        count = std::min(count, members_.size());
        for (std::size_t i = 0; i < count; ++i) {
            Real v = eval_basic(members_[i], x, tol);
            if (mode_ == AggregationMode::MinPlus) {
                if (v < best) best = v;
            } else {
                if (v > best) best = v;
            }
        }
        return best;
    }

  private:
    AggregationMode mode_ = AggregationMode::MinPlus;
    int stage_ = 0;
    std::vector<BasicFunction> members_;
};

inline Real eval_approx(const Approximation& approx, const Vec& x, Real tol = 1e-9) {
    return approx.eval(x, tol);
}

namespace detail {

/// Bounding box of a state-only polyhedron via 2n support LPs.
inline Box bounding_box(const Polyhedron& domain, Real tol) {
    int n = domain.state_dim();
    Box box{Vec(n), Vec(n)};
    for (int i = 0; i < n; ++i) {
        for (int sign : {+1, -1}) {
            LinearProgram lp = LinearProgram::make(n);
            lp.objective = Vec::Zero(n);
            lp.objective[i] = sign;
            lp.rows = domain.state_coeffs;
            lp.relations.assign(domain.rows(), Relation::LessEq);
            lp.rhs = domain.bound;
            SolveResult res = solve_lp(lp, tol);
            if (res.status == SolveStatus::Unbounded)
                throw ValidationError(std::string("domain unbounded in direction ") +
                                      (sign > 0 ? "-" : "+") + "e" + std::to_string(i + 1));
            if (res.status == SolveStatus::Infeasible) throw ValidationError("domain is empty");
            if (res.status != SolveStatus::Optimal) throw NumericalError("support LP failed");
            if (sign > 0)
                box.lo[i] = res.value;
            else
                box.hi[i] = -res.value;
        }
    }
    return box;
}

} // namespace detail

/// Empirical Lipschitz audit: max |V(x)-V(y)| / ||x-y|| over deterministic
/// pseudo-random pairs drawn in the members' common domain.
inline Real lipschitz_check(const Approximation& approx, int sample_pairs, unsigned seed) {
    if (approx.empty()) throw ValidationError("lipschitz_check on empty approximation");
    const Polyhedron& domain = approx.members().front().domain;
    Box box = detail::bounding_box(domain, 1e-9);
    std::mt19937_64 gen(seed);
    auto draw = [&]() {
        for (int guard = 0; guard < 1000000; ++guard) {
            Vec x = box_point(box.lo, box.hi, gen);
            if (domain.contains(x, 1e-12)) return x;
        }
        throw NumericalError("domain sampling rejection did not terminate");
    };
    Real worst = 0;
    for (int k = 0; k < sample_pairs; ++k) {
        Vec x = draw();
        Vec y = draw();
        Real dist = (x - y).norm();
        if (dist < 1e-12) continue;
        Real vx = approx.eval(x);
        Real vy = approx.eval(y);
        if (!std::isfinite(vx) || !std::isfinite(vy)) continue;
        worst = std::max(worst, std::abs(vx - vy) / dist);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json basic_to_json(const BasicFunction& f) {
    nlohmann::json j;
    struct Visitor {
        nlohmann::json& j;
        void operator()(const AffineFn& a) const {
            j["kind"] = "affine";
            j["a"] = std::vector<Real>(a.slope.begin(), a.slope.end());
            j["b"] = a.offset;
        }
        void operator()(const CQuadraticFn& q) const {
            j["kind"] = "cquad";
            j["c"] = q.curvature;
            j["a"] = std::vector<Real>(q.center.begin(), q.center.end());
            j["b"] = q.offset;
        }
        void operator()(const VShapeFn& v) const {
            j["kind"] = "vshape";
            j["L"] = v.slope;
            j["a"] = std::vector<Real>(v.apex.begin(), v.apex.end());
            j["b"] = v.offset;
        }
        void operator()(const ConstantFn& c) const {
            j["kind"] = "const";
            j["b"] = c.offset;
        }
    };
    std::visit(Visitor{j}, f.form);
    j["lip"] = f.lip_bound;
    return j;
}

inline nlohmann::json approximation_to_json(const Approximation& approx) {
    nlohmann::json j;
    j["mode"] = approx.mode() == AggregationMode::MinPlus ? "min" : "max";
    j["stage"] = approx.stage();
    j["members"] = nlohmann::json::array();
    for (const auto& m : approx.members()) j["members"].push_back(basic_to_json(m));
    return j;
}

inline Vec vec_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw ValidationError("schema violation: expected a numeric array");
    Vec v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ValidationError("schema violation: expected a number");
        v[i] = j[i].get<Real>();
    }
    return v;
}

inline BasicFunction basic_from_json(const nlohmann::json& j, const Polyhedron& domain) {
    const std::string kind = j.at("kind").get<std::string>();
    Real lip = j.value("lip", 0.0);
    if (kind == "affine") return make_affine(vec_from_json(j.at("a")), j.at("b").get<Real>(), domain, lip);
    if (kind == "cquad")
        return make_cquadratic(j.at("c").get<Real>(), vec_from_json(j.at("a")),
                               j.at("b").get<Real>(), domain, lip);
    if (kind == "vshape")
        return make_vshape(j.at("L").get<Real>(), vec_from_json(j.at("a")), j.at("b").get<Real>(),
                           domain);
    if (kind == "const") return make_constant(j.at("b").get<Real>(), domain);
    throw ValidationError("schema violation: unknown basic function kind '" + kind + "'");
}

inline Approximation approximation_from_json(const nlohmann::json& j, const Polyhedron& domain) {
    AggregationMode mode;
    const std::string m = j.at("mode").get<std::string>();
    if (m == "min")
        mode = AggregationMode::MinPlus;
    else if (m == "max")
        mode = AggregationMode::MaxPlus;
    else
        throw ValidationError("schema violation: mode must be 'min' or 'max'");
    Approximation approx(mode, j.at("stage").get<int>());
    for (const auto& mj : j.at("members")) approx.append(basic_from_json(mj, domain));
    return approx;
}

} // namespace tdp
