#pragma once

#include "tdp/types.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdlib>
#include <vector>

namespace tdp {

enum class Relation { LessEq, GreaterEq, Eq };
enum class SolveStatus { Optimal, Infeasible, Unbounded, NumericalFailure };

/// min c'x  s.t.  rows_i . x  (<=|>=|=)  rhs_i,  lower <= x <= upper.
/// Bounds may be +-infinity.
struct LinearProgram {
    Vec objective;
    Mat rows;
    std::vector<Relation> relations;
    Vec rhs;
    Vec lower;
    Vec upper;

    int num_vars() const { return static_cast<int>(objective.size()); }
    int num_rows() const { return static_cast<int>(rhs.size()); }

    static LinearProgram make(int nv) {
        LinearProgram lp;
        lp.objective = Vec::Zero(nv);
        lp.rows = Mat::Zero(0, nv);
        lp.rhs = Vec::Zero(0);
        lp.lower = Vec::Constant(nv, -kInf);
        lp.upper = Vec::Constant(nv, kInf);
        return lp;
    }

    void add_row(const Vec& coeffs, Relation rel, Real b) {
        rows.conservativeResize(rows.rows() + 1, Eigen::NoChange);
        rows.row(rows.rows() - 1) = coeffs.transpose();
        rhs.conservativeResize(rhs.size() + 1);
        rhs[rhs.size() - 1] = b;
        relations.push_back(rel);
    }

    void validate() const {
        if (num_vars() < 1) throw ValidationError("linear program has no variables");
        if (rows.cols() != num_vars() || static_cast<int>(relations.size()) != num_rows())
            throw ValidationError("linear program dimensions disagree");
        if (lower.size() != num_vars() || upper.size() != num_vars())
            throw ValidationError("linear program bound dimensions disagree");
    }
};

/// min  x'Qx/2 + q'x  over the same constraint format as LinearProgram.
struct QuadraticProgram {
    Mat quadratic;
    Vec linear;
    Mat rows;
    std::vector<Relation> relations;
    Vec rhs;
    Vec lower;
    Vec upper;

    int num_vars() const { return static_cast<int>(linear.size()); }
    int num_rows() const { return static_cast<int>(rhs.size()); }

    static QuadraticProgram make(int nv) {
        QuadraticProgram qp;
        qp.quadratic = Mat::Zero(nv, nv);
        qp.linear = Vec::Zero(nv);
        qp.rows = Mat::Zero(0, nv);
        qp.rhs = Vec::Zero(0);
        qp.lower = Vec::Constant(nv, -kInf);
        qp.upper = Vec::Constant(nv, kInf);
        return qp;
    }

    void add_row(const Vec& coeffs, Relation rel, Real b) {
        rows.conservativeResize(rows.rows() + 1, Eigen::NoChange);
        rows.row(rows.rows() - 1) = coeffs.transpose();
        rhs.conservativeResize(rhs.size() + 1);
        rhs[rhs.size() - 1] = b;
        relations.push_back(rel);
    }

    void validate(Real tol) const {
        if (num_vars() < 1) throw ValidationError("quadratic program has no variables");
        if (quadratic.rows() != num_vars() || quadratic.cols() != num_vars())
            throw ValidationError("quadratic term dimensions disagree");
        if ((quadratic - quadratic.transpose()).cwiseAbs().maxCoeff() > std::max(tol, 1e-10))
            throw ValidationError("quadratic term is not symmetric");
        if (rows.cols() != num_vars() || static_cast<int>(relations.size()) != num_rows())
            throw ValidationError("quadratic program dimensions disagree");
    }
};

/// `duals[i]` is the sensitivity d(value)/d(rhs_i) of the optimal value to the
/// i-th row's right-hand side. For a minimization this is <= 0 on active
/// LessEq rows and >= 0 on active GreaterEq rows.
struct SolveResult {
    SolveStatus status = SolveStatus::NumericalFailure;
    Vec primal;
    Real value = 0.0;
    Vec duals;
};

struct SolveCounters {
    long lp_solves = 0;
    long qp_solves = 0;
};

/// Process-wide subproblem counters (single-writer; the solve loop is
/// sequential by contract).
inline SolveCounters& solve_counters() {
    static SolveCounters counters;
    return counters;
}

inline void reset_solve_counters() { solve_counters() = SolveCounters{}; }

namespace detail {

/// Two-phase primal simplex over bounded variables with one slack per row.
/// Dantzig pricing, Bland's rule after a run of degenerate pivots. Fully
/// deterministic: all ties resolve to the smallest variable index.
class BoundedSimplex {
  public:
    BoundedSimplex(const LinearProgram& lp, Real tol)
        : nv_(lp.num_vars()), nr_(lp.num_rows()), total_(nv_ + nr_),
          feas_tol_(std::max(tol, 1e-11)), opt_tol_(std::max(tol, 1e-11)) {
        cols_ = Mat::Zero(nr_, total_);
        cost_ = Vec::Zero(total_);
        lo_ = Vec::Constant(total_, -kInf);
        up_ = Vec::Constant(total_, kInf);
        rhs_ = lp.rhs;
        cost_.head(nv_) = lp.objective;
        lo_.head(nv_) = lp.lower;
        up_.head(nv_) = lp.upper;
        for (int r = 0; r < nr_; ++r) {
            // Internally every row reads  a.x + s = b  with a sign-normalized
            // slack: LessEq keeps s >= 0, GreaterEq flips the row.
            Real sign = (lp.relations[r] == Relation::GreaterEq) ? -1.0 : 1.0;
            cols_.row(r).head(nv_) = sign * lp.rows.row(r);
            rhs_[r] *= sign;
            row_sign_.push_back(sign);
            cols_(r, nv_ + r) = 1.0;
            lo_[nv_ + r] = 0.0;
            up_[nv_ + r] = (lp.relations[r] == Relation::Eq) ? 0.0 : kInf;
        }
    }

    SolveResult solve() {
        SolveResult res;
        init_point();
        const long cap = 2000 + 200L * total_;
        int degenerate_run = 0;
        bool bland = false;
        for (long iter = 0; iter < cap; ++iter) {
            if (!refresh_basics()) return res; // singular basis
            bool phase1 = infeasibility() > feas_tol_;
            Vec y = row_prices(phase1);
            int entering = -1, dir = 0;
            pick_entering(y, phase1, bland, entering, dir);
            if (entering < 0) {
                if (phase1) {
                    res.status = SolveStatus::Infeasible;
                    return res;
                }
                finish(res);
                return res;
            }
            Vec w = lu_.solve(cols_.col(entering));
            Real step = kInf;
            int block_pos = -1; // index into basis_, or -2 for the entering bound
            ratio_test(entering, dir, w, phase1, step, block_pos);
            if (!std::isfinite(step)) {
                res.status = phase1 ? SolveStatus::NumericalFailure : SolveStatus::Unbounded;
                return res;
            }
            apply_step(entering, dir, w, step, block_pos);
            if (step <= feas_tol_) {
                if (++degenerate_run > 60) bland = true;
            } else {
                degenerate_run = 0;
                bland = false;
            }
        }
        res.status = SolveStatus::NumericalFailure;
        return res;
    }

  private:
    enum class VarState { Basic, AtLower, AtUpper, FreeZero };

    int nv_, nr_, total_;
    Real feas_tol_, opt_tol_;
    Mat cols_;
    Vec cost_, lo_, up_, rhs_;
    std::vector<Real> row_sign_;
    std::vector<int> basis_;
    std::vector<VarState> state_;
    Vec x_;
    Eigen::PartialPivLU<Mat> lu_;

    void init_point() {
        basis_.resize(nr_);
        state_.assign(total_, VarState::AtLower);
        x_ = Vec::Zero(total_);
        for (int j = 0; j < nv_; ++j) {
            if (std::isfinite(lo_[j])) {
                state_[j] = VarState::AtLower;
                x_[j] = lo_[j];
            } else if (std::isfinite(up_[j])) {
                state_[j] = VarState::AtUpper;
                x_[j] = up_[j];
            } else {
                state_[j] = VarState::FreeZero;
                x_[j] = 0.0;
            }
        }
        for (int r = 0; r < nr_; ++r) {
            basis_[r] = nv_ + r;
            state_[nv_ + r] = VarState::Basic;
        }
    }

    bool refresh_basics() {
        Mat b(nr_, nr_);
        for (int r = 0; r < nr_; ++r) b.col(r) = cols_.col(basis_[r]);
        lu_.compute(b);
        Vec adj = rhs_;
        for (int j = 0; j < total_; ++j)
            if (state_[j] != VarState::Basic && x_[j] != 0.0) adj -= cols_.col(j) * x_[j];
        Vec xb = lu_.solve(adj);
        if (!xb.allFinite()) return false;
        for (int r = 0; r < nr_; ++r) x_[basis_[r]] = xb[r];
        return true;
    }

    Real infeasibility() const {
        Real total = 0;
        for (int r = 0; r < nr_; ++r) {
            int j = basis_[r];
            total += std::max<Real>(lo_[j] - x_[j], 0.0) + std::max<Real>(x_[j] - up_[j], 0.0);
        }
        return total;
    }

    Vec row_prices(bool phase1) const {
        Vec cb(nr_);
        for (int r = 0; r < nr_; ++r) {
            int j = basis_[r];
            if (phase1)
                cb[r] = (x_[j] < lo_[j] - feas_tol_) ? -1.0
                                                     : ((x_[j] > up_[j] + feas_tol_) ? 1.0 : 0.0);
            else
                cb[r] = cost_[j];
        }
        return lu_.transpose().solve(cb);
    }

    void pick_entering(const Vec& y, bool phase1, bool bland, int& entering, int& dir) const {
        Real best = opt_tol_;
        for (int j = 0; j < total_; ++j) {
            if (state_[j] == VarState::Basic) continue;
            if (lo_[j] == up_[j]) continue; // fixed variable never prices in
            Real cj = phase1 ? 0.0 : cost_[j];
            Real d = cj - y.dot(cols_.col(j));
            int cand_dir = 0;
            if ((state_[j] == VarState::AtLower || state_[j] == VarState::FreeZero) &&
                d < -opt_tol_)
                cand_dir = 1;
            else if ((state_[j] == VarState::AtUpper || state_[j] == VarState::FreeZero) &&
                     d > opt_tol_)
                cand_dir = -1;
            if (cand_dir == 0) continue;
            if (bland) {
                entering = j;
                dir = cand_dir;
                return;
            }
            if (std::abs(d) > best) {
                best = std::abs(d);
                entering = j;
                dir = cand_dir;
            }
        }
    }

    void ratio_test(int entering, int dir, const Vec& w, bool phase1, Real& step,
                    int& block_pos) const {
        step = kInf;
        block_pos = -1;
        // The entering variable's own opposite bound allows a bound flip.
        Real own = kInf;
        if (state_[entering] == VarState::AtLower && std::isfinite(up_[entering]))
            own = up_[entering] - lo_[entering];
        else if (state_[entering] == VarState::AtUpper && std::isfinite(lo_[entering]))
            own = up_[entering] - lo_[entering];
        if (own < step) {
            step = own;
            block_pos = -2;
        }
        for (int r = 0; r < nr_; ++r) {
            Real delta = -dir * w[r];
            if (std::abs(delta) <= 1e-12) continue;
            int j = basis_[r];
            Real xb = x_[j], target;
            if (phase1 && xb < lo_[j] - feas_tol_) {
                if (delta <= 0) continue; // moving further below: never blocks
                target = lo_[j];
            } else if (phase1 && xb > up_[j] + feas_tol_) {
                if (delta >= 0) continue;
                target = up_[j];
            } else {
                target = delta > 0 ? up_[j] : lo_[j];
            }
            if (!std::isfinite(target)) continue;
            Real theta = std::max<Real>((target - xb) / delta, 0.0);
            bool better = theta < step - 1e-13;
            bool tie = !better && theta < step + 1e-13;
            // Ties prefer an existing bound flip, then the smallest variable
            // index, keeping the pivot sequence deterministic.
            if (better || (tie && block_pos >= 0 && j < basis_[block_pos])) {
                step = theta;
                block_pos = r;
            }
        }
    }

    void apply_step(int entering, int dir, const Vec& w, Real step, int block_pos) {
        x_[entering] += dir * step;
        for (int r = 0; r < nr_; ++r) x_[basis_[r]] -= dir * step * w[r];
        if (block_pos == -2) {
            state_[entering] =
                (state_[entering] == VarState::AtLower) ? VarState::AtUpper : VarState::AtLower;
            x_[entering] = (state_[entering] == VarState::AtLower) ? lo_[entering] : up_[entering];
            return;
        }
        int leaving = basis_[block_pos];
        // The leaving variable reached a finite target; classify it by the
        // nearer finite bound.
        Real to_lower = std::isfinite(lo_[leaving]) ? std::abs(x_[leaving] - lo_[leaving]) : kInf;
        Real to_upper = std::isfinite(up_[leaving]) ? std::abs(x_[leaving] - up_[leaving]) : kInf;
        bool at_lower = to_lower <= to_upper;
        state_[leaving] = at_lower ? VarState::AtLower : VarState::AtUpper;
        x_[leaving] = at_lower ? lo_[leaving] : up_[leaving];
        basis_[block_pos] = entering;
        state_[entering] = VarState::Basic;
    }

    void finish(SolveResult& res) {
        Vec y = row_prices(false);
        res.status = SolveStatus::Optimal;
        res.primal = x_.head(nv_);
        res.value = cost_.head(nv_).dot(res.primal);
        res.duals = Vec(nr_);
        for (int r = 0; r < nr_; ++r) res.duals[r] = row_sign_[r] * y[r];
    }
};

} // namespace detail

inline Real lp_dual_objective(const LinearProgram& lp, const SolveResult& res, Real tol);

namespace detail {

/// Debug-build audit: the reported primal value must meet the explicit dual
/// objective under the reported multipliers.
inline void assert_strong_duality(const LinearProgram& lp, const SolveResult& res, Real tol) {
#ifndef NDEBUG
    if (res.status != SolveStatus::Optimal) return;
    Real dual = lp_dual_objective(lp, res, tol);
    assert(std::isnan(dual) ||
           std::abs(dual - res.value) <= 10 * tol * (1.0 + std::abs(res.value)) + 1e-9);
#else
    (void)lp;
    (void)res;
    (void)tol;
#endif
}

} // namespace detail

/// Solves a dense LP. Deterministic: identical inputs give bitwise-identical
/// primal vectors. Never throws on Infeasible/Unbounded; those are statuses.
inline SolveResult solve_lp(const LinearProgram& lp, Real tol) {
    lp.validate();
    ++solve_counters().lp_solves;
    const int nv = lp.num_vars();
    if (lp.num_rows() == 0) {
        // Pure bound problem: each variable sits at the bound its cost prefers.
        SolveResult res;
        res.primal = Vec::Zero(nv);
        for (int j = 0; j < nv; ++j) {
            Real c = lp.objective[j];
            if (lp.lower[j] > lp.upper[j] + tol) {
                res.status = SolveStatus::Infeasible;
                return res;
            }
            if (c > tol) {
                if (!std::isfinite(lp.lower[j])) {
                    res.status = SolveStatus::Unbounded;
                    return res;
                }
                res.primal[j] = lp.lower[j];
            } else if (c < -tol) {
                if (!std::isfinite(lp.upper[j])) {
                    res.status = SolveStatus::Unbounded;
                    return res;
                }
                res.primal[j] = lp.upper[j];
            } else {
                res.primal[j] = std::isfinite(lp.lower[j])
                                    ? lp.lower[j]
                                    : (std::isfinite(lp.upper[j]) ? lp.upper[j] : 0.0);
            }
        }
        res.value = lp.objective.dot(res.primal);
        res.duals = Vec::Zero(0);
        res.status = SolveStatus::Optimal;
        detail::assert_strong_duality(lp, res, tol);
        return res;
    }
    detail::BoundedSimplex simplex(lp, tol);
    SolveResult res = simplex.solve();
    detail::assert_strong_duality(lp, res, tol);
    return res;
}

/// Residuals of the KKT conditions at a reported optimum. `stationarity`
/// folds variable-bound multipliers in sign-aware form, so it is zero at an
/// exact optimum even with active bounds.
struct KktReport {
    Real primal_infeasibility = 0;
    Real stationarity = 0;
    Real complementarity = 0;
};

namespace detail {

inline KktReport audit_kkt(const Mat& quadratic, const Vec& linear, const Mat& rows,
                           const std::vector<Relation>& relations, const Vec& rhs,
                           const Vec& lower, const Vec& upper, const SolveResult& res,
                           Real tol) {
    KktReport rep;
    const Vec& x = res.primal;
    for (int r = 0; r < rows.rows(); ++r) {
        Real ax = rows.row(r).dot(x);
        Real viol = 0;
        switch (relations[r]) {
        case Relation::LessEq: viol = ax - rhs[r]; break;
        case Relation::GreaterEq: viol = rhs[r] - ax; break;
        case Relation::Eq: viol = std::abs(ax - rhs[r]); break;
        }
        rep.primal_infeasibility = std::max(rep.primal_infeasibility, viol);
        rep.complementarity =
            std::max(rep.complementarity, std::abs(res.duals[r] * (ax - rhs[r])));
        // Dual sign: d(value)/d(rhs) <= 0 on LessEq, >= 0 on GreaterEq rows.
        if (relations[r] == Relation::LessEq && res.duals[r] > tol)
            rep.stationarity = std::max(rep.stationarity, res.duals[r]);
        if (relations[r] == Relation::GreaterEq && res.duals[r] < -tol)
            rep.stationarity = std::max(rep.stationarity, -res.duals[r]);
    }
    for (int j = 0; j < x.size(); ++j) {
        rep.primal_infeasibility =
            std::max({rep.primal_infeasibility, lower[j] - x[j], x[j] - upper[j]});
    }
    // Stationarity: Qx + q - rows' * duals must be absorbed by bound multipliers.
    Vec grad = linear;
    if (quadratic.size() > 0) grad += quadratic * x;
    Vec r = grad - rows.transpose() * res.duals;
    for (int j = 0; j < x.size(); ++j) {
        bool at_lower = std::isfinite(lower[j]) && x[j] <= lower[j] + 1e2 * tol;
        bool at_upper = std::isfinite(upper[j]) && x[j] >= upper[j] - 1e2 * tol;
        Real excess = 0;
        if (at_lower && at_upper)
            excess = 0; // fixed variable absorbs any sign
        else if (at_lower)
            excess = std::max<Real>(-r[j], 0.0);
        else if (at_upper)
            excess = std::max<Real>(r[j], 0.0);
        else
            excess = std::abs(r[j]);
        rep.stationarity = std::max(rep.stationarity, excess);
        if (at_lower && !at_upper)
            rep.complementarity =
                std::max(rep.complementarity, std::abs(std::max<Real>(r[j], 0.0) * (x[j] - lower[j])));
        if (at_upper && !at_lower)
            rep.complementarity =
                std::max(rep.complementarity, std::abs(std::min<Real>(r[j], 0.0) * (upper[j] - x[j])));
    }
    return rep;
}

} // namespace detail

inline KktReport audit_lp_kkt(const LinearProgram& lp, const SolveResult& res, Real tol) {
    return detail::audit_kkt(Mat(), lp.objective, lp.rows, lp.relations, lp.rhs, lp.lower,
                             lp.upper, res, tol);
}

inline KktReport audit_qp_kkt(const QuadraticProgram& qp, const SolveResult& res, Real tol) {
    return detail::audit_kkt(qp.quadratic, qp.linear, qp.rows, qp.relations, qp.rhs, qp.lower,
                             qp.upper, res, tol);
}

/// Explicit LP dual objective under the reported duals (for the strong
/// duality audit). Returns NaN when a free variable carries a nonzero
/// reduced cost, which would make the dual value -infinity.
inline Real lp_dual_objective(const LinearProgram& lp, const SolveResult& res, Real tol) {
    Real value = res.duals.dot(lp.rhs);
    Vec reduced = lp.objective - lp.rows.transpose() * res.duals;
    for (int j = 0; j < lp.num_vars(); ++j) {
        Real d = reduced[j];
        if (d > tol) {
            if (!std::isfinite(lp.lower[j])) return std::nan("");
            value += d * lp.lower[j];
        } else if (d < -tol) {
            if (!std::isfinite(lp.upper[j])) return std::nan("");
            value += d * lp.upper[j];
        }
    }
    return value;
}

namespace detail {

/// Primal active-set method for convex QPs with possibly singular Hessian.
/// Bounds become explicit rows internally; equality rows stay in the working
/// set for the whole solve. All ties resolve to the smallest constraint index.
class ActiveSetQp {
  public:
    ActiveSetQp(const QuadraticProgram& qp, Real tol)
        : qp_(qp), nv_(qp.num_vars()), tol_(std::max(tol, 1e-11)) {
        for (int r = 0; r < qp.num_rows(); ++r) {
            Real sign = (qp.relations[r] == Relation::GreaterEq) ? -1.0 : 1.0;
            normals_.push_back(sign * qp.rows.row(r).transpose());
            rhs_.push_back(sign * qp.rhs[r]);
            is_eq_.push_back(qp.relations[r] == Relation::Eq);
            source_row_.push_back(r);
            source_sign_.push_back(sign);
        }
        for (int j = 0; j < nv_; ++j) {
            if (std::isfinite(qp.lower[j])) {
                Vec a = Vec::Zero(nv_);
                a[j] = -1.0;
                normals_.push_back(a);
                rhs_.push_back(-qp.lower[j]);
                is_eq_.push_back(false);
                source_row_.push_back(-1);
                source_sign_.push_back(1.0);
            }
            if (std::isfinite(qp.upper[j])) {
                Vec a = Vec::Zero(nv_);
                a[j] = 1.0;
                normals_.push_back(a);
                rhs_.push_back(qp.upper[j]);
                is_eq_.push_back(false);
                source_row_.push_back(-1);
                source_sign_.push_back(1.0);
            }
        }
    }

    SolveResult solve(const Vec& start) {
        SolveResult res;
        x_ = start;
        init_working_set();
        const int nc = static_cast<int>(normals_.size());
        const long cap = 100 + 50L * (nc + nv_);
        for (long iter = 0; iter < cap; ++iter) {
            Vec g = qp_.quadratic * x_ + qp_.linear;
            Mat aw = working_matrix();
            Mat z = null_space(aw);
            bool at_subproblem_opt = true;
            if (z.cols() > 0) {
                Mat h = z.transpose() * qp_.quadratic * z;
                Vec f = z.transpose() * g;
                Eigen::CompleteOrthogonalDecomposition<Mat> cod(h);
                Vec pz = cod.solve(-f);
                Real resid = (h * pz + f).lpNorm<Eigen::Infinity>();
                Real scale = 1.0 + f.lpNorm<Eigen::Infinity>();
                if (resid <= 1e-8 * scale) {
                    Vec p = z * pz;
                    if (p.lpNorm<Eigen::Infinity>() > 1e-9 * (1.0 + x_.lpNorm<Eigen::Infinity>())) {
                        take_step(p, /*cap_at_one=*/true);
                        at_subproblem_opt = false;
                    }
                } else {
                    // Inconsistent reduced system: zero-curvature descent ray.
                    Vec ray = descent_ray(h, f, z);
                    if (ray.size() == 0) {
                        res.status = SolveStatus::NumericalFailure;
                        return res;
                    }
                    if (!take_step(ray, /*cap_at_one=*/false)) {
                        res.status = SolveStatus::Unbounded;
                        return res;
                    }
                    at_subproblem_opt = false;
                }
            }
            if (!at_subproblem_opt) continue;
            // Multiplier check on the working set.
            int worst = -1;
            if (!check_multipliers(g, worst)) {
                res.status = SolveStatus::NumericalFailure;
                return res;
            }
            if (worst < 0) {
                finish(res, g);
                return res;
            }
            working_.erase(std::find(working_.begin(), working_.end(), worst));
        }
        res.status = SolveStatus::NumericalFailure;
        return res;
    }

  private:
    const QuadraticProgram& qp_;
    int nv_;
    Real tol_;
    std::vector<Vec> normals_;
    std::vector<Real> rhs_;
    std::vector<bool> is_eq_;
    std::vector<int> source_row_;
    std::vector<Real> source_sign_;
    std::vector<int> working_;
    Vec x_;
    Vec multipliers_; // aligned with working_

    void init_working_set() {
        working_.clear();
        for (int i = 0; i < static_cast<int>(normals_.size()); ++i) {
            bool active = std::abs(normals_[i].dot(x_) - rhs_[i]) <= 1e2 * tol_ * (1 + std::abs(rhs_[i]));
            if (!is_eq_[i] && !active) continue;
            if (static_cast<int>(working_.size()) >= nv_ && !is_eq_[i]) continue;
            working_.push_back(i);
            if (rank_deficient()) working_.pop_back();
        }
    }

    bool rank_deficient() const {
        Mat aw = working_matrix();
        Eigen::FullPivLU<Mat> lu(aw);
        return lu.rank() < aw.rows();
    }

    Mat working_matrix() const {
        Mat aw(working_.size(), nv_);
        for (std::size_t k = 0; k < working_.size(); ++k) aw.row(k) = normals_[working_[k]].transpose();
        return aw;
    }

    static Mat null_space(const Mat& aw) {
        if (aw.rows() == 0) return Mat::Identity(aw.cols(), aw.cols());
        Eigen::FullPivLU<Mat> lu(aw);
        return lu.kernel();
    }

    Vec descent_ray(const Mat& h, const Vec& f, const Mat& z) const {
        Eigen::FullPivLU<Mat> lu(h);
        Mat kernel = lu.kernel();
        int best = -1;
        Real best_slope = 1e-10 * (1.0 + f.lpNorm<Eigen::Infinity>());
        for (int c = 0; c < kernel.cols(); ++c) {
            Real slope = std::abs(f.dot(kernel.col(c)));
            if (slope > best_slope) {
                best_slope = slope;
                best = c;
            }
        }
        if (best < 0) return Vec();
        Vec dir = kernel.col(best);
        if (f.dot(dir) > 0) dir = -dir;
        return z * dir;
    }

    // Moves along p until a constraint blocks. Returns false when nothing
    // blocks an uncapped ray (unbounded problem).
    bool take_step(const Vec& p, bool cap_at_one) {
        Real alpha = cap_at_one ? 1.0 : kInf;
        int blocker = -1;
        for (int i = 0; i < static_cast<int>(normals_.size()); ++i) {
            if (std::find(working_.begin(), working_.end(), i) != working_.end()) continue;
            Real s = normals_[i].dot(p);
            if (s <= 1e-12) continue;
            Real slack = std::max<Real>(rhs_[i] - normals_[i].dot(x_), 0.0);
            Real ai = slack / s;
            if (ai < alpha - 1e-13 || (ai < alpha + 1e-13 && blocker >= 0 && i < blocker)) {
                alpha = ai;
                blocker = i;
            }
        }
        if (!std::isfinite(alpha)) return false;
        x_ += alpha * p;
        if (blocker >= 0) working_.push_back(blocker);
        return true;
    }

    bool check_multipliers(const Vec& g, int& worst) {
        worst = -1;
        if (working_.empty()) {
            multipliers_ = Vec();
            return true;
        }
        Mat awt(nv_, working_.size());
        for (std::size_t k = 0; k < working_.size(); ++k) awt.col(k) = normals_[working_[k]];
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(awt);
        multipliers_ = cod.solve(-g);
        Real resid = (awt * multipliers_ + g).lpNorm<Eigen::Infinity>();
        if (resid > 1e-6 * (1.0 + g.lpNorm<Eigen::Infinity>())) return false;
        Real most_negative = -1e-8 * (1.0 + g.lpNorm<Eigen::Infinity>());
        for (std::size_t k = 0; k < working_.size(); ++k) {
            int i = working_[k];
            if (is_eq_[i]) continue;
            if (multipliers_[k] < most_negative) {
                most_negative = multipliers_[k];
                worst = i;
            }
        }
        return true;
    }

    void finish(SolveResult& res, const Vec&) {
        res.status = SolveStatus::Optimal;
        res.primal = x_;
        res.value = 0.5 * x_.dot(qp_.quadratic * x_) + qp_.linear.dot(x_);
        res.duals = Vec::Zero(qp_.num_rows());
        for (std::size_t k = 0; k < working_.size(); ++k) {
            int i = working_[k];
            if (source_row_[i] < 0) continue;
            // Stationarity uses g + A_W' mu = 0 on the sign-normalized rows;
            // d(value)/d(rhs) of the original row is then -sign * mu.
            res.duals[source_row_[i]] += -source_sign_[i] * multipliers_[k];
        }
    }
};

} // namespace detail

/// Solves a dense convex QP by a primal active-set method. The quadratic term
/// may be singular (PSD); zero-curvature descent rays are followed to a
/// blocking constraint or declared Unbounded.
inline SolveResult solve_qp(const QuadraticProgram& qp, Real tol) {
    qp.validate(tol);
    ++solve_counters().qp_solves;
    // Feasible start from a pure feasibility LP (objective zero).
    LinearProgram feas = LinearProgram::make(qp.num_vars());
    feas.rows = qp.rows;
    feas.relations = qp.relations;
    feas.rhs = qp.rhs;
    feas.lower = qp.lower;
    feas.upper = qp.upper;
    --solve_counters().lp_solves; // internal phase, not a caller-visible LP
    SolveResult start = solve_lp(feas, tol);
    if (start.status != SolveStatus::Optimal) {
        SolveResult res;
        res.status = start.status;
        return res;
    }
    detail::ActiveSetQp method(qp, tol);
    SolveResult res = method.solve(start.primal);
#ifndef NDEBUG
    if (res.status == SolveStatus::Optimal) {
        KktReport rep = audit_qp_kkt(qp, res, tol);
        Real scale = 1.0 + std::abs(res.value);
        assert(rep.primal_infeasibility <= 1e2 * tol * scale + 1e-9);
        assert(rep.complementarity <= 1e-5 * scale);
    }
#endif
    return res;
}

} // namespace tdp
