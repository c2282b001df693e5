#pragma once

#include "tdp/types.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace tdp {

/// Finite-horizon POMDP with time-dependent transition and observation laws.
/// Beliefs are row vectors stored as Vec; b' = b M operations therefore read
/// M.transpose() * b.
struct PomdpInstance {
    int nx = 0, nu = 0, no = 0, horizon = 0;
    std::vector<std::vector<Mat>> transition;  // [t][u], nx x nx, rows sum to 1
    std::vector<std::vector<Mat>> observation; // [t][u], nx x no, rows sum to 1
    std::vector<Mat> stage_cost;               // [t], nx x nu
    Vec final_cost;                            // nx
    Vec belief0;                               // nx, on the simplex
};

inline void validate_pomdp(const PomdpInstance& p) {
    if (p.nx < 1 || p.nu < 1 || p.no < 1 || p.horizon < 0)
        throw ValidationError("schema violation: pomdp sizes");
    auto check_rows = [](const Mat& m, const char* what) {
        for (int r = 0; r < m.rows(); ++r)
            if (std::abs(m.row(r).sum() - 1.0) > 1e-12)
                throw ValidationError(std::string(what) + ": row " + std::to_string(r) +
                                      " does not sum to 1");
    };
    if (static_cast<int>(p.transition.size()) != p.horizon ||
        static_cast<int>(p.observation.size()) != p.horizon ||
        static_cast<int>(p.stage_cost.size()) != p.horizon)
        throw ValidationError("schema violation: pomdp stage counts");
    for (int t = 0; t < p.horizon; ++t) {
        if (static_cast<int>(p.transition[t].size()) != p.nu ||
            static_cast<int>(p.observation[t].size()) != p.nu)
            throw ValidationError("schema violation: pomdp per-action matrices");
        for (int u = 0; u < p.nu; ++u) {
            if (p.transition[t][u].rows() != p.nx || p.transition[t][u].cols() != p.nx)
                throw ValidationError("schema violation: transition dimensions");
            if (p.observation[t][u].rows() != p.nx || p.observation[t][u].cols() != p.no)
                throw ValidationError("schema violation: observation dimensions");
            check_rows(p.transition[t][u], "transition");
            check_rows(p.observation[t][u], "observation");
        }
        if (p.stage_cost[t].rows() != p.nx || p.stage_cost[t].cols() != p.nu)
            throw ValidationError("schema violation: stage cost dimensions");
    }
    if (p.final_cost.size() != p.nx) throw ValidationError("schema violation: final cost size");
    if (p.belief0.size() != p.nx || std::abs(p.belief0.sum() - 1.0) > 1e-9 ||
        (p.belief0.array() < -1e-12).any())
        throw ValidationError("initial belief is not on the simplex");
}

/// M^{u,o}(x,x') = Q(o | x',u) P(x,x' | u); summing over o and x' gives 1 per
/// row.
inline Mat substochastic(const PomdpInstance& p, int t, int u, int o) {
    Mat m(p.nx, p.nx);
    for (int i = 0; i < p.nx; ++i)
        for (int k = 0; k < p.nx; ++k) m(i, k) = p.transition[t][u](i, k) * p.observation[t][u](k, o);
    return m;
}

/// Bayes update b' = b M / (b M 1). Conditioning on a zero-probability
/// observation is a hard error.
inline Vec belief_update(const PomdpInstance& p, int t, const Vec& belief, int u, int o) {
    Vec scaled = substochastic(p, t, u, o).transpose() * belief;
    Real mass = scaled.sum();
    if (mass <= 1e-300)
        throw ImpossibleObservation("observation " + std::to_string(o) +
                                    " has probability zero under the current belief");
    return scaled / mass;
}

/// Alpha-vector (Gamma-set) representation of a concave value function:
/// b -> min over vectors of <alpha, b>.
struct AlphaSet {
    int stage = 0;
    std::vector<Vec> vectors;

    Real value(const Vec& belief) const {
        Real best = kInf;
        for (const Vec& a : vectors) best = std::min(best, a.dot(belief));
        return best;
    }

    /// Index of the minimizing vector; ties resolve to the earliest entry.
    int argmin(const Vec& belief) const {
        Real best = kInf;
        int arg = 0;
        for (int k = 0; k < static_cast<int>(vectors.size()); ++k) {
            Real v = vectors[k].dot(belief);
            if (v < best - 1e-15) {
                best = v;
                arg = k;
            }
        }
        return arg;
    }
};

/// One-stage belief Bellman value at b under the next-stage Gamma set, with
/// the minimizing action. Uses the homogeneous form: the weighted term
/// (bM1) V(bM/(bM1)) equals min over alpha of <b M, alpha>.
inline std::pair<Real, int> bellman_belief(const PomdpInstance& p, int t, const AlphaSet& gamma,
                                           const Vec& belief) {
    if (gamma.vectors.empty()) throw ValidationError("bellman_belief: empty alpha set");
    Real best = kInf;
    int best_u = 0;
    for (int u = 0; u < p.nu; ++u) {
        Real value = belief.dot(p.stage_cost[t].col(u));
        for (int o = 0; o < p.no; ++o) {
            Vec scaled = substochastic(p, t, u, o).transpose() * belief;
            if (scaled.sum() <= 1e-300) continue; // weight zero contributes nothing
            Real vmin = kInf;
            for (const Vec& a : gamma.vectors) vmin = std::min(vmin, a.dot(scaled));
            value += vmin;
        }
        if (value < best - 1e-15) {
            best = value;
            best_u = u;
        }
    }
    return {best, best_u};
}

/// Point-based backup at b: alpha_u = L^u + sum_o M^{u,o} alpha#(u,o) with
/// alpha#(u,o) the next-stage member minimizing <b M^{u,o}, .> (ties
/// earliest). The returned vector is exactly tight at b; appending it to the
/// in-progress stage-t set can only lower that set's min-representation.
inline std::pair<Vec, AlphaSet> alpha_backup(const PomdpInstance& p, int t,
                                             const AlphaSet& gamma_next, const Vec& belief,
                                             AlphaSet gamma_t = AlphaSet{}) {
    if (gamma_next.vectors.empty()) throw ValidationError("alpha_backup: empty alpha set");
    Real best_value = kInf;
    Vec best_alpha;
    for (int u = 0; u < p.nu; ++u) {
        Vec alpha = p.stage_cost[t].col(u);
        for (int o = 0; o < p.no; ++o) {
            Mat m = substochastic(p, t, u, o);
            Vec scaled = m.transpose() * belief;
            int pick = gamma_next.argmin(scaled);
            alpha += m * gamma_next.vectors[pick];
        }
        Real value = alpha.dot(belief);
        if (value < best_value - 1e-15) {
            best_value = value;
            best_alpha = alpha;
        }
    }
    gamma_t.stage = t;
    gamma_t.vectors.push_back(best_alpha);
    return {best_alpha, std::move(gamma_t)};
}

/// Value vectors of the fully observed relaxation; <b, V̂_t> lower-bounds the
/// belief value function everywhere.
inline std::vector<Vec> fully_observed_bound(const PomdpInstance& p) {
    std::vector<Vec> values(p.horizon + 1);
    values[p.horizon] = p.final_cost;
    for (int t = p.horizon - 1; t >= 0; --t) {
        values[t] = Vec(p.nx);
        for (int x = 0; x < p.nx; ++x) {
            Real best = kInf;
            for (int u = 0; u < p.nu; ++u)
                best = std::min(best, p.stage_cost[t](x, u) +
                                          p.transition[t][u].row(x).dot(values[t + 1]));
            values[t][x] = best;
        }
    }
    return values;
}

// ---------------------------------------------------------------------------
// Discretized-simplex value iteration (the desk-scale reference for nx <= 3)
// ---------------------------------------------------------------------------

struct BeliefGridDp {
    int resolution = 0;
    std::vector<Vec> beliefs;               // shared grid across stages
    std::vector<std::vector<Real>> values;  // per stage 0..T

    /// Nearest grid index in l1 distance; deterministic lexicographic ties.
    int nearest(const Vec& b) const {
        int best = 0;
        Real best_dist = kInf;
        for (int i = 0; i < static_cast<int>(beliefs.size()); ++i) {
            Real d = (beliefs[i] - b).lpNorm<1>();
            if (d < best_dist - 1e-15) {
                best_dist = d;
                best = i;
            }
        }
        return best;
    }

    Real value(int t, const Vec& b) const { return values[t][nearest(b)]; }

    /// Largest l1 distance from any simplex point to its grid neighbour.
    Real mesh() const { return beliefs.size() > 1 ? 1.0 / resolution : 0.0; }
};

namespace detail {

inline std::vector<Vec> simplex_grid(int nx, int resolution) {
    std::vector<Vec> grid;
    if (nx == 1) {
        grid.push_back(Vec::Ones(1));
        return grid;
    }
    if (nx == 2) {
        for (int i = 0; i <= resolution; ++i) {
            Vec b(2);
            b << static_cast<Real>(i) / resolution, static_cast<Real>(resolution - i) / resolution;
            grid.push_back(b);
        }
        return grid;
    }
    for (int i = 0; i <= resolution; ++i)
        for (int j = 0; i + j <= resolution; ++j) {
            Vec b(3);
            b << static_cast<Real>(i) / resolution, static_cast<Real>(j) / resolution,
                static_cast<Real>(resolution - i - j) / resolution;
            grid.push_back(b);
        }
    return grid;
}

} // namespace detail

/// Backward value iteration on the discretized simplex with nearest-point
/// interpolation of the updated beliefs. Interpolation error is bounded by
/// the stagewise Lipschitz constants times the mesh.
inline BeliefGridDp belief_grid_dp(const PomdpInstance& p, int resolution) {
    if (p.nx > 3) throw ValidationError("belief_grid_dp supports nx <= 3");
    if (resolution < 10) throw ValidationError("belief_grid_dp needs resolution >= 10");
    BeliefGridDp dp;
    dp.resolution = resolution;
    dp.beliefs = detail::simplex_grid(p.nx, resolution);
    dp.values.assign(p.horizon + 1, std::vector<Real>(dp.beliefs.size(), 0.0));
    for (std::size_t i = 0; i < dp.beliefs.size(); ++i)
        dp.values[p.horizon][i] = dp.beliefs[i].dot(p.final_cost);
    for (int t = p.horizon - 1; t >= 0; --t) {
        for (std::size_t i = 0; i < dp.beliefs.size(); ++i) {
            const Vec& b = dp.beliefs[i];
            Real best = kInf;
            for (int u = 0; u < p.nu; ++u) {
                Real value = b.dot(p.stage_cost[t].col(u));
                for (int o = 0; o < p.no; ++o) {
                    Vec scaled = substochastic(p, t, u, o).transpose() * b;
                    Real mass = scaled.sum();
                    if (mass <= 1e-300) continue;
                    value += mass * dp.values[t + 1][dp.nearest(scaled / mass)];
                }
                best = std::min(best, value);
            }
            dp.values[t][i] = best;
        }
    }
    return dp;
}

/// Lipschitz constant of V_t in the l1 norm from the appendix recursion:
/// max|L| * (T - t) + max|K|.
inline Real belief_lipschitz(const PomdpInstance& p, int t) {
    Real l = 0;
    for (const Mat& m : p.stage_cost) l = std::max(l, m.cwiseAbs().maxCoeff());
    Real k = p.final_cost.size() > 0 ? p.final_cost.cwiseAbs().maxCoeff() : 0.0;
    return l * (p.horizon - t) + k;
}

// ---------------------------------------------------------------------------
// JSON schema mirroring the instance fields
// ---------------------------------------------------------------------------

inline PomdpInstance load_pomdp(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& err) {
        throw ValidationError(std::string("schema violation: ") + err.what());
    }
    PomdpInstance p;
    try {
        p.nx = j.at("nx").get<int>();
        p.nu = j.at("nu").get<int>();
        p.no = j.at("no").get<int>();
        p.horizon = j.at("T").get<int>();
        auto load_mat = [](const nlohmann::json& jm) {
            Mat m(jm.size(), jm.empty() ? 0 : jm[0].size());
            for (int r = 0; r < m.rows(); ++r)
                for (int c = 0; c < m.cols(); ++c) m(r, c) = jm[r][c].get<Real>();
            return m;
        };
        for (const auto& jt : j.at("transition")) {
            std::vector<Mat> per_action;
            for (const auto& jm : jt) per_action.push_back(load_mat(jm));
            p.transition.push_back(std::move(per_action));
        }
        for (const auto& jt : j.at("observation")) {
            std::vector<Mat> per_action;
            for (const auto& jm : jt) per_action.push_back(load_mat(jm));
            p.observation.push_back(std::move(per_action));
        }
        for (const auto& jm : j.at("stage_cost")) p.stage_cost.push_back(load_mat(jm));
        auto load_vec = [](const nlohmann::json& jv) {
            Vec v(jv.size());
            for (int i = 0; i < v.size(); ++i) v[i] = jv[i].get<Real>();
            return v;
        };
        p.final_cost = load_vec(j.at("final_cost"));
        p.belief0 = load_vec(j.at("b0"));
    } catch (const nlohmann::json::exception& err) {
        throw ValidationError(std::string("schema violation: ") + err.what());
    }
    validate_pomdp(p);
    return p;
}

} // namespace tdp
