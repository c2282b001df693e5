#include "tdp/pomdp.hpp"

#include "tdp/sampling.hpp"

#include "fixtures.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace tdp;

namespace {

PomdpInstance load_tiger() { return load_pomdp(fixtures::fixture_text("tiger.json")); }

/// Two-state chain with explicit numbers used by the hand-checked examples.
PomdpInstance numeric_fixture() {
    PomdpInstance p;
    p.nx = 2;
    p.nu = 1;
    p.no = 2;
    p.horizon = 2;
    Mat trans(2, 2), obs(2, 2), cost(2, 1);
    trans << 0.9, 0.1, 0.2, 0.8;
    obs << 0.7, 0.3, 0.4, 0.6;
    cost << 1.0, 2.0;
    for (int t = 0; t < p.horizon; ++t) {
        p.transition.push_back({trans});
        p.observation.push_back({obs});
        p.stage_cost.push_back(cost);
    }
    p.final_cost = Vec(2);
    p.final_cost << 0.5, -0.5;
    p.belief0 = Vec(2);
    p.belief0 << 0.5, 0.5;
    validate_pomdp(p);
    return p;
}

PomdpInstance with_observation(PomdpInstance p, const Mat& obs) {
    for (auto& per_stage : p.observation)
        for (auto& m : per_stage) m = obs;
    validate_pomdp(p);
    return p;
}

Vec belief2(Real a, Real b) {
    Vec v(2);
    v << a, b;
    return v;
}

} // namespace

TEST_CASE("substochastic matrices: closed forms and the numeric fixture") {
    PomdpInstance p = numeric_fixture();
    Mat m = substochastic(p, 0, 0, 0);
    CHECK(m(0, 0) == Catch::Approx(0.63));
    CHECK(m(0, 1) == Catch::Approx(0.04));
    CHECK(m(1, 0) == Catch::Approx(0.14));
    CHECK(m(1, 1) == Catch::Approx(0.32));

    // Identity transition with a uniform 2-observation law: M = I/2 per o.
    Mat uniform(2, 2);
    uniform << 0.5, 0.5, 0.5, 0.5;
    PomdpInstance u = with_observation(numeric_fixture(), uniform);
    for (auto& per_stage : u.transition)
        for (auto& t : per_stage) t = Mat::Identity(2, 2);
    for (int o = 0; o < 2; ++o)
        CHECK((substochastic(u, 0, 0, o) - 0.5 * Mat::Identity(2, 2)).norm() == 0.0);

    // Perfect observation with identity transition: M^{u,o_i} = e_i e_i'.
    Mat perfect(2, 2);
    perfect << 1.0, 0.0, 0.0, 1.0;
    PomdpInstance q = with_observation(u, perfect);
    Mat m0 = substochastic(q, 0, 0, 0);
    CHECK(m0(0, 0) == 1.0);
    CHECK(m0.sum() == 1.0);
}

TEST_CASE("row-sum identity holds exactly", "[property]") {
    for (PomdpInstance p : {load_tiger(), numeric_fixture()}) {
        for (int t = 0; t < p.horizon; ++t)
            for (int u = 0; u < p.nu; ++u) {
                Mat total = Mat::Zero(p.nx, p.nx);
                for (int o = 0; o < p.no; ++o) total += substochastic(p, t, u, o);
                for (int x = 0; x < p.nx; ++x)
                    CHECK(total.row(x).sum() == Catch::Approx(1.0).margin(1e-14));
            }
    }
}

TEST_CASE("belief updates") {
    // Uninformative observations leave the belief unchanged.
    Mat uniform(2, 2);
    uniform << 0.5, 0.5, 0.5, 0.5;
    PomdpInstance u = with_observation(numeric_fixture(), uniform);
    for (auto& per_stage : u.transition)
        for (auto& t : per_stage) t = Mat::Identity(2, 2);
    Vec b = belief2(0.3, 0.7);
    CHECK((belief_update(u, 0, b, 0, 0) - b).lpNorm<Eigen::Infinity>() <= 1e-15);

    // Perfect observation collapses onto the observed state.
    Mat perfect = Mat::Identity(2, 2);
    PomdpInstance q = with_observation(u, perfect);
    Vec post = belief_update(q, 0, belief2(0.3, 0.7), 0, 1);
    CHECK(post[0] == Catch::Approx(0.0).margin(1e-15));
    CHECK(post[1] == Catch::Approx(1.0).margin(1e-15));

    // Numeric fixture: normalize((0.385, 0.18)).
    PomdpInstance p = numeric_fixture();
    Vec nb = belief_update(p, 0, belief2(0.5, 0.5), 0, 0);
    CHECK(nb[0] == Catch::Approx(0.385 / 0.565).margin(1e-12));
    CHECK(nb[1] == Catch::Approx(0.18 / 0.565).margin(1e-12));

    // Conditioning on an impossible observation is a hard error.
    Mat degenerate(2, 2);
    degenerate << 1.0, 0.0, 1.0, 0.0;
    PomdpInstance z = with_observation(numeric_fixture(), degenerate);
    CHECK_THROWS_AS(belief_update(z, 0, belief2(0.5, 0.5), 0, 1), ImpossibleObservation);
}

TEST_CASE("bellman_belief with the terminal alpha set telescopes over observations") {
    PomdpInstance p = load_tiger();
    AlphaSet gamma;
    gamma.stage = p.horizon;
    gamma.vectors = {p.final_cost};
    for (Real w : {0.2, 0.5, 0.8}) {
        Vec b = belief2(w, 1 - w);
        auto [value, best_u] = bellman_belief(p, p.horizon - 1, gamma, b);
        Real expect = kInf;
        for (int u = 0; u < p.nu; ++u)
            expect = std::min(expect, b.dot(p.stage_cost[p.horizon - 1].col(u)) +
                                          b.dot(p.transition[p.horizon - 1][u] * p.final_cost));
        CHECK(value == Catch::Approx(expect).margin(1e-12));
        (void)best_u;
    }
}

TEST_CASE("single-state recursion is deterministic dynamic programming") {
    PomdpInstance p;
    p.nx = 1;
    p.nu = 2;
    p.no = 1;
    p.horizon = 2;
    Mat trans = Mat::Ones(1, 1), obs = Mat::Ones(1, 1);
    Mat cost(1, 2);
    cost << 0.4, 0.9;
    for (int t = 0; t < 2; ++t) {
        p.transition.push_back({trans, trans});
        p.observation.push_back({obs, obs});
        p.stage_cost.push_back(cost);
    }
    p.final_cost = Vec::Constant(1, 0.25);
    p.belief0 = Vec::Ones(1);
    validate_pomdp(p);
    AlphaSet gamma;
    gamma.stage = 2;
    gamma.vectors = {p.final_cost};
    auto [v1, u1] = bellman_belief(p, 1, gamma, p.belief0);
    CHECK(v1 == Catch::Approx(0.4 + 0.25));
    CHECK(u1 == 0);
    auto [alpha, grown] = alpha_backup(p, 1, gamma, p.belief0);
    CHECK(alpha[0] == Catch::Approx(0.65));
    auto [v0, u0] = bellman_belief(p, 0, grown, p.belief0);
    CHECK(v0 == Catch::Approx(0.4 + 0.65));
    (void)u0;
}

TEST_CASE("alpha backup: tightness and monotone growth") {
    PomdpInstance p = load_tiger();
    AlphaSet gamma;
    gamma.stage = p.horizon;
    gamma.vectors = {p.final_cost};
    std::vector<Vec> trial_beliefs = {belief2(1.0, 0.0), belief2(0.0, 1.0), belief2(0.5, 0.5)};
    for (int t = p.horizon - 1; t >= 0; --t) {
        AlphaSet current;
        for (const Vec& b : trial_beliefs) {
            Real before = current.vectors.empty() ? kInf : current.value(b);
            auto [alpha, grown] = alpha_backup(p, t, gamma, b, std::move(current));
            current = std::move(grown);
            auto [value, best_u] = bellman_belief(p, t, gamma, b);
            (void)best_u;
            CHECK(alpha.dot(b) == Catch::Approx(value).margin(1e-10)); // point-based tightness
            // Growing the set can only lower the min-representation.
            CHECK(current.value(b) <= before + 1e-14);
            // The freshly grown set reproduces the Bellman value at b.
            CHECK(current.value(b) == Catch::Approx(value).margin(1e-10));
        }
        gamma = current;
    }
}

TEST_CASE("terminal backup against {K} uses L^u + P^u K") {
    PomdpInstance p = numeric_fixture();
    AlphaSet gamma;
    gamma.stage = p.horizon;
    gamma.vectors = {p.final_cost};
    auto [alpha, grown] = alpha_backup(p, p.horizon - 1, gamma, belief2(0.5, 0.5));
    Vec expect = p.stage_cost[0].col(0) + p.transition[0][0] * p.final_cost;
    CHECK((alpha - expect).lpNorm<Eigen::Infinity>() <= 1e-14);
    (void)grown;
}

TEST_CASE("fully observed bound: exactness and dominance") {
    // Perfect observation: the POMDP collapses to the MDP and the bound is
    // exact at simplex vertices.
    PomdpInstance tiger = load_tiger();
    Mat perfect = Mat::Identity(2, 2);
    PomdpInstance mdp = with_observation(tiger, perfect);
    std::vector<Vec> hat = fully_observed_bound(mdp);
    BeliefGridDp dp = belief_grid_dp(mdp, 100);
    for (int x = 0; x < 2; ++x) {
        Vec vertex = Vec::Zero(2);
        vertex[x] = 1.0;
        CHECK(dp.value(0, vertex) == Catch::Approx(hat[0][x]).margin(1e-9));
    }

    // Uninformative observations: dominance with a strict gap somewhere.
    Mat uniform(2, 2);
    uniform << 0.5, 0.5, 0.5, 0.5;
    PomdpInstance blind = with_observation(tiger, uniform);
    std::vector<Vec> hat_blind = fully_observed_bound(blind);
    BeliefGridDp dpb = belief_grid_dp(blind, 100);
    Real max_gap = 0;
    for (std::size_t i = 0; i < dpb.beliefs.size(); ++i) {
        Real bound = dpb.beliefs[i].dot(hat_blind[0]);
        CHECK(bound <= dpb.values[0][i] + 1e-9);
        max_gap = std::max(max_gap, dpb.values[0][i] - bound);
    }
    CHECK(max_gap > 0.1);

    // Single state: trivially exact.
    PomdpInstance tiny;
    tiny.nx = tiny.nu = tiny.no = 1;
    tiny.horizon = 1;
    tiny.transition = {{Mat::Ones(1, 1)}};
    tiny.observation = {{Mat::Ones(1, 1)}};
    tiny.stage_cost = {Mat::Constant(1, 1, 0.3)};
    tiny.final_cost = Vec::Constant(1, 0.1);
    tiny.belief0 = Vec::Ones(1);
    validate_pomdp(tiny);
    CHECK(fully_observed_bound(tiny)[0][0] == Catch::Approx(0.4));
}

TEST_CASE("grid dp self-convergence under mesh halving", "[property]") {
    PomdpInstance tiger = load_tiger();
    BeliefGridDp coarse = belief_grid_dp(tiger, 100);
    BeliefGridDp fine = belief_grid_dp(tiger, 200);
    // Accumulated interpolation error is at most sum_s Lip_s * mesh per run.
    Real bound = 0;
    for (int s = 1; s <= tiger.horizon; ++s)
        bound += belief_lipschitz(tiger, s) * (coarse.mesh() + fine.mesh());
    for (std::size_t i = 0; i < coarse.beliefs.size(); ++i) {
        Real diff = std::abs(coarse.values[0][i] - fine.value(0, coarse.beliefs[i]));
        CHECK(diff <= bound + 1e-9);
    }
}

TEST_CASE("one-homogeneity of the gamma-set extension", "[property]") {
    PomdpInstance p = load_tiger();
    AlphaSet gamma_next;
    gamma_next.stage = p.horizon;
    gamma_next.vectors = {p.final_cost};
    AlphaSet gamma;
    for (const Vec& b : {belief2(1, 0), belief2(0, 1), belief2(0.5, 0.5), belief2(0.3, 0.7)})
        gamma = alpha_backup(p, p.horizon - 1, gamma_next, b, gamma).second;
    std::mt19937_64 gen(17);
    for (int i = 0; i < 200; ++i) {
        Vec c(2);
        c << unit_real(gen), unit_real(gen);
        for (Real lambda : {0.5, 2.0, 4.0}) {
            // Power-of-two scalings are exact in binary floating point.
            CHECK(gamma.value(lambda * c) == lambda * gamma.value(c));
        }
        Real lambda = 0.1 + unit_real(gen);
        CHECK(gamma.value(lambda * c) ==
              Catch::Approx(lambda * gamma.value(c)).epsilon(1e-12));
    }
}

TEST_CASE("lipschitz bound on sampled belief pairs", "[property]") {
    PomdpInstance p = load_tiger();
    // Build a gamma set per stage by point-based backups on a coarse mesh.
    std::vector<AlphaSet> sets(p.horizon + 1);
    sets[p.horizon].stage = p.horizon;
    sets[p.horizon].vectors = {p.final_cost};
    for (int t = p.horizon - 1; t >= 0; --t) {
        sets[t].stage = t;
        for (int i = 0; i <= 10; ++i) {
            Vec b = belief2(i / 10.0, 1.0 - i / 10.0);
            sets[t].vectors.push_back(alpha_backup(p, t, sets[t + 1], b).first);
        }
    }
    std::mt19937_64 gen(23);
    for (int t = 0; t <= p.horizon; ++t) {
        Real lip = belief_lipschitz(p, t);
        for (int i = 0; i < 1000; ++i) {
            Real a = unit_real(gen), b = unit_real(gen);
            Vec ba = belief2(a, 1 - a), bb = belief2(b, 1 - b);
            Real diff = std::abs(sets[t].value(ba) - sets[t].value(bb));
            CHECK(diff <= lip * (ba - bb).lpNorm<1>() + 1e-9);
        }
    }
}

TEST_CASE("pomdp schema validation") {
    CHECK_THROWS_AS(load_pomdp("{"), ValidationError);
    nlohmann::json j = nlohmann::json::parse(fixtures::fixture_text("tiger.json"));
    j["b0"] = {0.5, 0.4};
    CHECK_THROWS_AS(load_pomdp(j.dump()), ValidationError);
    nlohmann::json bad_rows = nlohmann::json::parse(fixtures::fixture_text("tiger.json"));
    bad_rows["transition"][0][0][0] = {0.9, 0.2};
    CHECK_THROWS_AS(load_pomdp(bad_rows.dump()), ValidationError);
}
