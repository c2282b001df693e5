#include "tdp/oracle.hpp"

#include "fixtures.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace tdp;
using fixtures::vec1;

// Frozen root values: tree LP and grid DP agreed on these to better than 1e-3
// before they were pinned here (toy1d is also a hand computation: branch
// values 0.5 and 1.4 with V_1(x) = max(|x|, 0.5), mean 0.95).
namespace {
constexpr Real kToyRoot = 0.95;
constexpr Real kChainRoot = 0.8936;
constexpr Real kFanRoot = 0.845;
constexpr Real kKinkRoot = 0.5;
} // namespace

TEST_CASE("tree LP and grid DP agree on every fixture") {
    struct Row {
        const char* name;
        Real root;
    };
    for (const Row& row : {Row{"toy1d.json", kToyRoot}, Row{"chain3.json", kChainRoot},
                           Row{"fan3.json", kFanRoot}, Row{"kink1d.json", kKinkRoot}}) {
        MspInstance inst = fixtures::load(row.name);
        Real tree = exact_root_value(inst);
        GridDp dp = grid_dp(inst, 4001, 2001);
        Real grid = grid_dp_root(inst, dp, 40001);
        CHECK(tree == Catch::Approx(row.root).margin(1e-9));
        CHECK(std::abs(tree - grid) <= 1e-3);
    }
}

TEST_CASE("toy1d value function at interior points") {
    MspInstance inst = fixtures::load("toy1d.json");
    CHECK(exact_value_at(inst, 1, vec1(0.0)) == Catch::Approx(0.5).margin(1e-9));
    CHECK(exact_value_at(inst, 1, vec1(1.5)) == Catch::Approx(1.5).margin(1e-9));
    CHECK(exact_value_at(inst, 2, vec1(-1.3)) == Catch::Approx(1.3).margin(1e-12));
    // Closed form everywhere: V_1 = max(|x|, 0.5).
    for (int i = 0; i <= 16; ++i) {
        Real x = -2.0 + 4.0 * i / 16;
        CHECK(exact_value_at(inst, 1, vec1(x)) ==
              Catch::Approx(std::max(std::abs(x), 0.5)).margin(1e-9));
    }
}

TEST_CASE("horizon-zero instances evaluate the final cost") {
    nlohmann::json j = fixtures::fixture_json("toy1d.json");
    j["T"] = 0;
    j["stages"] = nlohmann::json::array();
    j["config"]["L_U"] = nlohmann::json::array();
    j["config"]["c_quad"] = {2.0};
    MspInstance inst = load_instance(j.dump());
    CHECK(exact_root_value(inst) == Catch::Approx(0.9));
}

TEST_CASE("deterministic chain matches the grid oracle") {
    nlohmann::json j = fixtures::fixture_json("toy1d.json");
    for (auto& stage : j["stages"]) {
        stage["branches"] = {stage["branches"][1]};
        stage["branches"][0]["prob"] = 1.0;
    }
    j["config"]["L_U"] = {{1.0}, {1.0}};
    MspInstance inst = load_instance(j.dump());
    Real tree = exact_root_value(inst);
    GridDp dp = grid_dp(inst, 2001, 1001);
    CHECK(std::abs(tree - grid_dp_root(inst, dp, 20001)) <= 1e-3);
}

TEST_CASE("profile of V_1 has kinks exactly at +-0.5") {
    MspInstance inst = fixtures::load("toy1d.json");
    auto profile = grid_profile(inst, 1, -2.0, 2.0, 81);
    REQUIRE(profile.size() == 81);
    int kinks = 0;
    for (std::size_t i = 1; i + 1 < profile.size(); ++i) {
        Real second = profile[i + 1].second - 2 * profile[i].second + profile[i - 1].second;
        if (std::abs(second) > 1e-9) {
            ++kinks;
            CHECK(std::abs(std::abs(profile[i].first) - 0.5) <= 0.05 + 1e-12);
        }
    }
    CHECK(kinks >= 2);

    auto mid = grid_profile(inst, 1, -2.0, 2.0, 1);
    REQUIRE(mid.size() == 1);
    CHECK(mid[0].first == Catch::Approx(0.0));

    auto final_profile = grid_profile(inst, 2, -2.0, 2.0, 5);
    for (const auto& [x, v] : final_profile) CHECK(v == Catch::Approx(std::abs(x)).margin(1e-10));
}

TEST_CASE("dynamic-programming consistency of the tree oracle", "[property]") {
    MspInstance inst = fixtures::load("toy1d.json");
    // E_w min over a control grid of cost + V_{t+1}(f(x,u,w)) reproduces
    // V_t(x) within the control-grid resolution.
    for (Real x : {-1.0, -0.25, 0.4, 1.2}) {
        Real expect = exact_value_at(inst, 1, vec1(x));
        Real acc = 0;
        for (const NoiseBranch& br : inst.stages[1].branches) {
            Real best = kInf;
            for (int k = 0; k <= 4000; ++k) {
                Real u = -2.0 + 4.0 * k / 4000;
                Real y = x + u + br.dyn_offset[0];
                if (std::abs(y) > 2.0) continue;
                Real cost = std::abs(u) + inst.final_cost.eval_state(vec1(y), 1e-9);
                best = std::min(best, cost);
            }
            acc += br.prob * best;
        }
        CHECK(expect == Catch::Approx(acc).margin(2e-3));
    }
}

TEST_CASE("oversized trees are rejected") {
    nlohmann::json j = fixtures::fixture_json("toy1d.json");
    // 2^18 > 1e5 leaves: inflate the horizon by repeating the stage.
    nlohmann::json stage = j["stages"][0];
    j["stages"] = nlohmann::json::array();
    for (int i = 0; i < 18; ++i) j["stages"].push_back(stage);
    j["T"] = 18;
    std::vector<std::vector<Real>> lu(18, {1.0, 1.0});
    j["config"]["L_U"] = lu;
    j["config"].erase("c_quad");
    MspInstance inst = load_instance(j.dump());
    CHECK_THROWS_AS(exact_root_value(inst), TreeSizeError);
}

TEST_CASE("oracle queries outside the stage domain are rejected") {
    MspInstance inst = fixtures::load("toy1d.json");
    CHECK_THROWS_AS(exact_value_at(inst, 1, vec1(3.0)), ValidationError);
}
