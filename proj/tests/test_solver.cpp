#include "tdp/solver.hpp"

#include "tdp/oracle.hpp"

#include "fixtures.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

using namespace tdp;
using fixtures::vec1;

TEST_CASE("seed constants on toy1d") {
    MspInstance inst = fixtures::load("toy1d.json");
    RunState state = seed(inst);
    // lb_1 = min|u| + min psi = 0; ub_1 = max|u| + max psi = 4.
    CHECK(state.lower[1].eval(vec1(0.0)) == Catch::Approx(0.0).margin(1e-10));
    CHECK(state.upper[1].eval(vec1(0.0)) == Catch::Approx(4.0).margin(1e-10));
    CHECK(state.lower[0].eval(inst.x0) == Catch::Approx(0.0).margin(1e-10));
    CHECK(state.upper[0].eval(inst.x0) == Catch::Approx(6.0).margin(1e-10));
    CHECK(state.lower[2].eval(vec1(1.0)) == Catch::Approx(0.0).margin(1e-10));
    CHECK(state.upper[2].eval(vec1(1.0)) == Catch::Approx(2.0).margin(1e-10));
}

TEST_CASE("seed on degenerate horizons") {
    nlohmann::json j = fixtures::fixture_json("toy1d.json");
    j["T"] = 0;
    j["stages"] = nlohmann::json::array();
    j["config"]["L_U"] = nlohmann::json::array();
    j["config"]["c_quad"] = {2.0};
    MspInstance t0 = load_instance(j.dump());
    RunState state = seed(t0);
    CHECK(state.lower[0].eval(vec1(0.9)) == Catch::Approx(0.0).margin(1e-10));
    CHECK(state.upper[0].eval(vec1(0.9)) == Catch::Approx(2.0).margin(1e-10));

    // Constant costs collapse the sandwich at the seed.
    nlohmann::json jc = fixtures::fixture_json("toy1d.json");
    for (auto& stage : jc["stages"])
        for (auto& br : stage["branches"])
            br["cost"]["terms"] = {{{"c_x", {0.0}}, {"c_u", {0.0}}, {"d", 0.7}}};
    jc["final_cost"]["terms"] = {{{"c_x", {0.0}}, {"d", 0.1}}};
    jc["config"]["c_quad"] = {1.0, 1.0, 1.0};
    MspInstance flat = load_instance(jc.dump());
    RunState fs = seed(flat);
    CHECK(fs.upper[0].eval(flat.x0) - fs.lower[0].eval(flat.x0) == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("forward pass ties break to the smallest noise index at the seed") {
    MspInstance inst = fixtures::load("toy1d.json");
    RunState state = seed(inst);
    TrajectoryRecord rec = forward_pass(inst, state);
    REQUIRE(rec.worst_noise.size() == 2);
    CHECK(rec.worst_noise[0] == 0);
    CHECK(rec.worst_noise[1] == 0);
    REQUIRE(rec.states.size() == 3);
    CHECK(rec.states[0][0] == Catch::Approx(0.9));
}

TEST_CASE("single-branch instances follow the deterministic optimal trajectory") {
    nlohmann::json j = fixtures::fixture_json("toy1d.json");
    for (auto& stage : j["stages"]) {
        stage["branches"] = {stage["branches"][0]};
        stage["branches"][0]["prob"] = 1.0;
    }
    j["config"]["L_U"] = {{1.0}, {1.0}};
    MspInstance inst = load_instance(j.dump());
    RunState state = seed(inst);
    TrajectoryRecord rec = forward_pass(inst, state);
    for (int t = 0; t < inst.horizon; ++t) {
        CHECK(rec.worst_noise[t] == 0);
        BellmanEval eval = pointwise_lower(inst, t, 0, state.lower[t + 1], rec.states[t]);
        CHECK(rec.controls[t][0][0] == Catch::Approx(eval.control[0]));
    }
}

TEST_CASE("trajectory states satisfy the dynamics residual invariant") {
    MspInstance inst = fixtures::load("toy1d.json");
    RunOutput out = run(inst, SelectionKind::SddpLower, SelectionKind::VShapeUpper, {5, 0.0});
    for (const TrajectoryRecord& rec : out.state.history) {
        for (int t = 0; t < inst.horizon; ++t) {
            int w = rec.worst_noise[t];
            const NoiseBranch& br = inst.stages[t].branches[w];
            Vec expect = br.dyn_state * rec.states[t] +
                         br.dyn_control * rec.controls[t][w] + br.dyn_offset;
            CHECK((rec.states[t + 1] - expect).lpNorm<Eigen::Infinity>() <= 1e-9);
            CHECK(std::abs(rec.states[t + 1][0]) <= 2.0 + 1e-9);
        }
    }
}

TEST_CASE("backward pass appends one member per stage per side") {
    MspInstance inst = fixtures::load("toy1d.json");
    RunState state = seed(inst);
    TrajectoryRecord rec = forward_pass(inst, state);
    std::vector<Real> lower_before(inst.horizon + 1), upper_before(inst.horizon + 1);
    for (int t = 0; t <= inst.horizon; ++t) {
        lower_before[t] = state.lower[t].eval(rec.states[t]);
        upper_before[t] = state.upper[t].eval(rec.states[t]);
    }
    backward_pass(inst, state, rec, SelectionKind::SddpLower, SelectionKind::VShapeUpper);
    for (int t = 0; t <= inst.horizon; ++t) {
        CHECK(state.lower[t].size() == 2); // seed + 1
        CHECK(state.upper[t].size() == 2);
        const TrajectoryRecord& logged = state.history.back();
        CHECK(state.lower[t].eval(logged.states[t]) >= lower_before[t] - 1e-12);
        CHECK(state.upper[t].eval(logged.states[t]) <= upper_before[t] + 1e-12);
    }
    // Tightness audit of each appended member at its trial point.
    const TrajectoryRecord& logged = state.history.back();
    for (int t = 0; t <= inst.horizon; ++t) {
        const Vec& x = logged.states[t];
        Real lower_ref, upper_ref;
        if (t == inst.horizon) {
            lower_ref = upper_ref = inst.final_cost.eval_state(x, 1e-9);
        } else {
            lower_ref = average_bellman(inst, t, state.lower[t + 1], x, BellmanKind::Lower).value;
            upper_ref = average_bellman(inst, t, state.upper[t + 1], x, BellmanKind::UpperV).value;
        }
        CHECK(eval_basic(state.lower[t].members().back(), x) ==
              Catch::Approx(lower_ref).margin(1e-7));
        CHECK(eval_basic(state.upper[t].members().back(), x) ==
              Catch::Approx(upper_ref).margin(1e-7));
    }
}

TEST_CASE("toy1d converges to the oracle under sddp+v") {
    MspInstance inst = fixtures::load("toy1d.json");
    RunOutput out = run(inst, SelectionKind::SddpLower, SelectionKind::VShapeUpper, {50, 1e-6});
    Real oracle = exact_root_value(inst);
    CHECK(out.converged);
    CHECK(std::abs(out.root_lower - oracle) <= 1e-6 * (1 + std::abs(oracle)));
    CHECK(out.root_upper - out.root_lower <= 1e-6 * (1 + std::abs(oracle)) + 1e-12);
    CHECK(static_cast<int>(out.state.history.size()) <= 50);
}

TEST_CASE("constant-cost instances stop at the seed") {
    nlohmann::json j = fixtures::fixture_json("toy1d.json");
    for (auto& stage : j["stages"])
        for (auto& br : stage["branches"])
            br["cost"]["terms"] = {{{"c_x", {0.0}}, {"c_u", {0.0}}, {"d", 0.7}}};
    j["final_cost"]["terms"] = {{{"c_x", {0.0}}, {"d", 0.1}}};
    j["config"]["c_quad"] = {1.0, 1.0, 1.0};
    MspInstance flat = load_instance(j.dump());
    RunOutput out = run(flat, SelectionKind::SddpLower, SelectionKind::VShapeUpper, {10, 1e-6});
    CHECK(out.converged);
    CHECK(out.state.iteration == 1);
    CHECK(out.root_upper - out.root_lower <= 1e-9);
}

TEST_CASE("sddp+u on the kink fixture closes the trajectory gap") {
    MspInstance kink = fixtures::load("kink1d.json");
    RunOutput out = run(kink, SelectionKind::SddpLower, SelectionKind::UQuad, {60, 1e-6});
    REQUIRE_FALSE(out.state.history.empty());
    const TrajectoryRecord& last = out.state.history.back();
    for (int t = 0; t <= kink.horizon; ++t) CHECK(std::abs(last.post_gaps[t]) <= 1e-4);
}

TEST_CASE("approximations are monotone across iterations", "[property]") {
    MspInstance inst = fixtures::load("toy1d.json");
    RunOutput out = run(inst, SelectionKind::SddpLower, SelectionKind::VShapeUpper, {12, 0.0});
    for (int t = 0; t <= inst.horizon; ++t) {
        for (int i = 0; i <= 40; ++i) {
            Vec x = vec1(-2.0 + 4.0 * i / 40);
            Real prev_lo = -kInf, prev_hi = kInf;
            for (std::size_t k = 1; k <= out.state.lower[t].size(); ++k) {
                Real lo = out.state.lower[t].eval_prefix(x, k);
                Real hi = out.state.upper[t].eval_prefix(x, k);
                CHECK(lo >= prev_lo);
                CHECK(hi <= prev_hi);
                prev_lo = lo;
                prev_hi = hi;
            }
        }
    }
}

TEST_CASE("valid-selection runs keep the sandwich at every trial point", "[property]") {
    for (const char* name : {"toy1d.json", "chain3.json", "fan3.json"}) {
        MspInstance inst = fixtures::load(name);
        RunOutput out = run(inst, SelectionKind::SddpLower, SelectionKind::VShapeUpper, {30, 1e-7});
        for (const TrajectoryRecord& rec : out.state.history) {
            for (Real gap : rec.gaps) CHECK(gap >= -1e-9);
            for (Real gap : rec.post_gaps) CHECK(gap >= -1e-9);
        }
    }
}

TEST_CASE("telescoping gap inequality along the trajectory", "[property]") {
    for (const char* name : {"toy1d.json", "kink1d.json"}) {
        MspInstance inst = fixtures::load(name);
        for (SelectionKind upper : {SelectionKind::VShapeUpper, SelectionKind::UQuad}) {
            RunOutput out = run(inst, SelectionKind::SddpLower, upper, {25, 0.0});
            for (const TrajectoryRecord& rec : out.state.history) {
                for (int t = 0; t < inst.horizon; ++t)
                    CHECK(rec.post_gaps[t] <= rec.gaps[t + 1] + 1e-7);
            }
        }
    }
}

TEST_CASE("runs are deterministic end to end") {
    MspInstance inst = fixtures::load("toy1d.json");
    RunOutput a = run(inst, SelectionKind::SddpLower, SelectionKind::VShapeUpper, {10, 0.0});
    RunOutput b = run(inst, SelectionKind::SddpLower, SelectionKind::VShapeUpper, {10, 0.0});
    REQUIRE(a.state.history.size() == b.state.history.size());
    for (std::size_t k = 0; k < a.state.history.size(); ++k) {
        const TrajectoryRecord& ra = a.state.history[k];
        const TrajectoryRecord& rb = b.state.history[k];
        for (std::size_t t = 0; t < ra.states.size(); ++t)
            CHECK(ra.states[t][0] == rb.states[t][0]); // bitwise
        CHECK(ra.worst_noise == rb.worst_noise);
        for (std::size_t t = 0; t < ra.gaps.size(); ++t) CHECK(ra.gaps[t] == rb.gaps[t]);
    }
    std::ostringstream csv_a, csv_b;
    write_gap_csv(csv_a, inst, a.state);
    write_gap_csv(csv_b, inst, b.state);
    CHECK(csv_a.str() == csv_b.str());
    CHECK(run_to_json(inst, a.state).dump() == run_to_json(inst, b.state).dump());
}

TEST_CASE("gap csv format") {
    MspInstance inst = fixtures::load("toy1d.json");
    RunOutput out = run(inst, SelectionKind::SddpLower, SelectionKind::VShapeUpper, {2, 0.0});
    std::ostringstream os;
    write_gap_csv(os, inst, out.state);
    std::string text = os.str();
    CHECK(text.rfind("iter,t,x_t,gap,lower_at_x,upper_at_x\r\n", 0) == 0);
    CHECK(text.find("\"[0.9]\"") != std::string::npos);
}

TEST_CASE("invalid kind combinations are rejected") {
    MspInstance inst = fixtures::load("toy1d.json");
    CHECK_THROWS_AS(run(inst, SelectionKind::UQuad, SelectionKind::VShapeUpper, {5, 0.0}),
                    ValidationError);
    CHECK_THROWS_AS(run(inst, SelectionKind::SddpLower, SelectionKind::SddpLower, {5, 0.0}),
                    ValidationError);
}
