#include "fixtures.hpp"

#include <json.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const std::string& stderr_file = "") {
    std::string cmd = std::string(TDP_CLI_PATH) + " " + args;
    if (!stderr_file.empty()) cmd += " 2>" + stderr_file;
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string data_path(const std::string& name) {
    return std::string(TDP_DATA_DIR) + "/" + name;
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("tdp_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

nlohmann::json read_json(const fs::path& p) {
    return nlohmann::json::parse(fixtures::read_file(p.string()));
}

bool same_bytes(const fs::path& a, const fs::path& b) {
    return fixtures::read_file(a.string()) == fixtures::read_file(b.string());
}

} // namespace

TEST_CASE("solve: sddp+v on toy1d converges to the oracle value") {
    fs::path out = fresh_dir("solve_v");
    int code = run_cli("solve --instance " + data_path("toy1d.json") + " --lower sddp --upper v" +
                       " --out " + out.string());
    CHECK(code == 0);
    nlohmann::json summary = read_json(out / "summary.json");
    CHECK(summary["converged"].get<bool>());
    CHECK(std::abs(summary["root_lower"].get<double>() - 0.95) <= 1e-6);
    CHECK(fs::exists(out / "gaps.csv"));
    CHECK(fs::exists(out / "approximations.json"));
    std::string gaps = fixtures::read_file((out / "gaps.csv").string());
    CHECK(gaps.rfind("iter,t,x_t,gap,lower_at_x,upper_at_x", 0) == 0);
}

TEST_CASE("solve: missing instance exits 2 with a machine-readable error") {
    fs::path out = fresh_dir("solve_missing");
    fs::path err = out / "stderr.txt";
    int code = run_cli("solve --instance /nonexistent/nowhere.json --out " + out.string(),
                       err.string());
    CHECK(code == 2);
    nlohmann::json j = read_json(err);
    CHECK(j["error"].get<std::string>().find("instance not found") != std::string::npos);
}

TEST_CASE("solve: the u rule on the kink fixture reports its invalidity") {
    fs::path out = fresh_dir("solve_u");
    int code = run_cli("solve --instance " + data_path("kink1d.json") + " --upper u --out " +
                       out.string());
    CHECK(code == 0);
    nlohmann::json summary = read_json(out / "summary.json");
    CHECK(summary["audit"]["max_validity_violation"].get<double>() > 0.0);
}

TEST_CASE("oracle: root value and profile kinks") {
    fs::path out = fresh_dir("oracle");
    int code = run_cli("oracle --instance " + data_path("toy1d.json") +
                       " --root --profile 1,-2,2,81 --out " + out.string());
    CHECK(code == 0);
    CHECK(read_json(out / "root.json")["root_value"].get<double>() == Catch::Approx(0.95));
    std::string csv = fixtures::read_file((out / "profile.csv").string());
    CHECK(csv.rfind("t,x,value", 0) == 0);
    CHECK(csv.find("1,-0.5,0.5") != std::string::npos);
    CHECK(csv.find("1,0.5,0.5") != std::string::npos);
}

TEST_CASE("oracle: zero steps is a usage error") {
    fs::path out = fresh_dir("oracle_bad");
    int code = run_cli("oracle --instance " + data_path("toy1d.json") + " --profile 1,-2,2,0" +
                       " --out " + out.string());
    CHECK(code == 2);
}

TEST_CASE("pomdp: bound dominance report has zero violations") {
    fs::path out = fresh_dir("pomdp");
    int code = run_cli("pomdp --instance " + data_path("tiger.json") + " --backups " +
                       data_path("tiger_beliefs.json") + " --grid 200 --compare-bound --out " +
                       out.string());
    CHECK(code == 0);
    nlohmann::json report = read_json(out / "bound_report.json");
    CHECK(report["violations"].get<long>() == 0);
    CHECK(fs::exists(out / "gamma.csv"));
    CHECK(fs::exists(out / "grid.csv"));
    CHECK(fs::exists(out / "bound.csv"));
}

TEST_CASE("pomdp: malformed beliefs exit 2") {
    fs::path out = fresh_dir("pomdp_bad");
    fs::path beliefs = out / "bad.json";
    std::ofstream(beliefs) << "[[0.5, 0.4]]";
    int code = run_cli("pomdp --instance " + data_path("tiger.json") + " --backups " +
                       beliefs.string() + " --out " + out.string());
    CHECK(code == 2);
}

TEST_CASE("cli outputs are byte-identical across reruns") {
    struct Command {
        std::string name;
        std::string args;
        std::vector<std::string> files;
    };
    std::vector<Command> commands = {
        {"solve_toy_v", "solve --instance " + data_path("toy1d.json") + " --upper v",
         {"gaps.csv", "approximations.json", "summary.json"}},
        {"solve_kink_u", "solve --instance " + data_path("kink1d.json") + " --upper u",
         {"gaps.csv", "approximations.json", "summary.json"}},
        {"oracle_fan",
         "oracle --instance " + data_path("fan3.json") + " --root --profile 1,-2,2,41",
         {"root.json", "profile.csv"}},
        {"pomdp_tiger",
         "pomdp --instance " + data_path("tiger.json") + " --backups " +
             data_path("tiger_beliefs.json") + " --grid 60 --compare-bound",
         {"gamma.csv", "grid.csv", "bound.csv", "bound_report.json"}},
    };
    for (const Command& cmd : commands) {
        fs::path a = fresh_dir(cmd.name + "_a");
        fs::path b = fresh_dir(cmd.name + "_b");
        REQUIRE(run_cli(cmd.args + " --out " + a.string()) ==
                run_cli(cmd.args + " --out " + b.string()));
        for (const std::string& file : cmd.files) {
            INFO(cmd.name << "/" << file);
            CHECK(same_bytes(a / file, b / file));
        }
    }
}
