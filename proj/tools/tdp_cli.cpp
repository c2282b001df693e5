// Command-line driver: solve instances with tropical dynamic programming,
// query the exact scenario-tree oracle, and run the belief-space toolkit.
//
// Exit codes: 0 success, 1 non-convergence within budget, 2 input error,
// 3 numerical failure.

#include "tdp/tdp.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace {

using namespace tdp;

constexpr int kExitOk = 0;
constexpr int kExitNotConverged = 1;
constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

std::string csv_number(Real v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
}

void fail(const std::string& error, const std::string& context) {
    nlohmann::json j;
    j["error"] = error;
    j["context"] = context;
    std::cerr << j.dump() << "\n";
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("instance not found: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::vector<Vec> audit_grid(const MspInstance& instance, int t, int points) {
    const Box& box = instance.domain_boxes[t];
    std::vector<Vec> grid;
    for (int i = 0; i < points; ++i) {
        Real frac = points == 1 ? 0.5 : static_cast<Real>(i) / (points - 1);
        grid.push_back(box.lo + frac * (box.hi - box.lo));
    }
    return grid;
}

/// Post-run audit: terminal members against the final cost exactly, interior
/// members against the Bellman image of the final collections on a coarse
/// grid. Positive numbers mean a member crossed to the wrong side.
nlohmann::json audit_run(const MspInstance& instance, const RunState& state,
                         SelectionKind upper_kind) {
    Real max_violation = -kInf;
    Real max_tight_residual = 0;
    const int horizon = instance.horizon;
    for (const Vec& g : audit_grid(instance, horizon, 41)) {
        Real psi = instance.final_cost.eval_state(g, 1e-9);
        Real upper = state.upper[horizon].eval(g);
        Real lower = state.lower[horizon].eval(g);
        max_violation = std::max(max_violation, psi - upper);
        max_violation = std::max(max_violation, lower - psi);
    }
    for (std::size_t k = 0; k < state.history.size(); ++k) {
        const Vec& x = state.history[k].states[horizon];
        Real psi = instance.final_cost.eval_state(x, 1e-9);
        max_tight_residual =
            std::max({max_tight_residual, std::abs(state.upper[horizon].eval(x) - psi),
                      std::abs(psi - state.lower[horizon].eval(x))});
    }
    if (instance.state_dim == 1) {
        for (int t = 0; t < horizon; ++t) {
            std::vector<Vec> grid = audit_grid(instance, t, 21);
            for (const Vec& g : grid) {
                Real upper_ref =
                    average_bellman(instance, t, state.upper[t + 1], g,
                                    upper_kind == SelectionKind::UQuad ? BellmanKind::UpperU
                                                                       : BellmanKind::UpperV)
                        .value;
                Real lower_ref =
                    average_bellman(instance, t, state.lower[t + 1], g, BellmanKind::Lower).value;
                for (const BasicFunction& member : state.upper[t].members())
                    if (!std::holds_alternative<ConstantFn>(member.form))
                        max_violation = std::max(max_violation, upper_ref - eval_basic(member, g));
                for (const BasicFunction& member : state.lower[t].members())
                    if (!std::holds_alternative<ConstantFn>(member.form))
                        max_violation = std::max(max_violation, eval_basic(member, g) - lower_ref);
            }
        }
    }
    nlohmann::json j;
    j["max_validity_violation"] = max_violation;
    j["terminal_tight_residual"] = max_tight_residual;
    return j;
}

int cmd_solve(const std::string& instance_path, const std::string& lower,
              const std::string& upper, int max_iters, Real gap_tol,
              const std::string& out_dir) {
    MspInstance instance = load_instance(read_file(instance_path));
    if (lower != "sddp") throw ValidationError("unsupported lower selection: " + lower);
    SelectionKind upper_kind;
    if (upper == "u")
        upper_kind = SelectionKind::UQuad;
    else if (upper == "v")
        upper_kind = SelectionKind::VShapeUpper;
    else
        throw ValidationError("unsupported upper selection: " + upper);
    StopRule stop{max_iters > 0 ? max_iters : instance.config.max_iters,
                  gap_tol > 0 ? gap_tol : instance.config.gap_tol};
    RunOutput out = run(instance, SelectionKind::SddpLower, upper_kind, stop);

    std::filesystem::create_directories(out_dir);
    std::ostringstream csv;
    write_gap_csv(csv, instance, out.state);
    write_file(std::filesystem::path(out_dir) / "gaps.csv", csv.str());
    write_file(std::filesystem::path(out_dir) / "approximations.json",
               run_to_json(instance, out.state).dump(2) + "\n");
    nlohmann::json summary;
    summary["root_lower"] = out.root_lower;
    summary["root_upper"] = out.root_upper;
    summary["iters"] = out.state.iteration;
    summary["converged"] = out.converged;
    summary["audit"] = audit_run(instance, out.state, upper_kind);
    write_file(std::filesystem::path(out_dir) / "summary.json", summary.dump(2) + "\n");
    return out.converged ? kExitOk : kExitNotConverged;
}

int cmd_oracle(const std::string& instance_path, const std::string& profile, bool root,
               const std::string& out_dir) {
    MspInstance instance = load_instance(read_file(instance_path));
    std::filesystem::create_directories(out_dir);
    if (root) {
        nlohmann::json j;
        j["root_value"] = exact_root_value(instance);
        write_file(std::filesystem::path(out_dir) / "root.json", j.dump(2) + "\n");
    }
    if (!profile.empty()) {
        int t = 0, steps = 0;
        Real lo = 0, hi = 0;
        char comma;
        std::istringstream ss(profile);
        if (!(ss >> t >> comma >> lo >> comma >> hi >> comma >> steps) || steps < 1)
            throw ValidationError("profile expects t,lo,hi,steps with steps >= 1");
        auto rows = grid_profile(instance, t, lo, hi, steps);
        std::ostringstream csv;
        csv << "t,x,value\r\n";
        for (const auto& [x, v] : rows)
            csv << t << "," << csv_number(x) << "," << csv_number(v) << "\r\n";
        write_file(std::filesystem::path(out_dir) / "profile.csv", csv.str());
    }
    if (!root && profile.empty()) throw ValidationError("nothing to do: pass --root or --profile");
    return kExitOk;
}

int cmd_pomdp(const std::string& instance_path, const std::string& backups_path, int grid,
              bool compare_bound, const std::string& out_dir) {
    PomdpInstance instance = load_pomdp(read_file(instance_path));
    std::filesystem::create_directories(out_dir);

    if (!backups_path.empty()) {
        nlohmann::json jb;
        try {
            jb = nlohmann::json::parse(read_file(backups_path));
        } catch (const nlohmann::json::exception& err) {
            throw ValidationError(std::string("schema violation in beliefs file: ") + err.what());
        }
        std::vector<Vec> beliefs;
        for (const auto& row : jb) {
            Vec b = vec_from_json(row);
            if (b.size() != instance.nx || std::abs(b.sum() - 1.0) > 1e-9 ||
                (b.array() < -1e-12).any())
                throw ValidationError("belief is not on the simplex: " + row.dump());
            beliefs.push_back(std::move(b));
        }
        // Backward point-based backups: every stage refines at all beliefs.
        std::vector<AlphaSet> sets(instance.horizon + 1);
        sets[instance.horizon].stage = instance.horizon;
        sets[instance.horizon].vectors = {instance.final_cost};
        for (int t = instance.horizon - 1; t >= 0; --t) {
            AlphaSet current;
            for (const Vec& b : beliefs)
                current = alpha_backup(instance, t, sets[t + 1], b, std::move(current)).second;
            sets[t] = std::move(current);
        }
        std::ostringstream csv;
        csv << "t,k,x,alpha\r\n";
        for (int t = 0; t <= instance.horizon; ++t)
            for (std::size_t k = 0; k < sets[t].vectors.size(); ++k)
                for (int x = 0; x < instance.nx; ++x)
                    csv << t << "," << k << "," << x << ","
                        << csv_number(sets[t].vectors[k][x]) << "\r\n";
        write_file(std::filesystem::path(out_dir) / "gamma.csv", csv.str());
    }

    if (grid > 0) {
        BeliefGridDp dp = belief_grid_dp(instance, grid);
        std::ostringstream csv;
        csv << "t";
        for (int x = 0; x < instance.nx; ++x) csv << ",b" << x;
        csv << ",value\r\n";
        for (int t = 0; t <= instance.horizon; ++t)
            for (std::size_t i = 0; i < dp.beliefs.size(); ++i) {
                csv << t;
                for (int x = 0; x < instance.nx; ++x) csv << "," << csv_number(dp.beliefs[i][x]);
                csv << "," << csv_number(dp.values[t][i]) << "\r\n";
            }
        write_file(std::filesystem::path(out_dir) / "grid.csv", csv.str());

        if (compare_bound) {
            std::vector<Vec> hat = fully_observed_bound(instance);
            std::ostringstream bound_csv;
            bound_csv << "t";
            for (int x = 0; x < instance.nx; ++x) bound_csv << ",b" << x;
            bound_csv << ",fully_observed,grid_value,slack\r\n";
            long violations = 0;
            Real worst_slack = kInf;
            for (int t = 0; t <= instance.horizon; ++t)
                for (std::size_t i = 0; i < dp.beliefs.size(); ++i) {
                    Real bound = dp.beliefs[i].dot(hat[t]);
                    Real value = dp.values[t][i];
                    Real slack = value - bound;
                    worst_slack = std::min(worst_slack, slack);
                    if (slack < -1e-9) ++violations;
                    bound_csv << t;
                    for (int x = 0; x < instance.nx; ++x)
                        bound_csv << "," << csv_number(dp.beliefs[i][x]);
                    bound_csv << "," << csv_number(bound) << "," << csv_number(value) << ","
                              << csv_number(slack) << "\r\n";
                }
            write_file(std::filesystem::path(out_dir) / "bound.csv", bound_csv.str());
            nlohmann::json report;
            report["violations"] = violations;
            report["min_slack"] = worst_slack;
            write_file(std::filesystem::path(out_dir) / "bound_report.json",
                       report.dump(2) + "\n");
        }
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tropical dynamic programming for linear-polyhedral multistage problems"};
    app.require_subcommand(1);

    std::string instance_path, out_dir = ".";
    std::string lower = "sddp", upper = "v";
    int max_iters = 0;
    double gap_tol = 0;
    CLI::App* solve = app.add_subcommand("solve", "run the sandwich solver");
    solve->add_option("--instance", instance_path)->required();
    solve->add_option("--lower", lower, "lower selection rule (sddp)");
    solve->add_option("--upper", upper, "upper selection rule (u|v)");
    solve->add_option("--max-iters", max_iters);
    solve->add_option("--gap-tol", gap_tol);
    solve->add_option("--out", out_dir);

    std::string profile;
    bool want_root = false;
    CLI::App* oracle = app.add_subcommand("oracle", "exact scenario-tree reference");
    oracle->add_option("--instance", instance_path)->required();
    oracle->add_option("--profile", profile, "t,lo,hi,steps");
    oracle->add_flag("--root", want_root);
    oracle->add_option("--out", out_dir);

    std::string backups;
    int grid = 0;
    bool compare_bound = false;
    CLI::App* pomdp = app.add_subcommand("pomdp", "belief-space toolkit");
    pomdp->add_option("--instance", instance_path)->required();
    pomdp->add_option("--backups", backups, "json file with a list of beliefs");
    pomdp->add_option("--grid", grid, "simplex grid resolution");
    pomdp->add_flag("--compare-bound", compare_bound);
    pomdp->add_option("--out", out_dir);

    try {
        app.parse(argc, argv);
        if (solve->parsed())
            return cmd_solve(instance_path, lower, upper, max_iters, gap_tol, out_dir);
        if (oracle->parsed()) return cmd_oracle(instance_path, profile, want_root, out_dir);
        if (pomdp->parsed()) return cmd_pomdp(instance_path, backups, grid, compare_bound, out_dir);
    } catch (const CLI::ParseError& err) {
        if (err.get_exit_code() == 0) return app.exit(err); // --help
        fail("usage error", err.what());
        return kExitInput;
    } catch (const ValidationError& err) {
        fail(err.what(), "input validation");
        return kExitInput;
    } catch (const TreeSizeError& err) {
        fail(err.what(), "oracle tree size");
        return kExitInput;
    } catch (const RecourseError& err) {
        fail(err.what(), "recourse violation at t=" + std::to_string(err.t));
        return kExitNumerical;
    } catch (const NumericalError& err) {
        fail(err.what(), "subproblem solver");
        return kExitNumerical;
    } catch (const std::exception& err) {
        fail(err.what(), "unexpected");
        return kExitNumerical;
    }
    return kExitInput;
}
