// Command line front end: validate scenario assumptions, run a single
// closed-loop simulation, or sweep parameters over a grid.
//
// Exit codes: 0 success, 1 configuration or assumption failure, 2 the
// simulation diverged.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agentsync/agentsync.hpp"

namespace {

namespace fs = std::filesystem;
using namespace agentsync;

fs::path resolve_out_dir(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("AGENTSYNC_OUT_DIR"); env && *env) return env;
    return "out";
}

void apply_cli_overrides(Scenario& sc, const std::string& mode, double epsilon, double step,
                         double duration, long seed) {
    if (!mode.empty()) {
        if (mode == "baseline") sc.system.control.mode = ControlConfig::Mode::baseline;
        else if (mode == "disturbance_rejection")
            sc.system.control.mode = ControlConfig::Mode::disturbance_rejection;
        else throw ConfigError("--mode must be 'baseline' or 'disturbance_rejection'");
    }
    if (epsilon >= 0.0) apply_override(sc, "epsilon", epsilon);
    if (step > 0.0) apply_override(sc, "h", step);
    if (duration > 0.0) apply_override(sc, "duration", duration);
    if (seed >= 0) apply_override(sc, "seed", static_cast<double>(seed));
    sc.system.finalize();
    sc.run.validate(sc.system);
}

void print_run_summary(const Scenario& sc, const RunSummary& s) {
    std::cout << "ran '" << sc.name << "' for " << format_double(s.duration) << "s at h="
              << format_double(s.h) << " (" << s.steps << " steps, " << s.recorded_rows
              << " rows recorded, " << format_double(s.wall_seconds) << "s wall)\n";
    std::cout << "  tracking error at T: " << format_double(s.terminal_error_max)
              << "  sync time: " << format_double(s.sync_time)
              << "  converged: " << (s.converged ? "yes" : "no") << "\n";
    std::cout << "  V: " << format_double(s.V0) << " -> " << format_double(s.V_T)
              << "  monotonicity violations: " << s.v_violations << "\n";
    std::cout << "  agent  order  |e(T)|        sync     band          observer decay\n";
    for (const auto& a : s.agents) {
        std::cout << "  " << a.index << "      " << a.order << "      ";
        std::cout << format_double(a.terminal_error_max) << "  " << format_double(a.sync_time)
                  << "  " << format_double(a.tracking_band) << "  slope "
                  << format_double(a.observer_decay.slope) << "\n";
    }
    if (s.divergence)
        std::cout << "  DIVERGED at t=" << format_double(s.divergence->time) << " in "
                  << s.divergence->where << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"simulation and verification of adaptive leader-following synchronization"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::string out_dir_flag;
    std::string mode;
    double epsilon = -1.0;
    double step = 0.0;
    double duration = 0.0;
    long seed = -1;
    bool check_only = false;
    std::vector<std::string> sweep_params;
    int jobs = 1;

    auto add_common = [&](CLI::App* cmd, bool with_overrides) {
        cmd->add_option("-s,--scenario", scenario_path, "scenario JSON file")->required();
        if (with_overrides) {
            cmd->add_option("--mode", mode, "controller mode override");
            cmd->add_option("--epsilon", epsilon, "boundary layer override");
            cmd->add_option("--step", step, "integration step override");
            cmd->add_option("--duration", duration, "run duration override");
            cmd->add_option("--seed", seed, "bounded-noise seed override");
        }
    };

    CLI::App* cmd_check = app.add_subcommand("check", "validate a scenario and its assumptions");
    add_common(cmd_check, false);

    CLI::App* cmd_run = app.add_subcommand("run", "simulate a scenario and write artifacts");
    add_common(cmd_run, true);
    cmd_run->add_option("-o,--out-dir", out_dir_flag,
                        "artifact directory (or AGENTSYNC_OUT_DIR, default 'out')");
    cmd_run->add_flag("--check-only", check_only, "stop after the assumption checks");

    CLI::App* cmd_sweep = app.add_subcommand("sweep", "run a parameter grid");
    add_common(cmd_sweep, true);
    cmd_sweep->add_option("-o,--out-dir", out_dir_flag,
                          "artifact directory (or AGENTSYNC_OUT_DIR, default 'out')");
    cmd_sweep
        ->add_option("-p,--param", sweep_params,
                     "axis as name=v1,v2,... (repeatable; epsilon, h, duration, k, mu0, seed)")
        ->required();
    cmd_sweep->add_option("-j,--jobs", jobs, "parallel runs per wave");

    CLI11_PARSE(app, argc, argv);

    try {
        Scenario sc = load_scenario(scenario_path);

        if (cmd_check->parsed()) {
            const AssumptionResults res = check_scenario(sc);
            std::cout << format_check_report(sc, res);
            return res.pass(sc) ? 0 : 1;
        }

        apply_cli_overrides(sc, mode, epsilon, step, duration, seed);

        if (cmd_run->parsed()) {
            const AssumptionResults res = check_scenario(sc);
            std::cout << format_check_report(sc, res);
            if (!res.pass(sc) && !sc.allow_assumption_failures) return 1;
            if (check_only) return res.pass(sc) ? 0 : 1;
            const RunResult result = run(sc.system, sc.run);
            print_run_summary(sc, result.summary);
            const fs::path dir = write_artifacts(sc, result, resolve_out_dir(out_dir_flag));
            std::cout << "artifacts in " << dir.string() << "\n";
            return result.summary.divergence ? 2 : 0;
        }

        // sweep
        std::vector<SweepAxis> axes;
        for (const auto& p : sweep_params) axes.push_back(parse_sweep_axis(p));
        const SweepResult sw = run_sweep(sc, axes, jobs);
        const fs::path base = resolve_out_dir(out_dir_flag) / fs::path(sc.name);
        fs::create_directories(base);
        {
            std::ofstream js(base / "sweep.json");
            if (!js) throw ConfigError("cannot write " + (base / "sweep.json").string());
            js << sweep_json(sc, sw).dump(2) << "\n";
        }
        bool any_diverged = false, any_error = false;
        for (const auto& pt : sw.points) {
            std::cout << "point";
            for (const auto& [param, value] : pt.params)
                std::cout << " " << param << "=" << format_double(value);
            if (pt.summary) {
                std::cout << ": |e(T)|=" << format_double(pt.summary->terminal_error_max)
                          << " band=" << format_double(pt.summary->tracking_band)
                          << (pt.summary->converged ? "" : " (not converged)");
                if (pt.summary->divergence) {
                    std::cout << " DIVERGED";
                    any_diverged = true;
                }
            } else {
                std::cout << ": error: " << pt.error;
                any_error = true;
            }
            std::cout << "\n";
        }
        std::cout << "sweep report in " << (base / "sweep.json").string() << "\n";
        return any_diverged ? 2 : (any_error ? 1 : 0);
    } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
