#pragma once

// Scenario execution: assumption gating, artifact emission, and parameter
// sweeps. Everything here is deterministic given the scenario file; wall
// clock timing is quarantined under a "timing" key so artifact comparison
// can ignore it.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "agentsync/scenario.hpp"

namespace agentsync {

inline std::string format_check_report(const Scenario& sc, const AssumptionResults& res) {
    std::ostringstream out;
    out << "scenario '" << sc.name << "'\n";
    out << "  leader dimension " << sc.system.leader.n() << ", " << sc.system.agent_count()
        << " follower(s), " << sc.system.schedule().graph_count() << " graph(s)\n";
    out << "  eigenvalues of the leader:";
    for (const auto& lam : res.stability.eigenvalues)
        out << " (" << format_double(lam.real()) << (lam.imag() < 0 ? " - " : " + ")
            << format_double(std::abs(lam.imag())) << "i)";
    out << "\n";
    auto flag = [&](const char* name, bool ok, const std::string& detail = "") {
        out << "  [" << (ok ? "ok" : "FAIL") << "] " << name;
        if (!detail.empty()) out << ": " << detail;
        out << "\n";
    };
    flag("marginal stability", res.stability.marginally_stable);
    flag("neutral stability", res.stability.neutrally_stable);
    flag("detectability", res.stability.detectable);
    flag("joint connectivity", res.connectivity.satisfied,
         res.connectivity.satisfied ? "" : res.connectivity.message);
    flag("undirected follower edges", res.followers_undirected);
    for (std::size_t i = 0; i < res.bounds.size(); ++i) {
        const auto& b = res.bounds[i];
        std::ostringstream d;
        d << "worst margin " << format_double(b.worst_margin) << " over " << b.samples
          << " samples";
        if (!b.note.empty()) d << " (" << b.note << ")";
        flag(("agent " + std::to_string(i + 1) + " regressor bound").c_str(), b.passed, d.str());
    }
    out << "  gain: " << res.gain_note << "\n";
    for (std::size_t g = 0; g < res.gain_graph_stable.size(); ++g)
        out << "    graph " << g + 1 << " frozen estimation dynamics "
            << (res.gain_graph_stable[g] ? "stable" : "not stable") << "\n";
    const auto fails = res.failures(sc);
    if (fails.empty()) {
        out << "  all assumptions required by the selected mode hold\n";
    } else {
        out << "  blocking failures:\n";
        for (const auto& f : fails) out << "    - " << f << "\n";
        if (sc.allow_assumption_failures)
            out << "  (overridden by allow_assumption_failures)\n";
    }
    return out.str();
}

/// Checks assumptions and runs the closed loop. Blocking assumption failures
/// raise ConfigError unless the scenario opts out.
inline RunResult run_scenario(const Scenario& sc) {
    const AssumptionResults res = check_scenario(sc);
    const auto fails = res.failures(sc);
    if (!fails.empty() && !sc.allow_assumption_failures) {
        std::string msg = "scenario '" + sc.name + "' fails required assumptions:";
        for (const auto& f : fails) msg += "\n  - " + f;
        throw ConfigError(msg);
    }
    return run(sc.system, sc.run);
}

namespace detail {

inline json linear_fit_json(const LinearFit& fit) {
    json out;
    out["slope"] = fit.slope;
    out["intercept"] = fit.intercept;
    out["r2"] = fit.r2;
    out["count"] = fit.count;
    return out;
}

}  // namespace detail

/// Deterministic JSON rendering of a run; wall time lives under "timing".
inline json summary_json(const Scenario& sc, const RunResult& result) {
    using detail::linear_fit_json;
    const RunSummary& s = result.summary;
    json doc;
    doc["scenario"] = sc.name;
    doc["h"] = s.h;
    doc["duration"] = s.duration;
    doc["integrator"] = s.integrator == RunConfig::Integrator::euler ? "euler" : "rk4";
    doc["control_mode"] = s.control.mode == ControlConfig::Mode::disturbance_rejection
                              ? "disturbance_rejection"
                              : "baseline";
    doc["epsilon"] = s.control.epsilon;
    doc["sync_threshold"] = s.sync_threshold;
    doc["steps"] = s.steps;
    doc["recorded_rows"] = s.recorded_rows;
    doc["terminal_error_max"] = s.terminal_error_max;
    doc["sync_time"] = s.sync_time;
    doc["converged"] = s.converged;
    doc["lyapunov"] = {{"V0", s.V0},
                       {"V_T", s.V_T},
                       {"violations", s.v_violations},
                       {"worst_delta", s.v_worst_delta},
                       {"tolerance", s.v_tolerance}};
    doc["dissipation"] = {{"W_total", s.W_total}, {"W_tail_increment", s.W_tail_increment}};
    doc["tracking_band"] = s.tracking_band;
    doc["max_pdot_residual"] = s.max_pdot_residual;
    if (s.divergence) {
        doc["divergence"] = {{"time", s.divergence->time}, {"where", s.divergence->where}};
    }
    json agents = json::array();
    for (const auto& a : s.agents) {
        json ja;
        ja["index"] = a.index;
        ja["order"] = a.order;
        ja["terminal_errors"] = a.terminal_errors;
        ja["terminal_error_max"] = a.terminal_error_max;
        ja["observer"] = {{"v_err_T", a.v_err_T},
                          {"S_err_T", a.S_err_T},
                          {"L_err_T", a.L_err_T},
                          {"decay_fit", linear_fit_json(a.observer_decay)}};
        ja["predicted_derivative_residuals"] = a.predicted_deriv_resid;
        ja["sync_time"] = a.sync_time;
        ja["synchronized"] = a.synchronized;
        ja["tracking_band"] = a.tracking_band;
        ja["chain_residual_rms"] = a.chain_residual_rms;
        ja["reference_rate_check"] = {{"max_residual", a.deriv_check.max_residual},
                                      {"samples", a.deriv_check.samples},
                                      {"skipped", a.deriv_check.skipped}};
        ja["D_hat_T"] = a.D_hat_T;
        ja["disturbance_bound"] = a.disturbance_bound;
        if (a.noise_seed) ja["noise_seed"] = *a.noise_seed;
        agents.push_back(ja);
    }
    doc["agents"] = agents;
    doc["timing"] = {{"wall_seconds", s.wall_seconds}};
    return doc;
}

/// Writes trace.csv, summary.json, and per-column plots/*.tsv under
/// out_dir/<scenario name>. Returns the scenario directory.
inline std::filesystem::path write_artifacts(const Scenario& sc, const RunResult& result,
                                             const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    const fs::path base = out_dir / sc.name;
    fs::create_directories(base / "plots");

    {
        std::ofstream csv(base / "trace.csv");
        if (!csv) throw ConfigError("cannot write " + (base / "trace.csv").string());
        result.trace.write_csv(csv);
    }
    {
        std::ofstream js(base / "summary.json");
        if (!js) throw ConfigError("cannot write " + (base / "summary.json").string());
        js << summary_json(sc, result).dump(2) << "\n";
    }
    const Trace& tr = result.trace;
    for (std::size_t c = 1; c < tr.cols(); ++c) {
        const std::string& name = tr.columns()[c];
        std::ofstream tsv(base / "plots" / (name + ".tsv"));
        if (!tsv) throw ConfigError("cannot write plot file for column " + name);
        for (std::size_t r = 0; r < tr.rows(); ++r)
            tsv << format_double(tr.value(r, 0)) << '\t' << format_double(tr.value(r, c)) << '\n';
    }
    return base;
}

// ---------------------------------------------------------------------------
// Parameter sweeps.

struct SweepAxis {
    std::string param;
    std::vector<double> values;
};

/// Parses "name=v1,v2,v3" into an axis.
inline SweepAxis parse_sweep_axis(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("sweep parameter '" + text + "' must look like name=v1,v2,...");
    SweepAxis axis;
    axis.param = text.substr(0, eq);
    std::string rest = text.substr(eq + 1);
    if (rest.empty()) throw ConfigError("sweep parameter '" + text + "' lists no values");
    std::size_t pos = 0;
    while (pos <= rest.size()) {
        const auto comma = rest.find(',', pos);
        const std::string tok =
            comma == std::string::npos ? rest.substr(pos) : rest.substr(pos, comma - pos);
        try {
            std::size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            axis.values.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("sweep value '" + tok + "' in '" + text + "' is not a number");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return axis;
}

/// Applies one named override to a scenario. Supported: epsilon, h, duration,
/// k (every follower), mu0 (re-derives L0), seed (re-seeds bounded noise,
/// agent i gets seed + i - 1).
inline void apply_override(Scenario& sc, const std::string& param, double value) {
    if (param == "epsilon") {
        if (value < 0.0) throw ConfigError("epsilon must not be negative");
        sc.system.control.epsilon = value;
    } else if (param == "h") {
        if (!(value > 0.0)) throw ConfigError("h must be positive");
        sc.run.h = value;
    } else if (param == "duration") {
        if (!(value > 0.0)) throw ConfigError("duration must be positive");
        sc.run.duration = value;
    } else if (param == "k") {
        if (!(value > 0.0)) throw ConfigError("k must be positive");
        for (auto& f : sc.system.followers) f.k_gain = value;
    } else if (param == "mu0") {
        if (!(value > 0.0)) throw ConfigError("mu0 must be positive");
        sc.mu0 = value;
        sc.gain_designed = true;
        sc.system.L0 = design_gain(sc.system.leader, value);
    } else if (param == "seed") {
        if (value < 0.0 || value != std::floor(value))
            throw ConfigError("seed must be a non-negative integer");
        const auto base = static_cast<std::uint64_t>(value);
        for (std::size_t i = 0; i < sc.system.followers.size(); ++i) {
            auto& d = sc.system.followers[i].disturbance;
            if (d.kind() == DisturbanceProfile::Kind::bounded_noise)
                d.reseed(base + static_cast<std::uint64_t>(i));
        }
    } else {
        throw ConfigError("unknown sweep parameter '" + param +
                          "'; supported: epsilon, h, duration, k, mu0, seed");
    }
    sc.system.finalize();
    sc.run.validate(sc.system);
}

struct SweepPoint {
    std::vector<std::pair<std::string, double>> params;  // axis order
    std::optional<RunSummary> summary;
    std::string error;  // non-empty when the point failed
};

struct SweepResult {
    std::vector<SweepPoint> points;  // row-major over the axes, first axis slowest
};

/// Runs the cartesian product of the axes over copies of the base scenario.
/// Point order is deterministic regardless of `jobs`.
inline SweepResult run_sweep(const Scenario& base, const std::vector<SweepAxis>& axes,
                             int jobs = 1) {
    if (axes.empty()) throw ConfigError("a sweep needs at least one parameter axis");
    for (const auto& ax : axes)
        if (ax.values.empty())
            throw ConfigError("sweep axis '" + ax.param + "' lists no values");
    std::size_t total = 1;
    for (const auto& ax : axes) total *= ax.values.size();

    SweepResult result;
    result.points.resize(total);
    auto point_params = [&](std::size_t flat) {
        std::vector<std::pair<std::string, double>> out;
        std::size_t rem = flat;
        for (std::size_t a = axes.size(); a-- > 0;) {
            out.emplace_back(axes[a].param, axes[a].values[rem % axes[a].values.size()]);
            rem /= axes[a].values.size();
        }
        std::reverse(out.begin(), out.end());
        return out;
    };

    auto run_point = [&](std::size_t flat) {
        SweepPoint pt;
        pt.params = point_params(flat);
        try {
            Scenario sc = base;
            for (const auto& [param, value] : pt.params) apply_override(sc, param, value);
            pt.summary = run_scenario(sc).summary;
        } catch (const Error& e) {
            pt.error = e.what();
        }
        return pt;
    };

    if (jobs < 1) jobs = 1;
    for (std::size_t start = 0; start < total; start += static_cast<std::size_t>(jobs)) {
        const std::size_t end = std::min(total, start + static_cast<std::size_t>(jobs));
        std::vector<std::future<SweepPoint>> wave;
        for (std::size_t i = start + 1; i < end; ++i)
            wave.push_back(std::async(std::launch::async, run_point, i));
        result.points[start] = run_point(start);
        for (std::size_t i = start + 1; i < end; ++i)
            result.points[i] = wave[i - start - 1].get();
    }
    return result;
}

/// Aggregated sweep report; deterministic aside from nothing (timing is
/// omitted per point).
inline json sweep_json(const Scenario& base, const SweepResult& sweep) {
    json doc;
    doc["scenario"] = base.name;
    json pts = json::array();
    for (const auto& pt : sweep.points) {
        json jp;
        json params;
        for (const auto& [param, value] : pt.params) params[param] = value;
        jp["params"] = params;
        if (pt.summary) {
            const RunSummary& s = *pt.summary;
            jp["terminal_error_max"] = s.terminal_error_max;
            jp["sync_time"] = s.sync_time;
            jp["converged"] = s.converged;
            jp["tracking_band"] = s.tracking_band;
            jp["V_T"] = s.V_T;
            jp["W_total"] = s.W_total;
            jp["v_violations"] = s.v_violations;
            if (s.divergence)
                jp["divergence"] = {{"time", s.divergence->time}, {"where", s.divergence->where}};
        } else {
            jp["error"] = pt.error;
        }
        pts.push_back(jp);
    }
    doc["points"] = pts;
    return doc;
}

}  // namespace agentsync
