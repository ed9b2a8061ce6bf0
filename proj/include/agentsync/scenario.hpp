#pragma once

// Scenario files: JSON descriptions of the leader, the communication graphs
// and their switching schedule, the followers, the controller mode, and the
// integration grid. Loading validates aggressively and reports paths into the
// document; running is gated on the model-assumption checks below.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "agentsync/engine.hpp"

namespace agentsync {

using json = nlohmann::ordered_json;

struct Scenario {
    std::string name;
    System system;
    RunConfig run;
    JointWindow window;
    bool window_user_supplied = false;
    expr::BoundCheckConfig bound_check;
    bool allow_assumption_failures = false;
    bool gain_designed = false;  // L0 derived from mu0 rather than user-supplied
    double mu0 = 0.0;
    std::vector<std::string> graph_names;  // parallel to the schedule's graph list
    bool schedule_is_cycle = false;
};

namespace detail {

[[noreturn]] inline void cfg_fail(const std::string& ctx, const std::string& msg) {
    throw ConfigError(ctx + ": " + msg);
}

inline const json& expect(const json& node, const std::string& ctx) {
    if (node.is_null()) cfg_fail(ctx, "missing value");
    return node;
}

inline const json* find(const json& obj, const std::string& key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

inline const json& require(const json& obj, const std::string& key, const std::string& ctx) {
    const json* p = find(obj, key);
    if (!p) cfg_fail(ctx, "missing required key '" + key + "'");
    return *p;
}

inline void require_object(const json& node, const std::string& ctx) {
    if (!node.is_object()) cfg_fail(ctx, "expected an object");
}

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                                const std::string& ctx) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key())) cfg_fail(ctx, "unknown key '" + it.key() + "'");
}

inline double as_number(const json& node, const std::string& ctx) {
    if (!node.is_number()) cfg_fail(ctx, "expected a number");
    return node.get<double>();
}

inline long as_integer(const json& node, const std::string& ctx) {
    if (!node.is_number_integer()) cfg_fail(ctx, "expected an integer");
    return node.get<long>();
}

inline bool as_bool(const json& node, const std::string& ctx) {
    if (!node.is_boolean()) cfg_fail(ctx, "expected a boolean");
    return node.get<bool>();
}

inline std::string as_string(const json& node, const std::string& ctx) {
    if (!node.is_string()) cfg_fail(ctx, "expected a string");
    return node.get<std::string>();
}

inline Eigen::VectorXd as_vector(const json& node, const std::string& ctx) {
    if (!node.is_array()) cfg_fail(ctx, "expected an array of numbers");
    Eigen::VectorXd v(node.size());
    for (std::size_t i = 0; i < node.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = as_number(node[i], ctx + "[" + std::to_string(i) + "]");
    return v;
}

inline Eigen::MatrixXd as_matrix(const json& node, const std::string& ctx) {
    if (!node.is_array() || node.empty()) cfg_fail(ctx, "expected an array of rows");
    const std::size_t rows = node.size();
    std::size_t cols = 0;
    Eigen::MatrixXd M;
    for (std::size_t i = 0; i < rows; ++i) {
        const Eigen::VectorXd r = as_vector(node[i], ctx + "[" + std::to_string(i) + "]");
        if (i == 0) {
            cols = static_cast<std::size_t>(r.size());
            M.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        } else if (static_cast<std::size_t>(r.size()) != cols) {
            cfg_fail(ctx, "rows must all have the same length");
        }
        M.row(static_cast<Eigen::Index>(i)) = r.transpose();
    }
    return M;
}

inline expr::Expr parse_expression(const json& node, const std::string& ctx) {
    const std::string text = as_string(node, ctx);
    try {
        return expr::Expr::parse(text);
    } catch (const ParseError& e) {
        cfg_fail(ctx, std::string("cannot parse '") + text + "': " + e.what());
    }
}

inline std::pair<int, int> parse_edge(const std::string& text, const std::string& ctx) {
    const auto arrow = text.find("->");
    if (arrow == std::string::npos) cfg_fail(ctx, "edge '" + text + "' must look like 'j -> i'");
    auto parse_node = [&](std::string part) {
        std::size_t a = part.find_first_not_of(" \t");
        std::size_t b = part.find_last_not_of(" \t");
        if (a == std::string::npos) cfg_fail(ctx, "edge '" + text + "' is missing a node");
        part = part.substr(a, b - a + 1);
        for (char c : part)
            if (!std::isdigit(static_cast<unsigned char>(c)))
                cfg_fail(ctx, "edge '" + text + "' must name plain node numbers; weights or " +
                                  "labels are not supported");
        return std::stoi(part);
    };
    return {parse_node(text.substr(0, arrow)), parse_node(text.substr(arrow + 2))};
}

inline DisturbanceProfile parse_disturbance(const json& node, const std::string& ctx) {
    require_object(node, ctx);
    const std::string kind = as_string(require(node, "kind", ctx), ctx + ".kind");
    if (kind == "zero") {
        reject_unknown_keys(node, {"kind"}, ctx);
        return DisturbanceProfile::zero();
    }
    if (kind == "sinusoid") {
        reject_unknown_keys(node, {"kind", "amplitude", "omega", "phase"}, ctx);
        const double A = as_number(require(node, "amplitude", ctx), ctx + ".amplitude");
        const double w = as_number(require(node, "omega", ctx), ctx + ".omega");
        const double ph = find(node, "phase") ? as_number(*find(node, "phase"), ctx + ".phase") : 0.0;
        return DisturbanceProfile::sinusoid(A, w, ph);
    }
    if (kind == "square_wave") {
        reject_unknown_keys(node, {"kind", "amplitude", "period"}, ctx);
        return DisturbanceProfile::square_wave(
            as_number(require(node, "amplitude", ctx), ctx + ".amplitude"),
            as_number(require(node, "period", ctx), ctx + ".period"));
    }
    if (kind == "piecewise_constant") {
        reject_unknown_keys(node, {"kind", "breakpoints", "values"}, ctx);
        const Eigen::VectorXd b = as_vector(require(node, "breakpoints", ctx), ctx + ".breakpoints");
        const Eigen::VectorXd v = as_vector(require(node, "values", ctx), ctx + ".values");
        return DisturbanceProfile::piecewise_constant(
            std::vector<double>(b.data(), b.data() + b.size()),
            std::vector<double>(v.data(), v.data() + v.size()));
    }
    if (kind == "bounded_noise") {
        reject_unknown_keys(node, {"kind", "amplitude", "hold", "seed"}, ctx);
        const double A = as_number(require(node, "amplitude", ctx), ctx + ".amplitude");
        const double hold = as_number(require(node, "hold", ctx), ctx + ".hold");
        const long seed = as_integer(require(node, "seed", ctx), ctx + ".seed");
        if (seed < 0) cfg_fail(ctx + ".seed", "seed must not be negative");
        return DisturbanceProfile::bounded_noise(A, hold, static_cast<std::uint64_t>(seed));
    }
    cfg_fail(ctx + ".kind", "unknown disturbance kind '" + kind + "'");
}

inline json disturbance_to_json(const DisturbanceProfile& d) {
    json out;
    switch (d.kind()) {
        case DisturbanceProfile::Kind::zero:
            out["kind"] = "zero";
            break;
        case DisturbanceProfile::Kind::sinusoid:
            out["kind"] = "sinusoid";
            out["amplitude"] = d.amplitude();
            out["omega"] = d.omega();
            out["phase"] = d.phase();
            break;
        case DisturbanceProfile::Kind::square_wave:
            out["kind"] = "square_wave";
            out["amplitude"] = d.amplitude();
            out["period"] = d.period();
            break;
        case DisturbanceProfile::Kind::piecewise_constant:
            out["kind"] = "piecewise_constant";
            out["breakpoints"] = d.breakpoints();
            out["values"] = d.values();
            break;
        case DisturbanceProfile::Kind::bounded_noise:
            out["kind"] = "bounded_noise";
            out["amplitude"] = d.amplitude();
            out["hold"] = d.hold_time();
            out["seed"] = d.seed();
            break;
    }
    return out;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline json matrix_to_json(const Eigen::MatrixXd& M) {
    json out = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) out.push_back(vector_to_json(M.row(i).transpose()));
    return out;
}

}  // namespace detail

/// Parses and validates a scenario from JSON text. `name_hint` names the
/// scenario when the document does not.
inline Scenario scenario_from_json(const json& doc, const std::string& name_hint) {
    using namespace detail;
    require_object(doc, "scenario");
    reject_unknown_keys(doc,
                        {"name", "leader", "observer", "graphs", "schedule", "joint_window",
                         "followers", "control", "run", "bound_check",
                         "allow_assumption_failures"},
                        "scenario");

    Scenario sc;
    sc.name = find(doc, "name") ? as_string(*find(doc, "name"), "name") : name_hint;

    // Leader block.
    const json& jl = require(doc, "leader", "scenario");
    require_object(jl, "leader");
    reject_unknown_keys(jl, {"S", "F", "v0", "mu0", "L0"}, "leader");
    sc.system.leader.S = as_matrix(require(jl, "S", "leader"), "leader.S");
    sc.system.leader.F = as_vector(require(jl, "F", "leader"), "leader.F").transpose();
    sc.system.leader.v0_init = as_vector(require(jl, "v0", "leader"), "leader.v0");
    sc.system.leader.validate();
    const json* jmu0 = find(jl, "mu0");
    const json* jL0 = find(jl, "L0");
    if ((jmu0 == nullptr) == (jL0 == nullptr))
        cfg_fail("leader", "exactly one of 'mu0' and 'L0' must be given");
    if (jmu0) {
        sc.mu0 = as_number(*jmu0, "leader.mu0");
        if (!(sc.mu0 > 0.0)) cfg_fail("leader.mu0", "must be positive");
        sc.gain_designed = true;
        try {
            sc.system.L0 = design_gain(sc.system.leader, sc.mu0);
        } catch (const NumericError& e) {
            cfg_fail("leader", std::string("cannot design the observer gain from mu0: ") +
                                   e.what() + "; supply an explicit L0 instead");
        }
    } else {
        sc.system.L0 = as_vector(*jL0, "leader.L0");
        if (sc.system.L0.size() != sc.system.leader.n())
            cfg_fail("leader.L0", "must have the leader dimension");
    }

    // Observer block.
    const json& jo = require(doc, "observer", "scenario");
    require_object(jo, "observer");
    reject_unknown_keys(jo, {"mu1", "mu2", "mode", "mu_v", "initial"}, "observer");
    sc.system.gains.mu1 = as_number(require(jo, "mu1", "observer"), "observer.mu1");
    sc.system.gains.mu2 = as_number(require(jo, "mu2", "observer"), "observer.mu2");
    if (!(sc.system.gains.mu1 > 0.0) || !(sc.system.gains.mu2 > 0.0))
        cfg_fail("observer", "mu1 and mu2 must be positive");
    const std::string mode =
        find(jo, "mode") ? as_string(*find(jo, "mode"), "observer.mode") : "output_coupled";
    if (mode == "output_coupled") {
        sc.system.gains.mode = ObserverGains::Mode::output_coupled;
    } else if (mode == "state_coupled") {
        sc.system.gains.mode = ObserverGains::Mode::state_coupled;
        sc.system.gains.mu_v = as_number(require(jo, "mu_v", "observer"), "observer.mu_v");
        if (!(sc.system.gains.mu_v > 0.0)) cfg_fail("observer.mu_v", "must be positive");
    } else {
        cfg_fail("observer.mode", "must be 'output_coupled' or 'state_coupled'");
    }

    // Graphs: named edge lists over nodes 0..N.
    const json& jg = require(doc, "graphs", "scenario");
    require_object(jg, "graphs");
    if (jg.empty()) cfg_fail("graphs", "at least one graph is required");

    // Followers.
    const json& jf = require(doc, "followers", "scenario");
    if (!jf.is_array() || jf.empty()) cfg_fail("followers", "expected a non-empty array");
    const int N = static_cast<int>(jf.size());
    for (int i = 0; i < N; ++i) {
        const std::string ctx = "followers[" + std::to_string(i) + "]";
        const std::string agent = "agent " + std::to_string(i + 1);
        const json& node = jf[static_cast<std::size_t>(i)];
        require_object(node, ctx);
        reject_unknown_keys(
            node, {"order", "f", "theta", "beta", "k", "Lambda", "phi", "x0", "disturbance"},
            ctx);
        FollowerSpec spec;
        spec.order = static_cast<int>(as_integer(require(node, "order", ctx), ctx + ".order"));
        if (spec.order < 1) cfg_fail(ctx + ".order", "must be at least 1");
        const json& jrows = require(node, "f", ctx);
        if (!jrows.is_array()) cfg_fail(ctx + ".f", "expected an array of expressions");
        for (std::size_t rix = 0; rix < jrows.size(); ++rix)
            spec.f_rows.push_back(
                parse_expression(jrows[rix], ctx + ".f[" + std::to_string(rix) + "]"));
        spec.theta_true = as_vector(require(node, "theta", ctx), ctx + ".theta");
        spec.beta = as_vector(require(node, "beta", ctx), ctx + ".beta");
        spec.k_gain = as_number(require(node, "k", ctx), ctx + ".k");
        if (!(spec.k_gain > 0.0)) cfg_fail(ctx + ".k", "must be positive");
        spec.Lambda = find(node, "Lambda")
                          ? as_matrix(*find(node, "Lambda"), ctx + ".Lambda")
                          : Eigen::MatrixXd(Eigen::MatrixXd::Identity(spec.m(), spec.m()));
        spec.phi = parse_expression(require(node, "phi", ctx), ctx + ".phi");
        spec.x_init = find(node, "x0") ? as_vector(*find(node, "x0"), ctx + ".x0")
                                       : Eigen::VectorXd(Eigen::VectorXd::Zero(spec.order));
        if (find(node, "disturbance"))
            spec.disturbance = parse_disturbance(*find(node, "disturbance"), ctx + ".disturbance");
        try {
            spec.validate();
            require_hurwitz_beta(spec.beta);
        } catch (const ConfigError& e) {
            cfg_fail(ctx, agent + ": " + e.what());
        }
        sc.system.followers.push_back(std::move(spec));
    }

    // Build graphs now that N is known.
    std::map<std::string, int> graph_index;
    std::vector<DiGraph> graphs;
    for (auto it = jg.begin(); it != jg.end(); ++it) {
        const std::string ctx = "graphs." + it.key();
        if (!it.value().is_array()) cfg_fail(ctx, "expected an array of edges");
        std::vector<std::pair<int, int>> edges;
        for (const auto& je : it.value())
            edges.push_back(detail::parse_edge(as_string(je, ctx), ctx));
        try {
            graphs.emplace_back(N + 1, std::move(edges));
        } catch (const ConfigError& e) {
            cfg_fail(ctx, e.what());
        }
        graph_index[it.key()] = static_cast<int>(graphs.size());
        sc.graph_names.push_back(it.key());
    }
    auto lookup_graph = [&](const std::string& name, const std::string& ctx) {
        auto it = graph_index.find(name);
        if (it == graph_index.end()) cfg_fail(ctx, "unknown graph '" + name + "'");
        return it->second;
    };

    // Schedule.
    const json& js = require(doc, "schedule", "scenario");
    require_object(js, "schedule");
    const json* jcycle = find(js, "cycle");
    const json* jintervals = find(js, "intervals");
    if ((jcycle == nullptr) == (jintervals == nullptr))
        cfg_fail("schedule", "exactly one of 'cycle' and 'intervals' must be given");
    std::vector<ScheduleEntry> entries;
    double period = 0.0;
    double min_gap = std::numeric_limits<double>::infinity();
    if (jcycle) {
        sc.schedule_is_cycle = true;
        if (!jcycle->is_array() || jcycle->empty())
            cfg_fail("schedule.cycle", "expected a non-empty array of [graph, duration] pairs");
        double t = 0.0;
        for (std::size_t k = 0; k < jcycle->size(); ++k) {
            const std::string ctx = "schedule.cycle[" + std::to_string(k) + "]";
            const json& pair = (*jcycle)[k];
            if (!pair.is_array() || pair.size() != 2)
                cfg_fail(ctx, "expected a [graph, duration] pair");
            const int gi = lookup_graph(as_string(pair[0], ctx), ctx);
            const double dur = as_number(pair[1], ctx + ".duration");
            if (!(dur > 0.0)) cfg_fail(ctx, "duration must be positive");
            entries.push_back({t, gi});
            t += dur;
            min_gap = std::min(min_gap, dur);
        }
        period = t;
    } else {
        if (!jintervals->is_array() || jintervals->empty())
            cfg_fail("schedule.intervals", "expected a non-empty array of [start, graph] pairs");
        for (std::size_t k = 0; k < jintervals->size(); ++k) {
            const std::string ctx = "schedule.intervals[" + std::to_string(k) + "]";
            const json& pair = (*jintervals)[k];
            if (!pair.is_array() || pair.size() != 2)
                cfg_fail(ctx, "expected a [start, graph] pair");
            const double start = as_number(pair[0], ctx + ".start");
            const int gi = lookup_graph(as_string(pair[1], ctx), ctx);
            entries.push_back({start, gi});
            if (k > 0) min_gap = std::min(min_gap, start - entries[k - 1].start);
        }
    }
    reject_unknown_keys(js, {"cycle", "intervals", "dwell"}, "schedule");
    double dwell = min_gap;
    if (find(js, "dwell")) {
        dwell = as_number(*find(js, "dwell"), "schedule.dwell");
    } else if (!std::isfinite(min_gap)) {
        dwell = 1.0;  // single-interval schedule: any positive dwell works
    }
    try {
        sc.system.schedule_store.emplace_back(std::move(graphs), std::move(entries), dwell,
                                              period);
    } catch (const ConfigError& e) {
        cfg_fail("schedule", e.what());
    }

    // Optional joint connectivity window.
    if (const json* jw = find(doc, "joint_window")) {
        require_object(*jw, "joint_window");
        reject_unknown_keys(*jw, {"nu", "instants"}, "joint_window");
        const double nu = as_number(require(*jw, "nu", "joint_window"), "joint_window.nu");
        const json& ji = require(*jw, "instants", "joint_window");
        if (!ji.is_array()) cfg_fail("joint_window.instants", "expected an array of indices");
        std::vector<std::size_t> instants;
        for (std::size_t k = 0; k < ji.size(); ++k) {
            const long v = as_integer(ji[k], "joint_window.instants[" + std::to_string(k) + "]");
            if (v < 0) cfg_fail("joint_window.instants", "indices must not be negative");
            instants.push_back(static_cast<std::size_t>(v));
        }
        try {
            sc.window = make_joint_window(sc.system.schedule(), nu, std::move(instants));
        } catch (const ConfigError& e) {
            cfg_fail("joint_window", e.what());
        }
        sc.window_user_supplied = true;
    } else {
        sc.window = default_joint_window(sc.system.schedule());
    }

    // Control block.
    const json& jc = require(doc, "control", "scenario");
    require_object(jc, "control");
    reject_unknown_keys(jc, {"mode", "epsilon", "theta_hat0", "D_hat0"}, "control");
    const std::string cmode = as_string(require(jc, "mode", "control"), "control.mode");
    if (cmode == "baseline") sc.system.control.mode = ControlConfig::Mode::baseline;
    else if (cmode == "disturbance_rejection")
        sc.system.control.mode = ControlConfig::Mode::disturbance_rejection;
    else cfg_fail("control.mode", "must be 'baseline' or 'disturbance_rejection'");
    if (find(jc, "epsilon")) {
        sc.system.control.epsilon = as_number(*find(jc, "epsilon"), "control.epsilon");
        if (sc.system.control.epsilon < 0.0) cfg_fail("control.epsilon", "must not be negative");
    }
    if (const json* jt = find(jc, "theta_hat0")) {
        if (!jt->is_array() || static_cast<int>(jt->size()) != N)
            cfg_fail("control.theta_hat0", "expected one array per follower");
        for (int i = 0; i < N; ++i)
            sc.system.theta_hat_init.push_back(as_vector(
                (*jt)[static_cast<std::size_t>(i)], "control.theta_hat0[" + std::to_string(i) + "]"));
    }
    if (const json* jd = find(jc, "D_hat0")) {
        const Eigen::VectorXd v = as_vector(*jd, "control.D_hat0");
        if (static_cast<int>(v.size()) != N)
            cfg_fail("control.D_hat0", "expected one value per follower");
        sc.system.D_hat_init.assign(v.data(), v.data() + v.size());
    }

    // Observer initial estimates.
    if (const json* ji = find(jo, "initial")) {
        require_object(*ji, "observer.initial");
        reject_unknown_keys(*ji, {"v", "S", "L"}, "observer.initial");
        const int n = sc.system.leader.n();
        if (const json* jv = find(*ji, "v")) {
            if (!jv->is_array() || static_cast<int>(jv->size()) != N)
                cfg_fail("observer.initial.v", "expected one array per follower");
            for (int i = 0; i < N; ++i) {
                Eigen::VectorXd v = as_vector((*jv)[static_cast<std::size_t>(i)],
                                              "observer.initial.v[" + std::to_string(i) + "]");
                if (v.size() != n) cfg_fail("observer.initial.v", "entries must have dimension " +
                                                                      std::to_string(n));
                sc.system.v_init.push_back(std::move(v));
            }
        }
        if (const json* jS = find(*ji, "S")) {
            if (!jS->is_array() || static_cast<int>(jS->size()) != N)
                cfg_fail("observer.initial.S", "expected one matrix per follower");
            for (int i = 0; i < N; ++i) {
                Eigen::MatrixXd M = as_matrix((*jS)[static_cast<std::size_t>(i)],
                                              "observer.initial.S[" + std::to_string(i) + "]");
                if (M.rows() != n || M.cols() != n)
                    cfg_fail("observer.initial.S", "entries must be " + std::to_string(n) + "x" +
                                                       std::to_string(n));
                sc.system.S_init.push_back(std::move(M));
            }
        }
        if (const json* jL = find(*ji, "L")) {
            if (!jL->is_array() || static_cast<int>(jL->size()) != N)
                cfg_fail("observer.initial.L", "expected one array per follower");
            for (int i = 0; i < N; ++i) {
                Eigen::VectorXd v = as_vector((*jL)[static_cast<std::size_t>(i)],
                                              "observer.initial.L[" + std::to_string(i) + "]");
                if (v.size() != n) cfg_fail("observer.initial.L", "entries must have dimension " +
                                                                      std::to_string(n));
                sc.system.L_init.push_back(std::move(v));
            }
        }
    }

    // Run block.
    const json& jr = require(doc, "run", "scenario");
    require_object(jr, "run");
    reject_unknown_keys(jr,
                        {"h", "duration", "integrator", "record_stride", "sync_threshold",
                         "residual_window", "band_fraction"},
                        "run");
    sc.run.h = as_number(require(jr, "h", "run"), "run.h");
    sc.run.duration = as_number(require(jr, "duration", "run"), "run.duration");
    if (find(jr, "integrator")) {
        const std::string integ = as_string(*find(jr, "integrator"), "run.integrator");
        if (integ == "rk4") sc.run.integrator = RunConfig::Integrator::rk4;
        else if (integ == "euler") sc.run.integrator = RunConfig::Integrator::euler;
        else cfg_fail("run.integrator", "must be 'rk4' or 'euler'");
    }
    if (find(jr, "record_stride"))
        sc.run.record_stride = as_integer(*find(jr, "record_stride"), "run.record_stride");
    if (find(jr, "sync_threshold"))
        sc.run.sync_threshold = as_number(*find(jr, "sync_threshold"), "run.sync_threshold");
    if (find(jr, "residual_window"))
        sc.run.residual_window = as_number(*find(jr, "residual_window"), "run.residual_window");
    if (find(jr, "band_fraction"))
        sc.run.band_window_fraction = as_number(*find(jr, "band_fraction"), "run.band_fraction");

    // Bound check sampling configuration.
    if (const json* jb = find(doc, "bound_check")) {
        require_object(*jb, "bound_check");
        reject_unknown_keys(
            *jb, {"box_half_width", "t_max", "x_samples", "t_samples", "seed", "tolerance"},
            "bound_check");
        auto& b = sc.bound_check;
        if (find(*jb, "box_half_width"))
            b.box_half_width = as_number(*find(*jb, "box_half_width"), "bound_check.box_half_width");
        if (find(*jb, "t_max")) b.t_max = as_number(*find(*jb, "t_max"), "bound_check.t_max");
        if (find(*jb, "x_samples"))
            b.x_samples = static_cast<int>(as_integer(*find(*jb, "x_samples"), "bound_check.x_samples"));
        if (find(*jb, "t_samples"))
            b.t_samples = static_cast<int>(as_integer(*find(*jb, "t_samples"), "bound_check.t_samples"));
        if (find(*jb, "seed"))
            b.seed = static_cast<std::uint64_t>(as_integer(*find(*jb, "seed"), "bound_check.seed"));
        if (find(*jb, "tolerance"))
            b.tolerance = as_number(*find(*jb, "tolerance"), "bound_check.tolerance");
    }

    if (find(doc, "allow_assumption_failures"))
        sc.allow_assumption_failures =
            as_bool(*find(doc, "allow_assumption_failures"), "allow_assumption_failures");

    try {
        sc.system.finalize();
        sc.run.validate(sc.system);
    } catch (const ConfigError& e) {
        cfg_fail("scenario", e.what());
    }
    return sc;
}

/// Loads a scenario file, mapping JSON syntax errors to line/column positions.
inline Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    json doc;
    try {
        doc = json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t b = 0; b + 1 < e.byte && b < text.size(); ++b) {
            if (text[b] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError(path.filename().string() + ":" + std::to_string(line) + ":" +
                          std::to_string(col) + ": " + e.what());
    }
    try {
        return scenario_from_json(doc, path.stem().string());
    } catch (const ConfigError& e) {
        throw ConfigError(path.filename().string() + ": " + e.what());
    }
}

/// Canonical JSON form of a scenario; load -> emit -> load is the identity.
inline json scenario_to_json(const Scenario& sc) {
    using namespace detail;
    json doc;
    doc["name"] = sc.name;

    json jl;
    jl["S"] = matrix_to_json(sc.system.leader.S);
    jl["F"] = vector_to_json(sc.system.leader.F.transpose());
    jl["v0"] = vector_to_json(sc.system.leader.v0_init);
    if (sc.gain_designed) jl["mu0"] = sc.mu0;
    else jl["L0"] = vector_to_json(sc.system.L0);
    doc["leader"] = jl;

    json jo;
    jo["mu1"] = sc.system.gains.mu1;
    jo["mu2"] = sc.system.gains.mu2;
    if (sc.system.gains.mode == ObserverGains::Mode::state_coupled) {
        jo["mode"] = "state_coupled";
        jo["mu_v"] = sc.system.gains.mu_v;
    } else {
        jo["mode"] = "output_coupled";
    }
    {
        json ji;
        json jv = json::array(), jS = json::array(), jL = json::array();
        bool any = false;
        for (std::size_t i = 0; i < sc.system.followers.size(); ++i) {
            jv.push_back(vector_to_json(sc.system.v_init[i]));
            jS.push_back(matrix_to_json(sc.system.S_init[i]));
            jL.push_back(vector_to_json(sc.system.L_init[i]));
            any = any || sc.system.v_init[i].norm() != 0.0 || sc.system.S_init[i].norm() != 0.0 ||
                  sc.system.L_init[i].norm() != 0.0;
        }
        if (any) {
            ji["v"] = jv;
            ji["S"] = jS;
            ji["L"] = jL;
            jo["initial"] = ji;
        }
    }
    doc["observer"] = jo;

    json jg;
    for (std::size_t g = 0; g < sc.graph_names.size(); ++g) {
        json edges = json::array();
        for (const auto& [from, to] : sc.system.schedule().graph(static_cast<int>(g) + 1).edges())
            edges.push_back(std::to_string(from) + " -> " + std::to_string(to));
        jg[sc.graph_names[g]] = edges;
    }
    doc["graphs"] = jg;

    json js;
    const auto& sched = sc.system.schedule();
    if (sc.schedule_is_cycle) {
        json cyc = json::array();
        for (std::size_t k = 0; k < sched.entries().size(); ++k) {
            const double end = k + 1 < sched.entries().size() ? sched.entries()[k + 1].start
                                                              : sched.period();
            cyc.push_back(json::array(
                {sc.graph_names[static_cast<std::size_t>(sched.entries()[k].graph_index) - 1],
                 end - sched.entries()[k].start}));
        }
        js["cycle"] = cyc;
    } else {
        json iv = json::array();
        for (const auto& e : sched.entries())
            iv.push_back(json::array(
                {e.start, sc.graph_names[static_cast<std::size_t>(e.graph_index) - 1]}));
        js["intervals"] = iv;
    }
    js["dwell"] = sched.dwell();
    doc["schedule"] = js;

    if (sc.window_user_supplied) {
        json jw;
        jw["nu"] = sc.window.nu;
        jw["instants"] = sc.window.instants;
        doc["joint_window"] = jw;
    }

    json jf = json::array();
    for (std::size_t i = 0; i < sc.system.followers.size(); ++i) {
        const auto& spec = sc.system.followers[i];
        json node;
        node["order"] = spec.order;
        json rows = json::array();
        for (const auto& row : spec.f_rows) rows.push_back(row.str());
        node["f"] = rows;
        node["theta"] = vector_to_json(spec.theta_true);
        node["beta"] = vector_to_json(spec.beta);
        node["k"] = spec.k_gain;
        node["Lambda"] = matrix_to_json(spec.Lambda);
        node["phi"] = spec.phi.str();
        node["x0"] = vector_to_json(spec.x_init);
        node["disturbance"] = disturbance_to_json(spec.disturbance);
        jf.push_back(node);
    }
    doc["followers"] = jf;

    json jc;
    jc["mode"] = sc.system.control.mode == ControlConfig::Mode::disturbance_rejection
                     ? "disturbance_rejection"
                     : "baseline";
    jc["epsilon"] = sc.system.control.epsilon;
    {
        json jt = json::array(), jd = json::array();
        bool any = false;
        for (std::size_t i = 0; i < sc.system.followers.size(); ++i) {
            jt.push_back(vector_to_json(sc.system.theta_hat_init[i]));
            jd.push_back(sc.system.D_hat_init[i]);
            any = any || sc.system.theta_hat_init[i].norm() != 0.0 ||
                  sc.system.D_hat_init[i] != 0.0;
        }
        if (any) {
            jc["theta_hat0"] = jt;
            jc["D_hat0"] = jd;
        }
    }
    doc["control"] = jc;

    json jr;
    jr["h"] = sc.run.h;
    jr["duration"] = sc.run.duration;
    jr["integrator"] = sc.run.integrator == RunConfig::Integrator::euler ? "euler" : "rk4";
    jr["record_stride"] = sc.run.record_stride;
    jr["sync_threshold"] = sc.run.sync_threshold;
    jr["residual_window"] = sc.run.residual_window;
    jr["band_fraction"] = sc.run.band_window_fraction;
    doc["run"] = jr;

    json jb;
    jb["box_half_width"] = sc.bound_check.box_half_width;
    jb["t_max"] = sc.bound_check.t_max;
    jb["x_samples"] = sc.bound_check.x_samples;
    jb["t_samples"] = sc.bound_check.t_samples;
    jb["seed"] = sc.bound_check.seed;
    jb["tolerance"] = sc.bound_check.tolerance;
    doc["bound_check"] = jb;

    doc["allow_assumption_failures"] = sc.allow_assumption_failures;
    return doc;
}

/// Results of the model-assumption audit for a scenario.
struct AssumptionResults {
    StabilityReport stability;  // leader spectrum and detectability
    ConnectivityReport connectivity;
    bool followers_undirected = false;
    std::vector<expr::BoundCheckReport> bounds;  // per agent
    bool schedule_static = false;
    bool gain_designed = false;
    std::vector<bool> gain_graph_stable;  // per graph, only for user-supplied gains
    std::string gain_note;

    /// Hard requirements for the scenario's observer mode; failures block a
    /// run unless overridden.
    std::vector<std::string> failures(const Scenario& sc) const {
        std::vector<std::string> out;
        const bool output_mode = sc.system.gains.mode == ObserverGains::Mode::output_coupled;
        if (!connectivity.satisfied)
            out.push_back("joint connectivity: " + connectivity.message);
        for (std::size_t i = 0; i < bounds.size(); ++i)
            if (!bounds[i].passed)
                out.push_back("agent " + std::to_string(i + 1) +
                              ": the regressor bound check failed (worst margin " +
                              std::to_string(bounds[i].worst_margin) + ")");
        if (output_mode) {
            if (!stability.detectable)
                out.push_back("the leader output pair is not detectable");
            if (!schedule_static) {
                if (!stability.marginally_stable)
                    out.push_back("the leader dynamics are not marginally stable");
                if (!followers_undirected)
                    out.push_back("a graph has directed follower edges under switching");
            }
        } else if (!schedule_static) {
            // State-coupled estimation only needs the spectrum off the open
            // right half plane; semi-simplicity is not required.
            const double tol = spectrum_tolerance(sc.system.leader.S);
            for (const auto& lam : stability.eigenvalues)
                if (lam.real() > tol) {
                    out.push_back("the leader dynamics have an eigenvalue with positive real part");
                    break;
                }
        }
        return out;
    }

    bool pass(const Scenario& sc) const { return failures(sc).empty(); }
};

/// Runs every model-assumption check for the scenario.
inline AssumptionResults check_scenario(const Scenario& sc) {
    AssumptionResults res;
    res.stability = analyze_leader(sc.system.leader);
    res.connectivity = check_joint_connectivity(sc.system.schedule(), sc.window);
    res.followers_undirected = check_followers_undirected(sc.system.schedule());
    res.gain_designed = sc.gain_designed;

    bool all_same = true;
    const auto& sched = sc.system.schedule();
    for (const auto& e : sched.entries())
        if (e.graph_index != sched.entries().front().graph_index) all_same = false;
    res.schedule_static = all_same && (!sched.periodic() || sched.graph_count() == 1);

    for (const auto& spec : sc.system.followers) {
        if (spec.m() == 0) {
            expr::BoundCheckReport rep;
            rep.passed = true;
            rep.note = "no regressor rows; nothing to bound";
            res.bounds.push_back(rep);
            continue;
        }
        res.bounds.push_back(expr::check_bound_condition(
            std::span<const expr::Expr>(spec.f_rows.data(), spec.f_rows.size()), spec.phi,
            spec.order, sc.bound_check));
    }

    if (!sc.gain_designed) {
        // Numerical stability probe of the frozen estimation error dynamics
        // per graph: eigenvalues of I (x) S - H (x) (L0 F). Conclusive for a
        // static graph only; under switching it is a diagnostic.
        const Eigen::MatrixXd L0F = sc.system.L0 * sc.system.leader.F;
        const int N = sc.system.agent_count();
        for (std::size_t g = 1; g <= sched.graph_count(); ++g) {
            const Eigen::MatrixXd H = sched.graph(static_cast<int>(g)).h_matrix();
            const Eigen::MatrixXd M =
                kron(Eigen::MatrixXd::Identity(N, N), sc.system.leader.S) - kron(H, L0F);
            Eigen::EigenSolver<Eigen::MatrixXd> es(M);
            bool stable = es.info() == Eigen::Success;
            if (stable)
                for (Eigen::Index q = 0; q < es.eigenvalues().size(); ++q)
                    if (es.eigenvalues()(q).real() >= -1e-12) stable = false;
            res.gain_graph_stable.push_back(stable);
        }
        res.gain_note = res.schedule_static
                            ? "user-supplied gain; per-graph stability probe is conclusive for "
                              "a static graph"
                            : "user-supplied gain; per-graph stability probes are not "
                              "conclusive under switching";
    } else {
        res.gain_note = "gain designed from the neutral Lyapunov solution";
    }
    return res;
}

}  // namespace agentsync
