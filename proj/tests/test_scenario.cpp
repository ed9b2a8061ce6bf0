#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "agentsync/runner.hpp"
#include "agentsync/scenario.hpp"

using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;
using agentsync::ConfigError;
using agentsync::json;
using agentsync::Scenario;

namespace {

std::filesystem::path scenario_dir() { return AGENTSYNC_SCENARIO_DIR; }

json base_doc() {
    return json::parse(R"json({
      "leader": {"S": [[0.0, 1.0], [-1.0, 0.0]], "F": [1.0, 0.0], "v0": [1.0, 0.0], "mu0": 2.0},
      "observer": {"mu1": 1.0, "mu2": 1.0},
      "graphs": {"g": ["0 -> 1"]},
      "schedule": {"intervals": [[0.0, "g"]], "dwell": 1.0},
      "followers": [
        {"order": 1, "f": ["x1"], "theta": [0.5], "beta": [], "k": 1.0, "phi": "abs(x1)"}
      ],
      "control": {"mode": "baseline"},
      "run": {"h": 0.001, "duration": 1.0, "residual_window": 1.0}
    })json");
}

void expect_load_error(const json& doc, const std::string& fragment) {
    REQUIRE_THROWS_MATCHES(agentsync::scenario_from_json(doc, "t"), ConfigError,
                           MessageMatches(ContainsSubstring(fragment)));
}

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << text;
    return path;
}

}  // namespace

TEST_CASE("the demo scenario file loads with the designed observer gain") {
    const Scenario sc = agentsync::load_scenario(scenario_dir() / "switching_sync.json");
    CHECK(sc.name == "switching_sync");
    CHECK(sc.gain_designed);
    CHECK(sc.mu0 == 2.0);
    REQUIRE(sc.system.L0.size() == 2);
    CHECK_THAT(sc.system.L0(0), Catch::Matchers::WithinAbs(2.0, 1e-9));
    CHECK_THAT(sc.system.L0(1), Catch::Matchers::WithinAbs(0.0, 1e-9));

    REQUIRE(sc.system.followers.size() == 4);
    CHECK(sc.system.followers[0].order == 1);
    CHECK(sc.system.followers[1].order == 2);
    CHECK(sc.system.followers[2].order == 2);
    CHECK(sc.system.followers[3].order == 3);
    CHECK(sc.system.followers[3].m() == 2);

    const auto& sched = sc.system.schedule();
    CHECK(sc.schedule_is_cycle);
    CHECK(sched.periodic());
    CHECK(sched.period() == 4.0);
    CHECK(sched.dwell() == 1.0);
    CHECK(sched.graph_count() == 4);
    CHECK(sc.graph_names == std::vector<std::string>({"g1", "g2", "g3", "g4"}));

    // Default analysis window: one full cycle plus a dwell.
    CHECK_FALSE(sc.window_user_supplied);
    CHECK(sc.window.nu == 5.0);
    CHECK(sc.window.instants == std::vector<std::size_t>({0, 4}));

    CHECK(sc.run.h == 0.001);
    CHECK(sc.run.duration == 200.0);
    CHECK(sc.run.record_stride == 100);
    CHECK(sc.run.sync_threshold == 0.01);
}

TEST_CASE("every bundled scenario satisfies its mode's assumptions") {
    for (const char* name : {"switching_sync.json", "square_wave_rejection.json",
                             "static_tree.json", "smoke.json", "noise_rejection.json"}) {
        INFO(name);
        const Scenario sc = agentsync::load_scenario(scenario_dir() / name);
        const auto res = agentsync::check_scenario(sc);
        CHECK(res.failures(sc).empty());
        CHECK(res.pass(sc));
        CHECK(res.stability.detectable);
        CHECK(res.connectivity.satisfied);
        for (const auto& b : res.bounds) CHECK(b.passed);
    }
}

TEST_CASE("assumption audit classifies the demo scenario") {
    const Scenario sc = agentsync::load_scenario(scenario_dir() / "switching_sync.json");
    const auto res = agentsync::check_scenario(sc);
    CHECK(res.stability.marginally_stable);
    CHECK(res.stability.neutrally_stable);
    CHECK(res.followers_undirected);
    CHECK_FALSE(res.schedule_static);
    CHECK(res.gain_designed);
    CHECK(res.gain_graph_stable.empty());
    CHECK_THAT(res.gain_note, ContainsSubstring("designed"));
    REQUIRE(res.bounds.size() == 4);

    const Scenario st = agentsync::load_scenario(scenario_dir() / "static_tree.json");
    CHECK(agentsync::check_scenario(st).schedule_static);
}

TEST_CASE("leader block validation") {
    SECTION("mu0 and L0 are mutually exclusive") {
        json doc = base_doc();
        doc["leader"]["L0"] = {2.0, 0.0};
        expect_load_error(doc, "leader: exactly one of 'mu0' and 'L0' must be given");
        doc["leader"].erase("mu0");
        doc["leader"].erase("L0");
        expect_load_error(doc, "exactly one of 'mu0' and 'L0'");
    }
    SECTION("mu0 must be positive") {
        json doc = base_doc();
        doc["leader"]["mu0"] = 0.0;
        expect_load_error(doc, "leader.mu0: must be positive");
    }
    SECTION("gain design needs a neutrally stable leader") {
        json doc = base_doc();
        doc["leader"]["S"] = {{1.0, 0.0}, {0.0, 1.0}};
        expect_load_error(doc, "cannot design the observer gain from mu0");
        expect_load_error(doc, "supply an explicit L0 instead");
    }
    SECTION("an explicit gain must match the leader dimension") {
        json doc = base_doc();
        doc["leader"].erase("mu0");
        doc["leader"]["L0"] = {1.0};
        expect_load_error(doc, "leader.L0: must have the leader dimension");
    }
    SECTION("missing keys are reported with their context") {
        json doc = base_doc();
        doc["leader"].erase("S");
        expect_load_error(doc, "leader: missing required key 'S'");
    }
}

TEST_CASE("unknown keys are rejected at every level") {
    json doc = base_doc();
    doc["extra"] = 1;
    expect_load_error(doc, "scenario: unknown key 'extra'");

    doc = base_doc();
    doc["leader"]["Q"] = 1;
    expect_load_error(doc, "leader: unknown key 'Q'");

    doc = base_doc();
    doc["run"]["dt"] = 0.1;
    expect_load_error(doc, "run: unknown key 'dt'");

    doc = base_doc();
    doc["followers"][0]["gamma"] = 1;
    expect_load_error(doc, "followers[0]: unknown key 'gamma'");

    doc = base_doc();
    doc["followers"][0]["disturbance"] = {{"kind", "zero"}, {"level", 1}};
    expect_load_error(doc, "unknown key 'level'");
}

TEST_CASE("graph and schedule validation") {
    SECTION("edges must be plain node pairs") {
        json doc = base_doc();
        doc["graphs"]["g"] = {"0 -2-> 1"};
        expect_load_error(doc, "must name plain node numbers; weights or labels are not supported");
        doc["graphs"]["g"] = {"0 1"};
        expect_load_error(doc, "edge '0 1' must look like 'j -> i'");
        doc["graphs"]["g"] = {"0 -> 5"};
        expect_load_error(doc, "references a node outside 0..1");
        doc["graphs"]["g"] = {"1 -> 1"};
        expect_load_error(doc, "self-loop on node 1 is not allowed");
    }
    SECTION("at least one graph") {
        json doc = base_doc();
        doc["graphs"] = json::object();
        expect_load_error(doc, "graphs: at least one graph is required");
    }
    SECTION("schedule entries must name known graphs") {
        json doc = base_doc();
        doc["schedule"] = json::object();
        doc["schedule"]["cycle"] = json::array({json::array({"h", 1.0})});
        expect_load_error(doc, "schedule.cycle[0]: unknown graph 'h'");
    }
    SECTION("cycle and intervals are mutually exclusive") {
        json doc = base_doc();
        doc["schedule"]["cycle"] = {{"g", 1.0}};
        expect_load_error(doc, "schedule: exactly one of 'cycle' and 'intervals' must be given");
    }
    SECTION("window configuration is validated") {
        json doc = base_doc();
        doc["joint_window"] = {{"nu", -1.0}, {"instants", {0, 1}}};
        expect_load_error(doc, "joint_window: window horizon nu must be positive");
        doc["joint_window"] = {{"nu", 1.5}, {"instants", {0, -1}}};
        expect_load_error(doc, "joint_window.instants: indices must not be negative");
    }
}

TEST_CASE("follower block validation names the agent") {
    SECTION("non-Hurwitz beta") {
        json doc = base_doc();
        doc["followers"].push_back(json::parse(
            R"json({"order": 2, "f": ["x1"], "theta": [0.5], "beta": [-2.0], "k": 1.0, "phi": "abs(x1)"})json"));
        doc["graphs"]["g"] = {"0 -> 1", "0 -> 2"};
        REQUIRE_THROWS_MATCHES(
            agentsync::scenario_from_json(doc, "t"), ConfigError,
            MessageMatches(ContainsSubstring("followers[1]: agent 2:") &&
                           ContainsSubstring("not Hurwitz")));
    }
    SECTION("k must be positive") {
        json doc = base_doc();
        doc["followers"][0]["k"] = 0.0;
        expect_load_error(doc, "followers[0].k: must be positive");
    }
    SECTION("regressor variables must fit the order") {
        json doc = base_doc();
        doc["followers"][0]["f"] = {"x3"};
        expect_load_error(doc, "references x3 but the state has 1 component");
    }
    SECTION("Lambda must be positive definite") {
        json doc = base_doc();
        doc["followers"][0]["Lambda"] = {{-1.0}};
        expect_load_error(doc, "Lambda must be positive definite");
    }
    SECTION("theta must match the regressor rows") {
        json doc = base_doc();
        doc["followers"][0]["theta"] = {1.0, 2.0};
        expect_load_error(doc, "theta has 2 entries but the regressor has 1 rows");
    }
    SECTION("expressions carry parse context") {
        json doc = base_doc();
        doc["followers"][0]["f"] = {"x1 +"};
        REQUIRE_THROWS_MATCHES(
            agentsync::scenario_from_json(doc, "t"), ConfigError,
            MessageMatches(ContainsSubstring("followers[0].f[0]: cannot parse 'x1 +'") &&
                           ContainsSubstring("unexpected end of input")));
    }
    SECTION("disturbance kinds and fields") {
        json doc = base_doc();
        doc["followers"][0]["disturbance"] = {{"kind", "ramp"}};
        expect_load_error(doc, "unknown disturbance kind 'ramp'");
        doc["followers"][0]["disturbance"] = {
            {"kind", "bounded_noise"}, {"amplitude", 1.0}, {"hold", 0.01}, {"seed", -4}};
        expect_load_error(doc, "seed must not be negative");
    }
}

TEST_CASE("control, observer, and run block validation") {
    json doc = base_doc();
    doc["control"]["epsilon"] = -0.5;
    expect_load_error(doc, "control.epsilon: must not be negative");

    doc = base_doc();
    doc["observer"]["mu1"] = 0.0;
    expect_load_error(doc, "observer: mu1 and mu2 must be positive");

    doc = base_doc();
    doc["observer"]["mode"] = "direct";
    expect_load_error(doc, "observer.mode: must be 'output_coupled' or 'state_coupled'");

    doc = base_doc();
    doc["observer"]["mode"] = "state_coupled";
    expect_load_error(doc, "observer: missing required key 'mu_v'");

    doc = base_doc();
    doc["run"]["record_stride"] = 7;
    expect_load_error(doc, "record stride must divide the step count 1000");

    doc = base_doc();
    doc["followers"][0]["disturbance"] = {
        {"kind", "square_wave"}, {"amplitude", 1.0}, {"period", 0.003}};
    expect_load_error(doc, "square wave half-period");

    doc = base_doc();
    doc["control"]["theta_hat0"] = {{0.1}, {0.2}};
    expect_load_error(doc, "control.theta_hat0: expected one array per follower");
}

TEST_CASE("defaults fill unspecified follower and run fields") {
    const Scenario sc = agentsync::scenario_from_json(base_doc(), "hint");
    CHECK(sc.name == "hint");
    CHECK(sc.system.followers[0].Lambda.isApprox(Eigen::MatrixXd::Identity(1, 1)));
    CHECK(sc.system.followers[0].x_init.norm() == 0.0);
    CHECK(sc.system.followers[0].disturbance.kind() == agentsync::DisturbanceProfile::Kind::zero);
    CHECK(sc.system.control.epsilon == 1e-3);
    CHECK(sc.run.integrator == agentsync::RunConfig::Integrator::rk4);
    CHECK(sc.run.record_stride == 1);
    CHECK(sc.run.band_window_fraction == 0.75);
    // Aperiodic single-interval schedule: window spans the interval plus a dwell.
    CHECK(sc.window.nu == 2.0);
}

TEST_CASE("file loading reports positions and falls back to the stem for names") {
    CHECK_THROWS_MATCHES(agentsync::load_scenario("/nonexistent/missing.json"), ConfigError,
                         MessageMatches(ContainsSubstring("cannot open scenario file")));

    const auto bad = write_temp("agentsync_bad.json", "{\n  \"name\": ,\n}");
    REQUIRE_THROWS_MATCHES(agentsync::load_scenario(bad), ConfigError,
                           MessageMatches(ContainsSubstring("agentsync_bad.json:2:")));

    json doc = base_doc();
    doc.erase("leader");
    const auto sem = write_temp("agentsync_sem.json", doc.dump(2));
    REQUIRE_THROWS_MATCHES(
        agentsync::load_scenario(sem), ConfigError,
        MessageMatches(ContainsSubstring("agentsync_sem.json: scenario: missing required key")));

    const auto hinted = write_temp("agentsync_hintcheck.json", base_doc().dump(2));
    CHECK(agentsync::load_scenario(hinted).name == "agentsync_hintcheck");
}

TEST_CASE("emitting and reloading a scenario is the identity") {
    SECTION("cycle schedule with a designed gain") {
        const Scenario sc = agentsync::load_scenario(scenario_dir() / "switching_sync.json");
        const json j1 = agentsync::scenario_to_json(sc);
        const Scenario sc2 = agentsync::scenario_from_json(j1, "other");
        CHECK(sc2.name == "switching_sync");
        const json j2 = agentsync::scenario_to_json(sc2);
        CHECK(j1.dump(2) == j2.dump(2));
    }
    SECTION("state-coupled observer with noise disturbances") {
        const Scenario sc = agentsync::load_scenario(scenario_dir() / "noise_rejection.json");
        const json j1 = agentsync::scenario_to_json(sc);
        const json j2 = agentsync::scenario_to_json(agentsync::scenario_from_json(j1, "x"));
        CHECK(j1.dump(2) == j2.dump(2));
    }
    SECTION("explicit gain, intervals, window, and warm starts") {
        json doc = base_doc();
        doc["name"] = "explicit";
        doc["leader"].erase("mu0");
        doc["leader"]["L0"] = {1.5, 0.0};
        doc["joint_window"] = {{"nu", 1.5}, {"instants", {0, 1}}};
        doc["observer"]["initial"] = {
            {"v", {{0.1, 0.0}}}, {"S", {{{0.0, 1.0}, {-1.0, 0.0}}}}, {"L", {{0.5, 0.0}}}};
        doc["control"]["theta_hat0"] = {{0.25}};
        doc["control"]["D_hat0"] = {0.5};
        const Scenario sc = agentsync::scenario_from_json(doc, "t");
        CHECK_FALSE(sc.gain_designed);
        CHECK(sc.window_user_supplied);
        CHECK(sc.system.v_init[0](0) == 0.1);
        CHECK(sc.system.theta_hat_init[0](0) == 0.25);
        CHECK(sc.system.D_hat_init[0] == 0.5);
        const json j1 = agentsync::scenario_to_json(sc);
        const json j2 = agentsync::scenario_to_json(agentsync::scenario_from_json(j1, "x"));
        CHECK(j1.dump(2) == j2.dump(2));
    }
}
