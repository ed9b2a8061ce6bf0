#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "agentsync/runner.hpp"

using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;
using Catch::Matchers::WithinAbs;
using agentsync::ConfigError;
using agentsync::Scenario;
using agentsync::json;
namespace fs = std::filesystem;

namespace {

fs::path scenario_dir() { return AGENTSYNC_SCENARIO_DIR; }

fs::path fresh_dir(const std::string& leaf) {
    const fs::path p = fs::temp_directory_path() / "agentsync_runner_tests" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

long line_count(const std::string& text) {
    long n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

}  // namespace

TEST_CASE("running the smoke scenario writes a complete artifact set") {
    const Scenario sc = agentsync::load_scenario(scenario_dir() / "smoke.json");
    const auto res = agentsync::run_scenario(sc);
    REQUIRE_FALSE(res.summary.divergence.has_value());
    CHECK(res.summary.steps == 2000);
    CHECK(res.summary.recorded_rows == 201);

    const fs::path root = fresh_dir("artifacts");
    const fs::path dir = agentsync::write_artifacts(sc, res, root);
    CHECK(dir == root / "smoke");

    const std::string csv = slurp(dir / "trace.csv");
    CHECK(csv.substr(0, csv.find('\n')) ==
          "t,y_a1,e0_a1,s_a1,verr_a1,Serr_a1,Lerr_a1,u_a1,d_a1,V,W,graph");
    CHECK(line_count(csv) == 202);  // header plus one line per recorded row

    const json sum = json::parse(slurp(dir / "summary.json"));
    CHECK(sum["scenario"] == "smoke");
    CHECK(sum["steps"] == 2000);
    CHECK(sum["integrator"] == "rk4");
    CHECK(sum["control_mode"] == "baseline");
    REQUIRE(sum["agents"].size() == 1);
    CHECK(sum["agents"][0]["index"] == 1);
    CHECK(sum["agents"][0]["reference_rate_check"]["samples"].get<long>() > 0);
    CHECK(sum["lyapunov"].contains("V0"));
    CHECK(sum.contains("timing"));
    CHECK_FALSE(sum.contains("divergence"));

    std::set<std::string> plots;
    for (const auto& e : fs::directory_iterator(dir / "plots"))
        plots.insert(e.path().filename().string());
    CHECK(plots.size() == 11);  // every trace column except time
    CHECK(plots.count("y_a1.tsv") == 1);
    CHECK(plots.count("V.tsv") == 1);
    CHECK(plots.count("graph.tsv") == 1);
    const std::string ytsv = slurp(dir / "plots" / "y_a1.tsv");
    CHECK(ytsv.substr(0, ytsv.find('\n')) == "0\t0.5");
    CHECK(line_count(ytsv) == 201);
}

TEST_CASE("artifacts are byte-identical across repeated runs") {
    const Scenario sc = agentsync::load_scenario(scenario_dir() / "smoke.json");
    const fs::path root = fresh_dir("determinism");
    const fs::path a = agentsync::write_artifacts(sc, agentsync::run_scenario(sc), root / "a");
    const fs::path b = agentsync::write_artifacts(sc, agentsync::run_scenario(sc), root / "b");

    CHECK(slurp(a / "trace.csv") == slurp(b / "trace.csv"));
    for (const auto& e : fs::directory_iterator(a / "plots")) {
        const auto name = e.path().filename();
        INFO(name);
        CHECK(slurp(e.path()) == slurp(b / "plots" / name));
    }
    json ja = json::parse(slurp(a / "summary.json"));
    json jb = json::parse(slurp(b / "summary.json"));
    ja.erase("timing");
    jb.erase("timing");
    CHECK(ja.dump() == jb.dump());
}

TEST_CASE("sweep axes parse names and values") {
    const auto axis = agentsync::parse_sweep_axis("epsilon=1e-2,1e-3");
    CHECK(axis.param == "epsilon");
    CHECK(axis.values == std::vector<double>({1e-2, 1e-3}));
    CHECK(agentsync::parse_sweep_axis("k=2").values == std::vector<double>({2.0}));

    CHECK_THROWS_MATCHES(agentsync::parse_sweep_axis("epsilon"), ConfigError,
                         MessageMatches(ContainsSubstring("must look like name=v1,v2,...")));
    CHECK_THROWS_MATCHES(agentsync::parse_sweep_axis("=1"), ConfigError,
                         MessageMatches(ContainsSubstring("must look like")));
    CHECK_THROWS_MATCHES(agentsync::parse_sweep_axis("epsilon="), ConfigError,
                         MessageMatches(ContainsSubstring("lists no values")));
    CHECK_THROWS_MATCHES(
        agentsync::parse_sweep_axis("epsilon=1,tok"), ConfigError,
        MessageMatches(ContainsSubstring("sweep value 'tok' in 'epsilon=1,tok' is not a number")));
    CHECK_THROWS_MATCHES(agentsync::parse_sweep_axis("epsilon=1,"), ConfigError,
                         MessageMatches(ContainsSubstring("sweep value ''")));
}

TEST_CASE("overrides adjust the scenario and revalidate it") {
    Scenario sc = agentsync::load_scenario(scenario_dir() / "smoke.json");
    agentsync::apply_override(sc, "epsilon", 0.5);
    CHECK(sc.system.control.epsilon == 0.5);
    agentsync::apply_override(sc, "h", 0.002);
    CHECK(sc.run.h == 0.002);
    agentsync::apply_override(sc, "duration", 4.0);
    CHECK(sc.run.duration == 4.0);
    agentsync::apply_override(sc, "k", 3.0);
    CHECK(sc.system.followers[0].k_gain == 3.0);
    agentsync::apply_override(sc, "mu0", 4.0);
    CHECK_THAT(sc.system.L0(0), WithinAbs(4.0, 1e-9));

    CHECK_THROWS_MATCHES(agentsync::apply_override(sc, "zeta", 1.0), ConfigError,
                         MessageMatches(ContainsSubstring("unknown sweep parameter 'zeta'")));
    CHECK_THROWS_MATCHES(agentsync::apply_override(sc, "epsilon", -1.0), ConfigError,
                         MessageMatches(ContainsSubstring("epsilon must not be negative")));

    Scenario noisy = agentsync::load_scenario(scenario_dir() / "noise_rejection.json");
    agentsync::apply_override(noisy, "seed", 100.0);
    CHECK(noisy.system.followers[0].disturbance.seed() == 100);
    CHECK(noisy.system.followers[1].disturbance.seed() == 101);
    // A step that no longer divides the noise hold time is rejected.
    CHECK_THROWS_MATCHES(agentsync::apply_override(noisy, "h", 0.004), ConfigError,
                         MessageMatches(ContainsSubstring("noise hold time")));
}

TEST_CASE("sweeps cover the grid in order and capture per-point failures") {
    Scenario base = agentsync::load_scenario(scenario_dir() / "smoke.json");
    agentsync::apply_override(base, "duration", 1.0);

    std::vector<agentsync::SweepAxis> axes = {{"epsilon", {1e-2, 1e-3}}, {"k", {1.0, -1.0}}};
    const auto sweep = agentsync::run_sweep(base, axes);
    REQUIRE(sweep.points.size() == 4);
    CHECK(sweep.points[0].params ==
          std::vector<std::pair<std::string, double>>({{"epsilon", 1e-2}, {"k", 1.0}}));
    CHECK(sweep.points[2].params ==
          std::vector<std::pair<std::string, double>>({{"epsilon", 1e-3}, {"k", 1.0}}));
    CHECK(sweep.points[0].summary.has_value());
    CHECK(sweep.points[0].error.empty());
    CHECK_FALSE(sweep.points[1].summary.has_value());
    CHECK_THAT(sweep.points[1].error, ContainsSubstring("k must be positive"));

    // Concurrency must not change the results or their order.
    const auto parallel = agentsync::run_sweep(base, axes, 2);
    REQUIRE(parallel.points.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(parallel.points[i].params == sweep.points[i].params);
        CHECK(parallel.points[i].summary.has_value() == sweep.points[i].summary.has_value());
        if (sweep.points[i].summary)
            CHECK(parallel.points[i].summary->V_T == sweep.points[i].summary->V_T);
    }

    const json doc = agentsync::sweep_json(base, sweep);
    CHECK(doc["scenario"] == "smoke");
    REQUIRE(doc["points"].size() == 4);
    CHECK(doc["points"][0].contains("terminal_error_max"));
    CHECK(doc["points"][1].contains("error"));
    CHECK(doc["points"][0]["params"]["epsilon"] == 1e-2);

    CHECK_THROWS_MATCHES(agentsync::run_sweep(base, {}), ConfigError,
                         MessageMatches(ContainsSubstring("at least one parameter axis")));
    std::vector<agentsync::SweepAxis> hollow = {{"epsilon", {}}};
    CHECK_THROWS_MATCHES(agentsync::run_sweep(base, hollow), ConfigError,
                         MessageMatches(ContainsSubstring("sweep axis 'epsilon' lists no values")));
}

TEST_CASE("assumption failures block a run unless the scenario opts out") {
    json doc = json::parse(slurp(scenario_dir() / "smoke.json"));
    doc["graphs"]["g"] = json::array();  // the follower is never reached
    const Scenario blocked = agentsync::scenario_from_json(doc, "blocked");
    REQUIRE_THROWS_MATCHES(agentsync::run_scenario(blocked), ConfigError,
                           MessageMatches(ContainsSubstring("fails required assumptions") &&
                                          ContainsSubstring("joint connectivity")));

    const std::string report =
        agentsync::format_check_report(blocked, agentsync::check_scenario(blocked));
    CHECK_THAT(report, ContainsSubstring("[FAIL] joint connectivity"));
    CHECK_THAT(report, ContainsSubstring("blocking failures:"));

    doc["allow_assumption_failures"] = true;
    const Scenario tolerated = agentsync::scenario_from_json(doc, "tolerated");
    const auto res = agentsync::run_scenario(tolerated);
    CHECK_FALSE(res.summary.divergence.has_value());
    CHECK(res.summary.steps == 2000);
}

TEST_CASE("the check report summarizes a passing audit") {
    const Scenario sc = agentsync::load_scenario(scenario_dir() / "smoke.json");
    const std::string report = agentsync::format_check_report(sc, agentsync::check_scenario(sc));
    CHECK_THAT(report, ContainsSubstring("scenario 'smoke'"));
    CHECK_THAT(report, ContainsSubstring("leader dimension 2, 1 follower(s), 1 graph(s)"));
    CHECK_THAT(report, ContainsSubstring("eigenvalues of the leader:"));
    CHECK_THAT(report, ContainsSubstring("[ok] marginal stability"));
    CHECK_THAT(report, ContainsSubstring("[ok] detectability"));
    CHECK_THAT(report, ContainsSubstring("[ok] joint connectivity"));
    CHECK_THAT(report, ContainsSubstring("agent 1 regressor bound"));
    CHECK_THAT(report, ContainsSubstring("gain designed from the neutral Lyapunov solution"));
    CHECK_THAT(report, ContainsSubstring("all assumptions required by the selected mode hold"));
}
