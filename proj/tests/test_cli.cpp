#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pathsamp/cli.hpp"

using namespace pathsamp;
using namespace pathsamp::cli;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pathsamp_test_cli_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int run_binary(const std::string& args) {
    const std::string cmd = std::string(PATHSAMP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(RunConfig, LayersScenarioFileAndOverrides) {
    RunConfig cfg;
    std::istringstream ini("# comment\n[run]\nscenario = brownian_bridge\nseed = 7\n[transport]\nhidden = 8, 4\n[obs]\nsigma = 0.2 # noise\n");
    cfg.load_ini(ini);
    EXPECT_EQ(cfg.str("prior.x0"), "-2");
    EXPECT_EQ(cfg.seed(), 7u);
    EXPECT_EQ(cfg.ints("transport.hidden"), (std::vector<int>{8, 4}));
    EXPECT_DOUBLE_EQ(cfg.num("obs.sigma"), 0.2);
    cfg.set("prior.x0", "1.5");
    EXPECT_DOUBLE_EQ(cfg.vec("prior.x0")(0), 1.5);
}

TEST(RunConfig, RejectsUnknownDuplicateAndMalformed) {
    RunConfig cfg;
    std::istringstream unknown("[prior]\nnope = 1\n");
    EXPECT_THROW(cfg.load_ini(unknown), ConfigError);
    std::istringstream dup("[run]\nseed = 1\nseed = 2\n");
    EXPECT_THROW(cfg.load_ini(dup), ConfigError);
    std::istringstream nosection("seed = 1\n");
    EXPECT_THROW(cfg.load_ini(nosection), ConfigError);
    EXPECT_THROW(cfg.set("grid.nope", "1"), ConfigError);
    EXPECT_THROW(cfg.apply_scenario("nope"), ConfigError);
    cfg.set("grid.dt", "abc");
    EXPECT_THROW(cfg.num("grid.dt"), ConfigError);
    cfg.set("run.seed", "1.5");
    EXPECT_THROW(cfg.seed(), ConfigError);
    cfg.set("jko.terminal_term", "maybe");
    EXPECT_THROW(cfg.flag("jko.terminal_term"), ConfigError);
}

TEST(RunConfig, ParsesObservationList) {
    RunConfig cfg;
    cfg.set("prior.x0", "0,0");
    cfg.set("obs.points", " 0.5 : 1,-1 ; 1:2,3:0.05 ");
    const auto in = cfg.observation_inputs();
    ASSERT_EQ(in.size(), 2u);
    EXPECT_DOUBLE_EQ(in[0].time, 0.5);
    EXPECT_DOUBLE_EQ(in[0].value(1), -1.0);
    EXPECT_EQ(in[0].sigma, 0.0);
    EXPECT_DOUBLE_EQ(in[1].sigma, 0.05);
    const auto obs = cfg.observations(TimeGrid(1.0, 0.1));
    EXPECT_EQ(obs.entries()[1].node, 10u);
    cfg.set("obs.points", "0.5:1");
    EXPECT_THROW(cfg.observations(TimeGrid(1.0, 0.1)), ConfigError);
    cfg.set("obs.points", "0.5");
    EXPECT_THROW(cfg.observation_inputs(), ConfigError);
}

TEST(RunConfig, EveryScenarioResolves) {
    for (const auto& name : scenario_names()) {
        RunConfig cfg;
        cfg.apply_scenario(name);
        EXPECT_NO_THROW(cfg.observations(cfg.grid())) << name;
        EXPECT_NO_THROW(make_drift(cfg)) << name;
    }
}

TEST(Commands, SimulateIsDeterministicAndMatchesPriorOracle) {
    RunConfig cfg;
    cfg.apply_scenario("brownian_bridge");
    cfg.set("simulate.n_paths", "2000");
    const fs::path a = scratch("sim_a"), b = scratch("sim_b");
    const auto m = run_command("simulate", cfg, a);
    run_command("simulate", cfg, b);
    EXPECT_EQ(slurp(a / "samples.csv"), slurp(b / "samples.csv"));
    EXPECT_LT(m["prior_oracle"]["max_abs_mean_delta"].get<double>(), 0.15);
    const auto meta = nlohmann::json::parse(slurp(a / "metadata.json"));
    EXPECT_EQ(meta["config"]["prior"]["x0"], "-2");
    EXPECT_EQ(meta["command"], "simulate");
    EXPECT_NE(meta["version"].get<std::string>().find("pathsamp"), std::string::npos);
}

TEST(Commands, OracleNeedsLinearGaussianPrior) {
    RunConfig cfg;
    cfg.apply_scenario("doublewell_tps");
    EXPECT_THROW(run_command("oracle", cfg, scratch("bad_oracle")), ConfigError);
    EXPECT_THROW(run_command("nope", cfg, scratch("bad_cmd")), ConfigError);
}

TEST(Commands, EulerianRefusesNonBrownianPrior) {
    RunConfig cfg;
    cfg.apply_scenario("ou_posterior");
    EXPECT_THROW(run_command("eulerian", cfg, scratch("eu_bad")), ConfigError);
}

TEST(Compare, RunAgainstItselfIsZero) {
    RunConfig cfg;
    cfg.apply_scenario("brownian_bridge");
    cfg.set("simulate.n_paths", "50");
    const fs::path a = scratch("self");
    run_command("simulate", cfg, a);
    const auto m = compare_dirs(a, a, 20, 1);
    EXPECT_EQ(m["max_abs_mean_delta"].get<double>(), 0.0);
    EXPECT_EQ(m["max_abs_var_delta"].get<double>(), 0.0);
    for (const auto& e : m["energy"]) EXPECT_NEAR(e["energy_distance"].get<double>(), 0.0, 1e-12);
}

TEST(Compare, ShiftedEnsembleHasUnitMeanDelta) {
    RunConfig cfg;
    cfg.apply_scenario("brownian_bridge");
    cfg.set("simulate.n_paths", "50");
    const fs::path a = scratch("shift_a"), b = scratch("shift_b");
    run_command("simulate", cfg, a);
    Track t = read_samples(a / "samples.csv");
    for (auto& X : t.clouds) X.array() += 1.0;
    fs::create_directories(b);
    write_samples(b / "samples.csv", t);
    const auto [M, V] = track_moments(t);
    write_moments(b / "moments.csv", t.times, M, V);
    const auto m = compare_dirs(b, a, 0, 1);
    for (const auto& n : m["nodes"]) EXPECT_NEAR(n["mean_delta"].get<double>(), 1.0, 1e-12);
    EXPECT_NEAR(m["max_abs_var_delta"].get<double>(), 0.0, 1e-12);
}

TEST(Compare, PriorEnsemblePassesPermutationTestAgainstOracle) {
    RunConfig cfg;
    cfg.apply_scenario("brownian_bridge");
    cfg.set("simulate.n_paths", "300");
    cfg.set("oracle.target", "prior");
    cfg.set("oracle.samples", "300");
    const fs::path run = scratch("perm_run"), orc = scratch("perm_oracle");
    run_command("simulate", cfg, run);
    run_command("oracle", cfg, orc);
    const auto m = compare_dirs(run, orc, 100, 3);
    // Ten nodes at level 0.01 each: a false alarm anywhere has probability about 0.1.
    for (const auto& e : m["energy"]) EXPECT_GT(e["p_value"].get<double>(), 0.01) << e.dump();
    // A shifted ensemble is detected.
    Track t = read_samples(run / "samples.csv");
    for (auto& X : t.clouds) X.array() += 0.5;
    const fs::path shifted = scratch("perm_shifted");
    fs::create_directories(shifted);
    write_samples(shifted / "samples.csv", t);
    const auto [M, V] = track_moments(t);
    write_moments(shifted / "moments.csv", t.times, M, V);
    const auto s = compare_dirs(shifted, orc, 100, 3);
    EXPECT_LT(s["energy"].back()["p_value"].get<double>(), 0.02);
}

TEST(Compare, GridMismatchIsAConfigError) {
    RunConfig cfg;
    cfg.apply_scenario("brownian_bridge");
    cfg.set("simulate.n_paths", "10");
    const fs::path a = scratch("grid_a"), b = scratch("grid_b");
    run_command("simulate", cfg, a);
    cfg.set("grid.dt", "0.02");
    run_command("simulate", cfg, b);
    EXPECT_THROW(compare_dirs(a, b, 0, 1), ConfigError);
}

TEST(Moments, WeightedMomentsReduceToUnbiasedForEqualWeights) {
    Track t;
    t.times = {0.0};
    t.clouds = {(Mat(1, 4) << 1.0, 2.0, 4.0, 7.0).finished()};
    auto [M, V] = track_moments(t);
    EXPECT_DOUBLE_EQ(M(0, 0), 3.5);
    EXPECT_NEAR(V(0, 0), 7.0, 1e-12);
    t.weights = Vec::Constant(4, 3.0);
    std::tie(M, V) = track_moments(t);
    EXPECT_NEAR(V(0, 0), 7.0, 1e-12);
    t.weights << 1.0, 0.0, 0.0, 0.0;
    std::tie(M, V) = track_moments(t);
    EXPECT_DOUBLE_EQ(M(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(effective_sample_size(t.weights), 1.0);
}

TEST(Binary, ExitCodes) {
    EXPECT_EQ(run_binary("--version"), 0);
    EXPECT_EQ(run_binary("simulate --set bogus.key=1 --out " + scratch("bin_a").string()), 2);
    EXPECT_EQ(run_binary("frobnicate"), 2);
    EXPECT_EQ(run_binary("simulate --scenario nope --out " + scratch("bin_b").string()), 2);
    // The entropic scheme's default step diverges for eps/sigma² = 100.
    EXPECT_EQ(run_binary("eot --set prior.init_std=1 --set obs.points=1:1 --set eot.n=30 --out " + scratch("bin_c").string()), 3);
    const fs::path ok = scratch("bin_ok");
    EXPECT_EQ(run_binary("simulate --scenario ou_posterior --seed 4 --set simulate.n_paths=5 --out " + ok.string()), 0);
    EXPECT_TRUE(fs::exists(ok / "metrics.json"));
    EXPECT_EQ(nlohmann::json::parse(slurp(ok / "metadata.json"))["config"]["run"]["seed"], "4");
}
