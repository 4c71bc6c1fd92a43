#include "pmala/experiment.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace pmala;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"(
[model]
kind = stochvol
dim = 2
horizon = 4
tau = 0.5, 2

[sampler]
strategies = csmc, p-mala, tp-agrad
particles = 4

[adapt]
iterations = 60
window = 10

[run]
chains = 2
iterations = 40
burn_in = 5
seed = 3
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ess.csv without the timing column.
std::string ess_without_timing(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(Config, ParsesSectionsAndLists) {
  const ExperimentConfig c = config_from_values(parse_config_values(kSmall, {}));
  EXPECT_EQ(c.model.kind, ModelKind::stochvol);
  EXPECT_EQ(c.taus, (std::vector<double>{0.5, 2.0}));
  EXPECT_EQ(c.strategies, (std::vector<std::string>{"csmc", "p-mala", "tp-agrad"}));
  EXPECT_EQ(c.sweep.num_proposals, 3);
  EXPECT_EQ(c.adapt.window, 10);
  EXPECT_EQ(c.adapt.sigma, 0.05);
  EXPECT_EQ(c.burn_in, 5);
}

TEST(Config, EnvironmentOverridesConfigKeys) {
  const ExperimentConfig c = config_from_values(
      parse_config_values(kSmall, {{"PMALA_ADAPT_SIGMA", "0.1"}, {"PMALA_ADAPT_RHO_MIN", "0.01"},
                                   {"PMALA_SAMPLER_STRATEGIES", "p-rwm,p-amala+"}, {"PMALA_RUN_CHAINS", "3"}}));
  EXPECT_EQ(c.adapt.sigma, 0.1);
  EXPECT_EQ(c.adapt.rho_min, 0.01);
  EXPECT_EQ(c.strategies, (std::vector<std::string>{"p-rwm", "p-amala+"}));
  EXPECT_EQ(c.chains, 3);
}

TEST(Config, RejectsUnknownKeysAndValues) {
  EXPECT_THROW(parse_config_values("[model]\nsize = 3\n", {}), ConfigurationError);
  EXPECT_THROW(parse_config_values("[model]\ndim = 3\n", {{"PMALA_MODEL_SIZE", "1"}}), ConfigurationError);
  EXPECT_THROW(config_from_values(parse_config_values("[model]\ndim = three\n[sampler]\nstrategies=csmc\n", {})),
               ConfigurationError);
  EXPECT_THROW(config_from_values(parse_config_values("[sampler]\nstrategies = p-nope\n", {})), ConfigurationError);
  EXPECT_THROW(config_from_values(parse_config_values("[sampler]\nstrategies = csmc\nresampling = stratified\n", {})),
               ConfigurationError);
}

TEST(Config, FigureOneStepSizes) {
  EXPECT_NEAR(rule_step_sizes(StepRule::fig1, "rwm1", 10, 25, 0)[0], 1.0 / 250, 1e-15);
  EXPECT_NEAR(rule_step_sizes(StepRule::fig1, "p-rwm", 10, 25, 0)[0], 0.1, 1e-15);
  EXPECT_NEAR(rule_step_sizes(StepRule::fig1, "mala1", 10, 25, 0)[0], std::pow(250.0, -1.0 / 3), 1e-15);
  EXPECT_NEAR(rule_step_sizes(StepRule::fig1, "p-mgrad", 10, 25, 0)[4], std::pow(10.0, -1.0 / 3), 1e-15);
  EXPECT_EQ(rule_step_sizes(StepRule::fixed, "p-mgrad", 10, 3, 0.2), std::vector<double>(3, 0.2));
}

TEST(Experiment, WritesDocumentedOutputs) {
  const ExperimentConfig c = config_from_values(parse_config_values(kSmall, {}));
  const fs::path out = fresh_dir("pmala_exp_outputs");
  const ExperimentResult r = run_experiment(c, out.string());
  ASSERT_TRUE(r.ok);
  ASSERT_EQ(r.replicates.size(), 1u);
  ASSERT_EQ(r.replicates[0].size(), 6u);
  EXPECT_EQ(slurp(out / "ess.csv").substr(0, 33), "strategy,tau,stat,ess,ess_per_sec");
  EXPECT_EQ(slurp(out / "acceptance.csv").substr(0, 15), "strategy,t,rate");
  EXPECT_EQ(slurp(out / "p-mala_tau0.5" / "energy.csv").substr(0, 17), "chain,iter,energy");
  EXPECT_EQ(slurp(out / "p-mala_tau2" / "delta.csv").substr(0, 12), "iter,t,delta");
  EXPECT_TRUE(fs::exists(out / "summary.json"));
  // 2 chains × 40 kept iterations plus the header.
  std::istringstream energy(slurp(out / "csmc_tau2" / "energy.csv"));
  int lines = 0;
  for (std::string l; std::getline(energy, l);) ++lines;
  EXPECT_EQ(lines, 81);
  // Global step size for the twisted kernel.
  for (const auto& run : r.replicates[0])
    if (run.strategy == "tp-agrad")
      for (const auto& d : run.final_delta) EXPECT_EQ(d, std::vector<double>(4, d[0]));
  fs::remove_all(out);
}

TEST(Experiment, OutputsAreDeterministicAcrossRunsAndThreads) {
  ExperimentConfig c = config_from_values(parse_config_values(kSmall, {}));
  const fs::path a = fresh_dir("pmala_exp_det_a"), b = fresh_dir("pmala_exp_det_b");
  c.threads = 1;
  run_experiment(c, a.string());
  c.threads = 4;
  run_experiment(c, b.string());
  EXPECT_EQ(ess_without_timing(a / "ess.csv"), ess_without_timing(b / "ess.csv"));
  for (const char* f : {"acceptance.csv", "p-mala_tau2/energy.csv", "p-mala_tau2/delta.csv", "tp-agrad_tau0.5/energy.csv"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Experiment, ReplicatesGetTheirOwnDirectories) {
  ExperimentConfig c = config_from_values(parse_config_values(kSmall, {{"PMALA_MODEL_REPLICATES", "2"},
                                                                       {"PMALA_MODEL_TAU", "1"}}));
  const fs::path out = fresh_dir("pmala_exp_reps");
  run_experiment(c, out.string());
  EXPECT_TRUE(fs::exists(out / "replicate_0" / "ess.csv"));
  EXPECT_TRUE(fs::exists(out / "replicate_1" / "p-mala" / "energy.csv"));
  EXPECT_NE(slurp(out / "replicate_0" / "acceptance.csv"), slurp(out / "replicate_1" / "acceptance.csv"));
  fs::remove_all(out);
}
