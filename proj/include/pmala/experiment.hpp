#pragma once

#include "pmala/adapt.hpp"
#include "pmala/csmc.hpp"
#include "pmala/diag.hpp"
#include "pmala/model.hpp"
#include "pmala/strategies.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pmala {

// How δ is chosen for each strategy before the measured run.
enum class StepRule {
  adapt,  // calibrate with the windowed acceptance rule (skipped for csmc / imh1)
  fixed,  // sampler.step_size everywhere
  fig1,   // (TD)^-1 for rwm1, D^-1 for p-rwm, (TD)^-1/3 for mala1/amala1/agrad1, D^-1/3 otherwise
};

struct ExperimentConfig {
  ModelSpec model;
  std::vector<double> taus;   // stochvol τ values swept over; {model.tau} when not given
  std::string observations;   // CSV path; simulated from data_seed when empty
  std::uint64_t data_seed = 1;
  int replicates = 1;         // independent simulated datasets (data_seed, data_seed + 1, ...)

  std::vector<std::string> strategies;
  SweepConfig sweep;          // step_sizes unused here
  StrategyOptions options;
  StepRule step_rule = StepRule::adapt;
  double step_size = 1e-2;
  AdaptationSettings adapt;

  int chains = 4;
  int iterations = 1000;
  int burn_in = 0;
  std::uint64_t seed = 0;
  int threads = 1;
  bool write_energy = true;
  bool write_delta = true;

  void validate() const;
};

// Flat key → value view of an INI file, after environment overrides.
using ConfigValues = std::map<std::string, std::string>;

// Reads `section.key = value` pairs. `env` holds (name, value) pairs; names PMALA_<SECTION>_<KEY>
// override section.key (e.g. PMALA_ADAPT_RHO_MIN → adapt.rho_min).
ConfigValues read_config_values(const std::string& path, const std::vector<std::pair<std::string, std::string>>& env);
ConfigValues parse_config_values(const std::string& text,
                                 const std::vector<std::pair<std::string, std::string>>& env);
ExperimentConfig config_from_values(const ConfigValues& values);
// The process environment as (name, value) pairs, filtered to the PMALA_ prefix.
std::vector<std::pair<std::string, std::string>> pmala_environment();

// δ_{1:T} from a fixed rule (fig1 or fixed).
std::vector<double> rule_step_sizes(StepRule rule, const std::string& strategy, int dim, int horizon, double fixed);

struct StrategyRun {
  std::string strategy;
  double tau = 0.0;
  std::vector<double> acceptance;  // per t, pooled over chains
  Summary ess;                     // over all T·D coordinates
  double ess_energy = 0.0;
  double seconds = 0.0;            // measured sampling time, summed over chains
  std::vector<std::vector<double>> final_delta;  // [chain][t]
  std::string error;               // non-empty if any chain failed
};

struct ExperimentResult {
  std::vector<std::vector<StrategyRun>> replicates;  // [replicate][tau-major, then strategy]
  bool ok = true;
};

// Runs everything in `config` and writes ess.csv, acceptance.csv, summary.json and per-strategy
// energy.csv / delta.csv under `out_dir` (under out_dir/replicate_<r> when replicates > 1).
ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir);
// Same without touching the filesystem.
ExperimentResult run_experiment_in_memory(const ExperimentConfig& config);

}  // namespace pmala
