#include "pmala/experiment.hpp"

#include "pmala/diag.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

extern char** environ;

namespace pmala {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "model.kind",        "model.dim",          "model.horizon",      "model.lambda",       "model.phi",
      "model.rho",         "model.tau",          "model.observations", "model.data_seed",    "model.replicates",
      "sampler.strategies", "sampler.particles", "sampler.kappa",      "sampler.resampling", "sampler.backward",
      "sampler.forced_move", "sampler.step_rule", "sampler.step_size", "sampler.preconditioner",
      "sampler.truncation", "sampler.twist",     "adapt.target",       "adapt.sigma",        "adapt.window",
      "adapt.rho",         "adapt.rho_min",      "adapt.gamma",        "adapt.initial_delta", "adapt.iterations",
      "run.chains",        "run.iterations",     "run.burn_in",        "run.seed",           "run.threads",
      "run.write_energy",  "run.write_delta"};
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigurationError(key + ": expected a number, got '" + v + "'");
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigurationError(key + ": expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string l = lower(v);
  if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
  if (l == "false" || l == "0" || l == "no" || l == "off") return false;
  throw ConfigurationError(key + ": expected true or false, got '" + v + "'");
}

void apply_env(ConfigValues& values, const std::vector<std::pair<std::string, std::string>>& env) {
  static const std::string prefix = "PMALA_";
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    const std::string rest = lower(name.substr(prefix.size()));
    const auto cut = rest.find('_');
    if (cut == std::string::npos) throw ConfigurationError("environment override " + name + " names no section");
    const std::string key = rest.substr(0, cut) + "." + rest.substr(cut + 1);
    if (!known_keys().count(key)) throw ConfigurationError("environment override " + name + ": unknown key " + key);
    values[key] = trim(value);
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ConfigValues parse_config_values(const std::string& text,
                                 const std::vector<std::pair<std::string, std::string>>& env) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigurationError(std::string("config: ") + e.what());
  }
  ConfigValues values;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigurationError("config: key '" + section + "' is outside any section");
    for (const auto& [key, leaf] : body) {
      const std::string full = lower(section) + "." + lower(key);
      if (!known_keys().count(full)) throw ConfigurationError("config: unknown key " + full);
      values[full] = trim(leaf.get_value<std::string>());
    }
  }
  apply_env(values, env);
  return values;
}

ConfigValues read_config_values(const std::string& path,
                                const std::vector<std::pair<std::string, std::string>>& env) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_values(ss.str(), env);
}

std::vector<std::pair<std::string, std::string>> pmala_environment() {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    if (entry.rfind("PMALA_", 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    out.emplace_back(entry.substr(0, eq), entry.substr(eq + 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

ExperimentConfig config_from_values(const ConfigValues& v) {
  ExperimentConfig c;
  auto get = [&](const std::string& key) -> const std::string* {
    const auto it = v.find(key);
    return it == v.end() ? nullptr : &it->second;
  };
  auto set_double = [&](const std::string& key, double& out) {
    if (const auto* s = get(key)) out = to_double(key, *s);
  };
  auto set_int = [&](const std::string& key, int& out) {
    if (const auto* s = get(key)) out = to_int<int>(key, *s);
  };
  auto set_u64 = [&](const std::string& key, std::uint64_t& out) {
    if (const auto* s = get(key)) out = to_int<std::uint64_t>(key, *s);
  };
  auto set_bool = [&](const std::string& key, bool& out) {
    if (const auto* s = get(key)) out = to_bool(key, *s);
  };
  auto choice = [&](const std::string& key, const std::vector<std::string>& options) -> int {
    const auto* s = get(key);
    if (!s) return -1;
    const std::string l = lower(*s);
    for (std::size_t i = 0; i < options.size(); ++i)
      if (options[i] == l) return static_cast<int>(i);
    std::string all;
    for (const auto& o : options) all += (all.empty() ? "" : ", ") + o;
    throw ConfigurationError(key + ": expected one of " + all + ", got '" + *s + "'");
  };

  if (int k = choice("model.kind", {"lgssm", "stochvol"}); k >= 0) c.model.kind = static_cast<ModelKind>(k);
  set_int("model.dim", c.model.dim);
  set_int("model.horizon", c.model.horizon);
  set_double("model.lambda", c.model.lambda);
  set_double("model.phi", c.model.phi);
  set_double("model.rho", c.model.rho);
  if (const auto* s = get("model.tau"))
    for (const auto& item : split_list(*s)) c.taus.push_back(to_double("model.tau", item));
  if (c.taus.empty()) c.taus = {c.model.tau};
  c.model.tau = c.taus.front();
  if (const auto* s = get("model.observations")) c.observations = *s;
  set_u64("model.data_seed", c.data_seed);
  set_int("model.replicates", c.replicates);

  if (const auto* s = get("sampler.strategies")) c.strategies = split_list(*s);
  int particles = c.sweep.num_proposals + 1;
  set_int("sampler.particles", particles);
  c.sweep.num_proposals = particles - 1;
  set_int("sampler.kappa", c.sweep.kappa);
  if (int k = choice("sampler.resampling", {"multinomial", "killing"}); k >= 0)
    c.sweep.resampling = static_cast<ResamplingScheme>(k);
  if (int k = choice("sampler.backward", {"backward_sampling", "ancestor_tracing"}); k >= 0)
    c.sweep.backward = static_cast<BackwardScheme>(k);
  set_bool("sampler.forced_move", c.sweep.forced_move);
  if (int k = choice("sampler.step_rule", {"adapt", "fixed", "fig1"}); k >= 0) c.step_rule = static_cast<StepRule>(k);
  set_double("sampler.step_size", c.step_size);
  if (int k = choice("sampler.preconditioner", {"prior_cov", "truncated"}); k >= 0)
    c.options.preconditioner = static_cast<Preconditioner>(k);
  set_int("sampler.truncation", c.options.truncation);
  if (int k = choice("sampler.twist", {"general", "invertible"}); k >= 0)
    c.options.twist = static_cast<TwistAlgorithm>(k);

  set_double("adapt.target", c.adapt.target);
  set_double("adapt.sigma", c.adapt.sigma);
  set_int("adapt.window", c.adapt.window);
  set_double("adapt.rho", c.adapt.rho);
  set_double("adapt.rho_min", c.adapt.rho_min);
  set_double("adapt.gamma", c.adapt.gamma);
  set_double("adapt.initial_delta", c.adapt.initial_delta);
  set_int("adapt.iterations", c.adapt.iterations);

  set_int("run.chains", c.chains);
  set_int("run.iterations", c.iterations);
  set_int("run.burn_in", c.burn_in);
  set_u64("run.seed", c.seed);
  set_int("run.threads", c.threads);
  set_bool("run.write_energy", c.write_energy);
  set_bool("run.write_delta", c.write_delta);
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (model.dim < 1 || model.horizon < 1) throw ConfigurationError("model.dim and model.horizon must be positive");
  if (replicates < 1) throw ConfigurationError("model.replicates must be at least 1");
  if (strategies.empty()) throw ConfigurationError("sampler.strategies is empty");
  for (const auto& s : strategies) {
    const auto& p = particle_strategy_names();
    if (std::find(p.begin(), p.end(), s) == p.end() && !is_path_space_name(s))
      throw ConfigurationError("unknown strategy '" + s + "'");
  }
  if (sweep.num_proposals < 1) throw ConfigurationError("sampler.particles must be at least 2");
  if (sweep.kappa != 0 && sweep.kappa != 1) throw ConfigurationError("sampler.kappa must be 0 or 1");
  if (!(step_size > 0.0)) throw ConfigurationError("sampler.step_size must be positive");
  if (options.truncation < 0) throw ConfigurationError("sampler.truncation must be non-negative");
  adapt.validate();
  if (chains < 2) throw ConfigurationError("run.chains must be at least 2 (ESS is a multi-chain estimate)");
  if (chains >= 0xFFFF) throw ConfigurationError("run.chains must be below 65535");
  if (iterations < 8) throw ConfigurationError("run.iterations must be at least 8");
  if (burn_in < 0) throw ConfigurationError("run.burn_in must be non-negative");
  if (threads < 1) throw ConfigurationError("run.threads must be at least 1");
  if (!observations.empty() && (taus.size() > 1 || replicates > 1))
    throw ConfigurationError("a fixed observations file cannot be combined with several tau values or replicates");
}

std::vector<double> rule_step_sizes(StepRule rule, const std::string& strategy, int dim, int horizon, double fixed) {
  if (rule != StepRule::fig1) return std::vector<double>(horizon, fixed);
  const double d = dim, td = static_cast<double>(dim) * horizon;
  double delta;
  if (strategy == "rwm1") {
    delta = 1.0 / td;
  } else if (strategy == "p-rwm") {
    delta = 1.0 / d;
  } else if (strategy == "mala1" || strategy == "amala1" || strategy == "agrad1") {
    delta = std::pow(td, -1.0 / 3.0);
  } else {
    delta = std::pow(d, -1.0 / 3.0);
  }
  return std::vector<double>(horizon, delta);
}

namespace {

constexpr std::uint64_t kWarmupStream = 0xFFFF;

struct ChainJob {
  int rep = 0;
  int tau = 0;
  int strategy = 0;
  int chain = 0;
};

struct ChainOutcome {
  ChainTrace trace;
  std::vector<std::vector<double>> delta_trace;
  std::vector<double> delta;
  std::string error;
};

ModelBundle bundle_for(const ExperimentConfig& config, int rep, double tau) {
  ModelSpec spec = config.model;
  spec.tau = tau;
  const RowMatrix y = config.observations.empty() ? simulate_data(spec, config.data_seed + rep).observations
                                                  : read_observations_csv(config.observations);
  return make_model(spec, y);
}

// Start point and step sizes shared by the chains of one (strategy, τ) pair.
struct Warmup {
  Trajectory x;
  std::vector<double> delta;
  std::vector<std::vector<double>> delta_trace;
  std::string error;
};

Warmup warm_up(const ExperimentConfig& config, const ModelBundle& bundle, const std::string& name,
               std::uint64_t stream_id) {
  Warmup out;
  try {
    const int horizon = bundle.model->horizon(), dim = bundle.model->dim();
    Rng rng = Rng::stream(config.seed, stream_id);
    SweepConfig sweep = config.sweep;
    sweep.step_sizes = config.step_rule == StepRule::adapt
                           ? std::vector<double>(horizon, config.adapt.initial_delta)
                           : rule_step_sizes(config.step_rule, name, dim, horizon, config.step_size);
    auto kernel = make_kernel(name, bundle, sweep, config.options);
    out.x = bootstrap_filter_path(*bundle.model, config.sweep.num_proposals + 1, rng);
    if (config.step_rule == StepRule::adapt) {
      Calibration cal = calibrate(*kernel, out.x, config.adapt, rng);
      out.delta_trace = std::move(cal.delta_trace);
      out.x = std::move(cal.last);
    }
    out.delta = kernel->step_sizes();
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

ChainOutcome run_one(const ExperimentConfig& config, const ModelBundle& bundle, const std::string& name,
                     const Warmup& warm, std::uint64_t stream_id) {
  ChainOutcome out;
  if (!warm.error.empty()) {
    out.error = warm.error;
    return out;
  }
  try {
    Rng rng = Rng::stream(config.seed, stream_id);
    SweepConfig sweep = config.sweep;
    sweep.step_sizes = warm.delta;
    auto kernel = make_kernel(name, bundle, sweep, config.options);
    Trajectory x = warm.x;
    if (config.burn_in > 0) x = run_chain(*kernel, x, config.burn_in, rng, false).last;
    out.trace = run_chain(*kernel, x, config.iterations, rng);
    out.delta = kernel->step_sizes();
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

// Runs job(i) for i < count on `threads` threads.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& job) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) job(i);
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  std::vector<std::jthread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
}

StrategyRun summarize_strategy(const std::string& name, double tau, const std::vector<ChainOutcome>& chains,
                               int horizon) {
  StrategyRun run;
  run.strategy = name;
  run.tau = tau;
  for (const auto& c : chains)
    if (!c.error.empty()) {
      run.error = c.error;
      return run;
    }
  run.acceptance.assign(horizon, 0.0);
  for (const auto& c : chains) {
    const std::vector<double> a = acceptance_by_time(c.trace.accepted, horizon);
    for (int t = 0; t < horizon; ++t) run.acceptance[t] += a[t] / chains.size();
    run.seconds += c.trace.seconds;
    run.final_delta.push_back(c.delta);
  }
  const Eigen::Index coords = chains[0].trace.samples.cols();
  std::vector<double> ess(coords);
  std::vector<std::vector<double>> per_chain(chains.size());
  for (Eigen::Index j = 0; j < coords; ++j) {
    for (std::size_t c = 0; c < chains.size(); ++c) {
      const auto col = chains[c].trace.samples.col(j);
      per_chain[c].resize(col.size());
      for (Eigen::Index i = 0; i < col.size(); ++i) per_chain[c][i] = col(i);
    }
    ess[j] = ess_rank_normalized(per_chain).ess;
  }
  run.ess = summarize(ess);
  for (std::size_t c = 0; c < chains.size(); ++c)
    per_chain[c].assign(chains[c].trace.energy.data(), chains[c].trace.energy.data() + chains[c].trace.energy.size());
  run.ess_energy = ess_rank_normalized(per_chain).ess;
  return run;
}

std::string label_for(const ExperimentConfig& config, const std::string& strategy, double tau) {
  if (config.taus.size() <= 1) return strategy;
  return strategy + "_tau" + fmt(tau);
}

void write_outputs(const ExperimentConfig& config, const std::filesystem::path& dir,
                   const std::vector<StrategyRun>& runs,
                   const std::vector<std::vector<ChainOutcome>>& outcomes) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const bool has_tau = config.model.kind == ModelKind::stochvol;

  std::ofstream ess(dir / "ess.csv");
  ess << "strategy,tau,stat,ess,ess_per_sec\n";
  std::ofstream acc(dir / "acceptance.csv");
  acc << "strategy,t,rate\n";
  for (const auto& r : runs) {
    if (!r.error.empty()) continue;
    const std::string tau = has_tau ? fmt(r.tau) : "";
    const std::pair<const char*, double> rows[] = {
        {"min", r.ess.min}, {"med", r.ess.median}, {"max", r.ess.max}, {"energy", r.ess_energy}};
    for (const auto& [stat, value] : rows)
      ess << r.strategy << ',' << tau << ',' << stat << ',' << fmt(value) << ',' << fmt(value / r.seconds) << '\n';
    const std::string label = label_for(config, r.strategy, r.tau);
    for (std::size_t t = 0; t < r.acceptance.size(); ++t)
      acc << label << ',' << t + 1 << ',' << fmt(r.acceptance[t]) << '\n';
  }

  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    if (!r.error.empty()) continue;
    const fs::path sdir = dir / label_for(config, r.strategy, r.tau);
    fs::create_directories(sdir);
    if (config.write_energy) {
      std::ofstream en(sdir / "energy.csv");
      en << "chain,iter,energy\n";
      for (std::size_t c = 0; c < outcomes[i].size(); ++c) {
        const Vector& e = outcomes[i][c].trace.energy;
        for (Eigen::Index k = 0; k < e.size(); ++k) en << c << ',' << k + 1 << ',' << fmt(e(k)) << '\n';
      }
    }
    if (config.write_delta) {
      std::ofstream de(sdir / "delta.csv");
      de << "iter,t,delta\n";
      const auto& trace = outcomes[i][0].delta_trace;
      for (std::size_t k = 0; k < trace.size(); ++k)
        for (std::size_t t = 0; t < trace[k].size(); ++t) de << k + 1 << ',' << t + 1 << ',' << fmt(trace[k][t]) << '\n';
    }
  }

  nlohmann::json j;
  j["model"] = {{"kind", config.model.kind == ModelKind::lgssm ? "lgssm" : "stochvol"},
                {"dim", config.model.dim},
                {"horizon", config.model.horizon}};
  j["particles"] = config.sweep.num_proposals + 1;
  j["chains"] = config.chains;
  j["iterations"] = config.iterations;
  j["seed"] = config.seed;
  j["runs"] = nlohmann::json::array();
  bool ok = true;
  for (const auto& r : runs) {
    nlohmann::json e;
    e["strategy"] = r.strategy;
    if (has_tau) e["tau"] = r.tau;
    if (!r.error.empty()) {
      e["error"] = r.error;
      ok = false;
    } else {
      double mean_acc = 0.0;
      for (double a : r.acceptance) mean_acc += a / r.acceptance.size();
      e["acceptance_mean"] = mean_acc;
      e["ess"] = {{"min", r.ess.min}, {"med", r.ess.median}, {"max", r.ess.max}, {"energy", r.ess_energy}};
      e["seconds"] = r.seconds;
      e["seconds_per_iteration"] = r.seconds / (static_cast<double>(config.iterations) * config.chains);
      e["final_delta"] = r.final_delta;
    }
    j["runs"].push_back(std::move(e));
  }
  j["ok"] = ok;
  std::ofstream(dir / "summary.json") << j.dump(2) << '\n';
}

ExperimentResult run_impl(const ExperimentConfig& config, const std::string* out_dir) {
  config.validate();
  const int ntau = static_cast<int>(config.taus.size());
  const int nstrat = static_cast<int>(config.strategies.size());
  ExperimentResult result;

  for (int rep = 0; rep < config.replicates; ++rep) {
    std::vector<ModelBundle> bundles;
    for (int k = 0; k < ntau; ++k) bundles.push_back(bundle_for(config, rep, config.taus[k]));
    // Configuration problems (requirement mismatches, unknown names) surface here, before any chain runs.
    for (int k = 0; k < ntau; ++k)
      for (const auto& name : config.strategies) make_strategy(name, bundles[k], config.options);

    auto stream = [&](int k, int strat, std::uint64_t chain) {
      return (static_cast<std::uint64_t>(rep) << 48) | (static_cast<std::uint64_t>(k) << 32) |
             (static_cast<std::uint64_t>(strat) << 16) | chain;
    };
    // One calibration per (τ, strategy); its final state and δ seed every chain.
    std::vector<Warmup> warm(ntau * nstrat);
    parallel_for(warm.size(), config.threads, [&](std::size_t i) {
      const int k = static_cast<int>(i) / nstrat, strat = static_cast<int>(i) % nstrat;
      warm[i] = warm_up(config, bundles[k], config.strategies[strat], stream(k, strat, kWarmupStream));
    });

    std::vector<ChainJob> jobs;
    for (int k = 0; k < ntau; ++k)
      for (int s = 0; s < nstrat; ++s)
        for (int c = 0; c < config.chains; ++c) jobs.push_back({rep, k, s, c});
    std::vector<std::vector<ChainOutcome>> outcomes(ntau * nstrat, std::vector<ChainOutcome>(config.chains));
    parallel_for(jobs.size(), config.threads, [&](std::size_t i) {
      const ChainJob& job = jobs[i];
      const std::size_t slot = job.tau * nstrat + job.strategy;
      outcomes[slot][job.chain] = run_one(config, bundles[job.tau], config.strategies[job.strategy], warm[slot],
                                          stream(job.tau, job.strategy, job.chain));
    });
    for (std::size_t i = 0; i < warm.size(); ++i) outcomes[i][0].delta_trace = std::move(warm[i].delta_trace);

    std::vector<StrategyRun> runs;
    for (int k = 0; k < ntau; ++k)
      for (int s = 0; s < nstrat; ++s) {
        runs.push_back(summarize_strategy(config.strategies[s], config.taus[k], outcomes[k * nstrat + s],
                                          config.model.horizon));
        if (!runs.back().error.empty()) result.ok = false;
      }
    if (out_dir) {
      std::filesystem::path dir(*out_dir);
      if (config.replicates > 1) dir /= "replicate_" + std::to_string(rep);
      write_outputs(config, dir, runs, outcomes);
    }
    result.replicates.push_back(std::move(runs));
  }
  return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir) {
  return run_impl(config, &out_dir);
}

ExperimentResult run_experiment_in_memory(const ExperimentConfig& config) { return run_impl(config, nullptr); }

}  // namespace pmala
