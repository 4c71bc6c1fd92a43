#include "pmala/adapt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace pmala {

void AdaptationSettings::validate() const {
  if (!(target > 0.0 && target < 1.0)) throw ConfigurationError("adapt.target must lie in (0, 1)");
  if (!(sigma >= 0.0)) throw ConfigurationError("adapt.sigma must be non-negative");
  if (window < 1) throw ConfigurationError("adapt.window must be at least 1");
  if (!(rho > 0.0) || !(rho_min >= 0.0)) throw ConfigurationError("adapt.rho must be positive, adapt.rho_min >= 0");
  if (!(initial_delta > 0.0)) throw ConfigurationError("adapt.initial_delta must be positive");
  if (iterations < 0) throw ConfigurationError("adapt.iterations must be non-negative");
}

AdaptationState::AdaptationState(const AdaptationSettings& settings, std::vector<double> delta, AdaptMode mode)
    : s_(settings), mode_(mode), delta_(std::move(delta)) {
  s_.validate();
  const std::size_t horizon = delta_.size();
  ring_.assign(s_.window, std::vector<std::uint8_t>(horizon, 0));
  counts_.assign(horizon, 0);
  if (mode_ == AdaptMode::global) std::fill(delta_.begin(), delta_.end(), delta_.at(0));
}

std::vector<double> AdaptationState::window_rates() const {
  std::vector<double> rates(counts_.size(), 0.0);
  if (filled_ == 0) return rates;
  for (std::size_t t = 0; t < counts_.size(); ++t) rates[t] = static_cast<double>(counts_[t]) / filled_;
  return rates;
}

const std::vector<double>& AdaptationState::update(const std::vector<bool>& accepted) {
  const std::size_t horizon = delta_.size();
  if (accepted.size() != horizon) throw ConfigurationError("accept flags must have one entry per time step");
  ++k_;
  // Overwrite the oldest row once the window is full.
  std::vector<std::uint8_t>& row = ring_[head_];
  for (std::size_t t = 0; t < horizon; ++t) {
    if (filled_ == s_.window) counts_[t] -= row[t];
    row[t] = accepted[t] ? 1 : 0;
    counts_[t] += row[t];
  }
  head_ = (head_ + 1) % s_.window;
  filled_ = std::min(filled_ + 1, s_.window);

  const double rate = std::max(std::pow(static_cast<double>(k_), s_.gamma) * s_.rho, s_.rho_min);
  const std::vector<double> alpha = window_rates();
  auto step = [&](double d, double a) {
    if (std::abs(a - s_.target) < s_.sigma) return d;
    return std::max(d + rate * (a - s_.target) / s_.target, kMinStepSize);
  };
  if (mode_ == AdaptMode::global) {
    const double a = std::accumulate(alpha.begin(), alpha.end(), 0.0) / static_cast<double>(horizon);
    const double d = step(delta_[0], a);
    std::fill(delta_.begin(), delta_.end(), d);
  } else {
    for (std::size_t t = 0; t < horizon; ++t) delta_[t] = step(delta_[t], alpha[t]);
  }
  return delta_;
}

ChainTrace run_chain(MarkovKernel& kernel, const Trajectory& x0, int iters, Rng& rng, bool keep_samples) {
  const int horizon = static_cast<int>(x0.rows());
  ChainTrace trace;
  if (keep_samples) trace.samples.resize(iters, x0.size());
  trace.energy.resize(iters);
  trace.accepted.resize(static_cast<std::size_t>(iters) * horizon);
  Trajectory x = x0;
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) {
    SweepResult r = kernel.step(x, rng);
    x = std::move(r.path);
    if (keep_samples) trace.samples.row(i) = Eigen::Map<const Eigen::RowVectorXd>(x.data(), x.size());
    trace.energy(i) = r.energy;
    for (int t = 0; t < horizon; ++t) trace.accepted[static_cast<std::size_t>(i) * horizon + t] = r.accepted[t];
  }
  trace.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  trace.last = std::move(x);
  return trace;
}

Calibration calibrate(MarkovKernel& kernel, const Trajectory& x0, const AdaptationSettings& settings, Rng& rng) {
  settings.validate();
  Calibration out;
  Trajectory x = x0;
  if (!kernel.needs_calibration()) {
    for (int i = 0; i < settings.iterations; ++i) x = kernel.step(x, rng).path;
    out.delta = kernel.step_sizes();
    out.last = std::move(x);
    return out;
  }
  const AdaptMode mode = kernel.global_step_size() ? AdaptMode::global : AdaptMode::per_time_step;
  AdaptationState state(settings, std::vector<double>(kernel.horizon(), settings.initial_delta), mode);
  kernel.set_step_sizes(state.step_sizes());
  out.delta_trace.reserve(settings.iterations);
  for (int i = 0; i < settings.iterations; ++i) {
    SweepResult r = kernel.step(x, rng);
    x = std::move(r.path);
    kernel.set_step_sizes(state.update(r.accepted));
    out.delta_trace.push_back(state.step_sizes());
  }
  out.delta = state.step_sizes();
  out.final_window_rates = state.window_rates();
  out.last = std::move(x);
  return out;
}

CalibratedChain run_calibrated_chain(MarkovKernel& kernel, const Trajectory& x0, const AdaptationSettings& settings,
                                     int iters, Rng& rng) {
  CalibratedChain out;
  out.calibration = calibrate(kernel, x0, settings, rng);
  out.chain = run_chain(kernel, out.calibration.last, iters, rng);
  return out;
}

}  // namespace pmala
