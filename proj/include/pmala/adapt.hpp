#pragma once

#include "pmala/core.hpp"
#include "pmala/rng.hpp"
#include "pmala/strategies.hpp"

#include <cstdint>
#include <vector>

namespace pmala {

enum class AdaptMode { per_time_step, global };

struct AdaptationSettings {
  double target = 0.75;  // α*
  double sigma = 0.05;   // dead zone around α*
  int window = 100;      // W
  double rho = 0.5;
  double rho_min = 1e-3;
  double gamma = -0.5;
  double initial_delta = 1e-2;
  int iterations = 10000;

  void validate() const;
};

inline constexpr double kMinStepSize = 1e-12;

// Windowed acceptance tracker and additive step-size update. A_{w,t} stores 1 when x_t moved.
class AdaptationState {
 public:
  AdaptationState(const AdaptationSettings& settings, std::vector<double> delta, AdaptMode mode);

  // Records one iteration's accept flags and returns the updated δ_{1:T}.
  const std::vector<double>& update(const std::vector<bool>& accepted);

  const std::vector<double>& step_sizes() const { return delta_; }
  // α_t over the valid part of the window.
  std::vector<double> window_rates() const;
  long iteration() const { return k_; }
  int filled() const { return filled_; }

 private:
  AdaptationSettings s_;
  AdaptMode mode_;
  std::vector<double> delta_;
  std::vector<std::vector<std::uint8_t>> ring_;  // [slot][t]
  std::vector<int> counts_;                      // running Σ_w A_{w,t}
  int head_ = 0;
  int filled_ = 0;
  long k_ = 0;
};

struct ChainTrace {
  RowMatrix samples;                  // iteration x (T·D), row-major path per row; empty if not kept
  Vector energy;                      // log π_T per iteration
  std::vector<std::uint8_t> accepted;  // iteration-major, T flags per iteration
  Trajectory last;
  double seconds = 0.0;

  int iterations() const { return static_cast<int>(energy.size()); }
};

// `iters` kernel applications from x0 with frozen step sizes.
ChainTrace run_chain(MarkovKernel& kernel, const Trajectory& x0, int iters, Rng& rng, bool keep_samples = true);

struct Calibration {
  std::vector<std::vector<double>> delta_trace;  // [iteration][t], after each update
  std::vector<double> delta;                     // final δ_{1:T}
  std::vector<double> final_window_rates;
  Trajectory last;
};

// Runs `settings.iterations` adaptive sweeps (plain warm-up when the kernel needs no calibration)
// and leaves the kernel's step sizes at the calibrated values.
Calibration calibrate(MarkovKernel& kernel, const Trajectory& x0, const AdaptationSettings& settings, Rng& rng);

struct CalibratedChain {
  Calibration calibration;
  ChainTrace chain;
};

// Calibration from x0, then `iters` sweeps with δ frozen.
CalibratedChain run_calibrated_chain(MarkovKernel& kernel, const Trajectory& x0, const AdaptationSettings& settings,
                                     int iters, Rng& rng);

}  // namespace pmala
