#pragma once

#include "pmala/core.hpp"
#include "pmala/model.hpp"

#include <cstdint>
#include <vector>

namespace pmala {

struct EssResult {
  double ess = 0.0;
  bool degenerate = false;  // every draw equal; ess is then J·K by convention
};

// Multi-chain ESS on split chains with Geyer's initial monotone sequence. chains[j] is one chain.
EssResult ess_multichain(const std::vector<std::vector<double>>& chains);
// Same after pooled rank normalization z = Φ⁻¹((r − 3/8)/(S + 1/4)).
EssResult ess_rank_normalized(const std::vector<std::vector<double>>& chains);

// ρ_0..ρ_max_lag of one series; a constant series gives ρ_0 = 1 and zeros elsewhere.
std::vector<double> autocorrelation(const std::vector<double>& series, int max_lag);

// log π_T of every row of `samples` (each row a flattened T x D path).
std::vector<double> energy_trace(const FeynmanKacModel& model, const RowMatrix& samples);

// Fraction of iterations in which x_t moved; flags are iteration-major with T per iteration.
std::vector<double> acceptance_by_time(const std::vector<std::uint8_t>& flags, int horizon);

struct Summary {
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
};
Summary summarize(std::vector<double> values);

}  // namespace pmala
