#pragma once

#include "pmala/core.hpp"
#include "pmala/model.hpp"
#include "pmala/rng.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pmala {

enum class ResamplingScheme { multinomial, killing };
enum class BackwardScheme { backward_sampling, ancestor_tracing };

struct SweepConfig {
  int num_proposals = 1;           // N; the particle system holds N + 1 slots
  std::vector<double> step_sizes;  // δ_t, one per time step
  int kappa = 1;                   // 0 switches gradient drifts off
  ResamplingScheme resampling = ResamplingScheme::multinomial;
  BackwardScheme backward = BackwardScheme::backward_sampling;
  bool forced_move = true;
  std::uint64_t seed = 0;

  void validate(int horizon) const;
};

// The particles of one time step together with their lineages.
struct ParticleLayer {
  int t;
  const RowMatrix& x;       // row n: x_t^n
  const RowMatrix* prev;    // row n: x_{t-1}^{(n)}; null at t = 0
  const RowMatrix* prev2;   // row n: x_{t-2}^{(n)}; null when t < 2
};

struct GaussianLaw {
  Vector mean;
  Matrix cov;
};

// One named algorithm: auxiliary draw, mutation M'_t, log-weights and the backward factor Q'_t.
// A strategy is prepared once per sweep and is then read-only until the next prepare().
class KernelStrategy {
 public:
  virtual ~KernelStrategy() = default;

  virtual std::string name() const = 0;
  virtual const FeynmanKacModel& model() const = 0;
  virtual int markov_order() const { return 1; }

  // Caches everything that depends on δ_{1:T}, κ and N. Called first in every sweep.
  virtual void prepare(const Trajectory& ref, const SweepConfig& config) = 0;
  // u_{1:T} drawn around the reference path; empty when the strategy has no auxiliary variables.
  virtual RowMatrix sample_aux(const Trajectory& ref, Rng& rng) const;
  // Fixes u_{1:T} for the rest of the sweep (twisted strategies run their recursions here).
  virtual void set_aux(const RowMatrix& aux);

  // Draw x_t^n given its ancestor state (ignored at t = 0).
  virtual Vector propose(int t, const VecCRef& prev, Rng& rng) const = 0;
  // Unnormalized log w_t^n for every slot of the layer.
  virtual void log_weights(const ParticleLayer& layer, VecRef out) const = 0;
  // log Q'_t(x_{t-2:t}) as used by the backward pass. prev2 is read only by second-order strategies.
  virtual double log_transition(int t, const VecCRef& prev2, const VecCRef& prev, const VecCRef& x) const = 0;

  // Law of one non-reference particle once the auxiliary variable is integrated out, given the
  // reference states around t and the particle's ancestor. Only for Gaussian mutations.
  virtual std::optional<GaussianLaw> marginal_proposal(int t, const VecCRef& ref_prev, const VecCRef& ref_x,
                                                       const VecCRef& ref_next, const VecCRef& ancestor) const;
};

struct ParticleSweepState {
  std::vector<RowMatrix> particles;         // [t] is (N+1) x D
  std::vector<std::vector<int>> ancestors;  // [t][n] = a_{t-1}^n for t >= 1; [0] is empty
  std::vector<int> ref_slots;               // k_t
  std::vector<Vector> log_weights;          // [t][n], unnormalized
  RowMatrix aux;                            // u_t, empty without auxiliary variables

  int horizon() const { return static_cast<int>(particles.size()); }
  int size() const { return particles.empty() ? 0 : static_cast<int>(particles[0].rows()); }
};

struct SweepResult {
  Trajectory path;
  std::vector<bool> accepted;  // x_t changed
  double energy = 0.0;         // log π_T(path) up to a constant
};

// Softmax of log-weights.
Vector normalized_weights(const VecCRef& log_w);

// Ancestor indices for every slot at time t. `ref_parent` is k_{t-1}, `ref_slot` is k_t; the
// reference slot always receives ref_parent.
//
// Killing: a source slot m is drawn with P(m) ∝ r_m(j), the probability that unconditional
// killing gives slot m the ancestor j = ref_parent; the other source slots keep their own index
// with probability w/max w or redraw from the weights; the result is then cyclically shifted so
// that m lands on ref_slot. The shift makes every slot's marginal ancestor law equal to the
// weights, which is what conditional resampling with uniform k_t needs.
std::vector<int> conditional_resample(const VecCRef& weights, int ref_parent, int ref_slot, ResamplingScheme scheme,
                                      Rng& rng);

// Final index l_T. With forced_move the move away from k is proposed with probability
// W^i/(1−W^k) and accepted with probability 1 ∧ (1−W^k)/(1−W^i).
int forced_move_select(const VecCRef& weights, int ref_slot, bool forced_move, Rng& rng);

// Forward pass: reference embedding, resampling, mutation and weighting for t = 1..T.
ParticleSweepState run_forward(KernelStrategy& strategy, const SweepConfig& config, const Trajectory& ref, Rng& rng);

std::vector<int> backward_sample_first_order(const ParticleSweepState& state, const KernelStrategy& strategy,
                                             int last_index, Rng& rng);
std::vector<int> backward_sample_second_order(const ParticleSweepState& state, const KernelStrategy& strategy,
                                              int last_index, Rng& rng);
std::vector<int> ancestor_trace(const ParticleSweepState& state, int last_index);

Trajectory gather_path(const ParticleSweepState& state, const std::vector<int>& indices);

// One application of the CSMC kernel to `ref`.
SweepResult run_sweep(KernelStrategy& strategy, const SweepConfig& config, const Trajectory& ref, Rng& rng);

// Path drawn from an unconditional bootstrap particle filter (used for chain initialization).
Trajectory bootstrap_filter_path(const FeynmanKacModel& model, int num_particles, Rng& rng);

}  // namespace pmala
