#include "pmala/csmc.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace pmala {

void SweepConfig::validate(int horizon) const {
  if (num_proposals < 1) throw ConfigurationError("need at least one proposal (N >= 1)");
  if (static_cast<int>(step_sizes.size()) != horizon)
    throw ConfigurationError("need one step size per time step");
  for (double d : step_sizes)
    if (!(d > 0.0) || !std::isfinite(d)) throw ConfigurationError("step sizes must be positive and finite");
  if (kappa != 0 && kappa != 1) throw ConfigurationError("kappa must be 0 or 1");
}

RowMatrix KernelStrategy::sample_aux(const Trajectory&, Rng&) const { return {}; }

void KernelStrategy::set_aux(const RowMatrix&) {}

std::optional<GaussianLaw> KernelStrategy::marginal_proposal(int, const VecCRef&, const VecCRef&, const VecCRef&,
                                                             const VecCRef&) const {
  return std::nullopt;
}

Vector normalized_weights(const VecCRef& log_w) {
  const double top = log_w.maxCoeff();
  Vector w = (log_w.array() - top).exp().matrix();
  return w / w.sum();
}

namespace {

std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

double sum_except(const VecCRef& w, int skip) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (i != skip) s += w(i);
  return s;
}

}  // namespace

std::vector<int> conditional_resample(const VecCRef& weights, int ref_parent, int ref_slot, ResamplingScheme scheme,
                                      Rng& rng) {
  const int n1 = static_cast<int>(weights.size());
  const Vector w = weights;
  std::vector<int> anc(n1);
  if (scheme == ResamplingScheme::multinomial) {
    for (int n = 0; n < n1; ++n) anc[n] = n == ref_slot ? ref_parent : rng.categorical(as_span(w));
    return anc;
  }

  const double top = w.maxCoeff();
  const int j = ref_parent;
  Vector source(n1);
  for (int m = 0; m < n1; ++m) source(m) = (m == j ? w(j) / top : 0.0) + (1.0 - w(m) / top) * w(j);
  source /= source.sum();
  const int m_ref = rng.categorical(as_span(source));

  std::vector<int> pre(n1);
  for (int m = 0; m < n1; ++m) {
    if (m == m_ref) {
      pre[m] = j;
    } else {
      pre[m] = rng.uniform() < w(m) / top ? m : rng.categorical(as_span(w));
    }
  }
  const int shift = ((ref_slot - m_ref) % n1 + n1) % n1;
  for (int m = 0; m < n1; ++m) anc[(m + shift) % n1] = pre[m];
  return anc;
}

int forced_move_select(const VecCRef& weights, int ref_slot, bool forced_move, Rng& rng) {
  const Vector w = weights;
  if (!forced_move) return rng.categorical(as_span(w));
  const double rest = sum_except(w, ref_slot);
  if (!(rest > 1e-300)) return ref_slot;
  Vector probs = w / rest;
  probs(ref_slot) = 0.0;
  const int i = rng.categorical(as_span(probs));
  const double rest_i = sum_except(w, i);
  const double accept = std::min(1.0, rest / rest_i);
  return rng.uniform() < accept ? i : ref_slot;
}

ParticleSweepState run_forward(KernelStrategy& strategy, const SweepConfig& config, const Trajectory& ref, Rng& rng) {
  const FeynmanKacModel& model = strategy.model();
  const int horizon = model.horizon();
  const int dim = model.dim();
  const int n1 = config.num_proposals + 1;
  config.validate(horizon);
  if (ref.rows() != horizon || ref.cols() != dim) throw ConfigurationError("reference path has the wrong shape");
  if (!ref.allFinite()) throw ConfigurationError("reference path is not finite");

  ParticleSweepState st;
  strategy.prepare(ref, config);
  st.aux = strategy.sample_aux(ref, rng);
  strategy.set_aux(st.aux);

  st.particles.assign(horizon, RowMatrix(n1, dim));
  st.ancestors.assign(horizon, {});
  st.ref_slots.assign(horizon, 0);
  st.log_weights.assign(horizon, Vector(n1));

  RowMatrix prev(n1, dim), prev2(n1, dim);
  for (int t = 0; t < horizon; ++t) {
    RowMatrix& x = st.particles[t];
    const int k = rng.uniform_index(n1);
    st.ref_slots[t] = k;
    if (t > 0) {
      const Vector w = normalized_weights(st.log_weights[t - 1]);
      st.ancestors[t] = conditional_resample(w, st.ref_slots[t - 1], k, config.resampling, rng);
      for (int n = 0; n < n1; ++n) {
        const int a = st.ancestors[t][n];
        prev.row(n) = st.particles[t - 1].row(a);
        if (t > 1) prev2.row(n) = st.particles[t - 2].row(st.ancestors[t - 1][a]);
      }
    }
    for (int n = 0; n < n1; ++n) {
      if (n == k) {
        x.row(n) = ref.row(t);
      } else {
        x.row(n) = (t == 0 ? strategy.propose(0, no_state(), rng) : strategy.propose(t, state(prev, n), rng))
                       .transpose();
      }
    }
    const ParticleLayer layer{t, x, t > 0 ? &prev : nullptr, t > 1 ? &prev2 : nullptr};
    strategy.log_weights(layer, st.log_weights[t]);
    for (int n = 0; n < n1; ++n)
      if (!std::isfinite(st.log_weights[t](n))) throw EvaluationError("non-finite log-weight", t, n);
  }
  return st;
}

std::vector<int> backward_sample_first_order(const ParticleSweepState& st, const KernelStrategy& strategy,
                                             int last_index, Rng& rng) {
  const int horizon = st.horizon();
  const int n1 = st.size();
  std::vector<int> l(horizon);
  l[horizon - 1] = last_index;
  Vector lw(n1);
  for (int t = horizon - 2; t >= 0; --t) {
    const auto next = state(st.particles[t + 1], l[t + 1]);
    for (int i = 0; i < n1; ++i)
      lw(i) = st.log_weights[t](i) + strategy.log_transition(t + 1, no_state(), state(st.particles[t], i), next);
    const Vector w = normalized_weights(lw);
    l[t] = rng.categorical(as_span(w));
  }
  return l;
}

std::vector<int> backward_sample_second_order(const ParticleSweepState& st, const KernelStrategy& strategy,
                                              int last_index, Rng& rng) {
  const int horizon = st.horizon();
  const int n1 = st.size();
  std::vector<int> l(horizon);
  l[horizon - 1] = last_index;
  Vector lw(n1);
  for (int t = horizon - 2; t >= 0; --t) {
    const auto next = state(st.particles[t + 1], l[t + 1]);
    for (int i = 0; i < n1; ++i) {
      const auto xi = state(st.particles[t], i);
      const Vector before = t > 0 ? Vector(state(st.particles[t - 1], st.ancestors[t][i])) : Vector();
      double v = st.log_weights[t](i) + strategy.log_transition(t + 1, before, xi, next);
      if (t + 2 < horizon) v += strategy.log_transition(t + 2, xi, next, state(st.particles[t + 2], l[t + 2]));
      lw(i) = v;
    }
    const Vector w = normalized_weights(lw);
    l[t] = rng.categorical(as_span(w));
  }
  return l;
}

std::vector<int> ancestor_trace(const ParticleSweepState& st, int last_index) {
  const int horizon = st.horizon();
  std::vector<int> l(horizon);
  l[horizon - 1] = last_index;
  for (int t = horizon - 2; t >= 0; --t) l[t] = st.ancestors[t + 1][l[t + 1]];
  return l;
}

Trajectory gather_path(const ParticleSweepState& st, const std::vector<int>& indices) {
  Trajectory path(st.horizon(), st.particles[0].cols());
  for (int t = 0; t < st.horizon(); ++t) path.row(t) = st.particles[t].row(indices[t]);
  return path;
}

SweepResult run_sweep(KernelStrategy& strategy, const SweepConfig& config, const Trajectory& ref, Rng& rng) {
  const ParticleSweepState st = run_forward(strategy, config, ref, rng);
  const int horizon = st.horizon();
  const Vector w_last = normalized_weights(st.log_weights[horizon - 1]);
  const int last = forced_move_select(w_last, st.ref_slots[horizon - 1], config.forced_move, rng);

  std::vector<int> l;
  if (config.backward == BackwardScheme::ancestor_tracing) {
    l = ancestor_trace(st, last);
  } else if (strategy.markov_order() == 2) {
    l = backward_sample_second_order(st, strategy, last, rng);
  } else {
    l = backward_sample_first_order(st, strategy, last, rng);
  }

  SweepResult out;
  out.path = gather_path(st, l);
  out.accepted.resize(horizon);
  for (int t = 0; t < horizon; ++t)
    out.accepted[t] = l[t] != st.ref_slots[t] || out.path.row(t) != ref.row(t);
  out.energy = log_target(strategy.model(), out.path);
  return out;
}

Trajectory bootstrap_filter_path(const FeynmanKacModel& model, int num_particles, Rng& rng) {
  if (!model.has_decomposition()) throw ConfigurationError("bootstrap filter needs a sampleable mutation kernel");
  const int horizon = model.horizon();
  const int dim = model.dim();
  std::vector<RowMatrix> xs(horizon, RowMatrix(num_particles, dim));
  std::vector<std::vector<int>> anc(horizon, std::vector<int>(num_particles, 0));
  Vector lw(num_particles);
  for (int t = 0; t < horizon; ++t) {
    Vector w;
    if (t > 0) w = normalized_weights(lw);
    for (int n = 0; n < num_particles; ++n) {
      if (t == 0) {
        xs[0].row(n) = model.sample_m(0, no_state(), rng).transpose();
      } else {
        anc[t][n] = rng.categorical(as_span(w));
        xs[t].row(n) = model.sample_m(t, state(xs[t - 1], anc[t][n]), rng).transpose();
      }
    }
    for (int n = 0; n < num_particles; ++n) {
      const auto x = state(xs[t], n);
      lw(n) = t == 0 ? model.log_g(0, no_state(), x) : model.log_g(t, state(xs[t - 1], anc[t][n]), x);
      if (std::isnan(lw(n))) throw EvaluationError("NaN potential in bootstrap filter", t, n);
    }
  }
  const Vector w = normalized_weights(lw);
  int idx = rng.categorical(as_span(w));
  Trajectory path(horizon, dim);
  for (int t = horizon - 1; t >= 0; --t) {
    path.row(t) = xs[t].row(idx);
    idx = anc[t][idx];
  }
  return path;
}

}  // namespace pmala
