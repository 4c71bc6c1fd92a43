#pragma once

#include "pmala/core.hpp"
#include "pmala/gauss.hpp"
#include "pmala/rng.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pmala {

// Placeholder passed as x_{t-1} at t = 0. Implementations never read it there.
const Vector& no_state();

// Target π_T(x_{1:T}) ∝ ∏_t Q_t(x_{t-1:t}), with Q_t = M_t G_t when a decomposition exists.
// Time t is 0-based; `prev` is ignored at t = 0.
class FeynmanKacModel {
 public:
  FeynmanKacModel(int horizon, int dim);
  virtual ~FeynmanKacModel() = default;

  int horizon() const { return horizon_; }
  int dim() const { return dim_; }

  virtual double log_q(int t, const VecCRef& prev, const VecCRef& x) const = 0;
  // ∇ wrt x_t and wrt x_{t-1} (the latter only for t ≥ 1).
  virtual Vector grad_log_q(int t, const VecCRef& prev, const VecCRef& x) const = 0;
  virtual Vector grad_log_q_prev(int t, const VecCRef& prev, const VecCRef& x) const = 0;

  virtual bool has_decomposition() const { return false; }
  virtual double log_m(int t, const VecCRef& prev, const VecCRef& x) const;
  virtual Vector sample_m(int t, const VecCRef& prev, Rng& rng) const;
  virtual double log_g(int t, const VecCRef& prev, const VecCRef& x) const;
  virtual Vector grad_log_g(int t, const VecCRef& prev, const VecCRef& x) const;
  virtual Vector grad_log_g_prev(int t, const VecCRef& prev, const VecCRef& x) const;

 private:
  int horizon_;
  int dim_;
};

// M_t(x_t | x_{t-1}) = N(m_t(x_{t-1}), C_t(x_{t-1})).
class GaussianDynamics {
 public:
  using MeanFn = std::function<Vector(int, const VecCRef&)>;
  using CovFn = std::function<Matrix(int, const VecCRef&)>;

  // General conditionally Gaussian dynamics. With constant_cov, cov_fn is sampled once per t.
  GaussianDynamics(int horizon, int dim, MeanFn mean, CovFn cov, bool constant_cov);
  // m_t(x) = F_t x + b_t with fixed C_t; F[0] is ignored.
  static GaussianDynamics affine(std::vector<Matrix> f, std::vector<Vector> b, const std::vector<Matrix>& c);
  // x_1 ~ N(b1, C1); x_t ~ N(F x_{t-1} + b, C) afterwards.
  static GaussianDynamics time_homogeneous(int horizon, const Vector& b1, const Matrix& c1, const Matrix& f,
                                           const Vector& b, const Matrix& c);

  int horizon() const { return horizon_; }
  int dim() const { return dim_; }
  bool has_constant_cov() const { return constant_cov_; }
  bool is_affine() const { return affine_; }

  Vector mean(int t, const VecCRef& prev) const;
  // log M_t(x | prev).
  double log_density(int t, const VecCRef& prev, const VecCRef& x) const;
  SpdMatrix cov(int t, const VecCRef& prev) const;
  std::shared_ptr<const SpdMatrix> cov_ptr(int t, const VecCRef& prev) const;
  const SpdMatrix& constant_cov(int t) const;
  // Affine coefficients; F(0) is the zero matrix.
  const Matrix& F(int t) const;
  const Vector& b(int t) const;

 private:
  GaussianDynamics() = default;

  int horizon_ = 0;
  int dim_ = 0;
  bool constant_cov_ = false;
  bool affine_ = false;
  MeanFn mean_fn_;
  CovFn cov_fn_;
  std::vector<std::shared_ptr<const SpdMatrix>> covs_;
  std::vector<Matrix> f_;
  std::vector<Vector> b_;
};

// log g_t(y_t | x_t) for observations held by the object.
class ObservationModel {
 public:
  virtual ~ObservationModel() = default;
  virtual double log_density(int t, const VecCRef& x) const = 0;
  virtual Vector grad_log_density(int t, const VecCRef& x) const = 0;
};

// y_t ~ N(x_t, I).
class GaussianObservations : public ObservationModel {
 public:
  explicit GaussianObservations(RowMatrix y);
  double log_density(int t, const VecCRef& x) const override;
  Vector grad_log_density(int t, const VecCRef& x) const override;

 private:
  RowMatrix y_;
};

// y_t ~ N(0, diag(exp x_t)).
class StochVolObservations : public ObservationModel {
 public:
  explicit StochVolObservations(RowMatrix y);
  double log_density(int t, const VecCRef& x) const override;
  Vector grad_log_density(int t, const VecCRef& x) const override;

 private:
  RowMatrix y_;
};

// Gaussian dynamics as M_t and an observation density as G_t(x_t).
class StateSpaceModel : public FeynmanKacModel {
 public:
  StateSpaceModel(std::shared_ptr<const GaussianDynamics> dynamics, std::shared_ptr<const ObservationModel> obs);

  double log_q(int t, const VecCRef& prev, const VecCRef& x) const override;
  Vector grad_log_q(int t, const VecCRef& prev, const VecCRef& x) const override;
  Vector grad_log_q_prev(int t, const VecCRef& prev, const VecCRef& x) const override;

  bool has_decomposition() const override { return true; }
  double log_m(int t, const VecCRef& prev, const VecCRef& x) const override;
  Vector sample_m(int t, const VecCRef& prev, Rng& rng) const override;
  double log_g(int t, const VecCRef& prev, const VecCRef& x) const override;
  Vector grad_log_g(int t, const VecCRef& prev, const VecCRef& x) const override;
  Vector grad_log_g_prev(int t, const VecCRef& prev, const VecCRef& x) const override;

  const GaussianDynamics& dynamics() const { return *dynamics_; }

 private:
  std::shared_ptr<const GaussianDynamics> dynamics_;
  std::shared_ptr<const ObservationModel> obs_;
};

// User-supplied model. Missing gradients are filled in by central differences when
// finite_difference_fallback is set (accuracy around 1e-5).
struct ModelFunctions {
  using Scalar3 = std::function<double(int, const VecCRef&, const VecCRef&)>;
  using Vector3 = std::function<Vector(int, const VecCRef&, const VecCRef&)>;
  Scalar3 log_q;
  Vector3 grad_log_q;
  Vector3 grad_log_q_prev;
  Scalar3 log_m;
  std::function<Vector(int, const VecCRef&, Rng&)> sample_m;
  Scalar3 log_g;
  Vector3 grad_log_g;
  Vector3 grad_log_g_prev;
};

class FunctionalModel : public FeynmanKacModel {
 public:
  FunctionalModel(int horizon, int dim, ModelFunctions fns, bool finite_difference_fallback = false);

  double log_q(int t, const VecCRef& prev, const VecCRef& x) const override;
  Vector grad_log_q(int t, const VecCRef& prev, const VecCRef& x) const override;
  Vector grad_log_q_prev(int t, const VecCRef& prev, const VecCRef& x) const override;

  bool has_decomposition() const override;
  double log_m(int t, const VecCRef& prev, const VecCRef& x) const override;
  Vector sample_m(int t, const VecCRef& prev, Rng& rng) const override;
  double log_g(int t, const VecCRef& prev, const VecCRef& x) const override;
  Vector grad_log_g(int t, const VecCRef& prev, const VecCRef& x) const override;
  Vector grad_log_g_prev(int t, const VecCRef& prev, const VecCRef& x) const override;

 private:
  ModelFunctions fns_;
  bool fd_;
};

// Central-difference gradient of f at x with step h.
Vector central_difference(const std::function<double(const VecCRef&)>& f, const VecCRef& x, double h = 1e-5);

// Σ_t log Q_t(x_{t-1:t}).
double log_target(const FeynmanKacModel& model, const Trajectory& path);
// ∇_{x_t} log Q_t(x_{t-1:t}).
Vector grad_filter(const FeynmanKacModel& model, int t, const VecCRef& prev, const VecCRef& x);
// ∇_{x_t} [log Q_t + log Q_{t+1}]; `next` is ignored at the final step.
Vector grad_smoothing(const FeynmanKacModel& model, int t, const VecCRef& prev, const VecCRef& x,
                      const VecCRef& next);
// ∇_{x_t} [log G_t + log G_{t+1}].
Vector grad_potential_smoothing(const FeynmanKacModel& model, int t, const VecCRef& prev, const VecCRef& x,
                                const VecCRef& next);

struct ModelBundle {
  std::shared_ptr<const FeynmanKacModel> model;
  std::shared_ptr<const GaussianDynamics> dynamics;  // null when the prior is not Gaussian
};

// x_1 ~ N(0, λI), x_t ~ N(x_{t-1}, λI), y_t ~ N(x_t, I).
ModelBundle make_lgssm(int dim, int horizon, double lambda, const RowMatrix& observations);
// x_1 ~ N(0, C/(1−φ²)), x_t ~ N(φ x_{t-1}, C), C = τ((1−ρ)I + ρ11ᵀ), y_t ~ N(0, diag(exp x_t)).
ModelBundle make_stochvol(int dim, int horizon, double phi, double rho, double tau, const RowMatrix& observations);

enum class ModelKind { lgssm, stochvol };

struct ModelSpec {
  ModelKind kind = ModelKind::lgssm;
  int dim = 1;
  int horizon = 1;
  double lambda = 1.0;
  double phi = 0.9;
  double rho = 0.25;
  double tau = 1.0;
};

ModelBundle make_model(const ModelSpec& spec, const RowMatrix& observations);

struct SimulatedData {
  Trajectory latent;
  RowMatrix observations;
};
SimulatedData simulate_data(const ModelSpec& spec, std::uint64_t seed);

// Plain CSV, one row per time step, one column per coordinate, no header.
RowMatrix read_observations_csv(const std::string& path);
void write_observations_csv(const std::string& path, const RowMatrix& y);

}  // namespace pmala
