#include "pmala/model.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace pmala {

namespace {

ConfigurationError no_decomposition() {
  return ConfigurationError("model has no M_t/G_t decomposition");
}

void check_time(const FeynmanKacModel& m, int t) {
  if (t < 0 || t >= m.horizon()) throw std::out_of_range("time index out of range");
}

}  // namespace

const Vector& no_state() {
  static const Vector empty;
  return empty;
}

FeynmanKacModel::FeynmanKacModel(int horizon, int dim) : horizon_(horizon), dim_(dim) {
  if (horizon < 1 || dim < 1) throw ConfigurationError("model needs horizon >= 1 and dim >= 1");
}

double FeynmanKacModel::log_m(int, const VecCRef&, const VecCRef&) const { throw no_decomposition(); }
Vector FeynmanKacModel::sample_m(int, const VecCRef&, Rng&) const { throw no_decomposition(); }
double FeynmanKacModel::log_g(int, const VecCRef&, const VecCRef&) const { throw no_decomposition(); }
Vector FeynmanKacModel::grad_log_g(int, const VecCRef&, const VecCRef&) const { throw no_decomposition(); }
Vector FeynmanKacModel::grad_log_g_prev(int, const VecCRef&, const VecCRef&) const { throw no_decomposition(); }

// ---------------------------------------------------------------------------------------------

GaussianDynamics::GaussianDynamics(int horizon, int dim, MeanFn mean, CovFn cov, bool constant_cov)
    : horizon_(horizon), dim_(dim), constant_cov_(constant_cov), mean_fn_(std::move(mean)), cov_fn_(std::move(cov)) {
  if (constant_cov_) {
    const Vector probe = Vector::Zero(dim);
    for (int t = 0; t < horizon; ++t) covs_.push_back(std::make_shared<const SpdMatrix>(cov_fn_(t, probe)));
  }
}

GaussianDynamics GaussianDynamics::affine(std::vector<Matrix> f, std::vector<Vector> b, const std::vector<Matrix>& c) {
  if (f.size() != b.size() || b.size() != c.size() || b.empty())
    throw ConfigurationError("affine dynamics needs F_t, b_t, C_t for every t");
  GaussianDynamics d;
  d.horizon_ = static_cast<int>(b.size());
  d.dim_ = static_cast<int>(b[0].size());
  d.constant_cov_ = true;
  d.affine_ = true;
  f[0] = Matrix::Zero(d.dim_, d.dim_);
  for (std::size_t t = 0; t < c.size(); ++t) {
    if (t > 0 && c[t] == c[t - 1]) {
      d.covs_.push_back(d.covs_.back());
    } else {
      d.covs_.push_back(std::make_shared<const SpdMatrix>(c[t]));
    }
  }
  d.f_ = std::move(f);
  d.b_ = std::move(b);
  return d;
}

GaussianDynamics GaussianDynamics::time_homogeneous(int horizon, const Vector& b1, const Matrix& c1, const Matrix& f,
                                                    const Vector& b, const Matrix& c) {
  std::vector<Matrix> fs(horizon, f), cs(horizon, c);
  std::vector<Vector> bs(horizon, b);
  bs[0] = b1;
  cs[0] = c1;
  return affine(std::move(fs), std::move(bs), cs);
}

Vector GaussianDynamics::mean(int t, const VecCRef& prev) const {
  if (affine_) return t == 0 ? b_[0] : Vector(f_[t].lazyProduct(prev) + b_[t]);
  return mean_fn_(t, prev);
}

double GaussianDynamics::log_density(int t, const VecCRef& prev, const VecCRef& x) const {
  if (!affine_) return mvn_logpdf(x, mean(t, prev), *cov_ptr(t, prev));
  const SpdMatrix& c = *covs_[t];
  const double q = t == 0 ? c.quad_form(x - b_[0]) : c.quad_form(x - f_[t].lazyProduct(prev) - b_[t]);
  return -0.5 * (q + c.log_det() + static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi));
}

std::shared_ptr<const SpdMatrix> GaussianDynamics::cov_ptr(int t, const VecCRef& prev) const {
  if (constant_cov_) return covs_[t];
  return std::make_shared<const SpdMatrix>(cov_fn_(t, prev));
}

SpdMatrix GaussianDynamics::cov(int t, const VecCRef& prev) const { return *cov_ptr(t, prev); }

const SpdMatrix& GaussianDynamics::constant_cov(int t) const {
  if (!constant_cov_) throw ConfigurationError("dynamics covariance depends on the previous state");
  return *covs_[t];
}

const Matrix& GaussianDynamics::F(int t) const {
  if (!affine_) throw ConfigurationError("dynamics are not affine");
  return f_[t];
}

const Vector& GaussianDynamics::b(int t) const {
  if (!affine_) throw ConfigurationError("dynamics are not affine");
  return b_[t];
}

// ---------------------------------------------------------------------------------------------

GaussianObservations::GaussianObservations(RowMatrix y) : y_(std::move(y)) {}

double GaussianObservations::log_density(int t, const VecCRef& x) const {
  return isotropic_logpdf(state(y_, t), x, 1.0);
}

Vector GaussianObservations::grad_log_density(int t, const VecCRef& x) const { return state(y_, t) - x; }

StochVolObservations::StochVolObservations(RowMatrix y) : y_(std::move(y)) {}

double StochVolObservations::log_density(int t, const VecCRef& x) const {
  const auto y = y_.row(t).transpose().array();
  const double d = static_cast<double>(x.size());
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + x.sum() + (y.square() * (-x.array()).exp()).sum());
}

Vector StochVolObservations::grad_log_density(int t, const VecCRef& x) const {
  const auto y = y_.row(t).transpose().array();
  return (-0.5 * (1.0 - y.square() * (-x.array()).exp())).matrix();
}

// ---------------------------------------------------------------------------------------------

StateSpaceModel::StateSpaceModel(std::shared_ptr<const GaussianDynamics> dynamics,
                                 std::shared_ptr<const ObservationModel> obs)
    : FeynmanKacModel(dynamics->horizon(), dynamics->dim()), dynamics_(std::move(dynamics)), obs_(std::move(obs)) {}

double StateSpaceModel::log_q(int t, const VecCRef& prev, const VecCRef& x) const {
  return log_m(t, prev, x) + log_g(t, prev, x);
}

Vector StateSpaceModel::grad_log_q(int t, const VecCRef& prev, const VecCRef& x) const {
  const auto c = dynamics_->cov_ptr(t, prev);
  return obs_->grad_log_density(t, x) - c->solve(x - dynamics_->mean(t, prev));
}

Vector StateSpaceModel::grad_log_q_prev(int t, const VecCRef& prev, const VecCRef& x) const {
  if (t == 0) return Vector::Zero(dim());
  if (dynamics_->is_affine()) {
    const auto& c = dynamics_->constant_cov(t);
    return dynamics_->F(t).transpose() * c.solve(x - dynamics_->mean(t, prev));
  }
  return central_difference([&](const VecCRef& p) { return log_m(t, p, x); }, prev);
}

double StateSpaceModel::log_m(int t, const VecCRef& prev, const VecCRef& x) const {
  check_time(*this, t);
  return dynamics_->log_density(t, prev, x);
}

Vector StateSpaceModel::sample_m(int t, const VecCRef& prev, Rng& rng) const {
  return mvn_sample(dynamics_->mean(t, prev), *dynamics_->cov_ptr(t, prev), rng);
}

double StateSpaceModel::log_g(int t, const VecCRef&, const VecCRef& x) const { return obs_->log_density(t, x); }

Vector StateSpaceModel::grad_log_g(int t, const VecCRef&, const VecCRef& x) const {
  return obs_->grad_log_density(t, x);
}

Vector StateSpaceModel::grad_log_g_prev(int, const VecCRef&, const VecCRef&) const { return Vector::Zero(dim()); }

// ---------------------------------------------------------------------------------------------

Vector central_difference(const std::function<double(const VecCRef&)>& f, const VecCRef& x, double h) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x(i)));
    probe(i) = x(i) + step;
    const double up = f(probe);
    probe(i) = x(i) - step;
    const double down = f(probe);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

FunctionalModel::FunctionalModel(int horizon, int dim, ModelFunctions fns, bool finite_difference_fallback)
    : FeynmanKacModel(horizon, dim), fns_(std::move(fns)), fd_(finite_difference_fallback) {
  if (!fns_.log_q) throw ConfigurationError("user model must provide log_q");
  if (!fd_ && (!fns_.grad_log_q || !fns_.grad_log_q_prev))
    throw ConfigurationError("user model must provide gradients or enable the finite-difference fallback");
  if (has_decomposition() && !fd_ && (!fns_.grad_log_g || !fns_.grad_log_g_prev))
    throw ConfigurationError("user model decomposition must provide gradients of log G_t");
}

double FunctionalModel::log_q(int t, const VecCRef& prev, const VecCRef& x) const { return fns_.log_q(t, prev, x); }

Vector FunctionalModel::grad_log_q(int t, const VecCRef& prev, const VecCRef& x) const {
  if (fns_.grad_log_q) return fns_.grad_log_q(t, prev, x);
  return central_difference([&](const VecCRef& z) { return fns_.log_q(t, prev, z); }, x);
}

Vector FunctionalModel::grad_log_q_prev(int t, const VecCRef& prev, const VecCRef& x) const {
  if (t == 0) return Vector::Zero(dim());
  if (fns_.grad_log_q_prev) return fns_.grad_log_q_prev(t, prev, x);
  return central_difference([&](const VecCRef& p) { return fns_.log_q(t, p, x); }, prev);
}

bool FunctionalModel::has_decomposition() const { return fns_.log_m && fns_.log_g && fns_.sample_m; }

double FunctionalModel::log_m(int t, const VecCRef& prev, const VecCRef& x) const {
  if (!has_decomposition()) throw no_decomposition();
  return fns_.log_m(t, prev, x);
}

Vector FunctionalModel::sample_m(int t, const VecCRef& prev, Rng& rng) const {
  if (!has_decomposition()) throw no_decomposition();
  return fns_.sample_m(t, prev, rng);
}

double FunctionalModel::log_g(int t, const VecCRef& prev, const VecCRef& x) const {
  if (!has_decomposition()) throw no_decomposition();
  return fns_.log_g(t, prev, x);
}

Vector FunctionalModel::grad_log_g(int t, const VecCRef& prev, const VecCRef& x) const {
  if (!has_decomposition()) throw no_decomposition();
  if (fns_.grad_log_g) return fns_.grad_log_g(t, prev, x);
  return central_difference([&](const VecCRef& z) { return fns_.log_g(t, prev, z); }, x);
}

Vector FunctionalModel::grad_log_g_prev(int t, const VecCRef& prev, const VecCRef& x) const {
  if (!has_decomposition()) throw no_decomposition();
  if (t == 0) return Vector::Zero(dim());
  if (fns_.grad_log_g_prev) return fns_.grad_log_g_prev(t, prev, x);
  return central_difference([&](const VecCRef& p) { return fns_.log_g(t, p, x); }, prev);
}

// ---------------------------------------------------------------------------------------------

double log_target(const FeynmanKacModel& model, const Trajectory& path) {
  if (path.rows() != model.horizon() || path.cols() != model.dim())
    throw ConfigurationError("trajectory shape does not match the model");
  double total = 0.0;
  for (int t = 0; t < model.horizon(); ++t) {
    const double v = t == 0 ? model.log_q(0, no_state(), state(path, 0))
                            : model.log_q(t, state(path, t - 1), state(path, t));
    if (!std::isfinite(v)) throw EvaluationError("non-finite log Q_t", t);
    total += v;
  }
  return total;
}

Vector grad_filter(const FeynmanKacModel& model, int t, const VecCRef& prev, const VecCRef& x) {
  return model.grad_log_q(t, prev, x);
}

Vector grad_smoothing(const FeynmanKacModel& model, int t, const VecCRef& prev, const VecCRef& x,
                      const VecCRef& next) {
  Vector g = model.grad_log_q(t, prev, x);
  if (t + 1 < model.horizon()) g += model.grad_log_q_prev(t + 1, x, next);
  return g;
}

Vector grad_potential_smoothing(const FeynmanKacModel& model, int t, const VecCRef& prev, const VecCRef& x,
                                const VecCRef& next) {
  if (!model.has_decomposition()) throw no_decomposition();
  Vector g = model.grad_log_g(t, prev, x);
  if (t + 1 < model.horizon()) g += model.grad_log_g_prev(t + 1, x, next);
  return g;
}

// ---------------------------------------------------------------------------------------------

namespace {

void check_observations(const RowMatrix& y, int dim, int horizon) {
  if (y.rows() != horizon || y.cols() != dim)
    throw ConfigurationError("observations must be " + std::to_string(horizon) + " x " + std::to_string(dim));
}

}  // namespace

ModelBundle make_lgssm(int dim, int horizon, double lambda, const RowMatrix& observations) {
  if (!(lambda > 0.0)) throw ConfigurationError("lgssm: lambda must be positive");
  check_observations(observations, dim, horizon);
  const Matrix c = Matrix::Identity(dim, dim) * lambda;
  auto dyn = std::make_shared<const GaussianDynamics>(GaussianDynamics::time_homogeneous(
      horizon, Vector::Zero(dim), c, Matrix::Identity(dim, dim), Vector::Zero(dim), c));
  auto obs = std::make_shared<const GaussianObservations>(observations);
  return {std::make_shared<const StateSpaceModel>(dyn, obs), dyn};
}

ModelBundle make_stochvol(int dim, int horizon, double phi, double rho, double tau, const RowMatrix& observations) {
  if (!(std::abs(phi) < 1.0)) throw ConfigurationError("stochvol: |phi| must be < 1");
  if (!(std::abs(rho) < 1.0)) throw ConfigurationError("stochvol: |rho| must be < 1");
  if (!(tau > 0.0)) throw ConfigurationError("stochvol: tau must be positive");
  if (dim > 1 && !(rho > -1.0 / (dim - 1)))
    throw ConfigurationError("stochvol: C_t is not positive definite (need rho > -1/(D-1))");
  check_observations(observations, dim, horizon);
  Matrix c = Matrix::Constant(dim, dim, tau * rho);
  c.diagonal().setConstant(tau);
  const Matrix c1 = c / (1.0 - phi * phi);
  auto dyn = std::make_shared<const GaussianDynamics>(GaussianDynamics::time_homogeneous(
      horizon, Vector::Zero(dim), c1, phi * Matrix::Identity(dim, dim), Vector::Zero(dim), c));
  auto obs = std::make_shared<const StochVolObservations>(observations);
  return {std::make_shared<const StateSpaceModel>(dyn, obs), dyn};
}

ModelBundle make_model(const ModelSpec& spec, const RowMatrix& observations) {
  switch (spec.kind) {
    case ModelKind::lgssm:
      return make_lgssm(spec.dim, spec.horizon, spec.lambda, observations);
    case ModelKind::stochvol:
      return make_stochvol(spec.dim, spec.horizon, spec.phi, spec.rho, spec.tau, observations);
  }
  throw ConfigurationError("unknown model kind");
}

SimulatedData simulate_data(const ModelSpec& spec, std::uint64_t seed) {
  // Only the prior is needed to simulate, so build the model around placeholder observations.
  const RowMatrix zeros = RowMatrix::Zero(spec.horizon, spec.dim);
  const ModelBundle bundle = make_model(spec, zeros);
  Rng rng(seed);
  SimulatedData out{Trajectory(spec.horizon, spec.dim), RowMatrix(spec.horizon, spec.dim)};
  for (int t = 0; t < spec.horizon; ++t) {
    const Vector prev = t == 0 ? Vector() : Vector(state(out.latent, t - 1));
    out.latent.row(t) = bundle.model->sample_m(t, prev, rng).transpose();
  }
  for (int t = 0; t < spec.horizon; ++t) {
    for (int d = 0; d < spec.dim; ++d) {
      const double z = rng.normal();
      const double x = out.latent(t, d);
      out.observations(t, d) = spec.kind == ModelKind::lgssm ? x + z : std::exp(0.5 * x) * z;
    }
  }
  return out;
}

RowMatrix read_observations_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open observations file " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigurationError("non-numeric entry '" + cell + "' in " + path);
      }
    }
    if (!rows.empty() && row.size() != rows[0].size())
      throw ConfigurationError("ragged rows in observations file " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigurationError("observations file " + path + " is empty");
  RowMatrix y(rows.size(), rows[0].size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t d = 0; d < rows[t].size(); ++d) y(t, d) = rows[t][d];
  return y;
}

void write_observations_csv(const std::string& path, const RowMatrix& y) {
  std::ofstream out(path);
  if (!out) throw ConfigurationError("cannot write " + path);
  out.precision(17);
  for (Eigen::Index t = 0; t < y.rows(); ++t) {
    for (Eigen::Index d = 0; d < y.cols(); ++d) out << (d ? "," : "") << y(t, d);
    out << '\n';
  }
}

}  // namespace pmala
