#include "pmala/twist.hpp"

#include <string>

namespace pmala {

namespace {

void require_affine(const GaussianDynamics& dynamics) {
  if (!dynamics.is_affine()) throw ConfigurationError("twisted proposals require affine Gaussian dynamics");
}

Matrix obs_noise(const GaussianDynamics& dynamics, int t, double delta, ObsCovKind kind) {
  const int d = dynamics.dim();
  if (kind == ObsCovKind::identity) return Matrix::Identity(d, d) * (delta / 2);
  return dynamics.constant_cov(t).matrix() * (delta / 2);
}

void check_inputs(const GaussianDynamics& dynamics, std::span<const double> delta, const RowMatrix& u) {
  require_affine(dynamics);
  if (static_cast<int>(delta.size()) != dynamics.horizon() || u.rows() != dynamics.horizon() ||
      u.cols() != dynamics.dim())
    throw ConfigurationError("twisted parameters need one step size and one pseudo-observation per time step");
}

// Solves X S = B for symmetric positive-definite S.
Matrix right_solve(const Matrix& b, const Matrix& s, const std::string& what) {
  Eigen::LLT<Matrix> llt(symmetrized(s));
  if (llt.info() != Eigen::Success) throw SingularityError(what);
  return llt.solve(b.transpose()).transpose();
}

Matrix spd_inverse(const Matrix& s, const std::string& what) {
  Eigen::LLT<Matrix> llt(symmetrized(s));
  if (llt.info() != Eigen::Success) throw SingularityError(what);
  return symmetrized(llt.solve(Matrix::Identity(s.rows(), s.cols())));
}

}  // namespace

PriorMoments prior_moments(const GaussianDynamics& dynamics) {
  require_affine(dynamics);
  const int horizon = dynamics.horizon();
  PriorMoments pm;
  pm.mean.reserve(horizon);
  pm.cov.reserve(horizon);
  pm.mean.push_back(dynamics.b(0));
  pm.cov.push_back(dynamics.constant_cov(0).matrix());
  for (int t = 1; t < horizon; ++t) {
    const Matrix& f = dynamics.F(t);
    pm.mean.push_back(f * pm.mean.back() + dynamics.b(t));
    pm.cov.push_back(symmetrized(Matrix(f * pm.cov.back() * f.transpose() + dynamics.constant_cov(t).matrix())));
  }
  return pm;
}

GaussianPosterior kalman_update(const Vector& mean, const Matrix& cov, const Matrix& h, const Vector& offset,
                                const Matrix& r, const Vector& z) {
  const Matrix s = h * cov * h.transpose() + r;
  const Matrix gain = right_solve(cov * h.transpose(), s, "innovation covariance is singular");
  GaussianPosterior post;
  post.mean = mean + gain * (z - h * mean - offset);
  post.cov = symmetrized(Matrix(cov - gain * s * gain.transpose()));
  return post;
}

TwistedParams twisted_params_general(const GaussianDynamics& dynamics, std::span<const double> delta,
                                     const RowMatrix& u, ObsCovKind kind) {
  check_inputs(dynamics, delta, u);
  const int horizon = dynamics.horizon();
  const int dim = dynamics.dim();
  const Matrix eye = Matrix::Identity(dim, dim);
  const PriorMoments pm = prior_moments(dynamics);

  // Time reversal: x_t | x_{t+1} ~ N(F^←_t x_{t+1} + b^←_t, C^←_t).
  std::vector<Matrix> fr(horizon), cr(horizon);
  std::vector<Vector> br(horizon);
  for (int t = 0; t + 1 < horizon; ++t) {
    const Matrix cross = pm.cov[t] * dynamics.F(t + 1).transpose();  // Cov(x_t, x_{t+1})
    fr[t] = right_solve(cross, pm.cov[t + 1],
                        "prior covariance Sigma_" + std::to_string(t + 2) + " is singular in the time reversal");
    br[t] = pm.mean[t] - fr[t] * pm.mean[t + 1];
    cr[t] = symmetrized(Matrix(pm.cov[t] - fr[t] * cross.transpose()));
  }

  // Filter of the reversed chain: p(x_t | u_{t:T}).
  std::vector<GaussianPosterior> filt(horizon);
  const Vector zero = Vector::Zero(dim);
  for (int t = horizon - 1; t >= 0; --t) {
    Vector m;
    Matrix p;
    if (t == horizon - 1) {
      m = pm.mean[t];
      p = pm.cov[t];
    } else {
      m = fr[t] * filt[t + 1].mean + br[t];
      p = fr[t] * filt[t + 1].cov * fr[t].transpose() + cr[t];
    }
    filt[t] = kalman_update(m, p, eye, zero, obs_noise(dynamics, t, delta[t], kind), state(u, t));
  }

  // Combine: treat x_{t-1} = F^←_{t-1} x_t + b^←_{t-1} + noise as an observation of x_t.
  TwistedParams tp;
  tp.f.reserve(horizon);
  tp.b.reserve(horizon);
  tp.sigma.reserve(horizon);
  tp.f.push_back(Matrix::Zero(dim, dim));
  tp.b.push_back(filt[0].mean);
  tp.sigma.emplace_back(filt[0].cov);
  for (int t = 1; t < horizon; ++t) {
    const Matrix& p = filt[t].cov;
    const Matrix& f = fr[t - 1];
    const Matrix s = cr[t - 1] + f * p * f.transpose();
    const Matrix k = right_solve(p * f.transpose(), s, "combine step covariance is singular");
    tp.f.push_back(k);
    tp.b.push_back(filt[t].mean - k * (f * filt[t].mean + br[t - 1]));
    tp.sigma.emplace_back(symmetrized(Matrix((eye - k * f) * p)));
  }
  return tp;
}

TwistedParams twisted_params_invertible(const GaussianDynamics& dynamics, std::span<const double> delta,
                                        const RowMatrix& u, ObsCovKind kind) {
  check_inputs(dynamics, delta, u);
  const int horizon = dynamics.horizon();
  const int dim = dynamics.dim();
  const Matrix eye = Matrix::Identity(dim, dim);
  const Vector zero = Vector::Zero(dim);

  std::vector<Matrix> c_inv(horizon);
  for (int t = 0; t < horizon; ++t) {
    Eigen::LLT<Matrix> llt(dynamics.constant_cov(t).matrix());
    if (llt.info() != Eigen::Success)
      throw ConfigurationError("invertible twisting needs invertible C_" + std::to_string(t + 1));
    c_inv[t] = dynamics.constant_cov(t).inverse();
  }

  std::vector<GaussianPosterior> pred(horizon), filt(horizon);
  for (int t = 0; t < horizon; ++t) {
    if (t == 0) {
      pred[0] = {dynamics.b(0), dynamics.constant_cov(0).matrix()};
    } else {
      const Matrix& f = dynamics.F(t);
      pred[t] = {f * filt[t - 1].mean + dynamics.b(t),
                 symmetrized(Matrix(f * filt[t - 1].cov * f.transpose() + dynamics.constant_cov(t).matrix()))};
    }
    filt[t] = kalman_update(pred[t].mean, pred[t].cov, eye, zero, obs_noise(dynamics, t, delta[t], kind),
                            state(u, t));
  }

  std::vector<GaussianPosterior> smooth(horizon);
  smooth[horizon - 1] = filt[horizon - 1];
  for (int t = horizon - 2; t >= 0; --t) {
    const Matrix j = right_solve(filt[t].cov * dynamics.F(t + 1).transpose(), pred[t + 1].cov,
                                 "predicted covariance is singular in the smoother");
    smooth[t].mean = filt[t].mean + j * (smooth[t + 1].mean - pred[t + 1].mean);
    smooth[t].cov = symmetrized(Matrix(filt[t].cov + j * (smooth[t + 1].cov - pred[t + 1].cov) * j.transpose()));
  }

  TwistedParams tp;
  for (int t = 0; t < horizon; ++t) {
    const Matrix ps_inv = spd_inverse(smooth[t].cov, "smoothed covariance is singular");
    const Matrix pp_inv = spd_inverse(pred[t].cov, "predicted covariance is singular");
    const Matrix precision = symmetrized(Matrix(c_inv[t] + ps_inv - pp_inv));
    const Matrix sigma = spd_inverse(precision, "twisted precision is singular");
    tp.f.push_back(t == 0 ? Matrix::Zero(dim, dim) : Matrix(sigma * c_inv[t] * dynamics.F(t)));
    tp.b.push_back(sigma * (c_inv[t] * dynamics.b(t) + ps_inv * smooth[t].mean - pp_inv * pred[t].mean));
    tp.sigma.emplace_back(sigma);
  }
  return tp;
}

std::vector<Matrix> truncated_prior_cov_sums(const GaussianDynamics& dynamics, int window) {
  if (window < 0) throw ConfigurationError("preconditioner window must be non-negative");
  const PriorMoments pm = prior_moments(dynamics);
  const int horizon = dynamics.horizon();
  std::vector<Matrix> sums(pm.cov);
  for (int t = 0; t < horizon; ++t) {
    Matrix cross = pm.cov[t];  // Cov(x_s, x_t) for s = t, t+1, ...
    for (int s = t + 1; s < horizon && s - t <= window; ++s) {
      cross = dynamics.F(s) * cross;
      sums[t] += cross;
      sums[s] += cross.transpose();
    }
  }
  return sums;
}

}  // namespace pmala
