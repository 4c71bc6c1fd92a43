#pragma once

#include "pmala/core.hpp"
#include "pmala/gauss.hpp"
#include "pmala/model.hpp"

#include <span>
#include <vector>

namespace pmala {

// Noise covariance of the pseudo-observations u_t = x_t + N(0, (δ_t/2) V_t).
enum class ObsCovKind { identity, prior_cov };

// M'_t(x_t | x_{t-1}, u_{t:T}) = N(F'_t x_{t-1} + b'_t, Σ'_t); F'_1 = 0.
struct TwistedParams {
  std::vector<Matrix> f;
  std::vector<Vector> b;
  std::vector<SpdMatrix> sigma;
};

// Unconditional marginals x_t ~ N(μ_t, Σ_t) of affine dynamics.
struct PriorMoments {
  std::vector<Vector> mean;
  std::vector<Matrix> cov;
};
PriorMoments prior_moments(const GaussianDynamics& dynamics);

struct GaussianPosterior {
  Vector mean;
  Matrix cov;
};

// Conditions N(mean, cov) on z = H x + offset + N(0, R).
GaussianPosterior kalman_update(const Vector& mean, const Matrix& cov, const Matrix& h, const Vector& offset,
                                const Matrix& r, const Vector& z);

// Backward (time-reversed) filter over u_{t:T}; needs no inverse of C_t.
TwistedParams twisted_params_general(const GaussianDynamics& dynamics, std::span<const double> delta,
                                     const RowMatrix& u, ObsCovKind kind);
// Forward filter + RTS smoother, then the precision-form combination; needs invertible C_t.
TwistedParams twisted_params_invertible(const GaussianDynamics& dynamics, std::span<const double> delta,
                                        const RowMatrix& u, ObsCovKind kind);

// Σ̃_t = Σ_{|s−t| ≤ L} Cov(x_s, x_t) under the prior; the truncated PCNL preconditioner.
std::vector<Matrix> truncated_prior_cov_sums(const GaussianDynamics& dynamics, int window);

}  // namespace pmala
