#pragma once

// Dense Gaussian kernels. Everything here is templated on the scalar type; the sampler itself
// instantiates it with double.

#include "pmala/core.hpp"
#include "pmala/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <utility>

namespace pmala {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Derived>
MatrixX<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& m) {
  return (m + m.transpose()) / typename Derived::Scalar(2);
}

// Symmetric positive-definite matrix with its Cholesky factor, log-determinant and inverse
// computed once at construction. Scalar multiples of the identity are detected and use O(D)
// paths for solves and sampling.
template <typename Scalar>
class SpdMatrixT {
 public:
  using Mat = MatrixX<Scalar>;
  using Vec = VectorX<Scalar>;

  SpdMatrixT() = default;

  explicit SpdMatrixT(const Mat& m) {
    if (m.rows() != m.cols() || m.rows() == 0)
      throw ConfigurationError("covariance must be a non-empty square matrix");
    const Scalar scale = std::max(Scalar(1), m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12) * scale)
      throw ConfigurationError("covariance is not symmetric");
    matrix_ = symmetrized(m);
    const Scalar d0 = matrix_(0, 0);
    Mat off = matrix_;
    off.diagonal().setZero();
    isotropic_ = off.isZero(0) && (matrix_.diagonal().array() == d0).all();
    factorize();
  }

  static SpdMatrixT isotropic(Eigen::Index dim, Scalar variance) {
    return SpdMatrixT(Mat::Identity(dim, dim) * variance);
  }

  Eigen::Index dim() const { return matrix_.rows(); }
  const Mat& matrix() const { return matrix_; }
  const Mat& inverse() const { return inverse_; }
  const Mat& cholesky_lower() const { return lower_; }
  Scalar log_det() const { return log_det_; }
  bool is_isotropic() const { return isotropic_; }

  template <typename Derived>
  Vec solve(const Eigen::MatrixBase<Derived>& b) const {
    if (isotropic_) return b / matrix_(0, 0);
    return llt_.solve(b);
  }

  // vᵀ C⁻¹ v
  template <typename Derived>
  Scalar quad_form(const Eigen::MatrixBase<Derived>& v) const {
    if (isotropic_) return v.squaredNorm() / matrix_(0, 0);
    if (dim() <= kStackDim) {
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1, 0, kStackDim, 1> w = v;
      lower_.template triangularView<Eigen::Lower>().solveInPlace(w);
      return w.squaredNorm();
    }
    return llt_.matrixL().solve(v).squaredNorm();
  }

  // L z with L the lower Cholesky factor, i.e. maps white noise onto this covariance.
  template <typename Derived>
  Vec colour(const Eigen::MatrixBase<Derived>& z) const {
    if (isotropic_) return z * std::sqrt(matrix_(0, 0));
    return lower_.template triangularView<Eigen::Lower>() * z;
  }

  SpdMatrixT scaled(Scalar c) const { return SpdMatrixT(matrix_ * c); }

 private:
  void factorize() {
    llt_.compute(matrix_);
    if (llt_.info() != Eigen::Success) throw ConfigurationError("covariance is not positive definite");
    lower_ = llt_.matrixL();
    if (!(lower_.diagonal().array() > Scalar(0)).all())
      throw ConfigurationError("covariance is not positive definite");
    log_det_ = Scalar(2) * lower_.diagonal().array().log().sum();
    inverse_ = symmetrized(llt_.solve(Mat::Identity(dim(), dim())));
  }

  // Small systems solve in a stack buffer instead of a heap temporary.
  static constexpr int kStackDim = 16;

  Mat matrix_;
  Mat lower_;
  Mat inverse_;
  Eigen::LLT<Mat> llt_;
  Scalar log_det_ = 0;
  bool isotropic_ = false;
};

using SpdMatrix = SpdMatrixT<double>;

// Eigendecomposition of a fixed covariance, reused whenever only δ changes.
template <typename Scalar>
class SpectralCacheT {
 public:
  using Mat = MatrixX<Scalar>;
  using Vec = VectorX<Scalar>;

  SpectralCacheT() = default;
  explicit SpectralCacheT(const Mat& c) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(c));
    if (es.info() != Eigen::Success) throw SingularityError("eigendecomposition failed");
    u_ = es.eigenvectors();
    lambda_ = es.eigenvalues();
  }
  explicit SpectralCacheT(const SpdMatrixT<Scalar>& c) : SpectralCacheT(c.matrix()) {}

  const Mat& eigenvectors() const { return u_; }
  const Vec& eigenvalues() const { return lambda_; }
  Mat reconstruct() const { return u_ * lambda_.asDiagonal() * u_.transpose(); }
  // U diag(f(λ)) Uᵀ
  template <typename F>
  Mat apply(F&& f) const {
    return u_ * lambda_.unaryExpr(std::forward<F>(f)).asDiagonal() * u_.transpose();
  }

 private:
  Mat u_;
  Vec lambda_;
};

using SpectralCache = SpectralCacheT<double>;

// det(I_N ⊗ A + 1_{N×N} ⊗ B) = det(A)^{N−1} det(A + N B).
template <typename DA, typename DB>
typename DA::Scalar block_det(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b, int n) {
  using Scalar = typename DA::Scalar;
  const Scalar det_a = MatrixX<Scalar>(a).determinant();
  const Scalar det_s = MatrixX<Scalar>(a + Scalar(n) * b).determinant();
  return std::pow(det_a, n - 1) * det_s;
}

// (F, G) with I_N ⊗ F + 1 ⊗ G = (I_N ⊗ A + 1 ⊗ B)⁻¹.
template <typename DA, typename DB>
std::pair<MatrixX<typename DA::Scalar>, MatrixX<typename DA::Scalar>> block_inv_params(
    const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b, int n) {
  using Mat = MatrixX<typename DA::Scalar>;
  Eigen::FullPivLU<Mat> lu_a{Mat(a)};
  Eigen::FullPivLU<Mat> lu_s{Mat(a + typename DA::Scalar(n) * b)};
  if (!lu_a.isInvertible()) throw SingularityError("block_inv_params: A is singular");
  if (!lu_s.isInvertible()) throw SingularityError("block_inv_params: A + N B is singular");
  Mat f = lu_a.inverse();
  Mat g = -lu_s.solve(Mat(b * f));
  return {std::move(f), std::move(g)};
}

// A = (C + (δ/2) I)⁻¹ C by direct solve.
template <typename Derived>
MatrixX<typename Derived::Scalar> gain_matrix(const Eigen::MatrixBase<Derived>& c,
                                              typename Derived::Scalar delta) {
  using Mat = MatrixX<typename Derived::Scalar>;
  Mat shifted = c;
  shifted.diagonal().array() += delta / 2;
  Eigen::LLT<Mat> llt(symmetrized(shifted));
  return symmetrized(llt.solve(Mat(c)));
}

template <typename Scalar>
MatrixX<Scalar> gain_matrix(const SpdMatrixT<Scalar>& c, Scalar delta) {
  return gain_matrix(c.matrix(), delta);
}

// Same quantity from the eigenbasis: U diag(2λ/(2λ+δ)) Uᵀ.
template <typename Scalar>
MatrixX<Scalar> gain_matrix(const SpectralCacheT<Scalar>& cache, Scalar delta) {
  return cache.apply([delta](Scalar l) { return Scalar(2) * l / (Scalar(2) * l + delta); });
}

// Marginal covariance of one non-reference particle for the Gaussian-prior proposals:
// aux noise (δ/2)I pushed through A plus the conditional noise (δ/2)A.
template <typename Derived>
MatrixX<typename Derived::Scalar> marginal_proposal_cov(const Eigen::MatrixBase<Derived>& a,
                                                        typename Derived::Scalar delta) {
  using Mat = MatrixX<typename Derived::Scalar>;
  return symmetrized(Mat((delta / 2) * (a * a + a)));
}

template <typename DX, typename DM, typename Scalar>
Scalar mvn_logpdf(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DM>& mean,
                  const SpdMatrixT<Scalar>& cov) {
  const auto d = static_cast<Scalar>(cov.dim());
  return Scalar(-0.5) * (cov.quad_form(x - mean) + cov.log_det() +
                         d * std::log(Scalar(2) * std::numbers::pi_v<Scalar>));
}

template <typename DM, typename Scalar>
VectorX<Scalar> mvn_sample(const Eigen::MatrixBase<DM>& mean, const SpdMatrixT<Scalar>& cov, Rng& rng) {
  VectorX<Scalar> z(cov.dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = static_cast<Scalar>(rng.normal());
  return mean + cov.colour(z);
}

// log N(x; mean, s I) without building a matrix.
inline double isotropic_logpdf(const VecCRef& x, const VecCRef& mean, double variance) {
  const double d = static_cast<double>(x.size());
  return -0.5 * ((x - mean).squaredNorm() / variance + d * std::log(2.0 * std::numbers::pi * variance));
}

}  // namespace pmala
