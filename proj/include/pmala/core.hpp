#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace pmala {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// One particle (or one time step) per row; rows are contiguous so row(n) maps onto a Vector.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecCRef = Eigen::Ref<const Vector>;
using VecRef = Eigen::Ref<Vector>;

// A path x_{1:T}, stored T x D. Time is 0-based in code: row 0 holds x_1.
using Trajectory = RowMatrix;

class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(const std::string& what, int t, int slot = -1)
      : std::runtime_error(what + " (t=" + std::to_string(t + 1) +
                           (slot >= 0 ? ", n=" + std::to_string(slot) : std::string()) + ")"),
        t_(t),
        slot_(slot) {}
  // 0-based time index of the failing evaluation.
  int time() const { return t_; }
  int slot() const { return slot_; }

 private:
  int t_;
  int slot_;
};

class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row t of a trajectory as a vector view.
inline auto state(const RowMatrix& path, int t) { return path.row(t).transpose(); }

}  // namespace pmala
