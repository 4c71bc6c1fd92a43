#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>

namespace pmala {

// Thin wrapper over mt19937_64. All draws in the library go through one of these methods so
// the consumption order is the only thing that determines a transcript.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent stream for (seed, id). Used to give every chain its own generator.
  static Rng stream(std::uint64_t seed, std::uint64_t id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32),
                      0x9e3779b9u};
    Rng r;
    r.engine_.seed(seq);
    return r;
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  int uniform_index(int n) { return std::uniform_int_distribution<int>(0, n - 1)(engine_); }

  template <typename Derived>
  void fill_normal(Eigen::DenseBase<Derived>& out) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out.derived().data()[i] = normal();
  }
  Eigen::VectorXd normal_vector(Eigen::Index d) {
    Eigen::VectorXd z(d);
    fill_normal(z);
    return z;
  }

  // Inverse-CDF draw from probabilities that sum to one (up to rounding).
  int categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    // Rounding left u above the final partial sum; fall back to the last positive entry.
    for (std::size_t i = probs.size(); i-- > 0;)
      if (probs[i] > 0.0) return static_cast<int>(i);
    return static_cast<int>(probs.size()) - 1;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace pmala
