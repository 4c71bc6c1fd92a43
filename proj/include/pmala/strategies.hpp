#pragma once

#include "pmala/core.hpp"
#include "pmala/csmc.hpp"
#include "pmala/model.hpp"
#include "pmala/twist.hpp"

#include <memory>
#include <string>
#include <vector>

namespace pmala {

// How the non-reference particles are mutated given u_t.
enum class MutationFamily {
  local,    // N(u_t, (δ/2) I): RWM / MALA family
  faapf,    // N(m + A(u − m), (δ/2) A): aGRAD / mGRAD family
  pcn,      // N(βu + (1−β)m, (1−β) C): PCNL family
  twisted,  // N(F'x_{t-1} + b', Σ') from the twisting recursions
};

enum class DriftTarget { log_q, log_g };
enum class Preconditioner { prior_cov, truncated };
enum class TwistAlgorithm { general, invertible };

struct StrategyOptions {
  Preconditioner preconditioner = Preconditioner::prior_cov;
  int truncation = 1;  // window L for the truncated preconditioner
  TwistAlgorithm twist = TwistAlgorithm::general;
};

struct GradientStrategySpec {
  std::string name;
  MutationFamily family = MutationFamily::local;
  DriftTarget drift = DriftTarget::log_q;
  bool marginal = false;   // weights use H instead of the auxiliary ratio
  bool smoothing = false;  // "+" variants: drift uses ∇ of the next factor too
  bool gradients = true;   // false for Particle-RWM
  ObsCovKind twist_obs = ObsCovKind::identity;
};

// Weight factors H_t for the marginal strategies. x̄ and v̄ are means over all N + 1 slots.
double log_h_mala(const VecCRef& x, const VecCRef& xbar, const VecCRef& phi, double delta, int n);
// gain A, G = (2/δ)(I + N A)⁻¹.
struct MgradFactor {
  Matrix quad;    // ((δ/2) A)⁻¹ + G
  Matrix a_g;     // A G
  Matrix g;
  int n = 1;
};
MgradFactor make_mgrad_factor(const Matrix& a, double delta, int n);
double log_h_mgrad(const VecCRef& x, const VecCRef& v, const VecCRef& xbar, const VecCRef& vbar, const VecCRef& phi,
                   const MgradFactor& f);
// G = β/((1−β)(1+Nβ)) C⁻¹.
struct PcnlFactor {
  double beta = 0.5;
  Matrix g;
  int n = 1;
};
PcnlFactor make_pcnl_factor(const SpdMatrix& c, double delta, int n);
double log_h_pcnl(const VecCRef& x, const VecCRef& v, const VecCRef& xbar, const VecCRef& vbar, const VecCRef& phi,
                  const PcnlFactor& f);

// The same factor for any linear-Gaussian mutation x = v + H u + N(0, D), u ~ N(x_ref + φ, E).
struct GenericFactor {
  Matrix h;
  Matrix d_inv;
  Matrix g;  // (D + N H E Hᵀ)⁻¹ H E Hᵀ D⁻¹
  int n = 1;
};
GenericFactor make_generic_factor(const Matrix& h, const Matrix& d, const Matrix& e, int n);
double log_h_generic(const VecCRef& x, const VecCRef& v, const VecCRef& xbar, const VecCRef& vbar, const VecCRef& phi,
                     const GenericFactor& f);

std::unique_ptr<KernelStrategy> csmc_bootstrap(const ModelBundle& bundle);
std::unique_ptr<KernelStrategy> gradient_strategy(const GradientStrategySpec& spec, const ModelBundle& bundle,
                                                  const StrategyOptions& options = {});

std::unique_ptr<KernelStrategy> particle_rwm(const ModelBundle& bundle);
std::unique_ptr<KernelStrategy> particle_amala(const ModelBundle& bundle);
std::unique_ptr<KernelStrategy> particle_mala(const ModelBundle& bundle);
std::unique_ptr<KernelStrategy> particle_amala_plus(const ModelBundle& bundle);
std::unique_ptr<KernelStrategy> particle_agrad(const ModelBundle& bundle);
std::unique_ptr<KernelStrategy> particle_mgrad(const ModelBundle& bundle);
std::unique_ptr<KernelStrategy> particle_agrad_plus(const ModelBundle& bundle);
std::unique_ptr<KernelStrategy> twisted_particle_agrad(const ModelBundle& bundle, bool plus,
                                                       const StrategyOptions& options = {});
std::unique_ptr<KernelStrategy> particle_apcnl(const ModelBundle& bundle, const StrategyOptions& options = {});
std::unique_ptr<KernelStrategy> particle_pcnl(const ModelBundle& bundle, const StrategyOptions& options = {});
std::unique_ptr<KernelStrategy> particle_apcnl_plus(const ModelBundle& bundle, const StrategyOptions& options = {});
std::unique_ptr<KernelStrategy> twisted_particle_apcnl(const ModelBundle& bundle, bool plus,
                                                       const StrategyOptions& options = {});

// Single-step model over the whole path (dimension D·T, row-major stacking of x_{1:T}); with
// affine dynamics the returned bundle also carries the joint Gaussian prior.
ModelBundle flatten_to_path_space(const ModelBundle& bundle);

// Names accepted by make_strategy / make_kernel.
const std::vector<std::string>& particle_strategy_names();
const std::vector<std::string>& path_space_strategy_names();
bool is_path_space_name(const std::string& name);

std::unique_ptr<KernelStrategy> make_strategy(const std::string& name, const ModelBundle& bundle,
                                              const StrategyOptions& options = {});

// A CSMC kernel on T x D paths, hiding the reshaping needed by the path-space baselines.
class MarkovKernel {
 public:
  MarkovKernel(std::string name, std::unique_ptr<KernelStrategy> strategy, SweepConfig config, int horizon, int dim,
               bool path_space);

  SweepResult step(const Trajectory& x, Rng& rng);

  const std::string& name() const { return name_; }
  int horizon() const { return horizon_; }
  // δ_t per outer time step. Path-space kernels and twisted kernels use only one value.
  const std::vector<double>& step_sizes() const { return delta_; }
  void set_step_sizes(const std::vector<double>& delta);
  bool global_step_size() const { return global_; }
  bool needs_calibration() const { return calibrate_; }
  const SweepConfig& config() const { return config_; }
  KernelStrategy& strategy() { return *strategy_; }

 private:
  std::string name_;
  std::unique_ptr<KernelStrategy> strategy_;
  SweepConfig config_;
  int horizon_;
  int dim_;
  bool path_space_;
  bool global_;
  bool calibrate_;
  std::vector<double> delta_;
};

// `config.step_sizes` has one entry per outer time step (or is empty, meaning 1e-2 everywhere).
std::unique_ptr<MarkovKernel> make_kernel(const std::string& name, const ModelBundle& bundle, SweepConfig config,
                                          const StrategyOptions& options = {});

}  // namespace pmala
