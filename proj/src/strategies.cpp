#include "pmala/strategies.hpp"

#include "pmala/gauss.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

namespace pmala {

// ---------------------------------------------------------------------------------------------
// Weight factors

double log_h_mala(const VecCRef& x, const VecCRef& xbar, const VecCRef& phi, double delta, int n) {
  const double nn = n;
  return (2.0 * phi.dot(xbar - x) - nn / (nn + 1.0) * phi.squaredNorm()) / delta;
}

namespace {

Matrix spd_inverse(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(symmetrized(m));
  if (llt.info() != Eigen::Success) throw SingularityError(what);
  return symmetrized(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

}  // namespace

MgradFactor make_mgrad_factor(const Matrix& a, double delta, int n) {
  const Eigen::Index d = a.rows();
  MgradFactor f;
  f.n = n;
  f.g = spd_inverse(Matrix::Identity(d, d) + n * a, "I + N A is singular") * (2.0 / delta);
  f.g = symmetrized(f.g);
  f.quad = spd_inverse(a * (delta / 2), "gain matrix is singular") + f.g;
  f.a_g = a * f.g;
  return f;
}

double log_h_mgrad(const VecCRef& x, const VecCRef& v, const VecCRef& xbar, const VecCRef& vbar, const VecCRef& phi,
                   const MgradFactor& f) {
  const Vector y = x - v;
  const Vector z = x + phi;
  const Vector gz = f.g * z;
  return 0.5 * y.dot(f.quad * y) - 0.5 * f.n * z.dot(f.a_g * z) - y.dot(gz) +
         (f.n + 1) * (xbar - vbar).dot(f.g * (v + phi));
}

PcnlFactor make_pcnl_factor(const SpdMatrix& c, double delta, int n) {
  PcnlFactor f;
  f.n = n;
  f.beta = 2.0 / (2.0 + delta);
  f.g = c.inverse() * (f.beta / ((1.0 - f.beta) * (1.0 + n * f.beta)));
  return f;
}

double log_h_pcnl(const VecCRef& x, const VecCRef& v, const VecCRef& xbar, const VecCRef& vbar, const VecCRef& phi,
                  const PcnlFactor& f) {
  const Vector y = x - v;
  const Vector z = x + phi;
  const Vector gy = f.g * y;
  const Vector gz = f.g * z;
  return 0.5 * (1.0 / f.beta + f.n + 1) * y.dot(gy) - 0.5 * f.n * f.beta * z.dot(gz) - y.dot(gz) +
         (f.n + 1) * (xbar - vbar).dot(f.g * (v + phi));
}

GenericFactor make_generic_factor(const Matrix& h, const Matrix& d, const Matrix& e, int n) {
  GenericFactor f;
  f.n = n;
  f.h = h;
  f.d_inv = spd_inverse(d, "mutation covariance D is singular");
  const Matrix s = symmetrized(Matrix(h * e * h.transpose()));
  Eigen::FullPivLU<Matrix> lu(Matrix(d + n * s));
  if (!lu.isInvertible()) throw SingularityError("D + N H E H^T is singular");
  f.g = symmetrized(Matrix(lu.solve(Matrix(s * f.d_inv))));
  return f;
}

double log_h_generic(const VecCRef& x, const VecCRef& v, const VecCRef& xbar, const VecCRef& vbar, const VecCRef& phi,
                     const GenericFactor& f) {
  const Vector y = x - v;
  const Vector c = f.h * (x + phi);
  const Matrix k = f.d_inv - f.n * f.g;
  const Vector kc = k * c;
  return 0.5 * y.dot((f.d_inv + f.g) * y) - 0.5 * f.n * c.dot(kc) - y.dot(kc) -
         (f.n + 1) * (xbar - vbar).dot(f.g * y - kc);
}

// ---------------------------------------------------------------------------------------------

namespace {

std::shared_ptr<const SpdMatrix> isotropic_ptr(int dim, double variance) {
  return std::make_shared<const SpdMatrix>(SpdMatrix::isotropic(dim, variance));
}

class BootstrapStrategy final : public KernelStrategy {
 public:
  explicit BootstrapStrategy(ModelBundle bundle) : bundle_(std::move(bundle)) {
    if (!bundle_.model->has_decomposition())
      throw ConfigurationError("csmc requires a model with a sampleable mutation kernel M_t and potential G_t");
  }

  std::string name() const override { return "csmc"; }
  const FeynmanKacModel& model() const override { return *bundle_.model; }
  void prepare(const Trajectory&, const SweepConfig&) override {}

  Vector propose(int t, const VecCRef& prev, Rng& rng) const override {
    return bundle_.model->sample_m(t, prev, rng);
  }

  void log_weights(const ParticleLayer& layer, VecRef out) const override {
    const int t = layer.t;
    for (Eigen::Index n = 0; n < layer.x.rows(); ++n) {
      out(n) = t == 0 ? bundle_.model->log_g(0, no_state(), state(layer.x, n))
                      : bundle_.model->log_g(t, state(*layer.prev, n), state(layer.x, n));
    }
  }

  double log_transition(int t, const VecCRef&, const VecCRef& prev, const VecCRef& x) const override {
    return bundle_.model->log_q(t, prev, x);
  }

  std::optional<GaussianLaw> marginal_proposal(int t, const VecCRef&, const VecCRef&, const VecCRef&,
                                               const VecCRef& ancestor) const override {
    if (!bundle_.dynamics) return std::nullopt;
    return GaussianLaw{bundle_.dynamics->mean(t, ancestor), bundle_.dynamics->cov(t, ancestor).matrix()};
  }

 private:
  ModelBundle bundle_;
};

// Every gradient-informed strategy. A mutation family fixes (v, H, D, E) in
//   u_t ~ N(x_t + Φ_t, E_t),  x_t^n ~ N(v + H u_t, D),
// the drift target fixes which log-factor is differentiated, and `marginal` switches from the
// auxiliary weights to the H-factor weights.
class GradientStrategy final : public KernelStrategy {
 public:
  GradientStrategy(GradientStrategySpec spec, ModelBundle bundle, StrategyOptions options)
      : spec_(std::move(spec)), bundle_(std::move(bundle)), options_(options), m_(*bundle_.model) {
    validate();
    const int horizon = m_.horizon();
    steps_.resize(horizon);
    if (uses_cov() && dyn().has_constant_cov() && spec_.family == MutationFamily::faapf) {
      spectra_.reserve(horizon);
      for (int t = 0; t < horizon; ++t) spectra_.emplace_back(dyn().constant_cov(t));
    }
    if (uses_preconditioner() && options_.preconditioner == Preconditioner::truncated)
      truncated_ = truncated_prior_cov_sums(dyn(), options_.truncation);
  }

  std::string name() const override { return spec_.name; }
  const FeynmanKacModel& model() const override { return m_; }
  int markov_order() const override { return spec_.smoothing ? 2 : 1; }

  void prepare(const Trajectory&, const SweepConfig& config) override {
    const int horizon = m_.horizon();
    const bool n_changed = config.num_proposals != n_;
    n_ = config.num_proposals;
    kappa_ = spec_.gradients ? config.kappa : 0;
    delta_ = config.step_sizes;
    if (!constant_steps()) return;
    const Vector zero = Vector::Zero(m_.dim());
    for (int t = 0; t < horizon; ++t) {
      if (steps_[t].valid && steps_[t].delta == delta_[t] && !n_changed) continue;
      steps_[t] = build_step(t, zero);
    }
  }

  RowMatrix sample_aux(const Trajectory& ref, Rng& rng) const override {
    const int horizon = m_.horizon();
    const int dim = m_.dim();
    RowMatrix u(horizon, dim);
    Step scratch;
    for (int t = 0; t < horizon; ++t) {
      const Vector prev = t > 0 ? Vector(state(ref, t - 1)) : Vector();
      const Step& s = step_at(t, prev, scratch);
      Vector mean = state(ref, t);
      if (kappa_ != 0) {
        mean += phi(t, s, prev, state(ref, t));
        if (spec_.smoothing && t + 1 < horizon) mean += psi(t, s, state(ref, t), state(ref, t + 1));
      }
      u.row(t) = (mean + s.e->colour(rng.normal_vector(dim))).transpose();
    }
    return u;
  }

  void set_aux(const RowMatrix& aux) override {
    aux_ = aux;
    if (spec_.family != MutationFamily::twisted) return;
    twist_ = options_.twist == TwistAlgorithm::general
                 ? twisted_params_general(dyn(), delta_, aux_, spec_.twist_obs)
                 : twisted_params_invertible(dyn(), delta_, aux_, spec_.twist_obs);
  }

  Vector propose(int t, const VecCRef& prev, Rng& rng) const override {
    Step scratch;
    const Step& s = step_at(t, prev, scratch);
    const Vector z = rng.normal_vector(m_.dim());
    const SpdMatrix& noise = spec_.family == MutationFamily::twisted ? twist_.sigma[t] : *s.noise;
    return mutation_mean(t, s, prev) + noise.colour(z);
  }

  void log_weights(const ParticleLayer& layer, VecRef out) const override {
    const int t = layer.t;
    const int n1 = static_cast<int>(layer.x.rows());
    auto prev_of = [&](int n) -> VecCRef { return t > 0 ? VecCRef(state(*layer.prev, n)) : VecCRef(no_state()); };
    auto prev2_of = [&](int n) -> VecCRef { return t > 1 ? VecCRef(state(*layer.prev2, n)) : VecCRef(no_state()); };

    if (spec_.marginal) {
      const Step& s = steps_[t];
      RowMatrix v(n1, m_.dim()), ph(n1, m_.dim());
      for (int n = 0; n < n1; ++n) {
        const VecCRef p = prev_of(n);
        v.row(n) = prior_pull(t, s, p).transpose();
        ph.row(n) = (kappa_ != 0 ? phi(t, s, p, state(layer.x, n)) : Vector::Zero(m_.dim())).transpose();
      }
      const Vector xbar = layer.x.colwise().mean().transpose();
      const Vector vbar = v.colwise().mean().transpose();
      for (int n = 0; n < n1; ++n) {
        const auto x = state(layer.x, n);
        double h = 0.0;
        switch (spec_.family) {
          case MutationFamily::local:
            h = log_h_mala(x, xbar, state(ph, n), delta_[t], n_);
            break;
          case MutationFamily::faapf:
            h = log_h_mgrad(x, state(v, n), xbar, vbar, state(ph, n), s.mgrad);
            break;
          case MutationFamily::pcn:
            h = log_h_pcnl(x, state(v, n), xbar, vbar, state(ph, n), s.pcnl);
            break;
          case MutationFamily::twisted:
            throw ConfigurationError("twisted strategies have no marginal form");
        }
        out(n) = m_.log_q(t, prev_of(n), x) + h;
      }
      return;
    }

    Step scratch;
    for (int n = 0; n < n1; ++n) {
      const VecCRef p = prev_of(n);
      const auto x = state(layer.x, n);
      const double lq = m_.log_q(t, p, x);
      if (spec_.family == MutationFamily::local && kappa_ == 0) {
        out(n) = lq;
        continue;
      }
      const Step& s = step_at(t, p, scratch);
      double w = lq + aux_log_density(t, s, p, x) - mutation_logpdf(t, s, p, x);
      if (spec_.smoothing && t > 0) w += plus_correction(t, prev2_of(n), p, x);
      out(n) = w;
    }
  }

  double log_transition(int t, const VecCRef& prev2, const VecCRef& prev, const VecCRef& x) const override {
    const double lq = m_.log_q(t, prev, x);
    if (spec_.marginal || (spec_.family == MutationFamily::local && kappa_ == 0)) return lq;
    Step scratch;
    const Step& s = step_at(t, prev, scratch);
    double v = lq + aux_log_density(t, s, prev, x);
    if (spec_.smoothing && t > 0) v += plus_correction(t, prev2, prev, x);
    return v;
  }

  std::optional<GaussianLaw> marginal_proposal(int t, const VecCRef& ref_prev, const VecCRef& ref_x,
                                               const VecCRef& ref_next, const VecCRef& ancestor) const override {
    if (spec_.family == MutationFamily::twisted) return std::nullopt;
    Step scratch_ref, scratch_anc;
    const Step& sr = step_at(t, ref_prev, scratch_ref);
    Vector mean_u = ref_x;
    if (kappa_ != 0) {
      mean_u += phi(t, sr, ref_prev, ref_x);
      if (spec_.smoothing && t + 1 < m_.horizon()) mean_u += psi(t, sr, ref_x, ref_next);
    }
    const Step& sa = step_at(t, ancestor, scratch_anc);
    const Matrix& e = sr.e->matrix();
    GaussianLaw law;
    switch (spec_.family) {
      case MutationFamily::local:
        law.mean = mean_u;
        law.cov = sa.noise->matrix() + e;
        break;
      case MutationFamily::faapf:
        law.mean = prior_pull(t, sa, ancestor) + sa.a * mean_u;
        law.cov = sa.noise->matrix() + sa.a * e * sa.a.transpose();
        break;
      case MutationFamily::pcn:
        law.mean = prior_pull(t, sa, ancestor) + sa.beta * mean_u;
        law.cov = sa.noise->matrix() + sa.beta * sa.beta * e;
        break;
      case MutationFamily::twisted:
        return std::nullopt;
    }
    law.cov = symmetrized(law.cov);
    return law;
  }

 private:
  // Everything at time t that depends on δ_t, N and (for state-dependent C_t) on x_{t-1}.
  struct Step {
    bool valid = false;
    double delta = 0.0;
    double beta = 1.0;
    Matrix a;                                // faapf gain A_t
    std::shared_ptr<const SpdMatrix> c;      // C_t(x_{t-1})
    std::shared_ptr<const SpdMatrix> e;      // aux covariance E_t
    std::shared_ptr<const SpdMatrix> noise;  // covariance D of x given u; unused when twisted
    Matrix precond;                          // drift preconditioner; empty means identity
    MgradFactor mgrad;
    PcnlFactor pcnl;
  };

  const GaussianDynamics& dyn() const { return *bundle_.dynamics; }

  bool uses_cov() const { return spec_.family != MutationFamily::local; }
  bool uses_preconditioner() const {
    return spec_.family == MutationFamily::pcn ||
           (spec_.family == MutationFamily::twisted && spec_.twist_obs == ObsCovKind::prior_cov);
  }
  bool constant_steps() const { return !uses_cov() || dyn().has_constant_cov(); }

  void validate() const {
    const std::string who = spec_.name;
    if (uses_cov() && !bundle_.dynamics)
      throw ConfigurationError(who + " requires conditionally Gaussian dynamics M_t = N(m_t(x), C_t(x))");
    if (bundle_.dynamics && (bundle_.dynamics->dim() != m_.dim() || bundle_.dynamics->horizon() != m_.horizon()))
      throw ConfigurationError(who + ": dynamics and model shapes differ");
    if (spec_.drift == DriftTarget::log_g && !m_.has_decomposition())
      throw ConfigurationError(who + " requires a model decomposition Q_t = M_t G_t (it differentiates log G_t)");
    if (spec_.marginal && uses_cov() && !dyn().has_constant_cov())
      throw ConfigurationError(who + " requires a constant dynamics covariance (C_t(x_{t-1}) = C_t)");
    if (spec_.marginal && spec_.family == MutationFamily::twisted)
      throw ConfigurationError(who + ": twisted strategies have no marginal form");
    if (spec_.family == MutationFamily::twisted && !dyn().is_affine())
      throw ConfigurationError(who + " requires affine Gaussian dynamics (m_t(x) = F_t x + b_t, constant C_t)");
    if (uses_preconditioner() && options_.preconditioner == Preconditioner::truncated && !dyn().is_affine())
      throw ConfigurationError(who + ": the truncated preconditioner requires affine Gaussian dynamics");
  }

  Step build_step(int t, const VecCRef& prev) const {
    const int dim = m_.dim();
    const double delta = delta_[t];
    Step s;
    s.valid = true;
    s.delta = delta;
    switch (spec_.family) {
      case MutationFamily::local:
        s.e = isotropic_ptr(dim, delta / 2);
        s.noise = s.e;
        break;
      case MutationFamily::faapf: {
        s.c = dyn().cov_ptr(t, prev);
        s.a = spectra_.empty() ? gain_matrix(*s.c, delta) : gain_matrix(spectra_[t], delta);
        s.a = symmetrized(s.a);
        s.e = isotropic_ptr(dim, delta / 2);
        s.noise = std::make_shared<const SpdMatrix>(Matrix(s.a * (delta / 2)));
        if (spec_.marginal) s.mgrad = make_mgrad_factor(s.a, delta, n_);
        break;
      }
      case MutationFamily::pcn:
        s.c = dyn().cov_ptr(t, prev);
        s.beta = 2.0 / (2.0 + delta);
        s.e = std::make_shared<const SpdMatrix>(s.c->scaled(delta / 2));
        s.noise = std::make_shared<const SpdMatrix>(s.c->scaled(1.0 - s.beta));
        if (spec_.marginal) s.pcnl = make_pcnl_factor(*s.c, delta, n_);
        break;
      case MutationFamily::twisted:
        if (spec_.twist_obs == ObsCovKind::identity) {
          s.e = isotropic_ptr(dim, delta / 2);
        } else {
          s.c = dyn().cov_ptr(t, prev);
          s.e = std::make_shared<const SpdMatrix>(s.c->scaled(delta / 2));
        }
        break;
    }
    if (uses_preconditioner())
      s.precond = options_.preconditioner == Preconditioner::truncated ? truncated_[t] : s.c->matrix();
    return s;
  }

  const Step& step_at(int t, const VecCRef& prev, Step& scratch) const {
    if (constant_steps()) return steps_[t];
    scratch = build_step(t, prev);
    return scratch;
  }

  Vector scaled_drift(const Step& s, const Vector& grad) const {
    if (s.precond.size() == 0) return grad * (kappa_ * s.delta / 2);
    return s.precond * grad * (kappa_ * s.delta / 2);
  }

  // φ_t: drift from ∇_{x_t} of the filter factor at (x_{t-1}, x_t).
  Vector phi(int t, const Step& s, const VecCRef& prev, const VecCRef& x) const {
    if (kappa_ == 0) return Vector::Zero(m_.dim());
    const Vector g = spec_.drift == DriftTarget::log_q ? m_.grad_log_q(t, prev, x) : m_.grad_log_g(t, prev, x);
    return scaled_drift(s, g);
  }

  // ψ_t: drift from ∇_{x_t} of the next factor at (x_t, x_{t+1}); zero at the final step.
  Vector psi(int t, const Step& s, const VecCRef& x, const VecCRef& next) const {
    if (kappa_ == 0 || t + 1 >= m_.horizon()) return Vector::Zero(m_.dim());
    const Vector g = spec_.drift == DriftTarget::log_q ? m_.grad_log_q_prev(t + 1, x, next)
                                                       : m_.grad_log_g_prev(t + 1, x, next);
    return scaled_drift(s, g);
  }

  // v in x ~ N(v + H u, D).
  Vector prior_pull(int t, const Step& s, const VecCRef& prev) const {
    switch (spec_.family) {
      case MutationFamily::local:
        return Vector::Zero(m_.dim());
      case MutationFamily::faapf: {
        const Vector m = dyn().mean(t, prev);
        return m - s.a * m;
      }
      case MutationFamily::pcn:
        return (1.0 - s.beta) * dyn().mean(t, prev);
      case MutationFamily::twisted:
        break;
    }
    throw ConfigurationError("twisted strategies have no prior pull");
  }

  Vector mutation_mean(int t, const Step& s, const VecCRef& prev) const {
    const auto u = state(aux_, t);
    switch (spec_.family) {
      case MutationFamily::local:
        return u;
      case MutationFamily::faapf:
        return prior_pull(t, s, prev) + s.a * u;
      case MutationFamily::pcn:
        return prior_pull(t, s, prev) + s.beta * u;
      case MutationFamily::twisted:
        return t == 0 ? twist_.b[0] : Vector(twist_.f[t] * prev + twist_.b[t]);
    }
    return u;
  }

  double mutation_logpdf(int t, const Step& s, const VecCRef& prev, const VecCRef& x) const {
    const Vector mu = mutation_mean(t, s, prev);
    return mvn_logpdf(x, mu, spec_.family == MutationFamily::twisted ? twist_.sigma[t] : *s.noise);
  }

  // log N(u_t; x_t + φ_t, E_t).
  double aux_log_density(int t, const Step& s, const VecCRef& prev, const VecCRef& x) const {
    const Vector mean = x + phi(t, s, prev, x);
    return mvn_logpdf(state(aux_, t), mean, *s.e);
  }

  // Smoothing correction at t: log N(u_{t-1}; x_{t-1} + φ + ψ, E) − log N(u_{t-1}; x_{t-1} + φ, E)
  // as a quadratic-form difference; E, φ and ψ belong to time t−1.
  double plus_correction(int t, const VecCRef& prev2, const VecCRef& prev, const VecCRef& x) const {
    if (kappa_ == 0) return 0.0;
    Step scratch;
    const Step& sp = step_at(t - 1, prev2, scratch);
    const Vector ps = psi(t - 1, sp, prev, x);
    const Vector r = Vector(state(aux_, t - 1)) - prev - phi(t - 1, sp, prev2, prev);
    const Vector e_ps = sp.e->solve(ps);
    return r.dot(e_ps) - 0.5 * ps.dot(e_ps);
  }

  GradientStrategySpec spec_;
  ModelBundle bundle_;
  StrategyOptions options_;
  const FeynmanKacModel& m_;

  int n_ = -1;
  int kappa_ = 1;
  std::vector<double> delta_;
  RowMatrix aux_;
  TwistedParams twist_;
  std::vector<Step> steps_;
  std::vector<SpectralCache> spectra_;
  std::vector<Matrix> truncated_;
};

}  // namespace

std::unique_ptr<KernelStrategy> csmc_bootstrap(const ModelBundle& bundle) {
  return std::make_unique<BootstrapStrategy>(bundle);
}

std::unique_ptr<KernelStrategy> gradient_strategy(const GradientStrategySpec& spec, const ModelBundle& bundle,
                                                  const StrategyOptions& options) {
  return std::make_unique<GradientStrategy>(spec, bundle, options);
}

namespace {

GradientStrategySpec spec_for(const std::string& name) {
  static const std::map<std::string, GradientStrategySpec> table = [] {
    using F = MutationFamily;
    using G = DriftTarget;
    std::map<std::string, GradientStrategySpec> m;
    auto add = [&](const std::string& n, F f, G g, bool marginal, bool smoothing, bool grads = true,
                   ObsCovKind obs = ObsCovKind::identity) {
      m[n] = GradientStrategySpec{n, f, g, marginal, smoothing, grads, obs};
    };
    add("p-rwm", F::local, G::log_q, false, false, false);
    add("p-amala", F::local, G::log_q, false, false);
    add("p-mala", F::local, G::log_q, true, false);
    add("p-amala+", F::local, G::log_q, false, true);
    add("p-agrad", F::faapf, G::log_g, false, false);
    add("p-mgrad", F::faapf, G::log_g, true, false);
    add("p-agrad+", F::faapf, G::log_g, false, true);
    add("tp-agrad", F::twisted, G::log_g, false, false);
    add("tp-agrad+", F::twisted, G::log_g, false, true);
    add("p-apcnl", F::pcn, G::log_g, false, false);
    add("p-pcnl", F::pcn, G::log_g, true, false);
    add("p-apcnl+", F::pcn, G::log_g, false, true);
    add("tp-apcnl", F::twisted, G::log_g, false, false, true, ObsCovKind::prior_cov);
    add("tp-apcnl+", F::twisted, G::log_g, false, true, true, ObsCovKind::prior_cov);
    return m;
  }();
  const auto it = table.find(name);
  if (it == table.end()) throw ConfigurationError("unknown strategy '" + name + "'");
  return it->second;
}

}  // namespace

std::unique_ptr<KernelStrategy> particle_rwm(const ModelBundle& b) { return gradient_strategy(spec_for("p-rwm"), b); }
std::unique_ptr<KernelStrategy> particle_amala(const ModelBundle& b) {
  return gradient_strategy(spec_for("p-amala"), b);
}
std::unique_ptr<KernelStrategy> particle_mala(const ModelBundle& b) { return gradient_strategy(spec_for("p-mala"), b); }
std::unique_ptr<KernelStrategy> particle_amala_plus(const ModelBundle& b) {
  return gradient_strategy(spec_for("p-amala+"), b);
}
std::unique_ptr<KernelStrategy> particle_agrad(const ModelBundle& b) {
  return gradient_strategy(spec_for("p-agrad"), b);
}
std::unique_ptr<KernelStrategy> particle_mgrad(const ModelBundle& b) {
  return gradient_strategy(spec_for("p-mgrad"), b);
}
std::unique_ptr<KernelStrategy> particle_agrad_plus(const ModelBundle& b) {
  return gradient_strategy(spec_for("p-agrad+"), b);
}
std::unique_ptr<KernelStrategy> twisted_particle_agrad(const ModelBundle& b, bool plus, const StrategyOptions& o) {
  return gradient_strategy(spec_for(plus ? "tp-agrad+" : "tp-agrad"), b, o);
}
std::unique_ptr<KernelStrategy> particle_apcnl(const ModelBundle& b, const StrategyOptions& o) {
  return gradient_strategy(spec_for("p-apcnl"), b, o);
}
std::unique_ptr<KernelStrategy> particle_pcnl(const ModelBundle& b, const StrategyOptions& o) {
  return gradient_strategy(spec_for("p-pcnl"), b, o);
}
std::unique_ptr<KernelStrategy> particle_apcnl_plus(const ModelBundle& b, const StrategyOptions& o) {
  return gradient_strategy(spec_for("p-apcnl+"), b, o);
}
std::unique_ptr<KernelStrategy> twisted_particle_apcnl(const ModelBundle& b, bool plus, const StrategyOptions& o) {
  return gradient_strategy(spec_for(plus ? "tp-apcnl+" : "tp-apcnl"), b, o);
}

// ---------------------------------------------------------------------------------------------
// Path space

namespace {

class PathSpaceModel final : public FeynmanKacModel {
 public:
  explicit PathSpaceModel(std::shared_ptr<const FeynmanKacModel> base)
      : FeynmanKacModel(1, base->horizon() * base->dim()), base_(std::move(base)) {}

  double log_q(int, const VecCRef&, const VecCRef& z) const override {
    return sum_over_time(z, [&](int t, const VecCRef& p, const VecCRef& x) { return base_->log_q(t, p, x); });
  }
  Vector grad_log_q(int, const VecCRef&, const VecCRef& z) const override {
    return stack_over_time(z, [&](int t, const VecCRef& p, const VecCRef& x, const VecCRef& nx) {
      return grad_smoothing(*base_, t, p, x, nx);
    });
  }
  Vector grad_log_q_prev(int, const VecCRef&, const VecCRef&) const override { return Vector::Zero(dim()); }

  bool has_decomposition() const override { return base_->has_decomposition(); }
  double log_m(int, const VecCRef&, const VecCRef& z) const override {
    return sum_over_time(z, [&](int t, const VecCRef& p, const VecCRef& x) { return base_->log_m(t, p, x); });
  }
  Vector sample_m(int, const VecCRef&, Rng& rng) const override {
    const int horizon = base_->horizon();
    Trajectory path(horizon, base_->dim());
    for (int t = 0; t < horizon; ++t) {
      const Vector prev = t > 0 ? Vector(state(path, t - 1)) : Vector();
      path.row(t) = base_->sample_m(t, prev, rng).transpose();
    }
    return Eigen::Map<const Vector>(path.data(), path.size());
  }
  double log_g(int, const VecCRef&, const VecCRef& z) const override {
    return sum_over_time(z, [&](int t, const VecCRef& p, const VecCRef& x) { return base_->log_g(t, p, x); });
  }
  Vector grad_log_g(int, const VecCRef&, const VecCRef& z) const override {
    return stack_over_time(z, [&](int t, const VecCRef& p, const VecCRef& x, const VecCRef& nx) {
      return grad_potential_smoothing(*base_, t, p, x, nx);
    });
  }
  Vector grad_log_g_prev(int, const VecCRef&, const VecCRef&) const override { return Vector::Zero(dim()); }

 private:
  Trajectory unflatten(const VecCRef& z) const {
    return Eigen::Map<const RowMatrix>(z.data(), base_->horizon(), base_->dim());
  }

  template <typename F>
  double sum_over_time(const VecCRef& z, F&& f) const {
    const Trajectory path = unflatten(z);
    double total = 0.0;
    for (int t = 0; t < base_->horizon(); ++t)
      total += t == 0 ? f(0, no_state(), state(path, 0)) : f(t, state(path, t - 1), state(path, t));
    return total;
  }

  template <typename F>
  Vector stack_over_time(const VecCRef& z, F&& f) const {
    const Trajectory path = unflatten(z);
    const int horizon = base_->horizon();
    const int d = base_->dim();
    Vector out(dim());
    for (int t = 0; t < horizon; ++t) {
      const Vector prev = t > 0 ? Vector(state(path, t - 1)) : Vector();
      const Vector next = t + 1 < horizon ? Vector(state(path, t + 1)) : Vector();
      out.segment(t * d, d) = f(t, prev, state(path, t), next);
    }
    return out;
  }

  std::shared_ptr<const FeynmanKacModel> base_;
};

}  // namespace

ModelBundle flatten_to_path_space(const ModelBundle& bundle) {
  ModelBundle out;
  out.model = std::make_shared<const PathSpaceModel>(bundle.model);
  if (!bundle.dynamics || !bundle.dynamics->is_affine()) return out;

  const GaussianDynamics& dyn = *bundle.dynamics;
  const int horizon = dyn.horizon();
  const int d = dyn.dim();
  const PriorMoments pm = prior_moments(dyn);
  Vector mean(horizon * d);
  Matrix cov(horizon * d, horizon * d);
  for (int t = 0; t < horizon; ++t) {
    mean.segment(t * d, d) = pm.mean[t];
    Matrix cross = pm.cov[t];  // Cov(x_s, x_t), s = t, t+1, ...
    cov.block(t * d, t * d, d, d) = pm.cov[t];
    for (int s = t + 1; s < horizon; ++s) {
      cross = dyn.F(s) * cross;
      cov.block(s * d, t * d, d, d) = cross;
      cov.block(t * d, s * d, d, d) = cross.transpose();
    }
  }
  out.dynamics = std::make_shared<const GaussianDynamics>(
      GaussianDynamics::affine({Matrix::Zero(horizon * d, horizon * d)}, {mean}, {symmetrized(cov)}));
  return out;
}

const std::vector<std::string>& particle_strategy_names() {
  static const std::vector<std::string> names = {"csmc",    "p-rwm",     "p-amala",  "p-mala",   "p-amala+",
                                                 "p-agrad", "p-mgrad",   "p-agrad+", "tp-agrad", "tp-agrad+",
                                                 "p-apcnl", "p-pcnl",    "p-apcnl+", "tp-apcnl", "tp-apcnl+"};
  return names;
}

const std::vector<std::string>& path_space_strategy_names() {
  static const std::vector<std::string> names = {"mala1", "amala1", "agrad1", "rwm1", "imh1"};
  return names;
}

bool is_path_space_name(const std::string& name) {
  const auto& names = path_space_strategy_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

namespace {

std::string path_space_inner(const std::string& name) {
  static const std::map<std::string, std::string> inner = {
      {"mala1", "p-mala"}, {"amala1", "p-amala"}, {"agrad1", "p-agrad"}, {"rwm1", "p-rwm"}, {"imh1", "csmc"}};
  return inner.at(name);
}

}  // namespace

std::unique_ptr<KernelStrategy> make_strategy(const std::string& name, const ModelBundle& bundle,
                                              const StrategyOptions& options) {
  if (name == "csmc") return csmc_bootstrap(bundle);
  if (is_path_space_name(name)) return make_strategy(path_space_inner(name), flatten_to_path_space(bundle), options);
  return gradient_strategy(spec_for(name), bundle, options);
}

// ---------------------------------------------------------------------------------------------

MarkovKernel::MarkovKernel(std::string name, std::unique_ptr<KernelStrategy> strategy, SweepConfig config,
                           int horizon, int dim, bool path_space)
    : name_(std::move(name)),
      strategy_(std::move(strategy)),
      config_(std::move(config)),
      horizon_(horizon),
      dim_(dim),
      path_space_(path_space),
      global_(path_space || name_.rfind("tp-", 0) == 0),
      calibrate_(name_ != "csmc" && name_ != "imh1") {
  if (config_.step_sizes.empty()) config_.step_sizes.assign(horizon_, 1e-2);
  set_step_sizes(config_.step_sizes);
}

void MarkovKernel::set_step_sizes(const std::vector<double>& delta) {
  if (static_cast<int>(delta.size()) != horizon_)
    throw ConfigurationError("need one step size per time step");
  delta_ = delta;
  if (global_) std::fill(delta_.begin(), delta_.end(), delta_[0]);
  if (path_space_) {
    config_.step_sizes.assign(1, delta_[0]);
  } else {
    config_.step_sizes = delta_;
  }
}

SweepResult MarkovKernel::step(const Trajectory& x, Rng& rng) {
  if (!path_space_) return run_sweep(*strategy_, config_, x, rng);
  const RowMatrix z = Eigen::Map<const RowMatrix>(x.data(), 1, x.size());
  SweepResult inner = run_sweep(*strategy_, config_, z, rng);
  SweepResult out;
  out.path = Eigen::Map<const RowMatrix>(inner.path.data(), horizon_, dim_);
  out.accepted.resize(horizon_);
  for (int t = 0; t < horizon_; ++t) out.accepted[t] = out.path.row(t) != x.row(t);
  out.energy = inner.energy;
  return out;
}

std::unique_ptr<MarkovKernel> make_kernel(const std::string& name, const ModelBundle& bundle, SweepConfig config,
                                          const StrategyOptions& options) {
  const int horizon = bundle.model->horizon();
  const int dim = bundle.model->dim();
  if (config.step_sizes.empty()) config.step_sizes.assign(horizon, 1e-2);
  return std::make_unique<MarkovKernel>(name, make_strategy(name, bundle, options), std::move(config), horizon, dim,
                                        is_path_space_name(name));
}

}  // namespace pmala
