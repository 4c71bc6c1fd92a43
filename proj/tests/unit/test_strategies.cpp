#include "oracle.hpp"
#include "pmala/adapt.hpp"
#include "pmala/strategies.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace pmala;
using namespace pmala::oracle;

namespace {

Matrix random_spd(std::mt19937_64& gen, int d, double ridge = 0.5) {
  std::normal_distribution<double> z;
  Matrix a = Matrix::NullaryExpr(d, d, [&] { return z(gen); });
  return a * a.transpose() / d + ridge * Matrix::Identity(d, d);
}

Vector randn(std::mt19937_64& gen, int d) {
  std::normal_distribution<double> z;
  return Vector::NullaryExpr(d, [&] { return z(gen); });
}

RowMatrix obs(int horizon, int d, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z;
  return RowMatrix::NullaryExpr(horizon, d, [&] { return z(gen); });
}

Vector mean_of(const std::vector<Vector>& xs) {
  Vector s = Vector::Zero(xs[0].size());
  for (const auto& x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

struct HCase {
  std::vector<Vector> v, phi, x;
  int n, k;
};

HCase random_h_case(std::mt19937_64& gen, int d, int n_props) {
  HCase c;
  for (int m = 0; m <= n_props; ++m) {
    c.v.push_back(randn(gen, d));
    c.phi.push_back(randn(gen, d));
    c.x.push_back(randn(gen, d));
  }
  c.n = static_cast<int>(gen() % (n_props + 1));
  c.k = static_cast<int>(gen() % (n_props + 1));
  return c;
}

SweepConfig config_with(int n, int horizon, double delta) {
  SweepConfig c;
  c.num_proposals = n;
  c.step_sizes.assign(horizon, delta);
  return c;
}

// log w¹ − log w⁰ for a T = N = 1 system with x⁰ the reference and x¹ the proposal.
double strategy_log_alpha(KernelStrategy& s, double delta, const Vector& x0, const Vector& x1, const Vector& u) {
  const int d = static_cast<int>(x0.size());
  Trajectory ref(1, d);
  ref.row(0) = x0.transpose();
  s.prepare(ref, config_with(1, 1, delta));
  RowMatrix aux(1, d);
  aux.row(0) = u.transpose();
  s.set_aux(aux);
  RowMatrix layer_x(2, d);
  layer_x.row(0) = x0.transpose();
  layer_x.row(1) = x1.transpose();
  Vector lw(2);
  s.log_weights(ParticleLayer{0, layer_x, nullptr, nullptr}, lw);
  return lw(1) - lw(0);
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// H-factors against the dense marginal of the non-reference particles.

TEST(HFactor, MalaMatchesDenseMarginal) {
  std::mt19937_64 gen(1);
  for (int rep = 0; rep < 50; ++rep) {
    const int d = 1 + rep % 3, np = 1 + rep % 4;
    const double delta = 0.1 + 0.05 * rep;
    HCase c = random_h_case(gen, d, np);
    for (auto& v : c.v) v.setZero();
    const Matrix eye = Matrix::Identity(d, d);
    const Vector xbar = mean_of(c.x);
    const double got = log_h_mala(c.x[c.n], xbar, c.phi[c.n], delta, np) - log_h_mala(c.x[c.k], xbar, c.phi[c.k], delta, np);
    const double want = exact_marginal_proposal_logpdf(c.v, eye, delta / 2 * eye, delta / 2 * eye, c.phi, c.x, c.n) -
                        exact_marginal_proposal_logpdf(c.v, eye, delta / 2 * eye, delta / 2 * eye, c.phi, c.x, c.k);
    EXPECT_NEAR(got, want, 1e-8);
  }
}

TEST(HFactor, MgradMatchesDenseMarginal) {
  std::mt19937_64 gen(2);
  for (int rep = 0; rep < 50; ++rep) {
    const int d = 1 + rep % 3, np = 1 + rep % 4;
    const double delta = 0.1 + 0.05 * rep;
    const Matrix c = random_spd(gen, d);
    const Matrix a = (c + delta / 2 * Matrix::Identity(d, d)).inverse() * c;
    HCase hc = random_h_case(gen, d, np);
    for (auto& v : hc.v) v = (Matrix::Identity(d, d) - a) * v;  // v = (I − A) m
    const MgradFactor f = make_mgrad_factor(a, delta, np);
    const Vector xbar = mean_of(hc.x), vbar = mean_of(hc.v);
    auto h = [&](int i) { return log_h_mgrad(hc.x[i], hc.v[i], xbar, vbar, hc.phi[i], f); };
    const Matrix dm = delta / 2 * a, e = delta / 2 * Matrix::Identity(d, d);
    const double want = exact_marginal_proposal_logpdf(hc.v, a, dm, e, hc.phi, hc.x, hc.n) -
                        exact_marginal_proposal_logpdf(hc.v, a, dm, e, hc.phi, hc.x, hc.k);
    EXPECT_NEAR(h(hc.n) - h(hc.k), want, 1e-8);
  }
}

TEST(HFactor, PcnlMatchesDenseMarginal) {
  std::mt19937_64 gen(3);
  for (int rep = 0; rep < 50; ++rep) {
    const int d = 1 + rep % 3, np = 1 + rep % 4;
    const double delta = 0.1 + 0.05 * rep, beta = 2.0 / (2.0 + delta);
    const Matrix c = random_spd(gen, d);
    HCase hc = random_h_case(gen, d, np);
    for (auto& v : hc.v) v *= 1 - beta;  // v = (1 − β) m
    const PcnlFactor f = make_pcnl_factor(SpdMatrix(c), delta, np);
    const Vector xbar = mean_of(hc.x), vbar = mean_of(hc.v);
    auto h = [&](int i) { return log_h_pcnl(hc.x[i], hc.v[i], xbar, vbar, hc.phi[i], f); };
    const Matrix hm = beta * Matrix::Identity(d, d);
    const double want = exact_marginal_proposal_logpdf(hc.v, hm, (1 - beta) * c, delta / 2 * c, hc.phi, hc.x, hc.n) -
                        exact_marginal_proposal_logpdf(hc.v, hm, (1 - beta) * c, delta / 2 * c, hc.phi, hc.x, hc.k);
    EXPECT_NEAR(h(hc.n) - h(hc.k), want, 1e-8);
  }
}

TEST(HFactor, GenericMatchesDenseMarginal) {
  std::mt19937_64 gen(4);
  for (int rep = 0; rep < 50; ++rep) {
    const int d = 1 + rep % 3, np = 1 + rep % 4;
    const Matrix h = random_spd(gen, d), dm = random_spd(gen, d), e = random_spd(gen, d);
    const HCase hc = random_h_case(gen, d, np);
    const GenericFactor f = make_generic_factor(h, dm, e, np);
    const Vector xbar = mean_of(hc.x), vbar = mean_of(hc.v);
    auto lh = [&](int i) { return log_h_generic(hc.x[i], hc.v[i], xbar, vbar, hc.phi[i], f); };
    const double want = exact_marginal_proposal_logpdf(hc.v, h, dm, e, hc.phi, hc.x, hc.n) -
                        exact_marginal_proposal_logpdf(hc.v, h, dm, e, hc.phi, hc.x, hc.k);
    EXPECT_NEAR(lh(hc.n) - lh(hc.k), want, 1e-8);
  }
}

TEST(HFactor, AuxiliaryPosteriorIsGaussianInU) {
  // The auxiliary weights integrate the same u-posterior the marginal weights integrate out:
  // N(u; x^k+φ^k, E) ∏ N(x^m; v^m + H u, D) / p(u | x) is free of u.
  std::mt19937_64 gen(5);
  const int d = 2, np = 3;
  const Matrix h = random_spd(gen, d), dm = random_spd(gen, d), e = random_spd(gen, d);
  const HCase hc = random_h_case(gen, d, np);
  const DenseGaussian post = aux_posterior(hc.v, h, dm, e, hc.phi, hc.x, hc.k);
  auto joint = [&](const Vector& u) {
    double s = dense_logpdf(u, hc.x[hc.k] + hc.phi[hc.k], e);
    for (int m = 0; m <= np; ++m)
      if (m != hc.k) s += dense_logpdf(hc.x[m], hc.v[m] + h * u, dm);
    return s - post.logpdf(u);
  };
  const double base = joint(randn(gen, d));
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(joint(randn(gen, d)), base, 1e-9);
  EXPECT_NEAR(base, exact_marginal_proposal_logpdf(hc.v, h, dm, e, hc.phi, hc.x, hc.k), 1e-9);
}

// ---------------------------------------------------------------------------------------------
// T = N = 1 acceptance ratios.

class ClosedForm : public ::testing::Test {
 protected:
  void SetUp() override {
    bundle_ = make_stochvol(2, 1, 0.8, 0.3, 0.7, obs(1, 2, 6));
    c_ = bundle_.dynamics->constant_cov(0).matrix();
    m_ = Vector::Zero(2);
  }

  LogDensity log_pi() const {
    return [this](const Vector& x) { return bundle_.model->log_q(0, no_state(), x); };
  }
  LogDensity log_g() const {
    return [this](const Vector& x) { return bundle_.model->log_g(0, no_state(), x); };
  }
  Gradient grad_pi() const {
    return [this](const Vector& x) { return bundle_.model->grad_log_q(0, no_state(), x); };
  }
  Gradient grad_g() const {
    return [this](const Vector& x) { return bundle_.model->grad_log_g(0, no_state(), x); };
  }

  template <typename Oracle>
  void run(const std::string& name, Oracle&& oracle) {
    auto s = make_strategy(name, bundle_);
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> ud(0.05, 2.0);
    for (int rep = 0; rep < 100; ++rep) {
      const double delta = ud(gen);
      const Vector x0 = randn(gen, 2), x1 = randn(gen, 2), u = randn(gen, 2);
      const double got = strategy_log_alpha(*s, delta, x0, x1, u);
      EXPECT_NEAR(got, oracle(delta, x0, x1, u), 1e-10) << name << " rep " << rep;
    }
  }

  ModelBundle bundle_;
  Matrix c_;
  Vector m_;
};

TEST_F(ClosedForm, Imh) {
  run("csmc", [&](double, const Vector& a, const Vector& b, const Vector&) { return log_alpha_imh(log_g(), a, b); });
}
TEST_F(ClosedForm, Rwm) {
  run("p-rwm", [&](double, const Vector& a, const Vector& b, const Vector&) { return log_alpha_rwm(log_pi(), a, b); });
}
TEST_F(ClosedForm, AMala) {
  run("p-amala", [&](double d, const Vector& a, const Vector& b, const Vector& u) {
    return log_alpha_amala(log_pi(), grad_pi(), d, a, b, u);
  });
}
TEST_F(ClosedForm, Mala) {
  run("p-mala", [&](double d, const Vector& a, const Vector& b, const Vector&) {
    return log_alpha_mala(log_pi(), grad_pi(), d, a, b);
  });
}
TEST_F(ClosedForm, AGrad) {
  run("p-agrad", [&](double d, const Vector& a, const Vector& b, const Vector& u) {
    return log_alpha_agrad(log_pi(), grad_g(), m_, c_, d, a, b, u);
  });
}
TEST_F(ClosedForm, MGrad) {
  run("p-mgrad", [&](double d, const Vector& a, const Vector& b, const Vector&) {
    return log_alpha_mgrad(log_pi(), grad_g(), m_, c_, d, a, b);
  });
}
TEST_F(ClosedForm, APcnl) {
  run("p-apcnl", [&](double d, const Vector& a, const Vector& b, const Vector& u) {
    return log_alpha_apcnl(log_pi(), grad_g(), m_, c_, d, a, b, u);
  });
}
TEST_F(ClosedForm, Pcnl) {
  run("p-pcnl", [&](double d, const Vector& a, const Vector& b, const Vector&) {
    return log_alpha_pcnl(log_pi(), grad_g(), m_, c_, d, a, b);
  });
}

// ---------------------------------------------------------------------------------------------
// Proposal laws and limits.

namespace {

// Per-slot proposal law at t = 1 with random reference states and ancestor.
GaussianLaw law_at(const std::string& name, const ModelBundle& b, double delta, std::uint64_t seed) {
  auto s = make_strategy(name, b);
  const int horizon = b.model->horizon(), d = b.model->dim();
  std::mt19937_64 gen(seed);
  Trajectory ref(horizon, d);
  for (int t = 0; t < horizon; ++t) ref.row(t) = randn(gen, d).transpose();
  s->prepare(ref, config_with(3, horizon, delta));
  const Vector anc = randn(gen, d) + Vector::Constant(d, 2.0);
  return *s->marginal_proposal(1, state(ref, 0), state(ref, 1), state(ref, 2), anc);
}

double rel_err(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST(Interpolation, MgradApproachesCsmcForTinyPriorScale) {
  const ModelBundle b = make_lgssm(3, 3, 1e-6, obs(3, 3, 8));
  const GaussianLaw mg = law_at("p-mgrad", b, 0.5, 9), cs = law_at("csmc", b, 0.5, 9);
  EXPECT_LT(rel_err(mg.mean, cs.mean), 1e-4);
  EXPECT_LT(rel_err(mg.cov, cs.cov), 1e-4);
}

TEST(Interpolation, MgradApproachesMalaForHugePriorScale) {
  const ModelBundle b = make_lgssm(3, 3, 1e6, obs(3, 3, 10));
  const GaussianLaw mg = law_at("p-mgrad", b, 0.5, 11), ma = law_at("p-mala", b, 0.5, 11);
  EXPECT_LT(rel_err(mg.mean, ma.mean), 1e-4);
  EXPECT_LT(rel_err(mg.cov, ma.cov), 1e-4);
}

TEST(Interpolation, MgradMarginalCovarianceIsB) {
  const ModelBundle b = make_stochvol(3, 3, 0.9, 0.25, 1.0, obs(3, 3, 12));
  const double delta = 0.7;
  const GaussianLaw mg = law_at("p-mgrad", b, delta, 13);
  const Matrix a = gain_matrix(b.dynamics->constant_cov(1).matrix(), delta);
  EXPECT_LT((mg.cov - marginal_proposal_cov(a, delta)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Strategies, RwmIsAMalaWithoutDrift) {
  const ModelBundle b = make_stochvol(2, 4, 0.9, 0.25, 1.0, obs(4, 2, 14));
  auto rwm = make_strategy("p-rwm", b), amala = make_strategy("p-amala", b);
  SweepConfig off = config_with(3, 4, 0.4);
  off.kappa = 0;
  Rng r1(15), r2(15);
  Trajectory x1 = Trajectory::Zero(4, 2), x2 = x1;
  for (int i = 0; i < 50; ++i) {
    x1 = run_sweep(*rwm, config_with(3, 4, 0.4), x1, r1).path;
    x2 = run_sweep(*amala, off, x2, r2).path;
  }
  EXPECT_EQ(x1, x2);
}

TEST(Strategies, RequirementErrorsNameTheRequirement) {
  const ModelBundle sv = make_stochvol(2, 3, 0.9, 0.25, 1.0, obs(3, 2, 16));
  auto state_dependent = std::make_shared<const GaussianDynamics>(
      3, 2, [](int, const VecCRef& p) { return p.size() ? Vector(0.5 * p) : Vector(Vector::Zero(2)); },
      [](int, const VecCRef& p) {
        const double s = p.size() ? 1.0 + 0.1 * p.squaredNorm() : 1.0;
        return Matrix(Matrix::Identity(2, 2) * s);
      },
      false);
  const ModelBundle b{sv.model, state_dependent};
  try {
    make_strategy("p-mgrad", b);
    FAIL();
  } catch (const ConfigurationError& e) {
    EXPECT_NE(std::string(e.what()).find("constant dynamics covariance"), std::string::npos);
  }
  EXPECT_THROW(make_strategy("tp-agrad", b), ConfigurationError);
  EXPECT_THROW(make_strategy("p-agrad", ModelBundle{sv.model, nullptr}), ConfigurationError);
  EXPECT_THROW(make_strategy("p-magic", sv), ConfigurationError);
  // State-dependent covariance is fine for the auxiliary gradient variants.
  EXPECT_NO_THROW(make_strategy("p-agrad", b));
  EXPECT_NO_THROW(make_strategy("p-apcnl", b));
}

TEST(Strategies, RegistryNames) {
  EXPECT_EQ(particle_strategy_names().size(), 15u);
  const ModelBundle b = make_stochvol(2, 3, 0.9, 0.25, 1.0, obs(3, 2, 17));
  for (const auto& n : particle_strategy_names()) EXPECT_EQ(make_strategy(n, b)->name(), n);
  for (const auto& n : path_space_strategy_names()) EXPECT_NO_THROW(make_kernel(n, b, {}));
}

TEST(PathSpace, FlattenedModelMatchesOriginal) {
  const ModelBundle b = make_stochvol(2, 3, 0.9, 0.25, 1.0, obs(3, 2, 18));
  const ModelBundle f = flatten_to_path_space(b);
  ASSERT_EQ(f.model->horizon(), 1);
  ASSERT_EQ(f.model->dim(), 6);
  const Trajectory x = obs(3, 2, 19);
  const Vector z = Eigen::Map<const Vector>(x.data(), 6);
  EXPECT_NEAR(f.model->log_q(0, no_state(), z), log_target(*b.model, x), 1e-12);
  const Vector fd = central_difference([&](const VecCRef& v) { return f.model->log_q(0, no_state(), v); }, z);
  EXPECT_LT((f.model->grad_log_q(0, no_state(), z) - fd).norm(), 1e-5 * fd.norm());
  const Vector fdg = central_difference([&](const VecCRef& v) { return f.model->log_g(0, no_state(), v); }, z);
  EXPECT_LT((f.model->grad_log_g(0, no_state(), z) - fdg).norm(), 1e-5 * fdg.norm());
  // Joint prior equals the dense (I − F)⁻¹ construction.
  LinearGaussianSystem sys;
  for (int t = 0; t < 3; ++t) {
    sys.f.push_back(b.dynamics->F(t));
    sys.b.push_back(b.dynamics->b(t));
    sys.c.push_back(b.dynamics->constant_cov(t).matrix());
  }
  const DenseGaussian prior = dense_prior(sys);
  EXPECT_LT((f.dynamics->constant_cov(0).matrix() - prior.cov).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(f.model->log_m(0, no_state(), z), prior.logpdf(z), 1e-10);
}

// ---------------------------------------------------------------------------------------------
// Short invariance check on a tiny system for every kernel; the long version lives in the
// acceptance suite.

namespace {

void expect_short_chain_exact(const std::string& name) {
  const RowMatrix y = obs(2, 1, 20);
  const ModelBundle b = make_lgssm(1, 2, 1.0, y);
  SweepConfig cfg = config_with(3, 2, 0.8);
  auto kernel = make_kernel(name, b, cfg);
  Rng rng(21);
  const int iters = 40000, batches = 40;
  ChainTrace tr = run_chain(*kernel, Trajectory::Zero(2, 1), iters, rng);
  const Marginals ks = kalman_smoother(lgssm_system(1, 2, 1.0, y));
  for (int t = 0; t < 2; ++t) {
    std::vector<double> bm(batches, 0.0);
    for (int i = 0; i < iters; ++i) bm[i / (iters / batches)] += tr.samples(i, t) / (iters / batches);
    double mu = 0.0, var = 0.0;
    for (double v : bm) mu += v / batches;
    for (double v : bm) var += (v - mu) * (v - mu) / (batches - 1);
    EXPECT_NEAR(mu, ks.mean[t](0), 5 * std::sqrt(var / batches) + 1e-3) << name << " t=" << t;
  }
}

}  // namespace

class ShortChain : public ::testing::TestWithParam<std::string> {};

TEST_P(ShortChain, MeansMatchKalmanSmoother) { expect_short_chain_exact(GetParam()); }

INSTANTIATE_TEST_SUITE_P(AllKernels, ShortChain,
                         ::testing::Values("csmc", "p-rwm", "p-amala", "p-mala", "p-amala+", "p-agrad", "p-mgrad",
                                           "p-agrad+", "tp-agrad", "tp-agrad+", "p-apcnl", "p-pcnl", "p-apcnl+",
                                           "tp-apcnl", "tp-apcnl+", "mala1", "amala1", "agrad1", "rwm1", "imh1"),
                         [](const auto& info) {
                           std::string s = info.param;
                           for (char& ch : s)
                             if (ch == '-') ch = '_';
                             else if (ch == '+') ch = 'P';
                           return s;
                         });
