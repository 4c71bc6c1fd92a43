#include "pmala/diag.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pmala {

namespace {

double mean_of(const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0) / x.size(); }

// Autocovariance at `lag` with divisor n.
double autocov(const std::vector<double>& x, double mean, int lag) {
  const std::size_t n = x.size();
  double s = 0.0;
  for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - mean) * (x[i + lag] - mean);
  return s / static_cast<double>(n);
}

std::vector<std::vector<double>> split(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw ConfigurationError("ESS needs at least two chains");
  const std::size_t k = chains[0].size();
  for (const auto& c : chains)
    if (c.size() != k) throw ConfigurationError("ESS chains must have equal length");
  if (k < 8) throw ConfigurationError("ESS needs at least 8 draws per chain");
  const std::size_t half = k / 2;
  std::vector<std::vector<double>> out;
  out.reserve(2 * chains.size());
  for (const auto& c : chains) {
    out.emplace_back(c.begin(), c.begin() + half);
    out.emplace_back(c.end() - half, c.end());
  }
  return out;
}

}  // namespace

EssResult ess_multichain(const std::vector<std::vector<double>>& chains) {
  const std::vector<std::vector<double>> sc = split(chains);
  const std::size_t m = sc.size();
  const std::size_t n = sc[0].size();
  const double total = static_cast<double>(chains.size() * chains[0].size());

  std::vector<double> means(m), vars(m);
  for (std::size_t j = 0; j < m; ++j) {
    means[j] = mean_of(sc[j]);
    vars[j] = autocov(sc[j], means[j], 0) * n / (n - 1.0);
  }
  const double w = mean_of(vars);
  const double grand = mean_of(means);
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= static_cast<double>(n) / (m - 1.0);
  const double var_plus = (n - 1.0) / n * w + b / n;
  if (!(var_plus > 0.0) || !std::isfinite(var_plus)) return {total, true};

  auto rho = [&](int lag) {
    double acov = 0.0;
    for (std::size_t j = 0; j < m; ++j) acov += autocov(sc[j], means[j], lag);
    acov /= static_cast<double>(m);
    return 1.0 - (w - acov) / var_plus;
  };

  // Geyer: pair sums P_k = ρ_{2k} + ρ_{2k+1}, stop at the first negative pair, force monotone.
  double sum = 0.0;
  double last_pair = std::numeric_limits<double>::infinity();
  for (int k = 0; 2 * k + 1 < static_cast<int>(n); ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, last_pair);
    last_pair = pair;
    sum += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / std::log10(total));
  return {static_cast<double>(m * n) / tau, false};
}

EssResult ess_rank_normalized(const std::vector<std::vector<double>>& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  std::size_t total = 0;
  for (const auto& c : chains) total += c.size();
  pooled.reserve(total);
  for (const auto& c : chains)
    for (double v : c) pooled.emplace_back(v, pooled.size());
  if (pooled.empty()) throw ConfigurationError("ESS needs draws");
  std::sort(pooled.begin(), pooled.end());
  if (pooled.front().first == pooled.back().first) return {static_cast<double>(total), true};

  // Average ranks over ties (1-based).
  std::vector<double> ranks(total);
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j + 1 < total && pooled[j + 1].first == pooled[i].first) ++j;
    const double r = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t q = i; q <= j; ++q) ranks[pooled[q].second] = r;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> std_normal;
  std::vector<std::vector<double>> z;
  z.reserve(chains.size());
  std::size_t idx = 0;
  for (const auto& c : chains) {
    std::vector<double> zc(c.size());
    for (double& v : zc) {
      const double p = (ranks[idx++] - 0.375) / (static_cast<double>(total) + 0.25);
      v = boost::math::quantile(std_normal, p);
    }
    z.push_back(std::move(zc));
  }
  return ess_multichain(z);
}

std::vector<double> autocorrelation(const std::vector<double>& series, int max_lag) {
  std::vector<double> out(std::max(max_lag, 0) + 1, 0.0);
  out[0] = 1.0;
  if (series.empty()) return out;
  const double mu = mean_of(series);
  const double c0 = autocov(series, mu, 0);
  if (!(c0 > 0.0)) return out;
  for (int lag = 1; lag <= max_lag && lag < static_cast<int>(series.size()); ++lag)
    out[lag] = autocov(series, mu, lag) / c0;
  return out;
}

std::vector<double> energy_trace(const FeynmanKacModel& model, const RowMatrix& samples) {
  std::vector<double> out(samples.rows());
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const Trajectory path = Eigen::Map<const RowMatrix>(samples.row(i).data(), model.horizon(), model.dim());
    out[i] = log_target(model, path);
  }
  return out;
}

std::vector<double> acceptance_by_time(const std::vector<std::uint8_t>& flags, int horizon) {
  std::vector<double> rate(horizon, 0.0);
  const std::size_t iters = flags.size() / horizon;
  if (iters == 0) return rate;
  for (std::size_t i = 0; i < iters; ++i)
    for (int t = 0; t < horizon; ++t) rate[t] += flags[i * horizon + t];
  for (double& r : rate) r /= static_cast<double>(iters);
  return rate;
}

Summary summarize(std::vector<double> values) {
  if (values.empty()) return {};
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const double med = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  return {values.front(), med, values.back()};
}

}  // namespace pmala
