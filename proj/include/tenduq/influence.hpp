#ifndef TENDUQ_INFLUENCE_HPP
#define TENDUQ_INFLUENCE_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tenduq/calibrate.hpp"
#include "tenduq/core.hpp"
#include "tenduq/parallel.hpp"

namespace tenduq {

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline void check_subset(const std::vector<std::size_t>& subset, std::size_t n) {
  if (subset.empty()) throw ConfigError("influence subset is empty");
  std::vector<std::size_t> s = subset;
  std::sort(s.begin(), s.end());
  if (std::adjacent_find(s.begin(), s.end()) != s.end()) throw ConfigError("influence subset has repeated indices");
  if (s.back() >= n) throw ConfigError("influence subset index " + std::to_string(s.back()) + " out of range");
  if (s.size() == n) throw ConfigError("influence subset covers every observation");
}

}  // namespace detail

/// Per-observation log-likelihood terms at every sample row (N x n).
inline Matrix pointwise_matrix(const Matrix& samples, const ObservationSet& obs, const LikelihoodSpec& spec) {
  if (static_cast<std::size_t>(samples.cols()) != spec.dim())
    throw std::invalid_argument("sample width does not match the likelihood dimension");
  Matrix out(samples.rows(), static_cast<Eigen::Index>(obs.size()));
  parallel_for(static_cast<std::size_t>(samples.rows()), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Vector th = samples.row(r).transpose();
    out.row(r) = pointwise_log_likelihood(spec, {th.data(), static_cast<std::size_t>(th.size())}, obs).transpose();
  });
  return out;
}

/// l_i = log pi_S(theta_i), the log-likelihood of Y_S alone under independent noise.
inline Vector subset_log_ratio(const Matrix& pointwise, const std::vector<std::size_t>& subset) {
  detail::check_subset(subset, static_cast<std::size_t>(pointwise.cols()));
  Vector ell = Vector::Zero(pointwise.rows());
  for (auto j : subset) ell += pointwise.col(static_cast<Eigen::Index>(j));
  return ell;
}

inline Vector log_ratio_weights(const Matrix& samples, const ObservationSet& obs, const std::vector<std::size_t>& subset,
                                const LikelihoodSpec& spec) {
  detail::check_subset(subset, obs.size());
  return subset_log_ratio(pointwise_matrix(samples, obs, spec), subset);
}

/// Reverse-KL case-deletion influence: [-log N + logsumexp(-l)] + mean(l).
inline double influence_global(std::span<const double> ell) {
  if (ell.size() < 2) throw std::invalid_argument("influence needs at least 2 samples");
  std::vector<double> neg(ell.size());
  for (std::size_t i = 0; i < ell.size(); ++i) {
    if (!std::isfinite(ell[i])) throw NumericalError("non-finite log ratio at sample " + std::to_string(i));
    neg[i] = -ell[i];
  }
  const double shift = *std::max_element(neg.begin(), neg.end());
  // shift removed before summing so large offsets cancel exactly
  double s = 0.0, m = 0.0;
  for (double v : neg) {
    s += std::exp(v - shift);
    m += -(v - shift);
  }
  m /= static_cast<double>(ell.size());
  return -std::log(static_cast<double>(ell.size())) + std::log(s) + m;
}

inline double influence_global(const Vector& ell) {
  return influence_global(std::span<const double>(ell.data(), static_cast<std::size_t>(ell.size())));
}

/// Scott bandwidth for one coordinate.
inline double scott_bandwidth(const Vector& theta_j) {
  const double n = static_cast<double>(theta_j.size());
  const double mean = theta_j.mean();
  const double sd = std::sqrt((theta_j.array() - mean).square().sum() / n);
  return sd * std::pow(n, -0.2);
}

/// KDE-marginal influence for several subsets at once (columns of `ells`), sharing the
/// kernel evaluations. The smoothed quantity is the inverse ratio 1/pi_S.
inline Vector influence_kde_columns(const Vector& theta_j, const Matrix& ells, double bandwidth_factor = 1.0) {
  const auto N = theta_j.size();
  if (N < 10) throw std::invalid_argument("KDE influence needs at least 10 samples");
  if (ells.rows() != N) throw std::invalid_argument("sample and log-ratio counts differ");
  const double h = scott_bandwidth(theta_j) * bandwidth_factor;
  if (!(h > 0.0) || !std::isfinite(h)) throw NumericalError("degenerate KDE bandwidth (zero spread in parameter)");
  const auto G = ells.cols();
  for (Eigen::Index g = 0; g < G; ++g)
    if (!ells.col(g).allFinite()) throw NumericalError("non-finite log ratio");

  Vector M(G);
  Matrix w(N, G);
  for (Eigen::Index g = 0; g < G; ++g) {
    M[g] = (-ells.col(g)).maxCoeff();
    w.col(g) = (-ells.col(g).array() - M[g]).exp().matrix();
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return theta_j[a] < theta_j[b]; });
  Vector sorted(N);
  Matrix ws(N, G);
  for (Eigen::Index k = 0; k < N; ++k) {
    sorted[k] = theta_j[order[static_cast<std::size_t>(k)]];
    ws.row(k) = w.row(order[static_cast<std::size_t>(k)]);
  }

  // s(k, g) = log of the smoothed inverse ratio at sample k
  Matrix s(N, G);
  const double reach = 8.0 * h;
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t kk) {
    const auto k = static_cast<Eigen::Index>(kk);
    const double x = sorted[k];
    const auto lo = std::lower_bound(sorted.data(), sorted.data() + N, x - reach) - sorted.data();
    const auto hi = std::upper_bound(sorted.data(), sorted.data() + N, x + reach) - sorted.data();
    const auto len = hi - lo;
    Vector kern(len);
    for (Eigen::Index i = 0; i < len; ++i) {
      const double u = (sorted[lo + i] - x) / h;
      kern[i] = std::exp(-0.5 * u * u);
    }
    const double ksum = kern.sum();
    const Eigen::RowVectorXd num = kern.transpose() * ws.middleRows(lo, len);
    for (Eigen::Index g = 0; g < G; ++g) {
      if (num[g] > 0.0) {
        s(k, g) = std::log(num[g]) - std::log(ksum) + M[g];
        continue;
      }
      // every weight in the window underflowed
      std::vector<double> terms(static_cast<std::size_t>(len));
      for (Eigen::Index i = 0; i < len; ++i) {
        const double u = (sorted[lo + i] - x) / h;
        terms[static_cast<std::size_t>(i)] = -ells(order[static_cast<std::size_t>(lo + i)], g) - 0.5 * u * u;
      }
      s(k, g) = detail::log_sum_exp(terms) - std::log(ksum);
    }
  });

  // log mean(1/pi_hat) + mean(log pi_hat), with log pi_hat = -s
  Vector out(G);
  for (Eigen::Index g = 0; g < G; ++g) {
    const double top = s.col(g).maxCoeff();
    const double lme = top + std::log((s.col(g).array() - top).exp().sum()) - std::log(static_cast<double>(N));
    const double mean_s = (s.col(g).array() - top).mean() + top;
    out[g] = lme - mean_s;
  }
  return out;
}

inline double influence_kde_marginal(const Matrix& samples, const Vector& ell, std::size_t j,
                                     double bandwidth_factor = 1.0) {
  if (j >= static_cast<std::size_t>(samples.cols())) throw std::invalid_argument("parameter index out of range");
  return influence_kde_columns(samples.col(static_cast<Eigen::Index>(j)), ell, bandwidth_factor)[0];
}

/// Samples with every coordinate except j replaced by its sample mean.
inline Matrix fixed_mean_points(const Matrix& samples, std::size_t j) {
  if (j >= static_cast<std::size_t>(samples.cols())) throw std::invalid_argument("parameter index out of range");
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  Matrix pts = mean.replicate(samples.rows(), 1);
  pts.col(static_cast<Eigen::Index>(j)) = samples.col(static_cast<Eigen::Index>(j));
  return pts;
}

inline double influence_fixed_mean(const Matrix& samples, const ObservationSet& obs, const std::vector<std::size_t>& subset,
                                   std::size_t j, const LikelihoodSpec& spec) {
  if (samples.rows() < 2) throw std::invalid_argument("influence needs at least 2 samples");
  detail::check_subset(subset, obs.size());
  Matrix pw;
  try {
    pw = pointwise_matrix(fixed_mean_points(samples, j), obs, spec);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw NumericalError(std::string("emulator failed at a fixed-mean point: ") + e.what());
  }
  return influence_global(subset_log_ratio(pw, subset));
}

/// Bootstrap mean and standard deviation of the global estimator.
struct BootstrapEstimate {
  double mean = 0.0;
  double std_dev = 0.0;
};

inline BootstrapEstimate bootstrap_influence(const Vector& ell, std::size_t replicates, Rng& rng) {
  const auto N = static_cast<std::size_t>(ell.size());
  std::vector<double> vals(replicates), buf(N);
  std::uniform_int_distribution<std::size_t> pick(0, N - 1);
  for (auto& v : vals) {
    for (auto& b : buf) b = ell[static_cast<Eigen::Index>(pick(rng))];
    v = influence_global(buf);
  }
  BootstrapEstimate e;
  e.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(replicates);
  double ss = 0.0;
  for (double v : vals) ss += (v - e.mean) * (v - e.mean);
  e.std_dev = std::sqrt(ss / static_cast<double>(std::max<std::size_t>(1, replicates - 1)));
  return e;
}

struct InfluenceReport {
  std::vector<std::string> subsets;
  std::vector<std::string> parameters;
  Vector global;
  Matrix kde_marginal;  // subsets x parameters
  Matrix fixed_mean;
  Vector global_normalized;
  Matrix kde_normalized;
  Matrix fixed_normalized;
};

/// Column-wise scaling to unit sum; columns with a non-positive sum are left at zero.
inline Matrix normalize_columns(const Matrix& raw) {
  Matrix out = Matrix::Zero(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const double s = raw.col(c).sum();
    if (s > 0.0) out.col(c) = raw.col(c) / s;
  }
  return out;
}

inline InfluenceReport influence_report(const Matrix& samples, const ObservationSet& obs,
                                        const std::vector<ObservationGroup>& groups, const LikelihoodSpec& spec,
                                        const std::vector<std::string>& param_names) {
  if (groups.empty()) throw ConfigError("influence needs at least one observation group");
  for (const auto& g : groups) {
    if (g.indices.empty()) throw ConfigError("influence group '" + g.label + "' is empty");
    detail::check_subset(g.indices, obs.size());
  }
  const auto d = static_cast<std::size_t>(samples.cols());
  if (param_names.size() != d) throw std::invalid_argument("parameter names do not match sample width");
  const auto G = static_cast<Eigen::Index>(groups.size());

  InfluenceReport rep;
  rep.parameters = param_names;
  for (const auto& g : groups) rep.subsets.push_back(g.label);

  const Matrix pw = pointwise_matrix(samples, obs, spec);
  Matrix ells(samples.rows(), G);
  for (Eigen::Index g = 0; g < G; ++g) ells.col(g) = subset_log_ratio(pw, groups[static_cast<std::size_t>(g)].indices);

  rep.global.resize(G);
  for (Eigen::Index g = 0; g < G; ++g) rep.global[g] = influence_global(Vector(ells.col(g)));
  rep.kde_marginal.resize(G, static_cast<Eigen::Index>(d));
  rep.fixed_mean.resize(G, static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    rep.kde_marginal.col(c) = influence_kde_columns(samples.col(c), ells);
    Matrix fixed_pw;
    try {
      fixed_pw = pointwise_matrix(fixed_mean_points(samples, j), obs, spec);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw NumericalError("emulator failed at a fixed-mean point for " + param_names[j] + ": " + e.what());
    }
    for (Eigen::Index g = 0; g < G; ++g)
      rep.fixed_mean(g, c) = influence_global(subset_log_ratio(fixed_pw, groups[static_cast<std::size_t>(g)].indices));
  }
  rep.global_normalized = normalize_columns(rep.global);
  rep.kde_normalized = normalize_columns(rep.kde_marginal);
  rep.fixed_normalized = normalize_columns(rep.fixed_mean);
  return rep;
}

inline nlohmann::json to_json(const InfluenceReport& r) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto mat = [&](const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec(m.row(i).transpose()));
    return rows;
  };
  nlohmann::json j;
  j["subsets"] = r.subsets;
  j["parameters"] = r.parameters;
  j["global"] = {{"raw", vec(r.global)}, {"normalized", vec(r.global_normalized)}};
  j["kde"] = {{"raw", mat(r.kde_marginal)}, {"normalized", mat(r.kde_normalized)}};
  j["fixed_mean"] = {{"raw", mat(r.fixed_mean)}, {"normalized", mat(r.fixed_normalized)}};
  return j;
}

}  // namespace tenduq

#endif  // TENDUQ_INFLUENCE_HPP
