#ifndef TENDUQ_CALIBRATE_HPP
#define TENDUQ_CALIBRATE_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tenduq/core.hpp"
#include "tenduq/parallel.hpp"
#include "tenduq/pce.hpp"
#include "tenduq/surrogate.hpp"

namespace tenduq {

// ---------------------------------------------------------------------------
// Likelihoods
// ---------------------------------------------------------------------------

enum class CalibrationMode { plain, embedded };

inline std::string to_string(CalibrationMode m) { return m == CalibrationMode::plain ? "plain" : "embedded"; }

inline CalibrationMode calibration_mode_from_string(const std::string& s) {
  if (s == "plain") return CalibrationMode::plain;
  if (s == "embedded") return CalibrationMode::embedded;
  throw ConfigError("unknown calibration mode '" + s + "' (expected plain|embedded)");
}

/// Deterministic mean response at every observation point. Residuals are divided by
/// `output_scale` so that the noise level is stated in normalized output units.
struct Emulator {
  std::size_t outputs = 0;
  std::size_t inputs = 0;
  double output_scale = 1.0;
  std::function<void(std::span<const double>, std::span<double>)> mean;

  static Emulator from(const PointwiseEmulator& em) {
    Emulator e;
    e.outputs = em.size();
    e.inputs = em.dim();
    e.output_scale = em.output_width();
    e.mean = [&em](std::span<const double> theta, std::span<double> out) { em.mean_into(theta, out); };
    return e;
  }
};

struct LikelihoodSpec {
  CalibrationMode mode = CalibrationMode::plain;
  double noise_std = 0.01;
  Emulator emulator;
  PceConfig pce;
  std::size_t embedded_index = 0;  // entry of theta promoted to a lognormal variable

  /// Length of the sampled vector: theta, plus the spread in embedded mode.
  std::size_t dim() const { return emulator.inputs + (mode == CalibrationMode::embedded ? 1 : 0); }

  void validate(const ObservationSet& obs) const {
    if (!(noise_std > 0.0)) throw ConfigError("noise_std must be > 0");
    if (!emulator.mean) throw ConfigError("likelihood has no emulator");
    if (emulator.outputs != obs.size())
      throw ConfigError("emulator has " + std::to_string(emulator.outputs) + " outputs but there are " +
                        std::to_string(obs.size()) + " observations");
    if (mode == CalibrationMode::embedded) {
      pce.validate();
      if (embedded_index >= emulator.inputs) throw ConfigError("embedded index out of range");
    }
  }
};

/// Predictive mean (physical units) and extra variance from the embedded spread
/// (normalized units, zero in plain mode) at every observation point.
struct PointPrediction {
  Vector mean;
  Vector embed_var;
};

inline PointPrediction predict_points(const LikelihoodSpec& spec, std::span<const double> theta) {
  const std::size_t n = spec.emulator.outputs;
  PointPrediction p{Vector(static_cast<Eigen::Index>(n)), Vector::Zero(static_cast<Eigen::Index>(n))};
  const std::size_t d = spec.emulator.inputs;
  if (spec.mode == CalibrationMode::plain) {
    spec.emulator.mean(theta.first(d), {p.mean.data(), n});
    return p;
  }
  const double sigma = theta[d];
  if (!(sigma >= 0.0)) throw std::domain_error("embedded spread must be >= 0");
  std::vector<double> th(theta.begin(), theta.begin() + static_cast<long>(d));
  if (sigma == 0.0) {
    spec.emulator.mean(th, {p.mean.data(), n});
    return p;
  }
  const StochasticInput input{StochasticKind::lognormal, th[spec.embedded_index], sigma};
  Vector buf(static_cast<Eigen::Index>(n));
  const auto pce = build_pce(
      [&](double value) {
        th[spec.embedded_index] = value;
        spec.emulator.mean(th, {buf.data(), n});
        return buf;
      },
      input, spec.pce.degree, spec.pce.quadrature);
  const auto m = pce_moments(pce);
  for (Eigen::Index i = 0; i < m.variance.size(); ++i)
    if (m.variance[i] < 0.0) throw NumericalError("negative PCE variance " + csv::format_number(m.variance[i]));
  const double s2 = spec.emulator.output_scale * spec.emulator.output_scale;
  p.mean = m.mean;
  p.embed_var = m.variance / s2;
  return p;
}

/// Per-observation log-likelihood terms; they sum to the full log-likelihood.
inline Vector pointwise_log_likelihood(const LikelihoodSpec& spec, std::span<const double> theta,
                                       const ObservationSet& obs) {
  const auto p = predict_points(spec, theta);
  const double scale = spec.emulator.output_scale;
  const double s2 = spec.noise_std * spec.noise_std;
  Vector out(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double r = (obs.values[i] - p.mean[k]) / scale;
    const double v = s2 + p.embed_var[k];
    out[k] = -0.5 * kLogTwoPi - 0.5 * std::log(v) - 0.5 * r * r / v;
  }
  return out;
}

inline double log_likelihood(const LikelihoodSpec& spec, std::span<const double> theta, const ObservationSet& obs) {
  return pointwise_log_likelihood(spec, theta, obs).sum();
}

inline double log_likelihood_plain(std::span<const double> theta, const ObservationSet& obs, const Emulator& emulator) {
  LikelihoodSpec spec;
  spec.mode = CalibrationMode::plain;
  spec.noise_std = obs.noise_std;
  spec.emulator = emulator;
  return log_likelihood(spec, theta, obs);
}

inline double log_likelihood_embedded(std::span<const double> theta_ext, const ObservationSet& obs,
                                      const Emulator& emulator, const PceConfig& pce,
                                      std::size_t embedded_index = 0) {
  LikelihoodSpec spec;
  spec.mode = CalibrationMode::embedded;
  spec.noise_std = obs.noise_std;
  spec.emulator = emulator;
  spec.pce = pce;
  spec.embedded_index = embedded_index;
  return log_likelihood(spec, theta_ext, obs);
}

// ---------------------------------------------------------------------------
// Ensemble sampler
// ---------------------------------------------------------------------------

using LogDensity = std::function<double(std::span<const double>)>;

struct SamplerSettings {
  std::size_t walkers = 20;
  std::size_t steps = 10000;
  double stretch_a = 2.0;
  std::size_t stuck_limit = 500;
};

/// Walker chains in walker-major order.
struct PosteriorEnsemble {
  std::size_t walkers = 0;
  std::size_t steps = 0;
  std::size_t dim = 0;
  std::vector<double> chain;  // (walker * steps + step) * dim + k
  std::vector<double> logp;   // walker * steps + step
  std::vector<std::size_t> retained;
  double acceptance = 0.0;

  std::span<const double> sample(std::size_t w, std::size_t t) const { return {chain.data() + (w * steps + t) * dim, dim}; }
  double log_posterior(std::size_t w, std::size_t t) const { return logp[w * steps + t]; }

  Matrix final_positions() const {
    Matrix x(static_cast<Eigen::Index>(walkers), static_cast<Eigen::Index>(dim));
    for (std::size_t w = 0; w < walkers; ++w)
      for (std::size_t k = 0; k < dim; ++k) x(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(k)) = sample(w, steps - 1)[k];
    return x;
  }

  /// Retained post-burn-in samples as rows.
  Matrix samples(std::size_t burn_in = 0, std::size_t thin = 1) const {
    if (burn_in >= steps) throw std::invalid_argument("burn_in must be < steps");
    thin = std::max<std::size_t>(thin, 1);
    const std::size_t per = (steps - burn_in + thin - 1) / thin;
    Matrix out(static_cast<Eigen::Index>(retained.size() * per), static_cast<Eigen::Index>(dim));
    Eigen::Index row = 0;
    for (auto w : retained)
      for (std::size_t t = burn_in; t < steps; t += thin, ++row)
        for (std::size_t k = 0; k < dim; ++k) out(row, static_cast<Eigen::Index>(k)) = sample(w, t)[k];
    return out;
  }
};

/// log prior + log likelihood, skipping the likelihood outside the support.
inline LogDensity make_log_posterior(const ParameterSpace& space, LogDensity loglike) {
  return [&space, loglike = std::move(loglike)](std::span<const double> theta) {
    const double lp = prior_log_density(space, theta);
    if (!std::isfinite(lp)) return kNegInf;
    const double ll = loglike(theta);
    return std::isfinite(ll) ? lp + ll : kNegInf;
  };
}

/// Affine-invariant stretch-move ensemble sampler with two alternating half-ensembles.
/// `log_post` must already include the prior (use make_log_posterior).
inline PosteriorEnsemble run_ensemble_mcmc(const ParameterSpace& space, const LogDensity& log_post,
                                           const SamplerSettings& settings, Rng& rng,
                                           std::optional<Matrix> initial = std::nullopt) {
  const std::size_t dim = space.size();
  const std::size_t W = settings.walkers;
  if (W < 2 * dim || W % 2 != 0)
    throw ConfigError("walkers must be even and >= 2 * dim (" + std::to_string(2 * dim) + ")");
  if (settings.steps < 1) throw ConfigError("steps must be >= 1");
  if (!(settings.stretch_a > 1.0)) throw ConfigError("stretch_a must be > 1");

  Matrix x = initial ? *initial : sample_prior(space, rng, W);
  if (static_cast<std::size_t>(x.rows()) != W || static_cast<std::size_t>(x.cols()) != dim)
    throw std::invalid_argument("initial positions have the wrong shape");
  std::vector<double> lp(W);
  parallel_for(W, [&](std::size_t w) {
    const Vector row = x.row(static_cast<Eigen::Index>(w));
    lp[w] = log_post({row.data(), dim});
  });
  // walkers starting outside the support are redrawn from the prior
  for (std::size_t w = 0; w < W; ++w) {
    for (int tries = 0; !std::isfinite(lp[w]); ++tries) {
      if (tries > 1000) throw NumericalError("could not find a finite log-posterior starting point");
      x.row(static_cast<Eigen::Index>(w)) = sample_prior(space, rng, 1).row(0);
      const Vector row = x.row(static_cast<Eigen::Index>(w));
      lp[w] = log_post({row.data(), dim});
    }
  }

  PosteriorEnsemble ens;
  ens.walkers = W;
  ens.steps = settings.steps;
  ens.dim = dim;
  ens.chain.resize(W * settings.steps * dim);
  ens.logp.resize(W * settings.steps);
  ens.retained.resize(W);
  std::iota(ens.retained.begin(), ens.retained.end(), std::size_t{0});

  const double a = settings.stretch_a;
  const std::size_t half = W / 2;
  std::vector<std::size_t> partner(half);
  std::vector<double> zs(half), log_u(half), lp_new(half);
  Matrix proposals(static_cast<Eigen::Index>(half), static_cast<Eigen::Index>(dim));
  std::size_t accepted_total = 0, stuck = 0;

  for (std::size_t t = 0; t < settings.steps; ++t) {
    std::size_t accepted_step = 0;
    for (std::size_t h = 0; h < 2; ++h) {
      const std::size_t first = h * half, other = (1 - h) * half;
      // random numbers first, in a fixed order, so results do not depend on threading
      for (std::size_t i = 0; i < half; ++i) {
        partner[i] = other + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(half)) % half;
        const double u = uniform01(rng);
        zs[i] = std::pow((a - 1.0) * u + 1.0, 2) / a;
        log_u[i] = std::log(uniform01(rng));
        proposals.row(static_cast<Eigen::Index>(i)) =
            x.row(static_cast<Eigen::Index>(partner[i])) +
            zs[i] * (x.row(static_cast<Eigen::Index>(first + i)) - x.row(static_cast<Eigen::Index>(partner[i])));
      }
      parallel_for(half, [&](std::size_t i) {
        const Vector row = proposals.row(static_cast<Eigen::Index>(i));
        lp_new[i] = log_post({row.data(), dim});
      });
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t w = first + i;
        if (!std::isfinite(lp_new[i])) continue;
        const double log_ratio = static_cast<double>(dim - 1) * std::log(zs[i]) + lp_new[i] - lp[w];
        if (log_u[i] < log_ratio) {
          x.row(static_cast<Eigen::Index>(w)) = proposals.row(static_cast<Eigen::Index>(i));
          lp[w] = lp_new[i];
          ++accepted_step;
        }
      }
    }
    for (std::size_t w = 0; w < W; ++w) {
      for (std::size_t k = 0; k < dim; ++k) ens.chain[(w * settings.steps + t) * dim + k] = x(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(k));
      ens.logp[w * settings.steps + t] = lp[w];
    }
    accepted_total += accepted_step;
    stuck = accepted_step == 0 ? stuck + 1 : 0;
    if (stuck >= settings.stuck_limit)
      throw NumericalError("ensemble sampler stuck: no move accepted in " + std::to_string(stuck) +
                           " consecutive steps (at step " + std::to_string(t + 1) + ")");
  }
  ens.acceptance = static_cast<double>(accepted_total) / static_cast<double>(W * settings.steps);
  return ens;
}

// ---------------------------------------------------------------------------
// Walker clustering and pruning
// ---------------------------------------------------------------------------

struct PruneOutcome {
  std::vector<double> mean_logp;       // per walker, over the trailing window
  std::vector<std::size_t> retained;   // ascending walker indices
  std::vector<std::size_t> pruned;
  double threshold = 0.0;
  std::size_t clusters = 1;
  Matrix positions;  // last positions, pruned walkers replaced when resampling
};

/// Groups walkers by jumps in their sorted mean log-posterior over the last
/// floor(alpha * T) steps and keeps the largest group (ties: the higher one).
/// A jump is a gap d_k > gamma * median(d); with a zero median the gap must also be
/// > 0 and > gamma * mean(d).
inline PruneOutcome prune_by_mean_logp(const std::vector<double>& ell, double gamma) {
  const std::size_t W = ell.size();
  if (W < 2) throw std::invalid_argument("pruning needs at least 2 walkers");
  std::vector<std::size_t> order(W);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ell[a] < ell[b]; });
  std::vector<double> d(W - 1);
  for (std::size_t k = 0; k + 1 < W; ++k) d[k] = ell[order[k + 1]] - ell[order[k]];
  const double med = median(d);
  const double mean_d = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  auto is_jump = [&](double dk) {
    if (med > 0.0) return dk > gamma * med;
    return dk > 0.0 && dk > gamma * mean_d;
  };
  // clusters as [begin, end) ranges of the sorted order
  std::vector<std::pair<std::size_t, std::size_t>> clusters;
  std::size_t begin = 0;
  for (std::size_t k = 0; k + 1 < W; ++k) {
    if (is_jump(d[k])) {
      clusters.emplace_back(begin, k + 1);
      begin = k + 1;
    }
  }
  clusters.emplace_back(begin, W);
  std::size_t best = 0;
  for (std::size_t c = 1; c < clusters.size(); ++c) {
    const auto size = clusters[c].second - clusters[c].first;
    const auto best_size = clusters[best].second - clusters[best].first;
    if (size >= best_size) best = c;  // later clusters hold higher values
  }
  PruneOutcome out;
  out.mean_logp = ell;
  out.clusters = clusters.size();
  out.threshold = ell[order[clusters[best].first]];
  for (std::size_t w = 0; w < W; ++w) (ell[w] >= out.threshold ? out.retained : out.pruned).push_back(w);
  return out;
}

inline PruneOutcome cluster_and_prune(const PosteriorEnsemble& ens, double alpha, double gamma, Rng& rng, bool resample) {
  if (ens.walkers < 2) throw std::invalid_argument("pruning needs at least 2 walkers");
  const auto window = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(ens.steps)));
  if (window < 1) throw ConfigError("alpha * steps must be >= 1");
  std::vector<double> ell(ens.walkers);
  for (std::size_t w = 0; w < ens.walkers; ++w) {
    double s = 0.0;
    for (std::size_t t = ens.steps - window; t < ens.steps; ++t) s += ens.log_posterior(w, t);
    ell[w] = s / static_cast<double>(window);
  }
  auto out = prune_by_mean_logp(ell, gamma);
  out.positions = ens.final_positions();
  if (resample) {
    const auto& keep = out.retained;
    for (auto w : out.pruned) {
      if (keep.size() == 1) {
        out.positions.row(static_cast<Eigen::Index>(w)) = out.positions.row(static_cast<Eigen::Index>(keep[0]));
        continue;
      }
      const std::size_t ia = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(keep.size())) % keep.size();
      std::size_t ib = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(keep.size() - 1)) % (keep.size() - 1);
      if (ib >= ia) ++ib;
      const double mix = uniform01(rng);
      out.positions.row(static_cast<Eigen::Index>(w)) =
          mix * out.positions.row(static_cast<Eigen::Index>(keep[ia])) +
          (1.0 - mix) * out.positions.row(static_cast<Eigen::Index>(keep[ib]));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Two-phase protocol
// ---------------------------------------------------------------------------

struct CalibrationSettings {
  std::size_t walkers = 20;
  std::size_t steps_phase1 = 10000;
  std::size_t steps_phase2 = 10000;
  double stretch_a = 2.0;
  double alpha = 0.2;
  double gamma = 5.0;

  void validate(std::size_t dim) const {
    if (walkers < 2 * dim || walkers % 2 != 0)
      throw ConfigError("mcmc.walkers must be even and >= " + std::to_string(2 * dim));
    if (steps_phase1 < 1 || steps_phase2 < 1) throw ConfigError("mcmc steps must be >= 1");
    if (!(stretch_a > 1.0)) throw ConfigError("mcmc.stretch_a must be > 1");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("mcmc.alpha must lie in (0, 1]");
    if (!(gamma > 0.0)) throw ConfigError("mcmc.gamma must be > 0");
    if (std::floor(alpha * static_cast<double>(std::min(steps_phase1, steps_phase2))) < 1)
      throw ConfigError("mcmc.alpha * steps must be >= 1");
  }
};

struct CalibrationResult {
  PosteriorEnsemble ensemble;  // both phases concatenated; retained = final set
  std::size_t burn_in = 0;     // first phase length
  PruneOutcome first_prune;
  PruneOutcome final_prune;
  double acceptance_phase1 = 0.0;
  double acceptance_phase2 = 0.0;
};

/// Burn-in, prune with resampling, continue, prune again without resampling.
inline CalibrationResult run_calibration(const ParameterSpace& space, const LogDensity& loglike,
                                         const CalibrationSettings& s, Rng& rng) {
  s.validate(space.size());
  const auto log_post = make_log_posterior(space, loglike);
  SamplerSettings p1{s.walkers, s.steps_phase1, s.stretch_a};
  auto e1 = run_ensemble_mcmc(space, log_post, p1, rng);
  CalibrationResult res;
  res.first_prune = cluster_and_prune(e1, s.alpha, s.gamma, rng, true);
  SamplerSettings p2{s.walkers, s.steps_phase2, s.stretch_a};
  auto e2 = run_ensemble_mcmc(space, log_post, p2, rng, res.first_prune.positions);
  res.final_prune = cluster_and_prune(e2, s.alpha, s.gamma, rng, false);
  res.acceptance_phase1 = e1.acceptance;
  res.acceptance_phase2 = e2.acceptance;

  auto& all = res.ensemble;
  all.walkers = s.walkers;
  all.steps = s.steps_phase1 + s.steps_phase2;
  all.dim = space.size();
  all.chain.resize(all.walkers * all.steps * all.dim);
  all.logp.resize(all.walkers * all.steps);
  for (std::size_t w = 0; w < all.walkers; ++w) {
    std::copy_n(e1.chain.begin() + static_cast<long>(w * e1.steps * all.dim), e1.steps * all.dim,
                all.chain.begin() + static_cast<long>(w * all.steps * all.dim));
    std::copy_n(e2.chain.begin() + static_cast<long>(w * e2.steps * all.dim), e2.steps * all.dim,
                all.chain.begin() + static_cast<long>((w * all.steps + e1.steps) * all.dim));
    std::copy_n(e1.logp.begin() + static_cast<long>(w * e1.steps), e1.steps, all.logp.begin() + static_cast<long>(w * all.steps));
    std::copy_n(e2.logp.begin() + static_cast<long>(w * e2.steps), e2.steps,
                all.logp.begin() + static_cast<long>(w * all.steps + e1.steps));
  }
  all.retained = res.final_prune.retained;
  all.acceptance = 0.5 * (e1.acceptance + e2.acceptance);
  res.burn_in = s.steps_phase1;
  return res;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double std_dev = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

/// Mean, population std and equal-tailed 95% interval per column.
inline std::vector<ParameterSummary> summarize_samples(const Matrix& samples, const std::vector<std::string>& names) {
  if (samples.rows() < 1) throw std::invalid_argument("no samples to summarize");
  std::vector<ParameterSummary> out;
  for (Eigen::Index k = 0; k < samples.cols(); ++k) {
    ParameterSummary s;
    s.name = static_cast<std::size_t>(k) < names.size() ? names[static_cast<std::size_t>(k)] : "p" + std::to_string(k);
    const Vector c = samples.col(k);
    s.mean = c.mean();
    s.std_dev = std::sqrt((c.array() - s.mean).square().mean());
    std::vector<double> v(c.data(), c.data() + c.size());
    s.ci_lo = quantile(v, 0.025);
    s.ci_hi = quantile(std::move(v), 0.975);
    out.push_back(s);
  }
  return out;
}

inline std::vector<ParameterSummary> posterior_summary(const PosteriorEnsemble& ens, std::size_t burn_in,
                                                       const std::vector<std::string>& names) {
  return summarize_samples(ens.samples(burn_in), names);
}

inline nlohmann::json to_json(const std::vector<ParameterSummary>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : rows)
    arr.push_back({{"parameter", s.name}, {"mean", s.mean}, {"std", s.std_dev}, {"ci95", {s.ci_lo, s.ci_hi}}});
  return arr;
}

struct PredictiveReport {
  std::vector<double> mean;      // predicted value per point, µm/m
  std::vector<double> std_dev;   // predictive std per point, µm/m
  std::vector<double> residual;  // observed - predicted, µm/m
  std::vector<double> z;
  double residual_mean = 0.0;
  double residual_rmse = 0.0;
  double residual_median = 0.0;
  double residual_mad = 0.0;
  double mean_abs_z = 0.0;
  double median_abs_z = 0.0;
  double max_abs_z = 0.0;
  double pct_abs_z_above_2 = 0.0;
  double pct_abs_z_below_0_5 = 0.0;
  double coverage95 = 0.0;  // percent of points inside mean +- 1.96 std
};

inline PredictiveReport predictive_report_from(const ObservationSet& obs, Vector mean, Vector var_norm, double scale) {
  PredictiveReport r;
  const std::size_t n = obs.size();
  std::vector<double> absz;
  std::size_t above2 = 0, below05 = 0, inside = 0;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double sd = std::sqrt(var_norm[k]) * scale;
    const double res = obs.values[i] - mean[k];
    const double z = res / sd;
    r.mean.push_back(mean[k]);
    r.std_dev.push_back(sd);
    r.residual.push_back(res);
    r.z.push_back(z);
    absz.push_back(std::abs(z));
    ss += res * res;
    above2 += std::abs(z) > 2.0;
    below05 += std::abs(z) < 0.5;
    inside += std::abs(z) <= 1.96;
  }
  const double dn = static_cast<double>(n);
  r.residual_mean = std::accumulate(r.residual.begin(), r.residual.end(), 0.0) / dn;
  r.residual_rmse = std::sqrt(ss / dn);
  r.residual_median = median(r.residual);
  r.residual_mad = median_abs_deviation(r.residual);
  r.mean_abs_z = std::accumulate(absz.begin(), absz.end(), 0.0) / dn;
  r.median_abs_z = median(absz);
  r.max_abs_z = *std::max_element(absz.begin(), absz.end());
  r.pct_abs_z_above_2 = 100.0 * static_cast<double>(above2) / dn;
  r.pct_abs_z_below_0_5 = 100.0 * static_cast<double>(below05) / dn;
  r.coverage95 = 100.0 * static_cast<double>(inside) / dn;
  return r;
}

/// Predictive statistics at the posterior mean, or, with `mixture`, under the
/// posterior-predictive mixture of the given samples (moment matched).
inline PredictiveReport predictive_check(const Matrix& samples, const ObservationSet& obs, const LikelihoodSpec& spec,
                                         bool mixture = false) {
  if (samples.rows() < 1) throw std::invalid_argument("predictive_check needs samples");
  const double s2 = spec.noise_std * spec.noise_std;
  const double scale = spec.emulator.output_scale;
  if (!mixture) {
    const Vector theta = samples.colwise().mean().transpose();
    const auto p = predict_points(spec, {theta.data(), static_cast<std::size_t>(theta.size())});
    return predictive_report_from(obs, p.mean, (p.embed_var.array() + s2).matrix(), scale);
  }
  const auto n = static_cast<Eigen::Index>(obs.size());
  const auto S = static_cast<std::size_t>(samples.rows());
  std::vector<PointPrediction> preds(S);
  parallel_for(S, [&](std::size_t i) {
    const Vector th = samples.row(static_cast<Eigen::Index>(i));
    preds[i] = predict_points(spec, {th.data(), static_cast<std::size_t>(th.size())});
  });
  Vector m = Vector::Zero(n), second = Vector::Zero(n), ev = Vector::Zero(n);
  for (const auto& p : preds) {
    m += p.mean;
    second += p.mean.cwiseAbs2();
    ev += p.embed_var;
  }
  m /= static_cast<double>(S);
  second /= static_cast<double>(S);
  ev /= static_cast<double>(S);
  const Vector var_norm = ((second - m.cwiseAbs2()).array().max(0.0) / (scale * scale) + ev.array() + s2).matrix();
  return predictive_report_from(obs, m, var_norm, scale);
}

inline nlohmann::json to_json(const PredictiveReport& r) {
  return {{"residual", {{"mean", r.residual_mean}, {"rmse", r.residual_rmse}, {"median", r.residual_median}, {"mad", r.residual_mad}}},
          {"z", {{"mean_abs", r.mean_abs_z}, {"median_abs", r.median_abs_z}, {"max_abs", r.max_abs_z},
                 {"pct_abs_above_2", r.pct_abs_z_above_2}, {"pct_abs_below_0_5", r.pct_abs_z_below_0_5}}},
          {"coverage95_percent", r.coverage95},
          {"points", {{"mean", r.mean}, {"std", r.std_dev}, {"residual", r.residual}, {"z", r.z}}}};
}

}  // namespace tenduq

#endif  // TENDUQ_CALIBRATE_HPP
