#ifndef TENDUQ_SURROGATE_HPP
#define TENDUQ_SURROGATE_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tenduq/core.hpp"
#include "tenduq/encoding.hpp"
#include "tenduq/forward.hpp"
#include "tenduq/optimize.hpp"
#include "tenduq/parallel.hpp"

namespace tenduq {

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

enum class KernelFamily { rbf, matern_nu_1_5 };

inline std::string to_string(KernelFamily f) { return f == KernelFamily::rbf ? "rbf" : "matern_nu_1_5"; }

inline KernelFamily kernel_family_from_string(const std::string& s) {
  if (s == "rbf") return KernelFamily::rbf;
  if (s == "matern_nu_1_5" || s == "matern32") return KernelFamily::matern_nu_1_5;
  throw ConfigError("unknown kernel family '" + s + "'");
}

struct Interval {
  double lo;
  double hi;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct KernelBounds {
  Interval length_scale{0.01, 100.0};
  Interval signal_var{1e-3, 1e3};
  Interval noise_var{1e-7, 0.1};

  static KernelBounds calibration() { return {}; }
  static KernelBounds moment() { return {{0.01, 100.0}, {1e-3, 1e4}, {1e-8, 1e-2}}; }

  void validate() const {
    for (const auto& b : {length_scale, signal_var, noise_var})
      if (!(b.lo > 0.0 && b.lo < b.hi)) throw ConfigError("kernel bounds need 0 < lower < upper");
  }
};

struct KernelSpec {
  KernelFamily family = KernelFamily::rbf;
  double length_scale = 1.0;
  double signal_var = 1.0;
  double noise_var = 1e-6;

  bool within(const KernelBounds& b) const {
    return b.length_scale.contains(length_scale) && b.signal_var.contains(signal_var) &&
           b.noise_var.contains(noise_var);
  }
};

/// Stationary part as a function of squared distance (no white noise).
inline double kernel_from_sqdist(const KernelSpec& k, double r2) {
  if (k.family == KernelFamily::rbf) return k.signal_var * std::exp(-0.5 * r2 / (k.length_scale * k.length_scale));
  const double s = std::sqrt(3.0 * r2) / k.length_scale;
  return k.signal_var * (1.0 + s) * std::exp(-s);
}

/// k(xi, xj); the white-noise term is added only when the two arguments are the same
/// training index.
inline double kernel_eval(const KernelSpec& k, std::span<const double> xi, std::span<const double> xj,
                          bool same_index = false) {
  if (xi.size() != xj.size()) throw std::invalid_argument("kernel_eval: dimension mismatch");
  double r2 = 0.0;
  for (std::size_t d = 0; d < xi.size(); ++d) r2 += (xi[d] - xj[d]) * (xi[d] - xj[d]);
  return kernel_from_sqdist(k, r2) + (same_index ? k.noise_var : 0.0);
}

/// Pairwise squared distances between rows.
inline Matrix squared_distances(const Matrix& a, const Matrix& b) {
  const Vector na = a.rowwise().squaredNorm();
  const Vector nb = b.rowwise().squaredNorm();
  Matrix d = (-2.0 * a * b.transpose()).colwise() + na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

inline Matrix kernel_matrix(const KernelSpec& k, const Matrix& sqdist) {
  return sqdist.unaryExpr([&](double r2) { return kernel_from_sqdist(k, r2); });
}

struct Factorization {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;
};

/// Cholesky of K with jitter escalation: 1e-10 * mean(diag K), times ten per retry.
inline Factorization factorize(Matrix K) {
  constexpr int kMaxRetries = 5;
  const double base = 1e-10 * K.diagonal().mean();
  Factorization f;
  f.llt.compute(K);
  if (f.llt.info() == Eigen::Success) return f;
  double jitter = base;
  for (int retry = 0; retry < kMaxRetries; ++retry, jitter *= 10.0) {
    K.diagonal().array() += jitter - f.jitter;
    f.jitter = jitter;
    f.llt.compute(K);
    if (f.llt.info() == Eigen::Success) return f;
  }
  throw NumericalError("GP covariance factorization failed after jitter " + csv::format_number(f.jitter));
}

/// Log marginal likelihood of zero-mean targets `f` under covariance K(sqdist) + noise I.
inline double log_marginal_likelihood(const KernelSpec& k, const Matrix& sqdist, const Vector& f) {
  Matrix K = kernel_matrix(k, sqdist);
  K.diagonal().array() += k.noise_var;
  const auto fac = factorize(std::move(K));
  const Vector alpha = fac.llt.solve(f);
  const Matrix& L = fac.llt.matrixLLT();
  const double logdet_half = L.diagonal().array().log().sum();
  return -0.5 * f.dot(alpha) - logdet_half - 0.5 * static_cast<double>(f.size()) * kLogTwoPi;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

namespace detail {
inline std::atomic<long> negative_variance_warnings{0};
}

struct Prediction {
  Vector mean;
  Vector variance;
};

class GpModel {
 public:
  GpModel() = default;

  /// Conditions on normalized training data with fixed hyperparameters.
  GpModel(KernelSpec kernel, Matrix unit_inputs, Vector unit_outputs, Normalizer normalizer)
      : kernel_(kernel),
        inputs_(std::move(unit_inputs)),
        outputs_(std::move(unit_outputs)),
        normalizer_(std::move(normalizer)) {
    if (inputs_.rows() != outputs_.size()) throw std::invalid_argument("GP input/output rows differ");
    if (inputs_.rows() < 1) throw std::invalid_argument("GP needs training data");
    Matrix K = kernel_matrix(kernel_, squared_distances(inputs_, inputs_));
    K.diagonal().array() += kernel_.noise_var;
    auto fac = factorize(std::move(K));
    jitter_ = fac.jitter;
    chol_ = fac.llt.matrixL();
    alpha_ = fac.llt.solve(outputs_);
    lml_ = -0.5 * outputs_.dot(alpha_) - chol_.diagonal().array().log().sum() -
           0.5 * static_cast<double>(outputs_.size()) * kLogTwoPi;
  }

  const KernelSpec& kernel() const { return kernel_; }
  const Matrix& train_inputs() const { return inputs_; }
  const Vector& train_outputs() const { return outputs_; }
  const Matrix& chol() const { return chol_; }
  const Vector& alpha() const { return alpha_; }
  const Normalizer& normalizer() const { return normalizer_; }
  double jitter() const { return jitter_; }
  double log_marginal_likelihood() const { return lml_; }
  std::size_t dim() const { return static_cast<std::size_t>(inputs_.cols()); }

  /// Denormalized predictive mean and latent variance at raw query rows.
  Prediction predict(const Matrix& queries, bool with_variance = true) const {
    if (static_cast<std::size_t>(queries.cols()) != dim())
      throw std::invalid_argument("gp_predict: query dimension mismatch");
    const Matrix Ks = kernel_matrix(kernel_, squared_distances(normalizer_.to_unit(queries), inputs_));
    Prediction p;
    const double w = normalizer_.output_width();
    p.mean = ((Ks * alpha_).array() * w + normalizer_.output_lo).matrix();
    if (with_variance) {
      const Matrix V = chol_.triangularView<Eigen::Lower>().solve(Ks.transpose());
      p.variance.resize(queries.rows());
      for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        double v = kernel_.signal_var - V.col(i).squaredNorm();
        if (v < 0.0) {
          if (v < -1e-10 && detail::negative_variance_warnings++ == 0)
            std::clog << "warning: negative GP predictive variance " << v << " clamped to 0\n";
          v = 0.0;
        }
        p.variance[i] = v * w * w;
      }
    }
    return p;
  }

  /// Mean at one raw query, physical units.
  double mean(std::span<const double> x) const {
    const Vector u = normalizer_.to_unit(x);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < inputs_.rows(); ++i)
      acc += alpha_[i] * kernel_from_sqdist(kernel_, (inputs_.row(i).transpose() - u).squaredNorm());
    return normalizer_.output_from_unit(acc);
  }

  /// Mean given precomputed squared unit-space distances to every training row.
  double mean_from_sqdist(const Vector& sqdist) const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < sqdist.size(); ++i) acc += alpha_[i] * kernel_from_sqdist(kernel_, sqdist[i]);
    return normalizer_.output_from_unit(acc);
  }

 private:
  KernelSpec kernel_;
  Matrix inputs_;
  Vector outputs_;
  Normalizer normalizer_;
  Matrix chol_;
  Vector alpha_;
  double jitter_ = 0.0;
  double lml_ = 0.0;
};

inline Prediction gp_predict(const GpModel& model, const Matrix& queries) { return model.predict(queries); }

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct GpFitOptions {
  std::size_t restarts = 8;
  std::size_t max_evaluations = 600;    // per restart
  std::size_t max_hyperopt_points = 0;  // 0 = all rows; otherwise a random subset is used for the search
};

namespace detail {

inline double clamp_log(double v, const Interval& b) { return std::clamp(v, std::log(b.lo), std::log(b.hi)); }

inline double excursion(double v, const Interval& b) {
  const double lo = std::log(b.lo), hi = std::log(b.hi);
  return v < lo ? lo - v : (v > hi ? v - hi : 0.0);
}

inline KernelSpec spec_from_log(KernelFamily family, const Vector& z, const KernelBounds& b) {
  return {family, std::exp(clamp_log(z[0], b.length_scale)), std::exp(clamp_log(z[1], b.signal_var)),
          std::exp(clamp_log(z[2], b.noise_var))};
}

}  // namespace detail

/// Maximizes the log marginal likelihood over log-hyperparameters with Nelder-Mead from
/// `restarts` Latin-hypercube starting points, then conditions on all rows.
/// `outputs_unit` and `unit_inputs` are already normalized.
inline GpModel gp_fit_normalized(const Matrix& unit_inputs, const Vector& outputs_unit,
                                 const Normalizer& normalizer, KernelFamily family,
                                 const KernelBounds& bounds, const GpFitOptions& opt, Rng& rng) {
  if (unit_inputs.rows() < 2) throw std::invalid_argument("gp_fit needs at least 2 training rows");
  if (opt.restarts < 1) throw std::invalid_argument("gp_fit needs restarts >= 1");
  bounds.validate();

  // Search subset
  Matrix search_x = unit_inputs;
  Vector search_f = outputs_unit;
  const auto n = static_cast<std::size_t>(unit_inputs.rows());
  if (opt.max_hyperopt_points > 1 && opt.max_hyperopt_points < n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(opt.max_hyperopt_points);
    std::sort(idx.begin(), idx.end());
    search_x.resize(static_cast<Eigen::Index>(idx.size()), unit_inputs.cols());
    search_f.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      search_x.row(static_cast<Eigen::Index>(r)) = unit_inputs.row(static_cast<Eigen::Index>(idx[r]));
      search_f[static_cast<Eigen::Index>(r)] = outputs_unit[static_cast<Eigen::Index>(idx[r])];
    }
  }
  const Matrix sqdist = squared_distances(search_x, search_x);

  auto log_entry = [](const char* name, const Interval& b) {
    const double lo = std::log(b.lo), hi = std::log(b.hi);
    return ParameterEntry{name, lo, hi, PriorSpec::uniform(lo, hi)};
  };
  const ParameterSpace log_box({log_entry("log_l", bounds.length_scale), log_entry("log_sf2", bounds.signal_var),
                                log_entry("log_sn2", bounds.noise_var)});
  const Matrix starts = latin_hypercube(log_box, rng, opt.restarts);

  auto objective = [&](const Vector& z) {
    double penalty = 0.0;
    penalty += std::pow(detail::excursion(z[0], bounds.length_scale), 2);
    penalty += std::pow(detail::excursion(z[1], bounds.signal_var), 2);
    penalty += std::pow(detail::excursion(z[2], bounds.noise_var), 2);
    try {
      return -log_marginal_likelihood(detail::spec_from_log(family, z, bounds), sqdist, search_f) +
             1e3 * penalty;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  std::vector<NelderMeadResult> results(opt.restarts);
  NelderMeadOptions nm;
  nm.max_evaluations = opt.max_evaluations;
  nm.initial_step = 0.5;
  nm.x_tolerance = 1e-6;
  parallel_for(opt.restarts, [&](std::size_t r) {
    results[r] = nelder_mead(objective, starts.row(static_cast<Eigen::Index>(r)).transpose(), nm);
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < results.size(); ++r)
    if (results[r].value < results[best].value) best = r;
  if (!std::isfinite(results[best].value))
    throw NumericalError("GP hyperparameter search found no factorizable configuration");
  return GpModel(detail::spec_from_log(family, results[best].x, bounds), unit_inputs, outputs_unit,
                 normalizer);
}

/// Fits with a caller-supplied (shared) normalizer.
inline GpModel gp_fit(const Matrix& inputs, const Vector& outputs, const Normalizer& norm,
                      KernelFamily family, const KernelBounds& bounds, const GpFitOptions& opt, Rng& rng) {
  if (inputs.rows() != outputs.size()) throw std::invalid_argument("gp_fit: input/output rows differ");
  const Vector unit_out = ((outputs.array() - norm.output_lo) / norm.output_width()).matrix();
  return gp_fit_normalized(norm.to_unit(inputs), unit_out, norm, family, bounds, opt, rng);
}

/// Fits a GP to raw inputs/outputs, building the normalizer from the data.
inline GpModel gp_fit(const Matrix& inputs, const Vector& outputs, KernelFamily family,
                      const KernelBounds& bounds, const GpFitOptions& opt, Rng& rng) {
  const auto norm = Normalizer::from_data(inputs, outputs);
  return gp_fit(inputs, outputs, norm, family, bounds, opt, rng);
}

// ---------------------------------------------------------------------------
// Validation metrics
// ---------------------------------------------------------------------------

struct MetricsReport {
  std::size_t count = 0;
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> r2;  // undefined for constant truth
  double max_error = 0.0;
  double nrmse_percent = 0.0;  // RMSE over truth range
  double mean_abs_z = 0.0;
  double pct_abs_z_below_2 = 0.0;
  double pct_abs_z_above_0_5 = 0.0;
};

/// z uses the predictive std of an observation: latent variance plus noise variance.
inline MetricsReport compute_metrics(std::span<const double> truth, std::span<const double> mean,
                                     std::span<const double> variance) {
  if (truth.empty()) throw std::invalid_argument("validation set is empty");
  if (truth.size() != mean.size() || truth.size() != variance.size())
    throw std::invalid_argument("validation arrays differ in length");
  MetricsReport m;
  m.count = truth.size();
  const double n = static_cast<double>(truth.size());
  const double tmean = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
  double sse = 0.0, sst = 0.0, sae = 0.0, zsum = 0.0;
  std::size_t below2 = 0, above05 = 0;
  double tmin = truth[0], tmax = truth[0];
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double r = truth[i] - mean[i];
    sse += r * r;
    sst += (truth[i] - tmean) * (truth[i] - tmean);
    sae += std::abs(r);
    m.max_error = std::max(m.max_error, std::abs(r));
    tmin = std::min(tmin, truth[i]);
    tmax = std::max(tmax, truth[i]);
    const double sd = std::sqrt(std::max(variance[i], 0.0));
    const double z = sd > 0.0 ? std::abs(r) / sd : (r == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    zsum += z;
    below2 += z < 2.0;
    above05 += z > 0.5;
  }
  m.rmse = std::sqrt(sse / n);
  m.mae = sae / n;
  if (sst > 0.0) m.r2 = 1.0 - sse / sst;
  m.nrmse_percent = tmax > tmin ? 100.0 * m.rmse / (tmax - tmin) : 0.0;
  m.mean_abs_z = zsum / n;
  m.pct_abs_z_below_2 = 100.0 * static_cast<double>(below2) / n;
  m.pct_abs_z_above_0_5 = 100.0 * static_cast<double>(above05) / n;
  return m;
}

inline MetricsReport gp_validate(const GpModel& model, const Matrix& val_inputs, const Vector& val_outputs) {
  if (val_inputs.rows() == 0) throw std::invalid_argument("validation set is empty");
  auto p = model.predict(val_inputs);
  const double w = model.normalizer().output_width();
  p.variance.array() += model.kernel().noise_var * w * w;
  return compute_metrics({val_outputs.data(), static_cast<std::size_t>(val_outputs.size())},
                         {p.mean.data(), static_cast<std::size_t>(p.mean.size())},
                         {p.variance.data(), static_cast<std::size_t>(p.variance.size())});
}

inline nlohmann::json to_json(const MetricsReport& m) {
  return {{"count", m.count},
          {"r2", m.r2 ? nlohmann::json(*m.r2) : nlohmann::json(nullptr)},
          {"rmse", m.rmse},
          {"mae", m.mae},
          {"max_error", m.max_error},
          {"nrmse_percent", m.nrmse_percent},
          {"mean_abs_z", m.mean_abs_z},
          {"pct_abs_z_below_2", m.pct_abs_z_below_2},
          {"pct_abs_z_above_0_5", m.pct_abs_z_above_0_5}};
}

// ---------------------------------------------------------------------------
// Per observation point emulator
// ---------------------------------------------------------------------------

/// One GP per observation point over the calibration parameters, with one shared input
/// normalizer and one joint output normalizer.
struct PointwiseEmulator {
  std::vector<Point> points;
  std::vector<std::string> param_names;
  Normalizer normalizer;
  std::vector<GpModel> models;

  std::size_t size() const { return models.size(); }
  std::size_t dim() const { return normalizer.dim(); }
  double output_width() const { return normalizer.output_width(); }

  /// Means at every point, physical units.
  void mean_into(std::span<const double> theta, std::span<double> out) const {
    if (theta.size() != dim()) throw std::invalid_argument("emulator: parameter dimension mismatch");
    const Vector u = normalizer.to_unit(theta);
    // every model shares the same training design
    const Matrix& X = models.front().train_inputs();
    const Vector d2 = (X.rowwise() - u.transpose()).rowwise().squaredNorm();
    for (std::size_t j = 0; j < models.size(); ++j) out[j] = models[j].mean_from_sqdist(d2);
  }

  Vector mean(std::span<const double> theta) const {
    Vector out(static_cast<Eigen::Index>(models.size()));
    mean_into(theta, {out.data(), models.size()});
    return out;
  }
};

inline PointwiseEmulator fit_pointwise(const SnapshotTable& snap, KernelFamily family,
                                       const KernelBounds& bounds, const GpFitOptions& opt,
                                       std::uint64_t seed) {
  snap.validate();
  if (snap.runs() < 2) throw std::invalid_argument("need at least 2 simulations to train");
  PointwiseEmulator em;
  em.points = snap.points;
  em.param_names = snap.param_names;
  em.normalizer = Normalizer::from_data(snap.design, snap.outputs);
  const Matrix unit_x = em.normalizer.to_unit(snap.design);
  em.models.resize(snap.points.size());
  std::vector<std::string> failures(snap.points.size());
  parallel_for(snap.points.size(), [&](std::size_t j) {
    Rng rng = derive_stream(seed, j);
    const Vector f = ((snap.outputs.col(static_cast<Eigen::Index>(j)).array() - em.normalizer.output_lo) /
                      em.normalizer.output_width())
                         .matrix();
    try {
      em.models[j] = gp_fit_normalized(unit_x, f, em.normalizer, family, bounds, opt, rng);
    } catch (const NumericalError& e) {
      failures[j] = e.what();
    }
  });
  std::string report;
  for (std::size_t j = 0; j < failures.size(); ++j)
    if (!failures[j].empty())
      report += "\n  point " + std::to_string(j) + " (x=" + csv::format_number(snap.points[j].x) +
                ", z=" + csv::format_number(snap.points[j].z) + "): " + failures[j];
  if (!report.empty()) throw NumericalError("GP fit failed for" + report);
  return em;
}

/// Pooled metrics over all points of a held-out snapshot table.
inline MetricsReport validate_pointwise(const PointwiseEmulator& em, const SnapshotTable& val) {
  val.validate();
  if (val.points != em.points) throw std::invalid_argument("validation points differ from training points");
  std::vector<double> truth, mean, var;
  for (std::size_t j = 0; j < em.size(); ++j) {
    const auto& gp = em.models[j];
    auto p = gp.predict(val.design);
    const double w = gp.normalizer().output_width();
    for (Eigen::Index r = 0; r < val.design.rows(); ++r) {
      truth.push_back(val.outputs(r, static_cast<Eigen::Index>(j)));
      mean.push_back(p.mean[r]);
      var.push_back(p.variance[r] + gp.kernel().noise_var * w * w);
    }
  }
  return compute_metrics(truth, mean, var);
}

/// Joint (coordinate, parameter) design: one row per (run, point) pair as [x, z, theta...].
struct JointData {
  Matrix inputs;
  Vector outputs;
};

inline JointData joint_design(const SnapshotTable& snap, std::span<const std::size_t> point_subset = {}) {
  std::vector<std::size_t> pts(point_subset.begin(), point_subset.end());
  if (pts.empty()) {
    pts.resize(snap.points.size());
    std::iota(pts.begin(), pts.end(), std::size_t{0});
  }
  const auto runs = snap.design.rows();
  const auto p = snap.design.cols();
  JointData d;
  d.inputs.resize(runs * static_cast<Eigen::Index>(pts.size()), p + 2);
  d.outputs.resize(d.inputs.rows());
  Eigen::Index row = 0;
  for (auto j : pts) {
    for (Eigen::Index r = 0; r < runs; ++r, ++row) {
      d.inputs(row, 0) = snap.points[j].x;
      d.inputs(row, 1) = snap.points[j].z;
      d.inputs.row(row).tail(p) = snap.design.row(r);
      d.outputs[row] = snap.outputs(r, static_cast<Eigen::Index>(j));
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json matrix_to_json(const Matrix& m) {
  // column-major payload
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", encoding::encode_doubles(m.data(), static_cast<std::size_t>(m.size()))}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = encoding::decode_doubles(j.at("data").get<std::string>());
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ConfigError("matrix payload size mismatch");
  return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

inline nlohmann::json to_json(const Normalizer& n) {
  return {{"input_lo", std::vector<double>(n.input_lo.data(), n.input_lo.data() + n.input_lo.size())},
          {"input_hi", std::vector<double>(n.input_hi.data(), n.input_hi.data() + n.input_hi.size())},
          {"output_lo", n.output_lo},
          {"output_hi", n.output_hi}};
}

inline Normalizer normalizer_from_json(const nlohmann::json& j) {
  Normalizer n;
  const auto lo = j.at("input_lo").get<std::vector<double>>();
  const auto hi = j.at("input_hi").get<std::vector<double>>();
  if (lo.size() != hi.size()) throw ConfigError("normalizer bounds differ in length");
  n.input_lo = Eigen::Map<const Vector>(lo.data(), static_cast<Eigen::Index>(lo.size()));
  n.input_hi = Eigen::Map<const Vector>(hi.data(), static_cast<Eigen::Index>(hi.size()));
  n.output_lo = j.at("output_lo").get<double>();
  n.output_hi = j.at("output_hi").get<double>();
  return n;
}

inline nlohmann::json to_json(const GpModel& m, bool with_normalizer = true) {
  nlohmann::json j = {{"kernel",
                       {{"family", to_string(m.kernel().family)},
                        {"length_scale", m.kernel().length_scale},
                        {"signal_var", m.kernel().signal_var},
                        {"noise_var", m.kernel().noise_var}}},
                      {"log_marginal_likelihood", m.log_marginal_likelihood()},
                      {"train_outputs", matrix_to_json(m.train_outputs())}};
  if (with_normalizer) {
    j["normalizer"] = to_json(m.normalizer());
    j["train_inputs"] = matrix_to_json(m.train_inputs());
  }
  return j;
}

/// Refactorizes from the stored arrays; `shared` supplies inputs/normalizer stored elsewhere.
inline GpModel gp_from_json(const nlohmann::json& j, const Matrix* shared_inputs = nullptr,
                            const Normalizer* shared_norm = nullptr) {
  try {
    const auto& k = j.at("kernel");
    KernelSpec spec{kernel_family_from_string(k.at("family").get<std::string>()), k.at("length_scale").get<double>(),
                    k.at("signal_var").get<double>(), k.at("noise_var").get<double>()};
    const Matrix inputs = shared_inputs ? *shared_inputs : matrix_from_json(j.at("train_inputs"));
    const Normalizer norm = shared_norm ? *shared_norm : normalizer_from_json(j.at("normalizer"));
    const Matrix out = matrix_from_json(j.at("train_outputs"));
    return GpModel(spec, inputs, out.col(0), norm);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed GP model: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("malformed GP model: ") + e.what());
  }
}

inline nlohmann::json to_json(const PointwiseEmulator& em) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : em.points) pts.push_back({p.x, p.z});
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : em.models) models.push_back(to_json(m, false));
  return {{"kind", "pointwise_gp"},
          {"param_names", em.param_names},
          {"points", pts},
          {"normalizer", to_json(em.normalizer)},
          {"train_inputs", matrix_to_json(em.models.front().train_inputs())},
          {"models", models}};
}

inline PointwiseEmulator pointwise_from_json(const nlohmann::json& j) {
  try {
    PointwiseEmulator em;
    em.param_names = j.at("param_names").get<std::vector<std::string>>();
    for (const auto& p : j.at("points")) em.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    em.normalizer = normalizer_from_json(j.at("normalizer"));
    const Matrix inputs = matrix_from_json(j.at("train_inputs"));
    for (const auto& m : j.at("models")) em.models.push_back(gp_from_json(m, &inputs, &em.normalizer));
    if (em.models.size() != em.points.size() || em.models.empty())
      throw ConfigError("emulator model count does not match points");
    return em;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed emulator file: ") + e.what());
  }
}

}  // namespace tenduq

#endif  // TENDUQ_SURROGATE_HPP
