#ifndef TENDUQ_CORE_HPP
#define TENDUQ_CORE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tenduq/csv.hpp"
#include "tenduq/error.hpp"
#include "tenduq/random.hpp"

namespace tenduq {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

// ---------------------------------------------------------------------------
// Priors
// ---------------------------------------------------------------------------

enum class PriorKind { uniform, normal, lognormal };

/// Location/scale of log(X) for a lognormal X given by its own mean and std.
struct LogNormalParams {
  double location;
  double scale;
};

inline LogNormalParams lognormal_from_moments(double mean, double std_dev) {
  if (!(mean > 0.0) || !(std_dev >= 0.0))
    throw std::invalid_argument("lognormal requires mean > 0 and std >= 0");
  const double cv = std_dev / mean;
  const double scale2 = std::log1p(cv * cv);
  return {std::log(mean) - 0.5 * scale2, std::sqrt(scale2)};
}

/// Parent distribution of a parameter. For the lognormal, `first`/`second` are the mean
/// and standard deviation of the variable itself, not of its logarithm.
struct PriorSpec {
  PriorKind kind = PriorKind::uniform;
  double first = 0.0;   // uniform: lower; normal/lognormal: mean
  double second = 1.0;  // uniform: upper; normal/lognormal: std

  static PriorSpec uniform(double lower, double upper) { return {PriorKind::uniform, lower, upper}; }
  static PriorSpec normal(double mean, double std_dev) { return {PriorKind::normal, mean, std_dev}; }
  static PriorSpec lognormal(double mean, double std_dev) {
    return {PriorKind::lognormal, mean, std_dev};
  }

  void validate() const {
    switch (kind) {
      case PriorKind::uniform:
        if (!(first < second)) throw std::invalid_argument("uniform prior needs lower < upper");
        break;
      case PriorKind::normal:
        if (!(second > 0.0)) throw std::invalid_argument("normal prior needs std > 0");
        break;
      case PriorKind::lognormal:
        if (!(second > 0.0) || !(first > 0.0))
          throw std::invalid_argument("lognormal prior needs mean > 0 and std > 0");
        break;
    }
  }

  /// Log density of the parent (untruncated) distribution.
  double log_density(double x) const {
    switch (kind) {
      case PriorKind::uniform:
        return (x >= first && x <= second) ? -std::log(second - first) : kNegInf;
      case PriorKind::normal: {
        const double u = (x - first) / second;
        return -0.5 * u * u - std::log(second) - 0.5 * kLogTwoPi;
      }
      case PriorKind::lognormal: {
        if (!(x > 0.0)) return kNegInf;
        const auto ln = lognormal_from_moments(first, second);
        const double u = (std::log(x) - ln.location) / ln.scale;
        return -0.5 * u * u - std::log(x) - std::log(ln.scale) - 0.5 * kLogTwoPi;
      }
    }
    return kNegInf;
  }

  double sample(Rng& rng) const {
    switch (kind) {
      case PriorKind::uniform:
        return first + (second - first) * uniform01(rng);
      case PriorKind::normal:
        return first + second * standard_normal(rng);
      case PriorKind::lognormal: {
        const auto ln = lognormal_from_moments(first, second);
        return std::exp(ln.location + ln.scale * standard_normal(rng));
      }
    }
    return first;
  }
};

inline std::string to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::uniform: return "uniform";
    case PriorKind::normal: return "normal";
    case PriorKind::lognormal: return "lognormal";
  }
  return "uniform";
}

inline PriorKind prior_kind_from_string(const std::string& s) {
  if (s == "uniform") return PriorKind::uniform;
  if (s == "normal") return PriorKind::normal;
  if (s == "lognormal") return PriorKind::lognormal;
  throw ConfigError("unknown prior kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Parameter space
// ---------------------------------------------------------------------------

struct ParameterEntry {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  PriorSpec prior = PriorSpec::uniform(0.0, 1.0);
};

/// Ordered bounded parameters. Optionally one entry carries a stochastic extension whose
/// spread is itself a parameter (`embedded_sigma`), appended last in the extended vector.
class ParameterSpace {
 public:
  ParameterSpace() = default;

  explicit ParameterSpace(std::vector<ParameterEntry> entries,
                          std::optional<std::size_t> embedded_index = std::nullopt,
                          std::optional<ParameterEntry> embedded_sigma = std::nullopt)
      : entries_(std::move(entries)),
        embedded_index_(embedded_index),
        embedded_sigma_(std::move(embedded_sigma)) {
    for (const auto& e : entries_) check_entry(e);
    if (embedded_index_) {
      if (*embedded_index_ >= entries_.size())
        throw std::invalid_argument("embedded index out of range");
      if (!embedded_sigma_) throw std::invalid_argument("embedded parameter needs a sigma prior");
      check_entry(*embedded_sigma_);
      if (!(embedded_sigma_->lower >= 0.0))
        throw std::invalid_argument("embedded spread must have non-negative lower bound");
    }
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<ParameterEntry>& entries() const { return entries_; }
  const ParameterEntry& operator[](std::size_t i) const { return entries_[i]; }
  std::optional<std::size_t> embedded_index() const { return embedded_index_; }
  const std::optional<ParameterEntry>& embedded_sigma() const { return embedded_sigma_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  /// Flat space over (theta, sigma_embed) with no further embedding.
  ParameterSpace extended() const {
    auto flat = entries_;
    if (embedded_sigma_) flat.push_back(*embedded_sigma_);
    return ParameterSpace(std::move(flat));
  }

  /// Same entries without the stochastic extension.
  ParameterSpace base() const { return ParameterSpace(entries_); }

  bool contains(std::span<const double> theta) const {
    if (theta.size() != entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (!(theta[i] >= entries_[i].lower && theta[i] <= entries_[i].upper)) return false;
    return true;
  }

 private:
  static void check_entry(const ParameterEntry& e) {
    if (!(e.lower < e.upper))
      throw std::invalid_argument("parameter '" + e.name + "' needs lower < upper");
    e.prior.validate();
  }

  std::vector<ParameterEntry> entries_;
  std::optional<std::size_t> embedded_index_;
  std::optional<ParameterEntry> embedded_sigma_;
};

/// Sum of per-parameter parent log densities, -inf outside the bounds.
/// Truncation is left unnormalized; samplers are invariant to the missing constant.
inline double prior_log_density(const ParameterSpace& space, std::span<const double> theta) {
  if (theta.size() != space.size())
    throw std::invalid_argument("prior_log_density: dimension mismatch (" +
                                std::to_string(theta.size()) + " vs " +
                                std::to_string(space.size()) + ")");
  double total = 0.0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& e = space[i];
    if (!(theta[i] >= e.lower && theta[i] <= e.upper)) return kNegInf;
    total += e.prior.log_density(theta[i]);
  }
  return total;
}

/// `count` prior draws, one per row; draws outside the bounds are rejected and redrawn.
inline Matrix sample_prior(const ParameterSpace& space, Rng& rng, std::size_t count) {
  if (count < 1) throw std::invalid_argument("sample_prior: count must be >= 1");
  constexpr std::size_t kMaxTries = 1'000'000;
  Matrix out(count, space.size());
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t j = 0; j < space.size(); ++j) {
      const auto& e = space[j];
      std::size_t tries = 0;
      double v;
      do {
        if (++tries > kMaxTries)
          throw NumericalError("sample_prior: prior of '" + e.name +
                               "' has negligible mass inside its bounds");
        v = e.prior.sample(rng);
      } while (!(v >= e.lower && v <= e.upper && std::isfinite(e.prior.log_density(v))));
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return out;
}

/// Latin hypercube design over the bounds: in every dimension each of the `count`
/// equal-width strata holds exactly one point.
inline Matrix latin_hypercube(const ParameterSpace& space, Rng& rng, std::size_t count) {
  if (count < 1) throw std::invalid_argument("latin_hypercube: count must be >= 1");
  Matrix out(count, space.size());
  std::vector<std::size_t> perm(count);
  for (std::size_t j = 0; j < space.size(); ++j) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const double lo = space[j].lower;
    const double width = space[j].upper - space[j].lower;
    for (std::size_t r = 0; r < count; ++r) {
      const double u = (static_cast<double>(perm[r]) + uniform01(rng)) / static_cast<double>(count);
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          std::min(lo + width * u, space[j].upper);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalizer
// ---------------------------------------------------------------------------

/// Affine map of each input dimension's box onto [0,1]; outputs share one joint range.
/// A degenerate (zero-width) range keeps unit scale so constant data stays representable.
struct Normalizer {
  Vector input_lo;
  Vector input_hi;
  double output_lo = 0.0;
  double output_hi = 1.0;

  static Normalizer from_data(const Matrix& inputs, const Matrix& outputs) {
    Normalizer n;
    n.input_lo = inputs.colwise().minCoeff().transpose();
    n.input_hi = inputs.colwise().maxCoeff().transpose();
    n.output_lo = outputs.minCoeff();
    n.output_hi = outputs.maxCoeff();
    return n;
  }

  std::size_t dim() const { return static_cast<std::size_t>(input_lo.size()); }

  double input_width(Eigen::Index j) const {
    const double w = input_hi[j] - input_lo[j];
    return w > 0.0 ? w : 1.0;
  }
  double output_width() const {
    const double w = output_hi - output_lo;
    return w > 0.0 ? w : 1.0;
  }

  Vector to_unit(std::span<const double> x) const {
    Vector u(static_cast<Eigen::Index>(x.size()));
    for (Eigen::Index j = 0; j < u.size(); ++j)
      u[j] = (x[static_cast<std::size_t>(j)] - input_lo[j]) / input_width(j);
    return u;
  }
  Matrix to_unit(const Matrix& x) const {
    Matrix u(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      u.col(j) = (x.col(j).array() - input_lo[j]) / input_width(j);
    return u;
  }
  Vector from_unit(const Vector& u) const {
    Vector x(u.size());
    for (Eigen::Index j = 0; j < u.size(); ++j) x[j] = input_lo[j] + u[j] * input_width(j);
    return x;
  }

  double output_to_unit(double y) const { return (y - output_lo) / output_width(); }
  double output_from_unit(double v) const { return output_lo + v * output_width(); }
};

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

/// Sensor location on the beam surface, mm.
struct Point {
  double x = 0.0;
  double z = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct ObservationGroup {
  std::string label;
  std::vector<std::size_t> indices;  // 0-based
};

struct ObservationSet {
  std::vector<Point> points;
  std::vector<double> values;  // strain change, µm/m
  double noise_std = 0.01;     // normalized output units
  std::vector<ObservationGroup> groups;

  std::size_t size() const { return points.size(); }

  void validate() const {
    if (points.empty()) throw std::invalid_argument("observation set is empty");
    if (points.size() != values.size())
      throw std::invalid_argument("observation points and values differ in length");
    if (!(noise_std > 0.0)) throw std::invalid_argument("noise_std must be > 0");
    std::vector<bool> seen(points.size(), false);
    for (const auto& g : groups) {
      for (auto i : g.indices) {
        if (i >= points.size())
          throw std::invalid_argument("group '" + g.label + "' references a missing point");
        if (seen[i]) throw std::invalid_argument("observation groups overlap");
        seen[i] = true;
      }
    }
  }
};

/// Reads `x_mm,z_mm,strain_microstrain[,group]`. Rows may appear in any order; groups are
/// collected in order of first appearance.
inline ObservationSet read_observations(const std::string& path, double noise_std) {
  const auto table = csv::read(path);
  const std::vector<std::string> base{"x_mm", "z_mm", "strain_microstrain"};
  const bool has_group = table.header.size() == 4 && table.header[3] == "group";
  if (table.header.size() < 3 || !std::equal(base.begin(), base.end(), table.header.begin()) ||
      (table.header.size() == 4 && !has_group) || table.header.size() > 4) {
    throw ParseError(path + ": header must be 'x_mm,z_mm,strain_microstrain[,group]'");
  }
  if (table.rows.empty()) throw ParseError(path + ": no observations");
  ObservationSet obs;
  obs.noise_std = noise_std;
  std::map<std::string, std::size_t> group_index;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    obs.points.push_back({csv::parse_number(table, r, 0), csv::parse_number(table, r, 1)});
    obs.values.push_back(csv::parse_number(table, r, 2));
    if (has_group) {
      const auto& label = table.rows[r][3];
      if (label.empty()) continue;
      auto [it, inserted] = group_index.try_emplace(label, obs.groups.size());
      if (inserted) obs.groups.push_back({label, {}});
      obs.groups[it->second].indices.push_back(r);
    }
  }
  obs.validate();
  return obs;
}

inline void write_observations(const std::string& path, const ObservationSet& obs) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  std::vector<std::string> label(obs.size());
  for (const auto& g : obs.groups)
    for (auto i : g.indices) label[i] = g.label;
  const bool with_groups = !obs.groups.empty();
  out << "x_mm,z_mm,strain_microstrain" << (with_groups ? ",group" : "") << '\n';
  for (std::size_t i = 0; i < obs.size(); ++i) {
    out << csv::format_number(obs.points[i].x) << ',' << csv::format_number(obs.points[i].z) << ','
        << csv::format_number(obs.values[i]);
    if (with_groups) out << ',' << label[i];
    out << '\n';
  }
  if (!out) throw ConfigError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Small statistics helpers shared by the analysis modules
// ---------------------------------------------------------------------------

/// Linear-interpolation quantile of an unsorted sample (q in [0,1]).
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

/// Median absolute deviation about the median (unscaled).
inline double median_abs_deviation(const std::vector<double>& values) {
  const double med = median(values);
  std::vector<double> dev(values.size());
  std::transform(values.begin(), values.end(), dev.begin(),
                 [med](double v) { return std::abs(v - med); });
  return median(std::move(dev));
}

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace tenduq

#endif  // TENDUQ_CORE_HPP
