#ifndef TENDUQ_SEPARABILITY_HPP
#define TENDUQ_SEPARABILITY_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tenduq/core.hpp"
#include "tenduq/csv.hpp"
#include "tenduq/forward.hpp"
#include "tenduq/optimize.hpp"
#include "tenduq/parallel.hpp"
#include "tenduq/pce.hpp"
#include "tenduq/surrogate.hpp"

namespace tenduq {

struct Moments {
  double mean = 0.0;
  double std_dev = 0.0;
};

/// Predictive moments at one spatial node as a function of the upscaled parameter.
using LambdaResponse = std::function<Moments(double)>;

/// Admissible range of the upscaled parameter, the comparison grid and the largest
/// perturbation considered.
struct LambdaDomain {
  double lo = 50.0;
  double hi = 500.0;
  std::vector<double> grid;
  double delta_max = 90.0;

  static LambdaDomain uniform(double lo, double hi, std::size_t points, double delta_fraction = 0.2) {
    LambdaDomain d;
    d.lo = lo;
    d.hi = hi;
    d.delta_max = delta_fraction * (hi - lo);
    for (std::size_t i = 0; i < points; ++i)
      d.grid.push_back(points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1));
    return d;
  }

  void validate() const {
    if (!(hi > lo)) throw ConfigError("lambda range must satisfy lo < hi");
    if (grid.empty()) throw ConfigError("lambda grid is empty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (grid[i] < lo || grid[i] > hi) throw ConfigError("lambda grid point outside the admissible range");
      if (i > 0 && !(grid[i] > grid[i - 1])) throw ConfigError("lambda grid must be strictly increasing");
    }
    if (!(delta_max > 0.0)) throw ConfigError("delta_max must be > 0");
  }
};

inline Interval ci_95(const Moments& m) {
  const double s = std::max(0.0, m.std_dev);
  return {m.mean - 1.96 * s, m.mean + 1.96 * s};
}

/// Smallest distance between the two perturbed intervals and the centre interval,
/// positive when every active side is disjoint. Sides leaving [lo, hi] are inactive;
/// nullopt when neither side is active.
inline std::optional<double> separation_margin(const LambdaResponse& f, double lambda0, const Moments& centre,
                                               double delta, const LambdaDomain& dom) {
  const Interval c = ci_95(centre);
  std::optional<double> margin;
  for (double sign : {1.0, -1.0}) {
    const double l = lambda0 + sign * delta;
    if (l < dom.lo || l > dom.hi) continue;
    const Interval p = ci_95(f(l));
    const double gap = std::max(p.lo - c.hi, c.lo - p.hi);
    margin = margin ? std::min(*margin, gap) : gap;
  }
  return margin;
}

inline bool both_sides_exit(double lambda0, double delta, const LambdaDomain& dom) {
  return lambda0 + delta > dom.hi && lambda0 - delta < dom.lo;
}

/// Smallest delta in (0, delta_max] separating lambda0 from both neighbours:
/// a 64-step scan brackets the first feasible step, Nelder-Mead probes the bracket,
/// bisection on the feasibility indicator refines it to 1e-6 delta_max.
inline std::optional<double> min_detectable_delta(const LambdaResponse& f, double lambda0, const LambdaDomain& dom) {
  const Moments centre = f(lambda0);
  auto feasible = [&](double d) {
    const auto m = separation_margin(f, lambda0, centre, d, dom);
    return m && *m > 0.0;
  };
  const int steps = 64;
  const double h = dom.delta_max / steps;
  double lo = 0.0, hi = -1.0;
  for (int k = 1; k <= steps; ++k) {
    const double d = h * k;
    if (feasible(d)) {
      hi = d;
      break;
    }
    lo = d;
  }
  if (hi < 0.0) return std::nullopt;

  // penalized objective restricted to the bracket
  auto objective = [&](const Vector& v) {
    const double d = v[0];
    if (!(d > lo) || d > hi) return std::numeric_limits<double>::infinity();
    const auto m = separation_margin(f, lambda0, centre, d, dom);
    if (!m) return std::numeric_limits<double>::infinity();
    return d / dom.delta_max + (*m > 0.0 ? 0.0 : 1.0 - *m);
  };
  NelderMeadOptions nm;
  nm.max_evaluations = 40;
  nm.initial_step = 0.25;
  nm.x_tolerance = 1e-3 * h;
  const auto r = nelder_mead(objective, Vector::Constant(1, 0.5 * (lo + hi)), nm);
  if (r.x[0] > lo && r.x[0] < hi && feasible(r.x[0])) hi = r.x[0];

  const double tol = 1e-6 * dom.delta_max;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? hi : lo) = mid;
  }
  return hi;
}

struct MaximinResult {
  double lambda_star = 0.0;
  double delta_min = 0.0;
};

/// Algorithm-1 gate at delta_max for every grid point (points whose both sides leave
/// the domain are skipped), then the least favourable grid point.
inline std::optional<MaximinResult> maximin_over_grid(const LambdaResponse& f, const LambdaDomain& dom) {
  std::vector<double> active;
  for (double l : dom.grid) {
    if (both_sides_exit(l, dom.delta_max, dom)) continue;
    const auto m = separation_margin(f, l, f(l), dom.delta_max, dom);
    if (!m || !(*m > 0.0)) return std::nullopt;
    active.push_back(l);
  }
  if (active.empty()) return std::nullopt;
  std::optional<MaximinResult> best;
  for (double l : active) {
    const auto d = min_detectable_delta(f, l, dom);
    if (!d) return std::nullopt;
    if (!best || *d > best->delta_min + 1e-9 * dom.delta_max) best = MaximinResult{l, *d};
  }
  return best;
}

/// Shared probability mass of two normals, trapezoid rule on 2001 points over the union
/// of both mean +- 4 std ranges.
inline double overlap_pair(const Moments& a, const Moments& b) {
  if (!(a.std_dev > 0.0) || !(b.std_dev > 0.0))
    return (a.mean == b.mean && a.std_dev == b.std_dev) ? 1.0 : 0.0;
  const double lo = std::min(a.mean - 4 * a.std_dev, b.mean - 4 * b.std_dev);
  const double hi = std::max(a.mean + 4 * a.std_dev, b.mean + 4 * b.std_dev);
  const int n = 2001;
  const double dx = (hi - lo) / (n - 1);
  auto pdf = [](const Moments& m, double x) {
    const double u = (x - m.mean) / m.std_dev;
    return std::exp(-0.5 * u * u) / (m.std_dev * std::sqrt(2.0 * std::numbers::pi));
  };
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + dx * i;
    const double v = std::min(pdf(a, x), pdf(b, x));
    s += (i == 0 || i == n - 1) ? 0.5 * v : v;
  }
  return std::clamp(s * dx, 0.0, 1.0);
}

/// Mean overlap between lambda and lambda +- delta_max over the sides inside the domain.
inline std::optional<double> overlap_integral(const LambdaResponse& f, double lambda, const LambdaDomain& dom) {
  const Moments c = f(lambda);
  double s = 0.0;
  int sides = 0;
  for (double sign : {1.0, -1.0}) {
    const double l = lambda + sign * dom.delta_max;
    if (l < dom.lo || l > dom.hi) continue;
    s += overlap_pair(c, f(l));
    ++sides;
  }
  if (sides == 0) return std::nullopt;
  return s / sides;
}

struct NodeSeparability {
  Point node;
  bool separable = false;
  std::optional<double> delta_min;
  std::optional<double> lambda_star;
  std::vector<double> overlap;  // per grid point, NaN where no side is inside the domain
  std::optional<double> o_min, o_max, r_o;
};

inline NodeSeparability separability_node(const LambdaResponse& f, Point node, const LambdaDomain& dom) {
  NodeSeparability out;
  out.node = node;
  if (const auto mm = maximin_over_grid(f, dom)) {
    out.separable = true;
    out.delta_min = mm->delta_min;
    out.lambda_star = mm->lambda_star;
    return out;
  }
  double omin = 1.0, omax = 0.0;
  bool any = false;
  for (double l : dom.grid) {
    const auto o = overlap_integral(f, l, dom);
    out.overlap.push_back(o ? *o : std::nan(""));
    if (!o) continue;
    any = true;
    omin = std::min(omin, *o);
    omax = std::max(omax, *o);
  }
  if (any) {
    out.o_min = omin;
    out.o_max = omax;
    out.r_o = omax - omin;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Moment surrogates
// ---------------------------------------------------------------------------

/// Forward response at many spatial nodes for one (E, lambda) pair.
using UpscaledResponse = std::function<Vector(const std::vector<Point>&, double, double)>;

inline UpscaledResponse upscaled_response(const UpscaledBeamModel& model) {
  return [model](const std::vector<Point>& pts, double E, double lambda) {
    Vector v(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) v[static_cast<Eigen::Index>(i)] = eval_g(model, pts[i], E, lambda);
    return v;
  };
}

struct MomentTrainingGrid {
  std::vector<double> xs;
  std::vector<double> zs;
  std::vector<double> lambdas;
  std::size_t train_points = 2500;  // random split of the full grid; the rest validates

  static MomentTrainingGrid defaults() {
    MomentTrainingGrid g;
    for (int i = 0; i < 15; ++i) g.xs.push_back(2500.0 * i / 14.0);
    for (int i = 0; i < 25; ++i) g.zs.push_back(1000.0 * i / 24.0);
    for (int i = 0; i < 20; ++i) g.lambdas.push_back(50.0 + 450.0 * i / 19.0);
    return g;
  }

  std::vector<Point> nodes() const {
    std::vector<Point> p;
    for (double z : zs)
      for (double x : xs) p.push_back({x, z});
    return p;
  }

  void validate() const {
    if (xs.empty() || zs.empty() || lambdas.empty()) throw ConfigError("moment training grid is empty");
    const std::size_t total = xs.size() * zs.size() * lambdas.size();
    if (train_points < 2 || train_points > total)
      throw ConfigError("train_points must lie in [2, " + std::to_string(total) + "]");
  }
};

struct MomentSurrogates {
  GpModel mean_gp;
  GpModel std_gp;
  LambdaDomain domain;
  MetricsReport mean_metrics;
  MetricsReport std_metrics;
  std::size_t forward_evaluations = 0;

  Moments at(Point p, double lambda) const {
    const double q[] = {p.x, p.z, lambda};
    return {mean_gp.mean(q), std::max(0.0, std_gp.mean(q))};
  }

  /// Fast per-node response; both GPs share one design and normalizer.
  LambdaResponse response(Point p) const {
    const auto& norm = mean_gp.normalizer();
    const Matrix& X = mean_gp.train_inputs();
    const double ux = (p.x - norm.input_lo[0]) / norm.input_width(0);
    const double uz = (p.z - norm.input_lo[1]) / norm.input_width(1);
    Vector base(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) base[i] = std::pow(X(i, 0) - ux, 2) + std::pow(X(i, 1) - uz, 2);
    return [this, base, norm, &X](double lambda) {
      const double ul = (lambda - norm.input_lo[2]) / norm.input_width(2);
      const Vector r2 = base.array() + (X.col(2).array() - ul).square();
      return Moments{mean_gp.mean_from_sqdist(r2), std::max(0.0, std_gp.mean_from_sqdist(r2))};
    };
  }
};

struct MomentFitSettings {
  PceConfig pce;
  KernelFamily family = KernelFamily::rbf;
  GpFitOptions gp{3, 400, 400};
};

/// One PCE per training lambda over all nodes (N_lambda * Q forward calls), then GPs for
/// the PCE mean and standard deviation over (x, z, lambda).
inline MomentSurrogates train_moment_surrogates(const UpscaledResponse& g, const StochasticInput& embedded,
                                                const MomentTrainingGrid& grid, const LambdaDomain& domain,
                                                const MomentFitSettings& settings, Rng& rng) {
  grid.validate();
  domain.validate();
  settings.pce.validate();
  embedded.validate();
  const auto nodes = grid.nodes();
  const std::size_t nn = nodes.size(), nl = grid.lambdas.size(), total = nn * nl;

  Matrix inputs(static_cast<Eigen::Index>(total), 3);
  Vector mean(static_cast<Eigen::Index>(total)), sd(static_cast<Eigen::Index>(total));
  std::vector<std::size_t> calls(nl, 0);
  std::vector<PceMoments> moments(nl);
  parallel_for(nl, [&](std::size_t j) {
    const double lambda = grid.lambdas[j];
    const auto pce = build_pce(
        [&](double E) {
          ++calls[j];
          return g(nodes, E, lambda);
        },
        embedded, settings.pce.degree, settings.pce.quadrature);
    moments[j] = pce_moments(pce);
  });
  for (std::size_t j = 0; j < nl; ++j)
    for (std::size_t i = 0; i < nn; ++i) {
      const auto r = static_cast<Eigen::Index>(j * nn + i);
      inputs.row(r) << nodes[i].x, nodes[i].z, grid.lambdas[j];
      mean[r] = moments[j].mean[static_cast<Eigen::Index>(i)];
      sd[r] = std::sqrt(std::max(0.0, moments[j].variance[static_cast<Eigen::Index>(i)]));
    }

  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<long>(grid.train_points));
  std::vector<std::size_t> val(perm.begin() + static_cast<long>(grid.train_points), perm.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  auto rows = [](const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(idx[r]));
    return out;
  };
  const Matrix Xt = rows(inputs, train), mt = rows(mean, train), st = rows(sd, train);

  // one input normalizer shared by both GPs
  Normalizer mean_norm = Normalizer::from_data(Xt, mt.col(0));
  Normalizer std_norm = Normalizer::from_data(Xt, st.col(0));
  MomentSurrogates s;
  s.domain = domain;
  Rng mean_rng = derive_stream(rng(), 0), std_rng = derive_stream(rng(), 1);
  try {
    s.mean_gp = gp_fit(Xt, mt.col(0), mean_norm, settings.family, KernelBounds::moment(), settings.gp, mean_rng);
    s.std_gp = gp_fit(Xt, st.col(0), std_norm, settings.family, KernelBounds::moment(), settings.gp, std_rng);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("moment surrogate fit failed: ") + e.what());
  }
  s.forward_evaluations = std::accumulate(calls.begin(), calls.end(), std::size_t{0});
  if (!val.empty()) {
    const Matrix Xv = rows(inputs, val);
    s.mean_metrics = gp_validate(s.mean_gp, Xv, rows(mean, val).col(0));
    s.std_metrics = gp_validate(s.std_gp, Xv, rows(sd, val).col(0));
  }
  return s;
}

inline std::vector<NodeSeparability> separability_map(const MomentSurrogates& surr, const std::vector<Point>& nodes) {
  surr.domain.validate();
  std::vector<NodeSeparability> out(nodes.size());
  parallel_for(nodes.size(), [&](std::size_t i) { out[i] = separability_node(surr.response(nodes[i]), nodes[i], surr.domain); });
  return out;
}

inline void write_separability_csv(const std::string& path, const std::vector<NodeSeparability>& map) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  auto opt = [](const std::optional<double>& v) { return v ? csv::format_number(*v) : std::string(); };
  out << "x_mm,z_mm,separable,delta_min_mm,lambda_star_mm,o_min,o_max,r_o\n";
  for (const auto& n : map)
    out << csv::format_number(n.node.x) << ',' << csv::format_number(n.node.z) << ',' << (n.separable ? 1 : 0) << ','
        << opt(n.delta_min) << ',' << opt(n.lambda_star) << ',' << opt(n.o_min) << ',' << opt(n.o_max) << ','
        << opt(n.r_o) << '\n';
}

inline nlohmann::json to_json(const NodeSeparability& n) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json ov = nlohmann::json::array();
  for (double v : n.overlap) ov.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  return {{"x_mm", n.node.x},         {"z_mm", n.node.z},       {"separable", n.separable},
          {"delta_min_mm", opt(n.delta_min)}, {"lambda_star_mm", opt(n.lambda_star)}, {"overlap", ov},
          {"o_min", opt(n.o_min)},    {"o_max", opt(n.o_max)},  {"r_o", opt(n.r_o)}};
}

}  // namespace tenduq

#endif  // TENDUQ_SEPARABILITY_HPP
