#ifndef TENDUQ_FORWARD_HPP
#define TENDUQ_FORWARD_HPP

// Analytic stand-ins for the finite element runs, plus the snapshot-table path for
// externally computed simulations. The constants reproduce the qualitative strain field
// (peak near the break, decay along x, larger strains at the bottom fibre); they are not
// a physical model.

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tenduq/core.hpp"

namespace tenduq {

// Parameter order of the calibration vector.
enum CalibrationParam : std::size_t { kEcm = 0, kP0 = 1, kC0 = 2, kMu = 3 };

struct SyntheticBeamModel {
  double a0 = 20.0;         // amplitude at the break, µm/m
  double E_ref = 31000.0;   // reference modulus, MPa
  double phi_p = 9.4;       // tendon diameter, mm
  double sigma_p0 = 755.0;  // prestress, MPa
  double c_ref = 0.5;       // clearance scale, mm
  double beta_z = 0.15;     // vertical asymmetry
  double h = 200.0;         // section height, mm

  void validate() const {
    if (!(a0 > 0 && E_ref > 0 && phi_p > 0 && sigma_p0 > 0 && c_ref > 0 && h > 0))
      throw std::invalid_argument("SyntheticBeamModel constants must be positive");
    if (!(beta_z > -1.0 && beta_z < 1.0))
      throw std::invalid_argument("SyntheticBeamModel beta_z must lie in (-1, 1)");
  }

  /// Re-anchorage length: shorter with more friction or contact pressure, longer with clearance.
  double transfer_length(double p0, double c0, double mu) const {
    return (phi_p * sigma_p0) / (4.0 * mu * p0) * (1.0 + c0 / c_ref);
  }
};

/// Strain change at `point` for theta = (E_cm, p0, c0, mu).
inline double eval_f(const SyntheticBeamModel& m, Point point, std::span<const double> theta) {
  if (theta.size() != 4) throw std::invalid_argument("eval_f expects (E_cm, p0, c0, mu)");
  const double E = theta[kEcm], p0 = theta[kP0], c0 = theta[kC0], mu = theta[kMu];
  if (!(E > 0.0) || !(p0 > 0.0) || !(mu > 0.0))
    throw std::domain_error("eval_f: E_cm, p0 and mu must be positive");
  if (!(point.x >= 0.0)) throw std::domain_error("eval_f: x must be >= 0");
  const double lt = m.transfer_length(p0, c0, mu);
  return m.a0 * (m.E_ref / E) * std::exp(-point.x / lt) * (1.0 + m.beta_z * point.z / m.h);
}

struct TBeamGeometry {
  double h_w = 1000.0;
  double t_w = 1200.0;
  double t_f = 250.0;
  double b_f = 2250.0;
};

/// Upscaled T-beam response to a break at depth lambda (the control parameter a).
/// The decay length scales as (E_ref/E)^kappa; kappa = 0 makes the response separable
/// into a pure 1/E amplitude factor.
struct UpscaledBeamModel {
  double a0 = 20.0;
  double E_ref = 31000.0;
  double L_g = 500.0;   // longitudinal decay length, mm
  double d0 = 150.0;    // depth decay length, mm
  double z_t = 600.0;   // tendon height, mm
  double w_z = 400.0;   // vertical spread, mm
  double kappa = -1.0;  // stiffness exponent of the decay length
  TBeamGeometry geometry;

  void validate() const {
    if (!(a0 > 0 && E_ref > 0 && L_g > 0 && d0 > 0 && w_z > 0))
      throw std::invalid_argument("UpscaledBeamModel lengths and amplitudes must be positive");
  }
};

inline double eval_g(const UpscaledBeamModel& m, Point point, double E_cm, double lambda_a) {
  if (!(E_cm > 0.0)) throw std::domain_error("eval_g: E_cm must be positive");
  if (!(point.x >= 0.0)) throw std::domain_error("eval_g: x must be >= 0");
  if (!(lambda_a >= 0.0)) throw std::domain_error("eval_g: depth must be >= 0");
  const double u = m.E_ref / E_cm;
  const double decay = m.kappa == 0.0 ? m.L_g : m.L_g * std::pow(u, m.kappa);
  const double dz = (point.z - m.z_t) / m.w_z;
  return m.a0 * u * std::exp(-lambda_a / m.d0) * std::exp(-point.x / decay) * std::exp(-dz * dz);
}

// ---------------------------------------------------------------------------
// Observation generation
// ---------------------------------------------------------------------------

struct ObservationGrid {
  std::vector<double> xs;
  std::vector<double> zs;

  /// Five sensor rows at z = -80..80 mm, eleven readings each, 40 mm apart from the break.
  static ObservationGrid dfos_default() {
    ObservationGrid g;
    for (int i = 0; i <= 10; ++i) g.xs.push_back(40.0 * i);
    g.zs = {-80.0, -40.0, 0.0, 40.0, 80.0};
    return g;
  }

  /// Row-major over z: index = row * xs.size() + column.
  std::vector<Point> points() const {
    std::vector<Point> out;
    for (double z : zs)
      for (double x : xs) out.push_back({x, z});
    return out;
  }

  /// One group per distance from the break.
  std::vector<ObservationGroup> distance_groups() const {
    std::vector<ObservationGroup> groups;
    for (std::size_t c = 0; c < xs.size(); ++c) {
      ObservationGroup g{"x=" + csv::format_number(xs[c]), {}};
      for (std::size_t r = 0; r < zs.size(); ++r) g.indices.push_back(r * xs.size() + c);
      groups.push_back(std::move(g));
    }
    return groups;
  }
};

/// Spatially varying stiffness used to corrupt synthetic data with model-form error:
/// E(x, z) = E * (1 + amplitude * sin(2 pi x / wavelength + phase) * cos(pi z / z_period)).
struct StiffnessField {
  double amplitude = 0.0;
  double wavelength_mm = 200.0;
  double phase = 0.0;
  double z_period_mm = 400.0;

  double factor(Point p) const {
    return 1.0 + amplitude * std::sin(2.0 * std::numbers::pi * p.x / wavelength_mm + phase) *
                     std::cos(std::numbers::pi * p.z / z_period_mm);
  }
};

/// Synthetic measurements: eval_f plus Gaussian noise of `noise_std` in normalized output
/// units, converted back to µm/m through `output_scale` (the joint output range).
inline ObservationSet generate_observations(const SyntheticBeamModel& model,
                                            std::span<const double> theta_true,
                                            const ObservationGrid& grid, double noise_std,
                                            double output_scale, Rng& rng,
                                            const StiffnessField& field = {}) {
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");
  ObservationSet obs;
  obs.points = grid.points();
  obs.noise_std = noise_std > 0.0 ? noise_std : 0.01;
  obs.groups = grid.distance_groups();
  std::vector<double> theta(theta_true.begin(), theta_true.end());
  for (const auto& p : obs.points) {
    theta[kEcm] = theta_true[kEcm] * field.factor(p);
    double v = eval_f(model, p, theta);
    if (noise_std > 0.0) v += noise_std * output_scale * standard_normal(rng);
    obs.values.push_back(v);
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Snapshot tables
// ---------------------------------------------------------------------------

/// Externally computed simulations: one row per run, parameters then outputs per point.
struct SnapshotTable {
  std::vector<std::string> param_names;
  Matrix design;   // runs x parameters
  Matrix outputs;  // runs x points
  std::vector<Point> points;

  std::size_t runs() const { return static_cast<std::size_t>(design.rows()); }

  void validate() const {
    if (design.rows() != outputs.rows())
      throw std::invalid_argument("snapshot design/output row counts differ");
    if (static_cast<std::size_t>(outputs.cols()) != points.size())
      throw std::invalid_argument("snapshot output columns do not match points");
    if (static_cast<std::size_t>(design.cols()) != param_names.size())
      throw std::invalid_argument("snapshot design columns do not match parameter names");
  }
};

/// Header: `param:<name>,...,out:<x_mm>:<z_mm>,...`, columns in any order.
inline SnapshotTable load_snapshots(const std::string& path) {
  const auto table = csv::read(path);
  std::vector<std::size_t> param_cols, out_cols;
  SnapshotTable snap;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    const auto& h = table.header[c];
    const auto where = path + ": header column " + std::to_string(c + 1) + " ('" + h + "')";
    if (h.rfind("param:", 0) == 0) {
      if (h.size() == 6) throw ParseError(where + ": empty parameter name");
      snap.param_names.push_back(h.substr(6));
      param_cols.push_back(c);
    } else if (h.rfind("out:", 0) == 0) {
      const auto rest = h.substr(4);
      const auto colon = rest.find(':');
      if (colon == std::string::npos) throw ParseError(where + ": expected out:<x_mm>:<z_mm>");
      Point p;
      try {
        std::size_t used = 0;
        p.x = std::stod(rest.substr(0, colon), &used);
        if (used != colon) throw std::invalid_argument("x");
        const auto zs = rest.substr(colon + 1);
        p.z = std::stod(zs, &used);
        if (used != zs.size()) throw std::invalid_argument("z");
      } catch (const std::exception&) {
        throw ParseError(where + ": non-numeric coordinates");
      }
      snap.points.push_back(p);
      out_cols.push_back(c);
    } else {
      throw ParseError(where + ": expected 'param:' or 'out:' prefix");
    }
  }
  if (param_cols.empty() || out_cols.empty())
    throw ParseError(path + ": header needs at least one param: and one out: column");
  if (table.rows.empty()) throw ParseError(path + ": no simulations");
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  snap.design.resize(n, static_cast<Eigen::Index>(param_cols.size()));
  snap.outputs.resize(n, static_cast<Eigen::Index>(out_cols.size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = static_cast<std::size_t>(r);
    for (std::size_t j = 0; j < param_cols.size(); ++j)
      snap.design(r, static_cast<Eigen::Index>(j)) = csv::parse_number(table, row, param_cols[j]);
    for (std::size_t j = 0; j < out_cols.size(); ++j)
      snap.outputs(r, static_cast<Eigen::Index>(j)) = csv::parse_number(table, row, out_cols[j]);
  }
  return snap;
}

inline void write_snapshots(const std::string& path, const SnapshotTable& snap) {
  snap.validate();
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  bool first = true;
  auto sep = [&] {
    if (!first) out << ',';
    first = false;
  };
  for (const auto& name : snap.param_names) {
    sep();
    out << "param:" << name;
  }
  for (const auto& p : snap.points) {
    sep();
    out << "out:" << csv::format_number(p.x) << ':' << csv::format_number(p.z);
  }
  out << '\n';
  for (Eigen::Index r = 0; r < snap.design.rows(); ++r) {
    first = true;
    for (Eigen::Index j = 0; j < snap.design.cols(); ++j) {
      sep();
      out << csv::format_number(snap.design(r, j));
    }
    for (Eigen::Index j = 0; j < snap.outputs.cols(); ++j) {
      sep();
      out << csv::format_number(snap.outputs(r, j));
    }
    out << '\n';
  }
  if (!out) throw ConfigError("failed writing '" + path + "'");
}

/// Runs eval_f on every design row at every point.
inline SnapshotTable simulate_snapshots(const SyntheticBeamModel& model, const Matrix& design,
                                        const std::vector<Point>& points,
                                        std::vector<std::string> param_names) {
  SnapshotTable snap;
  snap.param_names = std::move(param_names);
  snap.design = design;
  snap.points = points;
  snap.outputs.resize(design.rows(), static_cast<Eigen::Index>(points.size()));
  std::vector<double> theta(static_cast<std::size_t>(design.cols()));
  for (Eigen::Index r = 0; r < design.rows(); ++r) {
    for (Eigen::Index j = 0; j < design.cols(); ++j) theta[static_cast<std::size_t>(j)] = design(r, j);
    for (std::size_t k = 0; k < points.size(); ++k)
      snap.outputs(r, static_cast<Eigen::Index>(k)) = eval_f(model, points[k], theta);
  }
  return snap;
}

}  // namespace tenduq

#endif  // TENDUQ_FORWARD_HPP
