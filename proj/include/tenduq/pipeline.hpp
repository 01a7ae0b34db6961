#ifndef TENDUQ_PIPELINE_HPP
#define TENDUQ_PIPELINE_HPP

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "tenduq/calibrate.hpp"
#include "tenduq/core.hpp"
#include "tenduq/forward.hpp"
#include "tenduq/influence.hpp"
#include "tenduq/separability.hpp"
#include "tenduq/surrogate.hpp"
#include "tenduq/svg.hpp"

namespace tenduq {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ParameterConfig {
  ParameterEntry entry;
  Interval design;  // surrogate design range
};

struct RunConfig {
  std::uint64_t seed = 42;
  CalibrationMode mode = CalibrationMode::embedded;

  // forward / data generation
  SyntheticBeamModel synthetic;
  UpscaledBeamModel upscaled;
  std::vector<double> theta_true{31000.0, 3.5, 0.45, 0.65};
  double noise_std = 0.01;
  StiffnessField mfu;
  ObservationGrid grid = ObservationGrid::dfos_default();
  std::size_t training_runs = 100;
  std::size_t validation_runs = 49;

  // parameter space
  std::vector<ParameterConfig> parameters;
  std::optional<std::size_t> embedded_index;
  std::optional<ParameterEntry> embedded_sigma;

  KernelFamily gp_family = KernelFamily::rbf;
  KernelBounds gp_bounds = KernelBounds::calibration();
  GpFitOptions gp_options{8, 600, 0};
  PceConfig pce;
  CalibrationSettings mcmc;
  std::size_t posterior_thin = 5;

  std::optional<std::vector<ObservationGroup>> influence_groups;  // unset: groups stored with the data
  std::size_t influence_max_samples = 4000;

  LambdaDomain lambda = LambdaDomain::uniform(50, 500, 20);
  MomentTrainingGrid moment_grid = MomentTrainingGrid::defaults();
  std::vector<Point> separability_nodes;
  MomentFitSettings moment_fit;

  fs::path output_dir = "out";
  std::optional<fs::path> observations_path, snapshots_train_path, snapshots_validation_path;

  fs::path observations() const { return observations_path.value_or(output_dir / "observations.csv"); }
  fs::path snapshots_train() const { return snapshots_train_path.value_or(output_dir / "snapshots_train.csv"); }
  fs::path snapshots_validation() const {
    return snapshots_validation_path.value_or(output_dir / "snapshots_validation.csv");
  }
  fs::path gp_models() const { return output_dir / "gp_models.json"; }
  fs::path posterior(CalibrationMode m) const { return output_dir / ("posterior_" + to_string(m) + ".csv"); }
  fs::path summary(CalibrationMode m) const { return output_dir / ("summary_" + to_string(m) + ".json"); }

  std::vector<std::string> names() const {
    std::vector<std::string> n;
    for (const auto& p : parameters) n.push_back(p.entry.name);
    return n;
  }

  std::vector<ParameterEntry> entries() const {
    std::vector<ParameterEntry> e;
    for (const auto& p : parameters) e.push_back(p.entry);
    return e;
  }

  /// Sampled space for a calibration mode (theta, plus the spread when embedded).
  ParameterSpace space(CalibrationMode m) const {
    if (m == CalibrationMode::plain) return ParameterSpace(entries());
    return ParameterSpace(entries(), embedded_index, embedded_sigma).extended();
  }

  std::vector<std::string> sampled_names(CalibrationMode m) const {
    auto n = names();
    if (m == CalibrationMode::embedded) n.push_back(embedded_sigma->name);
    return n;
  }

  ParameterSpace design_space() const {
    std::vector<ParameterEntry> e;
    for (const auto& p : parameters)
      e.push_back({p.entry.name, p.design.lo, p.design.hi, PriorSpec::uniform(p.design.lo, p.design.hi)});
    return ParameterSpace(e);
  }
};

namespace config_detail {

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
T get(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  const auto& v = obj.at(key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("");
      if constexpr (std::is_unsigned_v<T>)
        if (v.get<long long>() < 0) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline std::vector<double> numbers(const json& obj, const char* key, std::vector<double> fallback, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_array()) throw ConfigError(where + "." + key + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(where + "." + key + ": expected an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline Interval interval(const json& obj, const char* key, Interval fallback, const std::string& where) {
  auto v = numbers(obj, key, {fallback.lo, fallback.hi}, where);
  if (v.size() != 2) throw ConfigError(where + "." + key + ": expected [lower, upper]");
  if (!(v[0] < v[1])) throw ConfigError(where + "." + key + ": needs lower < upper");
  return {v[0], v[1]};
}

inline std::vector<double> linspace(const json& obj, const std::string& where) {
  check_keys(obj, where, {"lower", "upper", "points"});
  const double lo = get<double>(obj, "lower", 0.0, where), hi = get<double>(obj, "upper", 1.0, where);
  const auto n = get<std::size_t>(obj, "points", 2, where);
  if (n < 1) throw ConfigError(where + ".points must be >= 1");
  if (n > 1 && !(hi > lo)) throw ConfigError(where + ": needs lower < upper");
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  return out;
}

/// Either an explicit array or a {lower, upper, points} object.
inline std::vector<double> axis(const json& obj, const char* key, std::vector<double> fallback, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  if (obj.at(key).is_object()) return linspace(obj.at(key), where + "." + key);
  return numbers(obj, key, fallback, where);
}

inline PriorSpec prior(const json& obj, double lower, double upper, const std::string& where) {
  if (!obj.is_object()) return PriorSpec::uniform(lower, upper);
  check_keys(obj, where, {"kind", "mean", "std"});
  const auto kind = prior_kind_from_string(get<std::string>(obj, "kind", "uniform", where));
  if (kind == PriorKind::uniform) return PriorSpec::uniform(lower, upper);
  if (!obj.contains("mean") || !obj.contains("std")) throw ConfigError(where + ": needs mean and std");
  const double m = get<double>(obj, "mean", 0.0, where), s = get<double>(obj, "std", 1.0, where);
  return kind == PriorKind::normal ? PriorSpec::normal(m, s) : PriorSpec::lognormal(m, s);
}

inline ParameterEntry entry(const json& obj, const std::string& where, bool with_design = false) {
  if (with_design)
    check_keys(obj, where, {"name", "lower", "upper", "prior", "design"});
  else
    check_keys(obj, where, {"name", "lower", "upper", "prior"});
  if (!obj.contains("name") || !obj.contains("lower") || !obj.contains("upper"))
    throw ConfigError(where + ": needs name, lower and upper");
  ParameterEntry e;
  e.name = get<std::string>(obj, "name", "", where);
  e.lower = get<double>(obj, "lower", 0.0, where);
  e.upper = get<double>(obj, "upper", 1.0, where);
  if (!(e.lower < e.upper)) throw ConfigError(where + ": needs lower < upper");
  e.prior = prior(obj.contains("prior") ? obj.at("prior") : json(), e.lower, e.upper, where + ".prior");
  try {
    e.prior.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(where + ".prior: " + ex.what());
  }
  return e;
}

inline GpFitOptions gp_options(const json& obj, GpFitOptions d, const std::string& where) {
  d.restarts = get<std::size_t>(obj, "restarts", d.restarts, where);
  d.max_evaluations = get<std::size_t>(obj, "max_evaluations", d.max_evaluations, where);
  d.max_hyperopt_points = get<std::size_t>(obj, "max_hyperopt_points", d.max_hyperopt_points, where);
  if (d.restarts < 1) throw ConfigError(where + ".restarts must be >= 1");
  if (d.max_evaluations < 10) throw ConfigError(where + ".max_evaluations must be >= 10");
  return d;
}

inline std::vector<ParameterConfig> default_parameters() {
  return {
      {{"E_cm", 25200, 37050, PriorSpec::lognormal(33000, 3300)}, {27020, 38980}},
      {{"p0", 2.1, 5.7, PriorSpec::uniform(2.1, 5.7)}, {2.008, 5.992}},
      {{"c0", 0.21, 0.76, PriorSpec::uniform(0.21, 0.76)}, {0.2012, 0.7988}},
      {{"mu", 0.21, 1.14, PriorSpec::uniform(0.21, 1.14)}, {0.202, 1.198}},
  };
}

inline std::vector<Point> default_separability_nodes() {
  std::vector<Point> nodes;
  for (double z : {200.0, 400.0, 600.0, 800.0, 1000.0})
    for (int i = 0; i < 8; ++i) nodes.push_back({2500.0 * i / 7.0, z});
  return nodes;
}

}  // namespace config_detail

/// Parses and validates a run configuration. Every field is optional; defaults reproduce
/// the reference study setup.
inline RunConfig parse_config(const json& root) {
  using namespace config_detail;
  RunConfig c;
  check_keys(root, "config",
             {"seed", "mode", "paths", "forward", "space", "gp", "pce", "mcmc", "influence", "separability"});
  c.seed = get<std::uint64_t>(root, "seed", c.seed, "config");
  c.mode = calibration_mode_from_string(get<std::string>(root, "mode", to_string(c.mode), "config"));

  if (root.contains("paths")) {
    const auto& p = root.at("paths");
    check_keys(p, "paths", {"output_dir", "observations", "snapshots_train", "snapshots_validation"});
    c.output_dir = get<std::string>(p, "output_dir", c.output_dir.string(), "paths");
    if (p.contains("observations") && !p.at("observations").is_null())
      c.observations_path = get<std::string>(p, "observations", "", "paths");
    if (p.contains("snapshots_train") && !p.at("snapshots_train").is_null())
      c.snapshots_train_path = get<std::string>(p, "snapshots_train", "", "paths");
    if (p.contains("snapshots_validation") && !p.at("snapshots_validation").is_null())
      c.snapshots_validation_path = get<std::string>(p, "snapshots_validation", "", "paths");
  }
  if (c.output_dir.empty()) throw ConfigError("paths.output_dir is empty");

  const json fw = root.value("forward", json::object());
  check_keys(fw, "forward",
             {"synthetic", "upscaled", "theta_true", "noise_std", "mfu", "grid", "training_runs", "validation_runs"});
  if (fw.contains("synthetic")) {
    const auto& s = fw.at("synthetic");
    const std::string w = "forward.synthetic";
    check_keys(s, w, {"a0", "E_ref", "phi_p", "sigma_p0", "c_ref", "beta_z", "h"});
    auto& m = c.synthetic;
    m.a0 = get(s, "a0", m.a0, w);
    m.E_ref = get(s, "E_ref", m.E_ref, w);
    m.phi_p = get(s, "phi_p", m.phi_p, w);
    m.sigma_p0 = get(s, "sigma_p0", m.sigma_p0, w);
    m.c_ref = get(s, "c_ref", m.c_ref, w);
    m.beta_z = get(s, "beta_z", m.beta_z, w);
    m.h = get(s, "h", m.h, w);
  }
  if (fw.contains("upscaled")) {
    const auto& s = fw.at("upscaled");
    const std::string w = "forward.upscaled";
    check_keys(s, w, {"a0", "E_ref", "L_g", "d0", "z_t", "w_z", "kappa"});
    auto& m = c.upscaled;
    m.a0 = get(s, "a0", m.a0, w);
    m.E_ref = get(s, "E_ref", m.E_ref, w);
    m.L_g = get(s, "L_g", m.L_g, w);
    m.d0 = get(s, "d0", m.d0, w);
    m.z_t = get(s, "z_t", m.z_t, w);
    m.w_z = get(s, "w_z", m.w_z, w);
    m.kappa = get(s, "kappa", m.kappa, w);
  }
  try {
    c.synthetic.validate();
    c.upscaled.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("forward: ") + e.what());
  }
  c.theta_true = numbers(fw, "theta_true", c.theta_true, "forward");
  c.noise_std = get(fw, "noise_std", c.noise_std, "forward");
  if (!(c.noise_std >= 0.0)) throw ConfigError("forward.noise_std must be >= 0");
  if (fw.contains("mfu")) {
    const auto& s = fw.at("mfu");
    check_keys(s, "forward.mfu", {"amplitude", "wavelength_mm", "phase", "z_period_mm"});
    c.mfu.amplitude = get(s, "amplitude", c.mfu.amplitude, "forward.mfu");
    c.mfu.wavelength_mm = get(s, "wavelength_mm", c.mfu.wavelength_mm, "forward.mfu");
    c.mfu.phase = get(s, "phase", c.mfu.phase, "forward.mfu");
    c.mfu.z_period_mm = get(s, "z_period_mm", c.mfu.z_period_mm, "forward.mfu");
    if (!(c.mfu.amplitude >= 0.0 && c.mfu.amplitude < 1.0)) throw ConfigError("forward.mfu.amplitude must lie in [0, 1)");
    if (!(c.mfu.wavelength_mm > 0.0 && c.mfu.z_period_mm > 0.0)) throw ConfigError("forward.mfu lengths must be > 0");
  }
  if (fw.contains("grid")) {
    const auto& g = fw.at("grid");
    check_keys(g, "forward.grid", {"x_mm", "z_mm"});
    c.grid.xs = axis(g, "x_mm", c.grid.xs, "forward.grid");
    c.grid.zs = axis(g, "z_mm", c.grid.zs, "forward.grid");
    if (c.grid.xs.empty() || c.grid.zs.empty()) throw ConfigError("forward.grid needs x_mm and z_mm values");
    for (double x : c.grid.xs)
      if (!(x >= 0.0)) throw ConfigError("forward.grid.x_mm values must be >= 0");
  }
  c.training_runs = get(fw, "training_runs", c.training_runs, "forward");
  c.validation_runs = get(fw, "validation_runs", c.validation_runs, "forward");
  if (c.training_runs < 5) throw ConfigError("forward.training_runs must be >= 5");
  if (c.validation_runs < 1) throw ConfigError("forward.validation_runs must be >= 1");

  const json sp = root.value("space", json::object());
  check_keys(sp, "space", {"parameters", "embedded"});
  if (sp.contains("parameters")) {
    const auto& arr = sp.at("parameters");
    if (!arr.is_array() || arr.empty()) throw ConfigError("space.parameters must be a non-empty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string w = "space.parameters[" + std::to_string(i) + "]";
      ParameterConfig pc;
      pc.entry = entry(arr[i], w, true);
      pc.design = interval(arr[i], "design", {pc.entry.lower, pc.entry.upper}, w);
      c.parameters.push_back(pc);
    }
  } else {
    c.parameters = default_parameters();
  }
  if (c.parameters.size() != 4)
    throw ConfigError("space.parameters must list the four forward-model parameters (E_cm, p0, c0, mu order)");
  if (c.theta_true.size() != c.parameters.size()) throw ConfigError("forward.theta_true must have one value per parameter");

  json emb = sp.contains("embedded") ? sp.at("embedded")
                                     : json{{"parameter", c.parameters[0].entry.name},
                                            {"sigma", {{"name", "sigma_E_cm"}, {"lower", 250.0}, {"upper", 7410.0}}}};
  if (!emb.is_null()) {
    check_keys(emb, "space.embedded", {"parameter", "sigma"});
    const auto name = get<std::string>(emb, "parameter", "", "space.embedded");
    const auto names = c.names();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ConfigError("space.embedded.parameter '" + name + "' is not a parameter");
    c.embedded_index = static_cast<std::size_t>(it - names.begin());
    if (!emb.contains("sigma")) throw ConfigError("space.embedded needs a sigma entry");
    c.embedded_sigma = entry(emb.at("sigma"), "space.embedded.sigma");
    if (!(c.embedded_sigma->lower >= 0.0)) throw ConfigError("space.embedded.sigma.lower must be >= 0");
  }
  if (c.mode == CalibrationMode::embedded && !c.embedded_index)
    throw ConfigError("embedded mode needs space.embedded");

  if (root.contains("gp")) {
    const auto& g = root.at("gp");
    check_keys(g, "gp", {"family", "restarts", "max_evaluations", "max_hyperopt_points", "bounds"});
    c.gp_family = kernel_family_from_string(get<std::string>(g, "family", to_string(c.gp_family), "gp"));
    c.gp_options = gp_options(g, c.gp_options, "gp");
    if (g.contains("bounds")) {
      const auto& b = g.at("bounds");
      check_keys(b, "gp.bounds", {"length_scale", "signal_var", "noise_var"});
      c.gp_bounds.length_scale = interval(b, "length_scale", c.gp_bounds.length_scale, "gp.bounds");
      c.gp_bounds.signal_var = interval(b, "signal_var", c.gp_bounds.signal_var, "gp.bounds");
      c.gp_bounds.noise_var = interval(b, "noise_var", c.gp_bounds.noise_var, "gp.bounds");
    }
  }
  try {
    c.gp_bounds.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("gp.bounds: ") + e.what());
  }

  if (root.contains("pce")) {
    const auto& p = root.at("pce");
    check_keys(p, "pce", {"degree", "quadrature"});
    c.pce.degree = get(p, "degree", c.pce.degree, "pce");
    c.pce.quadrature = get(p, "quadrature", c.pce.quadrature, "pce");
  }
  c.pce.validate();

  if (root.contains("mcmc")) {
    const auto& m = root.at("mcmc");
    check_keys(m, "mcmc", {"walkers", "steps_phase1", "steps_phase2", "stretch_a", "alpha", "gamma", "thin"});
    c.mcmc.walkers = get(m, "walkers", c.mcmc.walkers, "mcmc");
    c.mcmc.steps_phase1 = get(m, "steps_phase1", c.mcmc.steps_phase1, "mcmc");
    c.mcmc.steps_phase2 = get(m, "steps_phase2", c.mcmc.steps_phase2, "mcmc");
    c.mcmc.stretch_a = get(m, "stretch_a", c.mcmc.stretch_a, "mcmc");
    c.mcmc.alpha = get(m, "alpha", c.mcmc.alpha, "mcmc");
    c.mcmc.gamma = get(m, "gamma", c.mcmc.gamma, "mcmc");
    c.posterior_thin = get(m, "thin", c.posterior_thin, "mcmc");
    if (c.posterior_thin < 1) throw ConfigError("mcmc.thin must be >= 1");
  }
  c.mcmc.validate(c.parameters.size() + (c.embedded_index ? 1 : 0));

  if (root.contains("influence")) {
    const auto& inf = root.at("influence");
    check_keys(inf, "influence", {"groups", "max_samples"});
    c.influence_max_samples = get(inf, "max_samples", c.influence_max_samples, "influence");
    if (c.influence_max_samples < 10) throw ConfigError("influence.max_samples must be >= 10");
    if (inf.contains("groups") && !inf.at("groups").is_null()) {
      const auto& g = inf.at("groups");
      if (g.is_string()) {
        if (g.get<std::string>() != "x_bins") throw ConfigError("influence.groups must be 'x_bins' or a list");
        c.influence_groups = c.grid.distance_groups();
      } else if (g.is_array()) {
        std::vector<ObservationGroup> groups;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::string w = "influence.groups[" + std::to_string(i) + "]";
          check_keys(g[i], w, {"label", "indices"});
          ObservationGroup og;
          og.label = get<std::string>(g[i], "label", "S" + std::to_string(i + 1), w);
          for (double v : numbers(g[i], "indices", {}, w)) {
            if (v < 0 || v != std::floor(v)) throw ConfigError(w + ".indices must be non-negative integers");
            og.indices.push_back(static_cast<std::size_t>(v));
          }
          if (og.indices.empty()) throw ConfigError(w + " is empty");
          groups.push_back(og);
        }
        if (groups.empty()) throw ConfigError("influence.groups is empty");
        c.influence_groups = groups;
      } else {
        throw ConfigError("influence.groups must be 'x_bins' or a list");
      }
    }
  }

  c.separability_nodes = default_separability_nodes();
  if (root.contains("separability")) {
    const auto& s = root.at("separability");
    check_keys(s, "separability", {"lambda", "delta_max", "training", "nodes", "gp", "family"});
    if (s.contains("lambda")) {
      const auto grid = linspace(s.at("lambda"), "separability.lambda");
      if (grid.size() < 2) throw ConfigError("separability.lambda needs at least 2 points");
      c.lambda = LambdaDomain::uniform(grid.front(), grid.back(), grid.size());
    }
    c.lambda.delta_max = get(s, "delta_max", 0.2 * (c.lambda.hi - c.lambda.lo), "separability");
    c.moment_grid.lambdas = c.lambda.grid;
    if (s.contains("training")) {
      const auto& t = s.at("training");
      check_keys(t, "separability.training", {"x_mm", "z_mm", "train_points"});
      c.moment_grid.xs = axis(t, "x_mm", c.moment_grid.xs, "separability.training");
      c.moment_grid.zs = axis(t, "z_mm", c.moment_grid.zs, "separability.training");
      c.moment_grid.train_points = get(t, "train_points", c.moment_grid.train_points, "separability.training");
    }
    if (s.contains("nodes")) {
      const auto& n = s.at("nodes");
      check_keys(n, "separability.nodes", {"x_mm", "z_mm"});
      const auto xs = axis(n, "x_mm", {}, "separability.nodes"), zs = axis(n, "z_mm", {}, "separability.nodes");
      if (xs.empty() || zs.empty()) throw ConfigError("separability.nodes needs x_mm and z_mm");
      c.separability_nodes.clear();
      for (double z : zs)
        for (double x : xs) c.separability_nodes.push_back({x, z});
    }
    if (s.contains("gp")) c.moment_fit.gp = gp_options(s.at("gp"), c.moment_fit.gp, "separability.gp");
    c.moment_fit.family = kernel_family_from_string(get<std::string>(s, "family", to_string(c.moment_fit.family), "separability"));
  }
  c.moment_fit.pce = c.pce;
  c.lambda.validate();
  c.moment_grid.validate();
  for (const auto& p : c.separability_nodes)
    if (!(p.x >= 0.0)) throw ConfigError("separability node x must be >= 0");
  try {
    c.design_space();
    c.space(CalibrationMode::plain);
    if (c.embedded_index) c.space(CalibrationMode::embedded);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("space: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(root);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Set of files produced by one command, written only after all computation succeeded.
class Artifacts {
 public:
  explicit Artifacts(fs::path dir) : dir_(std::move(dir)) {}
  void add(const fs::path& path, std::string content) { files_.emplace_back(path, std::move(content)); }
  void add_json(const fs::path& path, const json& j) { add(path, j.dump(2) + "\n"); }

  std::vector<fs::path> commit() const {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir_.string() + "': " + ec.message());
    std::vector<fs::path> written;
    for (const auto& [path, content] : files_) {
      if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
      std::ofstream out(path, std::ios::binary);
      if (!out) throw ConfigError("cannot write '" + path.string() + "'");
      out << content;
      if (!out) throw ConfigError("failed writing '" + path.string() + "'");
      written.push_back(path);
    }
    return written;
  }

 private:
  fs::path dir_;
  std::vector<std::pair<fs::path, std::string>> files_;
};

namespace pipeline_detail {

inline void require(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw ConfigError("missing input '" + p.string() + "' (" + hint + ")");
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(slurp(p));
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

/// Renders a file produced by a path-based writer into a string.
template <class Writer>
std::string render_file(Writer&& write) {
  const auto tmp = fs::temp_directory_path() /
                   ("tenduq_" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + ".tmp");
  write(tmp.string());
  auto s = slurp(tmp);
  fs::remove(tmp);
  return s;
}

/// One group per distinct x, in order of first appearance.
inline std::vector<ObservationGroup> x_groups(const ObservationSet& obs) {
  std::vector<ObservationGroup> groups;
  std::map<double, std::size_t> index;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    auto [it, inserted] = index.try_emplace(obs.points[i].x, groups.size());
    if (inserted) groups.push_back({"x=" + csv::format_number(obs.points[i].x), {}});
    groups[it->second].indices.push_back(i);
  }
  return groups;
}

inline PointwiseEmulator load_emulator(const RunConfig& c) {
  require(c.gp_models(), "run train-gp first");
  auto em = pointwise_from_json(read_json(c.gp_models()));
  if (em.param_names != c.names()) throw ConfigError("trained GP parameters do not match space.parameters");
  return em;
}

inline ObservationSet load_observations(const RunConfig& c, const PointwiseEmulator& em) {
  require(c.observations(), "run generate first or set paths.observations");
  if (!(c.noise_std > 0.0)) throw ConfigError("forward.noise_std must be > 0 for calibration");
  auto obs = read_observations(c.observations().string(), c.noise_std);
  if (obs.points != em.points) throw ConfigError("observation points do not match the trained GP points");
  return obs;
}

inline LikelihoodSpec likelihood(const RunConfig& c, CalibrationMode mode, const PointwiseEmulator& em) {
  LikelihoodSpec spec;
  spec.mode = mode;
  spec.noise_std = c.noise_std;
  spec.emulator = Emulator::from(em);
  spec.pce = c.pce;
  spec.embedded_index = c.embedded_index.value_or(0);
  return spec;
}

inline std::string predictive_svg(const ObservationSet& obs, const PredictiveReport& r, const std::string& title) {
  const auto n = obs.size();
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min({lo, obs.values[i], r.mean[i] - 1.96 * r.std_dev[i]});
    hi = std::max({hi, obs.values[i], r.mean[i] + 1.96 * r.std_dev[i]});
  }
  const double pad = 0.05 * (hi - lo + 1e-12);
  svg::Plot p(900, 420, title);
  p.set_range(-0.5, static_cast<double>(n) - 0.5, lo - pad, hi + pad);
  p.set_labels("observation index", "strain [microstrain]");
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i);
    const bool inside = std::abs(r.z[i]) <= 1.96;
    p.line(x, r.mean[i] - 1.96 * r.std_dev[i], x, r.mean[i] + 1.96 * r.std_dev[i], inside ? "#6a9fd8" : "#d86a6a", 2.0);
    p.circle(x, r.mean[i], 2.5, "#1f4e8c");
    p.circle(x, obs.values[i], 2.5, "black");
  }
  return svg::document({&p});
}

inline std::string influence_svg(const InfluenceReport& r) {
  const auto G = r.subsets.size();
  const auto d = r.parameters.size();
  std::vector<std::unique_ptr<svg::Plot>> panels;
  auto bars = [&](const std::string& title, const Matrix& values) {
    auto p = std::make_unique<svg::Plot>(900, 300, title);
    p->set_range(-0.5, static_cast<double>(G) - 0.5, 0.0, std::max(1e-12, values.maxCoeff()) * 1.1);
    p->set_labels("subset", "normalized influence");
    const auto k = values.cols();
    const double w = 0.8 / static_cast<double>(k);
    for (std::size_t g = 0; g < G; ++g) {
      for (Eigen::Index c = 0; c < k; ++c) {
        const double x0 = static_cast<double>(g) - 0.4 + w * static_cast<double>(c);
        p->rect(x0, 0.0, x0 + w * 0.9, values(static_cast<Eigen::Index>(g), c),
                svg::ramp(k == 1 ? 0.2 : static_cast<double>(c) / static_cast<double>(k - 1)));
      }
      p->text(static_cast<double>(g), -0.0, r.subsets[g], 9);
    }
    std::string legend;
    for (std::size_t c = 0; c < static_cast<std::size_t>(k) && k > 1; ++c) legend += (c ? ", " : "") + r.parameters[c];
    if (!legend.empty()) p->text(static_cast<double>(G) - 0.5, values.maxCoeff() * 1.05, legend, 10, "end");
    panels.push_back(std::move(p));
  };
  bars("global", r.global_normalized);
  bars("KDE marginal", r.kde_normalized);
  bars("fixed mean", r.fixed_normalized);
  (void)d;
  std::vector<const svg::Plot*> ptrs;
  for (auto& p : panels) ptrs.push_back(p.get());
  return svg::document(ptrs);
}

inline std::string separability_svg(const std::vector<NodeSeparability>& map, bool delta) {
  double xmax = 1, zmin = 1e300, zmax = -1e300, vmax = 0;
  for (const auto& n : map) {
    xmax = std::max(xmax, n.node.x);
    zmin = std::min(zmin, n.node.z);
    zmax = std::max(zmax, n.node.z);
    const auto v = delta ? n.delta_min : n.o_max;
    if (v) vmax = std::max(vmax, *v);
  }
  if (zmax <= zmin) zmax = zmin + 1;
  svg::Plot p(900, 380, delta ? "minimal detectable change [mm] (grey: non-separable)"
                              : "maximum overlap O_max (grey: separable)");
  p.set_range(-0.03 * xmax, xmax * 1.03, zmin - 0.05 * (zmax - zmin), zmax + 0.05 * (zmax - zmin));
  p.set_labels("x [mm]", "z [mm]");
  for (const auto& n : map) {
    const auto v = delta ? n.delta_min : n.o_max;
    const std::string fill = v ? svg::ramp(vmax > 0 ? *v / vmax : 0.0) : "#bbbbbb";
    p.circle(n.node.x, n.node.z, 7, fill, "#333");
  }
  p.text(xmax, zmax + 0.03 * (zmax - zmin), "max " + svg::label(vmax), 10, "end");
  return svg::document({&p});
}

/// Retained post-burn-in rows of a posterior CSV.
inline Matrix read_posterior(const fs::path& path, std::size_t burn_in, const std::vector<std::string>& names) {
  const auto t = csv::read(path.string());
  if (t.header.size() != names.size() + 3 || t.header[0] != "walker" || t.header[1] != "step")
    throw ConfigError("'" + path.string() + "' does not match the configured parameters");
  for (std::size_t k = 0; k < names.size(); ++k)
    if (t.header[2 + k] != names[k]) throw ConfigError("'" + path.string() + "' does not match the configured parameters");
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    if (csv::parse_number(t, r, 1) >= static_cast<double>(burn_in)) rows.push_back(r);
  Matrix s(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < names.size(); ++k)
      s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = csv::parse_number(t, rows[i], 2 + k);
  return s;
}

inline Matrix thin_rows(const Matrix& s, std::size_t max_rows) {
  if (static_cast<std::size_t>(s.rows()) <= max_rows) return s;
  const double stride = static_cast<double>(s.rows()) / static_cast<double>(max_rows);
  Matrix out(static_cast<Eigen::Index>(max_rows), s.cols());
  for (std::size_t i = 0; i < max_rows; ++i)
    out.row(static_cast<Eigen::Index>(i)) = s.row(static_cast<Eigen::Index>(std::floor(stride * static_cast<double>(i))));
  return out;
}

enum Stream : std::uint64_t { kDesign = 1, kValidation, kNoise, kGp, kPlain, kEmbedded, kMoments };

}  // namespace pipeline_detail

struct CommandOptions {
  std::optional<CalibrationMode> mode;
  bool plots = false;
};

inline std::vector<fs::path> cmd_generate(const RunConfig& c, const CommandOptions& opt = {}) {
  using namespace pipeline_detail;
  (void)opt;
  const auto names = c.names();
  const auto space = c.design_space();
  Rng design_rng = derive_stream(c.seed, kDesign), val_rng = derive_stream(c.seed, kValidation),
      noise_rng = derive_stream(c.seed, kNoise);
  const auto points = c.grid.points();
  const auto train = simulate_snapshots(c.synthetic, latin_hypercube(space, design_rng, c.training_runs), points, names);
  const auto val = simulate_snapshots(c.synthetic, latin_hypercube(space, val_rng, c.validation_runs), points, names);
  const double scale = std::max(train.outputs.maxCoeff() - train.outputs.minCoeff(), 1e-12);
  const auto obs = generate_observations(c.synthetic, c.theta_true, c.grid, c.noise_std, scale, noise_rng, c.mfu);

  Artifacts a(c.output_dir);
  a.add(c.observations(), render_file([&](const std::string& p) { write_observations(p, obs); }));
  a.add(c.snapshots_train(), render_file([&](const std::string& p) { write_snapshots(p, train); }));
  a.add(c.snapshots_validation(), render_file([&](const std::string& p) { write_snapshots(p, val); }));
  return a.commit();
}

inline std::vector<fs::path> cmd_train_gp(const RunConfig& c, const CommandOptions& opt = {}) {
  using namespace pipeline_detail;
  (void)opt;
  require(c.snapshots_train(), "run generate first or set paths.snapshots_train");
  require(c.snapshots_validation(), "run generate first or set paths.snapshots_validation");
  const auto train = load_snapshots(c.snapshots_train().string());
  const auto val = load_snapshots(c.snapshots_validation().string());
  if (train.param_names != c.names() || val.param_names != c.names())
    throw ConfigError("snapshot parameter columns do not match space.parameters");
  if (train.points != val.points) throw ConfigError("training and validation snapshots use different points");

  const auto em = fit_pointwise(train, c.gp_family, c.gp_bounds, c.gp_options, derive_stream(c.seed, kGp)());
  const auto train_m = validate_pointwise(em, train);
  const auto val_m = validate_pointwise(em, val);
  json per_point = json::array();
  for (std::size_t j = 0; j < em.models.size(); ++j) {
    const auto& k = em.models[j].kernel();
    per_point.push_back({{"x_mm", em.points[j].x},
                         {"z_mm", em.points[j].z},
                         {"length_scale", k.length_scale},
                         {"signal_var", k.signal_var},
                         {"noise_var", k.noise_var},
                         {"log_marginal_likelihood", em.models[j].log_marginal_likelihood()}});
  }
  Artifacts a(c.output_dir);
  a.add_json(c.gp_models(), to_json(em));
  a.add_json(c.output_dir / "gp_metrics.json",
             {{"train", to_json(train_m)}, {"validation", to_json(val_m)}, {"points", per_point}});
  return a.commit();
}

inline std::vector<fs::path> cmd_calibrate(const RunConfig& c, const CommandOptions& opt = {}) {
  using namespace pipeline_detail;
  const auto mode = opt.mode.value_or(c.mode);
  if (mode == CalibrationMode::embedded && !c.embedded_index) throw ConfigError("embedded mode needs space.embedded");
  const auto em = load_emulator(c);
  const auto obs = load_observations(c, em);
  const auto spec = likelihood(c, mode, em);
  spec.validate(obs);
  const auto space = c.space(mode);
  const auto names = c.sampled_names(mode);

  Rng rng = derive_stream(c.seed, mode == CalibrationMode::plain ? kPlain : kEmbedded);
  const LogDensity loglike = [&](std::span<const double> th) {
    try {
      return log_likelihood(spec, th, obs);
    } catch (const std::domain_error&) {
      return kNegInf;
    }
  };
  const auto res = run_calibration(space, loglike, c.mcmc, rng);
  const auto& ens = res.ensemble;
  const Matrix post = ens.samples(res.burn_in);
  const auto summary = summarize_samples(post, names);
  const auto predictive = predictive_check(post, obs, spec);

  std::ostringstream csvout;
  csvout << "walker,step";
  for (const auto& n : names) csvout << ',' << n;
  csvout << ",log_posterior\n";
  for (auto w : ens.retained)
    for (std::size_t t = 0; t < ens.steps; t += c.posterior_thin) {
      csvout << w << ',' << t;
      for (double v : ens.sample(w, t)) csvout << ',' << csv::format_number(v);
      csvout << ',' << csv::format_number(ens.log_posterior(w, t)) << '\n';
    }

  auto prune_json = [](const PruneOutcome& p) {
    return json{{"retained", p.retained}, {"pruned", p.pruned}, {"clusters", p.clusters}, {"threshold", p.threshold}};
  };
  json j = {{"mode", to_string(mode)},
            {"walkers", ens.walkers},
            {"steps", ens.steps},
            {"burn_in", res.burn_in},
            {"posterior_thin", c.posterior_thin},
            {"acceptance", {{"phase1", res.acceptance_phase1}, {"phase2", res.acceptance_phase2}}},
            {"pruning", {{"after_burn_in", prune_json(res.first_prune)}, {"final", prune_json(res.final_prune)}}},
            {"parameters", to_json(summary)},
            {"predictive", to_json(predictive)}};

  Artifacts a(c.output_dir);
  a.add(c.posterior(mode), csvout.str());
  a.add_json(c.summary(mode), j);
  if (opt.plots)
    a.add(c.output_dir / ("predictive_" + to_string(mode) + ".svg"),
          predictive_svg(obs, predictive, "posterior predictive 95% intervals (" + to_string(mode) + ")"));
  return a.commit();
}

inline std::vector<fs::path> cmd_influence(const RunConfig& c, const CommandOptions& opt = {}) {
  using namespace pipeline_detail;
  const auto mode = opt.mode.value_or(c.mode);
  const auto em = load_emulator(c);
  const auto obs = load_observations(c, em);
  require(c.summary(mode), "run calibrate --mode " + to_string(mode) + " first");
  require(c.posterior(mode), "run calibrate --mode " + to_string(mode) + " first");
  const auto summary = read_json(c.summary(mode));
  const auto burn_in = summary.at("burn_in").get<std::size_t>();
  const auto names = c.sampled_names(mode);
  const Matrix samples = thin_rows(read_posterior(c.posterior(mode), burn_in, names), c.influence_max_samples);
  if (samples.rows() < 10) throw ConfigError("too few posterior samples for influence analysis");

  std::vector<ObservationGroup> groups = c.influence_groups.value_or(obs.groups);
  if (groups.empty()) groups = x_groups(obs);
  const auto spec = likelihood(c, mode, em);
  spec.validate(obs);
  const auto rep = influence_report(samples, obs, groups, spec, names);
  auto j = to_json(rep);
  j["mode"] = to_string(mode);
  j["samples"] = samples.rows();

  Artifacts a(c.output_dir);
  a.add_json(c.output_dir / ("influence_" + to_string(mode) + ".json"), j);
  if (opt.plots) a.add(c.output_dir / ("influence_" + to_string(mode) + ".svg"), influence_svg(rep));
  return a.commit();
}

inline std::vector<fs::path> cmd_separability(const RunConfig& c, const CommandOptions& opt = {}) {
  using namespace pipeline_detail;
  if (!c.embedded_index) throw ConfigError("separability needs space.embedded");
  const auto path = c.summary(CalibrationMode::embedded);
  require(path, "run calibrate --mode embedded first");
  const auto summary = read_json(path);
  const auto& name = c.parameters[*c.embedded_index].entry.name;
  std::optional<double> mean, spread;
  for (const auto& p : summary.at("parameters")) {
    if (p.at("parameter") == name) mean = p.at("mean").get<double>();
    if (p.at("parameter") == c.embedded_sigma->name) spread = p.at("mean").get<double>();
  }
  if (!mean || !spread) throw ConfigError("'" + path.string() + "' lacks the embedded parameter summary");
  if (!(*spread > 0.0)) throw NumericalError("posterior embedded spread is zero");

  Rng rng = derive_stream(c.seed, kMoments);
  const StochasticInput input{StochasticKind::lognormal, *mean, *spread};
  const auto surr = train_moment_surrogates(upscaled_response(c.upscaled), input, c.moment_grid, c.lambda, c.moment_fit, rng);
  const auto map = separability_map(surr, c.separability_nodes);

  json nodes = json::array();
  for (const auto& n : map) nodes.push_back(to_json(n));
  json j = {{"embedded", {{"mean", *mean}, {"std", *spread}}},
            {"lambda", {{"lower", c.lambda.lo}, {"upper", c.lambda.hi}, {"grid", c.lambda.grid}, {"delta_max", c.lambda.delta_max}}},
            {"forward_evaluations", surr.forward_evaluations},
            {"mean_gp", {{"validation", to_json(surr.mean_metrics)}, {"length_scale", surr.mean_gp.kernel().length_scale}}},
            {"std_gp", {{"validation", to_json(surr.std_metrics)}, {"length_scale", surr.std_gp.kernel().length_scale}}},
            {"nodes", nodes}};

  Artifacts a(c.output_dir);
  a.add(c.output_dir / "separability.csv", render_file([&](const std::string& p) { write_separability_csv(p, map); }));
  a.add_json(c.output_dir / "separability.json", j);
  if (opt.plots) {
    a.add(c.output_dir / "separability_delta.svg", separability_svg(map, true));
    a.add(c.output_dir / "separability_overlap.svg", separability_svg(map, false));
  }
  return a.commit();
}

inline std::vector<fs::path> run_command(const std::string& name, const RunConfig& c, const CommandOptions& opt) {
  if (name == "generate") return cmd_generate(c, opt);
  if (name == "train-gp") return cmd_train_gp(c, opt);
  if (name == "calibrate") return cmd_calibrate(c, opt);
  if (name == "influence") return cmd_influence(c, opt);
  if (name == "separability") return cmd_separability(c, opt);
  throw ConfigError("unknown command '" + name + "'");
}

}  // namespace tenduq

#endif  // TENDUQ_PIPELINE_HPP
