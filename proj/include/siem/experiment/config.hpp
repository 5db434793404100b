#pragma once

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "siem/errors.hpp"
#include "siem/gaussian_mixture.hpp"
#include "siem/grid.hpp"
#include "siem/qwiener.hpp"
#include "siem/ratio.hpp"
#include "siem/schedule.hpp"
#include "siem/score_model.hpp"
#include "siem/siem.hpp"
#include "siem/spde.hpp"

namespace siem::experiment {

/// Schema violations, one "path: message" line per problem.
class ConfigError : public InvalidArgument {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : InvalidArgument(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s;
    for (const auto& line : p) s += (s.empty() ? "" : "\n") + line;
    return s;
  }
  std::vector<std::string> problems_;
};

enum class Kind { corruption_sweep, truncation_study, training_progress, spde_energy };

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::corruption_sweep:
      return "corruption_sweep";
    case Kind::truncation_study:
      return "truncation_study";
    case Kind::training_progress:
      return "training_progress";
    case Kind::spde_energy:
      return "spde_energy";
  }
  return "?";
}

struct ScheduleConfig {
  std::size_t steps = 200;
  double beta_start = 5e-4;
  double beta_end = 0.1;
};

struct TargetConfig {
  std::vector<double> weights{0.5, 0.5};
  std::vector<std::vector<double>> means{{-1.5, 0.0}, {1.5, 0.0}};
  std::vector<std::vector<double>> variances{{0.25, 0.25}, {0.25, 0.25}};
};

struct SiemSection {
  XiEstimator estimator = XiEstimator::marginal;
  std::size_t samples = 4096;
  std::optional<double> epsilon;
  double smoothing_sigma = 10.0;
  double truncation_fraction = 0.1;
  bool classifier_ratio = false;
  std::size_t data_samples = 100000;  // x0 pool for the dsm estimator
};

struct RatioSection {
  RatioConfig classifier;
  std::size_t samples = 2048;  // per class and step
};

struct CorruptionSection {
  std::vector<double> amplitudes{0.0, 0.05, 0.1, 0.2, 0.4, 0.8};
  double bias_amplitude = 0.0;
  BiasPattern bias_pattern = BiasPattern::constant;
  double correlation_length = 0.5;
  int features = 64;
};

struct TrainingSection {
  ScoreTrainingConfig score;
  std::size_t data_samples = 20000;
};

struct MetricsSection {
  std::size_t samples = 1000;
  double blur = 0.05;
  double scaling = 0.9;
};

struct SpdeSection {
  GridGeometry geometry{1, 256, 8.0};
  double dt = 1e-3;
  std::size_t steps = 3000;
  double target_variance = 1.0;
  double initial_mean = 1.0;
  double initial_variance = 1.0;
  SpectralNoiseSpec noise = SpectralNoiseSpec::defaults(1);
  bool noise_enabled = true;
  double energy_floor = 1e-10;
  double noise_quantile = 0.95;
};

struct ExperimentConfig {
  Kind kind = Kind::corruption_sweep;
  std::string name;  // directory prefix, defaults to the experiment kind
  std::string output_dir = "runs";
  std::vector<std::uint64_t> seeds{1};
  ScheduleConfig schedule;
  TargetConfig target;
  SiemSection siem;
  RatioSection ratio;
  CorruptionSection corruption;
  TrainingSection training;
  MetricsSection metrics;
  SpdeSection spde;
  std::string source_text;  // raw config text, hashed into the manifest

  NoiseSchedule make_schedule() const {
    return linear_beta_schedule(schedule.steps, schedule.beta_start, schedule.beta_end);
  }

  GaussianMixture make_target() const {
    std::vector<Vector> means, vars;
    for (std::size_t i = 0; i < target.means.size(); ++i) {
      means.push_back(Eigen::Map<const Vector>(target.means[i].data(), static_cast<Eigen::Index>(target.means[i].size())));
      vars.push_back(
          Eigen::Map<const Vector>(target.variances[i].data(), static_cast<Eigen::Index>(target.variances[i].size())));
    }
    return GaussianMixture(target.weights, std::move(means), std::move(vars));
  }

  SiemConfig siem_config(std::uint64_t seed) const {
    SiemConfig c;
    c.estimator = siem.estimator;
    c.samples = siem.samples;
    c.epsilon = siem.epsilon;
    c.smoothing_sigma = siem.smoothing_sigma;
    c.truncation_fraction = siem.truncation_fraction;
    c.seed = seed;
    return c;
  }
};

namespace detail {

/// Path-aware accessor that records every problem instead of stopping at the first.
class Reader {
 public:
  std::vector<std::string> problems;

  void fail(const std::string& path, const std::string& msg) { problems.push_back(path + ": " + msg); }

  /// Flags keys of `node` outside `allowed`.
  void check_keys(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed) {
    if (!node) return;
    if (!node.IsMap()) {
      fail(path.empty() ? "<root>" : path, "expected a mapping");
      return;
    }
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(join(path, key), "unknown key");
    }
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

  template <class T>
  void scalar(const YAML::Node& parent, const std::string& path, const std::string& key, T& out) {
    const YAML::Node n = parent[key];
    if (!n) return;
    const std::string p = join(path, key);
    if (!n.IsScalar()) {
      fail(p, "expected a scalar");
      return;
    }
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t> || std::is_same_v<T, int>) {
        const auto v = n.as<long long>();
        if (v < 0) {
          fail(p, "must be a non-negative integer (got " + n.Scalar() + ")");
          return;
        }
        out = static_cast<T>(v);
      } else {
        out = n.as<T>();
      }
    } catch (const YAML::Exception&) {
      fail(p, "cannot read '" + n.Scalar() + "' as " + type_name<T>());
    }
  }

  template <class T>
  void sequence(const YAML::Node& parent, const std::string& path, const std::string& key, std::vector<T>& out) {
    const YAML::Node n = parent[key];
    if (!n) return;
    const std::string p = join(path, key);
    if (!n.IsSequence()) {
      fail(p, "expected a sequence");
      return;
    }
    std::vector<T> v;
    for (std::size_t i = 0; i < n.size(); ++i) {
      T item{};
      YAML::Node wrap;
      wrap["x"] = n[i];
      scalar(wrap, p + "[" + std::to_string(i) + "]", "x", item);
      v.push_back(item);
    }
    // indices in messages come out as "p[i].x"; strip the wrapper key
    for (auto& msg : problems) {
      const auto pos = msg.find("].x:");
      if (pos != std::string::npos) msg.erase(pos + 1, 2);
    }
    out = std::move(v);
  }

  void matrix(const YAML::Node& parent, const std::string& path, const std::string& key,
              std::vector<std::vector<double>>& out) {
    const YAML::Node n = parent[key];
    if (!n) return;
    const std::string p = join(path, key);
    if (!n.IsSequence()) {
      fail(p, "expected a sequence of sequences");
      return;
    }
    std::vector<std::vector<double>> m;
    for (std::size_t i = 0; i < n.size(); ++i) {
      YAML::Node wrap;
      wrap["row"] = n[i];
      std::vector<double> row;
      sequence(wrap, p, "row", row);
      for (auto& msg : problems) {
        const auto pos = msg.find(p + ".row");
        if (pos != std::string::npos) msg.replace(pos, p.size() + 4, p + "[" + std::to_string(i) + "]");
      }
      m.push_back(std::move(row));
    }
    out = std::move(m);
  }

  void positive(const std::string& p, double v) {
    if (!(v > 0.0) || !std::isfinite(v)) fail(p, "must be > 0");
  }

 private:
  template <class T>
  static std::string type_name() {
    if constexpr (std::is_same_v<T, double>) return "a number";
    else if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "an integer";
  }
};

}  // namespace detail

/// Parses and validates a config; throws ConfigError listing every problem.
inline ExperimentConfig parse_config_text(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError({"<root>: YAML syntax error: " + std::string(e.what())});
  }
  if (!root || !root.IsMap()) throw ConfigError({"<root>: expected a mapping of sections"});

  ExperimentConfig c;
  c.source_text = text;
  detail::Reader r;
  r.check_keys(root, "",
               {"experiment", "name", "output_dir", "seeds", "schedule", "target", "siem", "ratio", "corruption",
                "training", "metrics", "spde"});

  std::string kind;
  r.scalar(root, "", "experiment", kind);
  if (kind.empty()) {
    r.fail("experiment", "required (corruption_sweep, truncation_study, training_progress or spde_energy)");
  } else if (kind == "corruption_sweep") {
    c.kind = Kind::corruption_sweep;
  } else if (kind == "truncation_study") {
    c.kind = Kind::truncation_study;
  } else if (kind == "training_progress") {
    c.kind = Kind::training_progress;
  } else if (kind == "spde_energy") {
    c.kind = Kind::spde_energy;
  } else {
    r.fail("experiment", "unknown experiment '" + kind + "'");
  }
  c.name = kind;
  r.scalar(root, "", "name", c.name);
  r.scalar(root, "", "output_dir", c.output_dir);
  if (c.output_dir.empty()) r.fail("output_dir", "must not be empty");
  if (c.name.empty() || c.name.find('/') != std::string::npos) r.fail("name", "must be a non-empty plain name");
  r.sequence(root, "", "seeds", c.seeds);
  if (c.seeds.empty()) r.fail("seeds", "need at least one seed");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
    r.fail("seeds", "seeds must be distinct");

  const auto sch = root["schedule"];
  r.check_keys(sch, "schedule", {"steps", "beta_start", "beta_end"});
  if (sch && sch.IsMap()) {
    r.scalar(sch, "schedule", "steps", c.schedule.steps);
    r.scalar(sch, "schedule", "beta_start", c.schedule.beta_start);
    r.scalar(sch, "schedule", "beta_end", c.schedule.beta_end);
  }
  if (c.schedule.steps < 1 || c.schedule.steps > 1000) r.fail("schedule.steps", "must be in [1, 1000]");
  if (!(c.schedule.beta_start > 0.0 && c.schedule.beta_start <= c.schedule.beta_end && c.schedule.beta_end < 1.0))
    r.fail("schedule", "need 0 < beta_start <= beta_end < 1");

  const auto tg = root["target"];
  r.check_keys(tg, "target", {"weights", "means", "variances"});
  if (tg && tg.IsMap()) {
    r.sequence(tg, "target", "weights", c.target.weights);
    r.matrix(tg, "target", "means", c.target.means);
    r.matrix(tg, "target", "variances", c.target.variances);
  }
  {
    const auto& t = c.target;
    if (t.weights.empty()) r.fail("target.weights", "need at least one component");
    if (t.means.size() != t.weights.size()) r.fail("target.means", "need one mean per weight");
    if (t.variances.size() != t.weights.size()) r.fail("target.variances", "need one variance row per weight");
    double total = 0.0;
    for (std::size_t i = 0; i < t.weights.size(); ++i) {
      if (!(t.weights[i] >= 0.0)) r.fail("target.weights[" + std::to_string(i) + "]", "must be >= 0");
      total += t.weights[i];
    }
    if (std::abs(total - 1.0) > 1e-12) r.fail("target.weights", "must sum to 1");
    const std::size_t d = t.means.empty() ? 0 : t.means.front().size();
    if (d < 1 || d > 16) r.fail("target.means", "dimension must be in [1, 16]");
    for (std::size_t i = 0; i < t.means.size(); ++i)
      if (t.means[i].size() != d) r.fail("target.means[" + std::to_string(i) + "]", "dimension differs");
    for (std::size_t i = 0; i < t.variances.size(); ++i) {
      if (t.variances[i].size() != d) r.fail("target.variances[" + std::to_string(i) + "]", "dimension differs");
      for (std::size_t j = 0; j < t.variances[i].size(); ++j)
        if (!(t.variances[i][j] > 0.0))
          r.fail("target.variances[" + std::to_string(i) + "][" + std::to_string(j) + "]", "must be > 0");
    }
  }

  const auto sm = root["siem"];
  r.check_keys(sm, "siem",
               {"estimator", "samples", "epsilon", "smoothing_sigma", "truncation_fraction", "ratio", "data_samples"});
  if (sm && sm.IsMap()) {
    std::string est = to_string(c.siem.estimator);
    r.scalar(sm, "siem", "estimator", est);
    if (est == "marginal" || est == "dsm")
      c.siem.estimator = parse_xi_estimator(est);
    else
      r.fail("siem.estimator", "expected marginal or dsm");
    r.scalar(sm, "siem", "samples", c.siem.samples);
    if (sm["epsilon"] && !sm["epsilon"].IsNull()) {
      double e = 0.0;
      r.scalar(sm, "siem", "epsilon", e);
      r.positive("siem.epsilon", e);
      c.siem.epsilon = e;
    }
    r.scalar(sm, "siem", "smoothing_sigma", c.siem.smoothing_sigma);
    r.scalar(sm, "siem", "truncation_fraction", c.siem.truncation_fraction);
    std::string ratio = "unit";
    r.scalar(sm, "siem", "ratio", ratio);
    if (ratio == "unit" || ratio == "classifier")
      c.siem.classifier_ratio = ratio == "classifier";
    else
      r.fail("siem.ratio", "expected unit or classifier");
    r.scalar(sm, "siem", "data_samples", c.siem.data_samples);
  }
  if (c.siem.samples < 2) r.fail("siem.samples", "must be >= 2");
  r.positive("siem.smoothing_sigma", c.siem.smoothing_sigma);
  if (!(c.siem.truncation_fraction > 0.0 && c.siem.truncation_fraction <= 1.0))
    r.fail("siem.truncation_fraction", "must be in (0, 1]");
  if (c.siem.data_samples < 1) r.fail("siem.data_samples", "must be >= 1");

  const auto rt = root["ratio"];
  r.check_keys(rt, "ratio", {"hidden", "learning_rate", "batch", "max_epochs", "patience", "samples"});
  if (rt && rt.IsMap()) {
    auto& k = c.ratio.classifier;
    r.scalar(rt, "ratio", "hidden", k.hidden);
    r.scalar(rt, "ratio", "learning_rate", k.learning_rate);
    r.scalar(rt, "ratio", "batch", k.batch);
    r.scalar(rt, "ratio", "max_epochs", k.max_epochs);
    r.scalar(rt, "ratio", "patience", k.patience);
    r.scalar(rt, "ratio", "samples", c.ratio.samples);
  }
  if (c.ratio.classifier.hidden < 1) r.fail("ratio.hidden", "must be >= 1");
  r.positive("ratio.learning_rate", c.ratio.classifier.learning_rate);
  if (c.ratio.classifier.batch < 1) r.fail("ratio.batch", "must be >= 1");
  if (c.ratio.classifier.max_epochs < 1) r.fail("ratio.max_epochs", "must be >= 1");
  if (c.ratio.samples < c.ratio.classifier.min_samples)
    r.fail("ratio.samples", "must be >= " + std::to_string(c.ratio.classifier.min_samples));

  const auto cr = root["corruption"];
  r.check_keys(cr, "corruption", {"amplitudes", "bias_amplitude", "bias_pattern", "correlation_length", "features"});
  if (cr && cr.IsMap()) {
    r.sequence(cr, "corruption", "amplitudes", c.corruption.amplitudes);
    r.scalar(cr, "corruption", "bias_amplitude", c.corruption.bias_amplitude);
    std::string pattern = to_string(c.corruption.bias_pattern);
    r.scalar(cr, "corruption", "bias_pattern", pattern);
    try {
      c.corruption.bias_pattern = parse_bias_pattern(pattern);
    } catch (const InvalidArgument& e) {
      r.fail("corruption.bias_pattern", e.what());
    }
    r.scalar(cr, "corruption", "correlation_length", c.corruption.correlation_length);
    r.scalar(cr, "corruption", "features", c.corruption.features);
  }
  if (c.corruption.amplitudes.empty()) r.fail("corruption.amplitudes", "need at least one amplitude");
  for (std::size_t i = 0; i < c.corruption.amplitudes.size(); ++i)
    if (!(c.corruption.amplitudes[i] >= 0.0))
      r.fail("corruption.amplitudes[" + std::to_string(i) + "]", "must be >= 0");
  if (!(c.corruption.bias_amplitude >= 0.0)) r.fail("corruption.bias_amplitude", "must be >= 0");
  r.positive("corruption.correlation_length", c.corruption.correlation_length);
  if (c.corruption.features < 1) r.fail("corruption.features", "must be >= 1");

  const auto tr = root["training"];
  r.check_keys(tr, "training",
               {"steps", "width", "batch", "learning_rate", "checkpoints", "loss_probe", "data_samples", "optimizer"});
  if (tr && tr.IsMap()) {
    auto& s = c.training.score;
    r.scalar(tr, "training", "steps", s.steps);
    r.scalar(tr, "training", "width", s.width);
    r.scalar(tr, "training", "batch", s.batch);
    r.scalar(tr, "training", "learning_rate", s.learning_rate);
    r.scalar(tr, "training", "checkpoints", s.checkpoints);
    r.scalar(tr, "training", "loss_probe", s.loss_probe);
    r.scalar(tr, "training", "data_samples", c.training.data_samples);
    std::string opt = to_string(s.optimizer);
    r.scalar(tr, "training", "optimizer", opt);
    if (opt == "sgd" || opt == "adam")
      s.optimizer = parse_optimizer(opt);
    else
      r.fail("training.optimizer", "expected sgd or adam");
  }
  {
    const auto& s = c.training.score;
    if (s.steps < 1) r.fail("training.steps", "must be >= 1");
    if (s.width < 1) r.fail("training.width", "must be >= 1");
    if (s.batch < 1) r.fail("training.batch", "must be >= 1");
    r.positive("training.learning_rate", s.learning_rate);
    if (s.checkpoints < 1) r.fail("training.checkpoints", "must be >= 1");
    else if (s.checkpoints > 1 && s.steps < (std::size_t{1} << (s.checkpoints - 2)))
      r.fail("training.steps", "too few steps for " + std::to_string(s.checkpoints) + " distinct checkpoints");
    if (s.loss_probe < 1) r.fail("training.loss_probe", "must be >= 1");
    if (c.training.data_samples < 1) r.fail("training.data_samples", "must be >= 1");
  }

  const auto mt = root["metrics"];
  r.check_keys(mt, "metrics", {"samples", "blur", "scaling"});
  if (mt && mt.IsMap()) {
    r.scalar(mt, "metrics", "samples", c.metrics.samples);
    r.scalar(mt, "metrics", "blur", c.metrics.blur);
    r.scalar(mt, "metrics", "scaling", c.metrics.scaling);
  }
  if (c.metrics.samples < 20) r.fail("metrics.samples", "must be >= 20");
  r.positive("metrics.blur", c.metrics.blur);
  if (!(c.metrics.scaling > 0.0 && c.metrics.scaling < 1.0)) r.fail("metrics.scaling", "must be in (0, 1)");

  const auto sp = root["spde"];
  r.check_keys(sp, "spde",
               {"dim", "cells", "half_width", "dt", "steps", "target_variance", "initial_mean", "initial_variance",
                "noise", "energy_floor", "noise_quantile"});
  bool noise_components_set = false;
  if (sp && sp.IsMap()) {
    auto& s = c.spde;
    r.scalar(sp, "spde", "dim", s.geometry.dim);
    s.noise = SpectralNoiseSpec::defaults(s.geometry.dim);
    r.scalar(sp, "spde", "cells", s.geometry.cells);
    r.scalar(sp, "spde", "half_width", s.geometry.half_width);
    r.scalar(sp, "spde", "dt", s.dt);
    r.scalar(sp, "spde", "steps", s.steps);
    r.scalar(sp, "spde", "target_variance", s.target_variance);
    r.scalar(sp, "spde", "initial_mean", s.initial_mean);
    r.scalar(sp, "spde", "initial_variance", s.initial_variance);
    r.scalar(sp, "spde", "energy_floor", s.energy_floor);
    r.scalar(sp, "spde", "noise_quantile", s.noise_quantile);
    const auto nz = sp["noise"];
    r.check_keys(nz, "spde.noise", {"enabled", "scale", "modes", "eigen_decay", "components"});
    if (nz && nz.IsMap()) {
      r.scalar(nz, "spde.noise", "enabled", s.noise_enabled);
      r.scalar(nz, "spde.noise", "scale", s.noise.overall_scale);
      r.scalar(nz, "spde.noise", "modes", s.noise.modes);
      r.scalar(nz, "spde.noise", "eigen_decay", s.noise.eigen_decay);
      noise_components_set = static_cast<bool>(nz["components"]);
      r.scalar(nz, "spde.noise", "components", s.noise.components);
    }
  }
  {
    const auto& s = c.spde;
    if (s.geometry.dim != 1 && s.geometry.dim != 2) r.fail("spde.dim", "must be 1 or 2");
    if (s.geometry.cells < 3) r.fail("spde.cells", "must be >= 3");
    r.positive("spde.half_width", s.geometry.half_width);
    r.positive("spde.dt", s.dt);
    if (s.steps < 1) r.fail("spde.steps", "must be >= 1");
    r.positive("spde.target_variance", s.target_variance);
    r.positive("spde.initial_variance", s.initial_variance);
    if (!std::isfinite(s.initial_mean)) r.fail("spde.initial_mean", "must be finite");
    if (!(s.energy_floor >= 0.0)) r.fail("spde.energy_floor", "must be >= 0");
    if (!(s.noise_quantile > 0.0 && s.noise_quantile < 1.0)) r.fail("spde.noise_quantile", "must be in (0, 1)");
    if (s.noise.modes < 1) r.fail("spde.noise.modes", "must be >= 1");
    if (!(s.noise.overall_scale >= 0.0)) r.fail("spde.noise.scale", "must be >= 0");
    if (!(s.noise.eigen_decay > 0.5 * s.geometry.dim))
      r.fail("spde.noise.eigen_decay", "must exceed dim/2 for a trace-class covariance");
    if (noise_components_set && s.noise.components != s.geometry.dim)
      r.fail("spde.noise.components", "must equal spde.dim");
    const bool grid_ok = (s.geometry.dim == 1 || s.geometry.dim == 2) && s.geometry.cells >= 3 &&
                         std::isfinite(s.geometry.half_width) && s.geometry.half_width > 0.0 &&
                         s.target_variance > 0.0 && s.dt > 0.0;
    if (grid_ok) {
      const auto v = gaussian_density(s.geometry, {0.0, 0.0}, s.target_variance);
      if (const double cfl = gradient_flow_cfl_ratio(v, s.dt); cfl > 1.0) {
        std::ostringstream msg;
        msg << "violates the stability limit (CFL ratio " << std::setprecision(3) << cfl << " > 1)";
        r.fail("spde.dt", msg.str());
      }
    }
  }

  if (!r.problems.empty()) throw ConfigError(r.problems);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError({path + ": cannot open config file"});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace siem::experiment
