#pragma once

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "siem/errors.hpp"
#include "siem/experiment/config.hpp"
#include "siem/experiment/io.hpp"
#include "siem/metrics.hpp"
#include "siem/ratio.hpp"
#include "siem/sampler.hpp"
#include "siem/score_model.hpp"
#include "siem/siem.hpp"
#include "siem/spde.hpp"
#include "siem/version.hpp"

namespace siem::experiment {

using json = nlohmann::ordered_json;

enum class RunStatus { ok, numerical_abort, failed };

struct RunResult {
  fs::path directory;
  RunStatus status = RunStatus::ok;
  std::string message;
  double wall_seconds = 0.0;
};

/// One row of siem_summary.csv.
struct SummaryRow {
  double position = 0.0;  // corruption amplitude or training step
  double siem_full = 0.0;
  double siem_trunc = 0.0;
  double w2 = 0.0;
  double frechet = 0.0;
  std::uint64_t seed = 0;
};

inline const std::vector<std::string>& summary_metrics() {
  static const std::vector<std::string> names{"amplitude_or_checkpoint", "siem_full", "siem_trunc", "w2", "frechet"};
  return names;
}

inline std::vector<double> summary_column(const std::vector<SummaryRow>& rows, std::size_t metric) {
  std::vector<double> v;
  for (const auto& r : rows) {
    const double vals[] = {r.position, r.siem_full, r.siem_trunc, r.w2, r.frechet};
    v.push_back(vals[metric]);
  }
  return v;
}

/// Metric-by-metric Spearman table; undefined entries (constant columns, too few rows) are nan.
inline CsvTable correlation_table(const std::vector<std::string>& names, const std::vector<std::vector<double>>& cols) {
  CsvTable t({"row_metric", "column_metric", "rho", "p"});
  for (std::size_t i = 0; i < names.size(); ++i)
    for (std::size_t j = 0; j < names.size(); ++j) {
      double rho = std::numeric_limits<double>::quiet_NaN(), p = rho;
      try {
        const auto s = spearman(cols[i], cols[j]);
        rho = s.rho;
        p = s.p;
      } catch (const Error&) {
      }
      t.row() << names[i] << names[j] << rho << p;
    }
  return t;
}

inline CsvTable summary_table(const std::vector<SummaryRow>& rows) {
  CsvTable t({"amplitude_or_checkpoint", "siem_full", "siem_trunc", "w2", "frechet", "seed"});
  for (const auto& r : rows) t.row() << r.position << r.siem_full << r.siem_trunc << r.w2 << r.frechet << r.seed;
  return t;
}

inline CsvTable xi_trace_table(const SiemReport& r) {
  CsvTable t({"t", "xi", "se", "mu_phi", "residual"});
  for (std::size_t i = 0; i < r.steps.size(); ++i)
    t.row() << r.steps[i] << r.xi[i] << r.se[i] << r.mu_phi[i] << (r.xi[i] - r.mu_phi[i]);
  return t;
}

inline CsvTable energy_trace_table(const EnergyTrace& tr) {
  CsvTable t({"step", "time", "E", "D", "P", "bound_rhs"});
  for (const auto& r : tr.records)
    t.row() << r.step << r.time << r.energy << r.dissipation << r.noise_power << r.bound_rhs;
  return t;
}

namespace detail {

inline std::string utc_stamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

/// Staging directory that becomes <root>/<name>-<stamp> on finish.
class Artifacts {
 public:
  Artifacts(const fs::path& root, const std::string& name) : root_(root) {
    fs::create_directories(root_);
    stamp_ = utc_stamp();
    base_ = name + "-" + stamp_;
    staging_ = root_ / ("." + base_ + ".partial");
    for (int i = 1; fs::exists(staging_); ++i) staging_ = root_ / ("." + base_ + "-" + std::to_string(i) + ".partial");
    fs::create_directories(staging_);
  }

  const fs::path& staging() const { return staging_; }
  const std::string& stamp() const { return stamp_; }

  fs::path seed_dir(std::uint64_t seed) {
    const fs::path p = staging_ / ("seed_" + std::to_string(seed));
    fs::create_directories(p);
    return p;
  }

  void write(const fs::path& relative, const std::string& content) {
    write_file_atomic(staging_ / relative, content);
    files_.insert(relative.generic_string());
  }
  void write(const fs::path& relative, const CsvTable& t) { write(relative, t.str()); }

  const std::set<std::string>& files() const { return files_; }

  fs::path finish() {
    fs::path target = root_ / base_;
    for (int i = 1; fs::exists(target); ++i) target = root_ / (base_ + "-" + std::to_string(i));
    fs::rename(staging_, target);
    return target;
  }

 private:
  fs::path root_;
  std::string stamp_;
  std::string base_;
  fs::path staging_;
  std::set<std::string> files_;
};

/// Context shared by every SIEM evaluation in a run.
struct SiemContext {
  const ExperimentConfig* cfg;
  NoiseSchedule schedule;
  GaussianMixture target;
};

inline json ratio_summary(const std::map<std::size_t, RatioModel>& ratios) {
  json steps = json::array();
  for (const auto& [t, m] : ratios) {
    const auto& d = m.diagnostics();
    steps.push_back({{"t", t},
                     {"epochs", d.epochs_used},
                     {"best_epoch", d.best_epoch},
                     {"best_validation_loss", d.best_validation_loss},
                     {"balanced_accuracy", d.validation_balanced_accuracy},
                     {"validation_losses", d.validation_losses}});
  }
  return steps;
}

/// Classifier ratios u_t / v_t at every reverse step for `model`.
inline std::map<std::size_t, RatioModel> fit_ratios(const SiemContext& ctx, const ScoreModel& model,
                                                    std::uint64_t seed) {
  const auto& cfg = *ctx.cfg;
  const std::size_t K = ctx.schedule.steps();
  const std::size_t n = cfg.ratio.samples;
  std::set<std::size_t> all;
  for (std::size_t t = 0; t < K; ++t) all.insert(t);
  const auto generated = sample_generated(model, ctx.schedule, n, mix64(seed ^ 0x9e11), all);
  const Matrix x0 = ctx.target.sample(n, seed, 0x9e12);
  std::map<std::size_t, RatioModel> out;
  for (std::size_t t = 0; t < K; ++t) {
    const auto real = forward_perturb(x0, ctx.schedule, ctx.schedule.forward_index(t), mix64(seed ^ 0x9e13));
    RatioConfig rc = cfg.ratio.classifier;
    rc.seed = mix64(seed + t);
    out.emplace(t, train_ratio(generated.at(t), real.batch, rc));
  }
  return out;
}

struct PointOutcome {
  SummaryRow row;
  SiemReport report;
  json diagnostics;
};

inline PointOutcome evaluate_point(const SiemContext& ctx, const ScoreModel& model, const Matrix* data,
                                   double position, std::uint64_t seed) {
  const auto& cfg = *ctx.cfg;
  PointOutcome out;
  std::map<std::size_t, RatioModel> ratios;
  if (cfg.siem.classifier_ratio) {
    ratios = fit_ratios(ctx, model, seed);
    out.diagnostics = ratio_summary(ratios);
  }
  SiemInputs in;
  in.model = &model;
  in.schedule = &ctx.schedule;
  in.target = &ctx.target;
  in.data = data;
  in.ratios = cfg.siem.classifier_ratio ? &ratios : nullptr;
  out.report = compute_siem(in, cfg.siem_config(seed));

  const std::size_t m = cfg.metrics.samples;
  const Matrix generated = generate(model, ctx.schedule, m, mix64(seed ^ 0x3e7));
  const Matrix reference = ctx.target.sample(m, seed, 0x3e8);
  if (!generated.allFinite()) throw NumericalError("generated samples are non-finite");
  SinkhornOptions so;
  so.blur = cfg.metrics.blur;
  so.scaling = cfg.metrics.scaling;
  const auto w2 = sinkhorn_w2(generated, reference, so);
  const auto fr = frechet_gaussian(generated, reference);

  const std::size_t K = ctx.schedule.steps();
  out.row = {position,
             out.report.value(full_window(K).name),
             out.report.value(leading_window(K, cfg.siem.truncation_fraction).name),
             w2.w2,
             fr.distance,
             seed};
  return out;
}

inline std::string point_label(const std::string& prefix, double v) { return prefix + format_number(v); }

struct RunState {
  json manifest;
  std::vector<SummaryRow> rows;
};

inline void write_correlations(Artifacts& art, const std::vector<SummaryRow>& rows, const fs::path& where) {
  std::vector<std::vector<double>> cols;
  for (std::size_t i = 0; i < summary_metrics().size(); ++i) cols.push_back(summary_column(rows, i));
  art.write(where, correlation_table(summary_metrics(), cols));
}

inline void run_sweep(const ExperimentConfig& cfg, Artifacts& art, RunState& st) {
  SiemContext ctx{&cfg, cfg.make_schedule(), cfg.make_target()};
  const ScoreModel exact = exact_score(ctx.target, ctx.schedule);
  std::optional<Matrix> data;
  if (cfg.siem.estimator == XiEstimator::dsm) data = ctx.target.sample(cfg.siem.data_samples, 0, 0xda7a);
  json diag = json::object();
  json timing = json::array();
  for (auto seed : cfg.seeds) {
    std::vector<SummaryRow> seed_rows;
    const fs::path dir = art.seed_dir(seed).filename();
    for (double amp : cfg.corruption.amplitudes) {
      CorruptionSpec spec;
      spec.bias_amplitude = cfg.corruption.bias_amplitude;
      spec.bias_pattern = cfg.corruption.bias_pattern;
      spec.noise_amplitude = amp;
      spec.noise_correlation_length = cfg.corruption.correlation_length;
      spec.noise_features = cfg.corruption.features;
      spec.seed = seed;
      const ScoreModel model = corrupt(exact, spec);
      const auto t0 = std::chrono::steady_clock::now();
      auto outcome = evaluate_point(ctx, model, data ? &*data : nullptr, amp, seed);
      const double full_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const std::string label = point_label("amp_", amp);
      art.write(dir / ("xi_trace_" + label + ".csv"), xi_trace_table(outcome.report));
      if (!outcome.diagnostics.is_null()) diag["seed_" + std::to_string(seed)][label] = outcome.diagnostics;

      if (cfg.kind == Kind::truncation_study) {
        // Leading window alone, timed against the full evaluation.
        SiemInputs in{&model, &ctx.schedule, &ctx.target, data ? &*data : nullptr, nullptr};
        const Window lead = leading_window(ctx.schedule.steps(), cfg.siem.truncation_fraction);
        const auto t1 = std::chrono::steady_clock::now();
        const auto trunc = compute_siem(in, cfg.siem_config(seed), {lead});
        const double trunc_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
        timing.push_back({{"seed", seed},
                          {"amplitude", amp},
                          {"full_point_seconds", full_s},
                          {"truncated_siem_seconds", trunc_s},
                          {"truncated_only_matches", trunc.value(lead.name) == outcome.row.siem_trunc}});
      }
      seed_rows.push_back(outcome.row);
      st.rows.push_back(outcome.row);
    }
    art.write(dir / "siem_summary.csv", summary_table(seed_rows));
    write_correlations(art, seed_rows, dir / "correlation_matrix.csv");
  }
  art.write("siem_summary.csv", summary_table(st.rows));
  write_correlations(art, st.rows, "correlation_matrix.csv");

  if (cfg.kind == Kind::truncation_study) {
    CsvTable t({"scope", "points", "rho", "p"});
    auto add = [&](const std::string& scope, const std::vector<SummaryRow>& rows) {
      double rho = std::numeric_limits<double>::quiet_NaN(), p = rho;
      try {
        const auto s = spearman(summary_column(rows, 1), summary_column(rows, 2));
        rho = s.rho;
        p = s.p;
      } catch (const Error&) {
      }
      t.row() << scope << rows.size() << rho << p;
    };
    for (auto seed : cfg.seeds) {
      std::vector<SummaryRow> sub;
      for (const auto& r : st.rows)
        if (r.seed == seed) sub.push_back(r);
      add("seed_" + std::to_string(seed), sub);
    }
    add("pooled", st.rows);
    art.write("truncation_summary.csv", t);
    st.manifest["timing"] = timing;
  }
  if (!diag.empty()) st.manifest["ratio_diagnostics"] = diag;
}

inline void run_training(const ExperimentConfig& cfg, Artifacts& art, RunState& st) {
  SiemContext ctx{&cfg, cfg.make_schedule(), cfg.make_target()};
  json diag = json::object();
  json losses = json::object();
  for (auto seed : cfg.seeds) {
    const Matrix data = ctx.target.sample(cfg.training.data_samples, seed, 0x7a1);
    ScoreTrainingConfig tc = cfg.training.score;
    tc.seed = seed;
    const auto checkpoints = train_mlp_score(data, ctx.schedule, tc);
    std::vector<SummaryRow> seed_rows;
    const fs::path dir = art.seed_dir(seed).filename();
    json seed_losses = json::array();
    for (const auto& ck : checkpoints) {
      auto outcome = evaluate_point(ctx, ck.model, &data, static_cast<double>(ck.step), seed);
      const std::string label = "ckpt_" + std::to_string(ck.step);
      art.write(dir / ("xi_trace_" + label + ".csv"), xi_trace_table(outcome.report));
      if (!outcome.diagnostics.is_null()) diag["seed_" + std::to_string(seed)][label] = outcome.diagnostics;
      seed_losses.push_back({{"step", ck.step}, {"probe_loss", ck.loss}});
      seed_rows.push_back(outcome.row);
      st.rows.push_back(outcome.row);
    }
    losses["seed_" + std::to_string(seed)] = seed_losses;
    art.write(dir / "siem_summary.csv", summary_table(seed_rows));
    write_correlations(art, seed_rows, dir / "correlation_matrix.csv");
  }
  art.write("siem_summary.csv", summary_table(st.rows));
  write_correlations(art, st.rows, "correlation_matrix.csv");
  st.manifest["training_losses"] = losses;
  if (!diag.empty()) st.manifest["ratio_diagnostics"] = diag;
}

inline EnergyExperimentConfig energy_config(const ExperimentConfig& cfg) {
  const auto& s = cfg.spde;
  EnergyExperimentConfig e;
  e.geometry = s.geometry;
  e.initial = gaussian_density(s.geometry, {s.initial_mean, 0.0}, s.initial_variance);
  const GridDensity target = gaussian_density(s.geometry, {0.0, 0.0}, s.target_variance);
  e.target = [target](std::size_t) { return target; };
  e.noise = s.noise;
  e.noise.components = s.geometry.dim;
  e.noise_enabled = s.noise_enabled;
  e.dt = s.dt;
  e.steps = s.steps;
  e.energy_floor = s.energy_floor;
  e.noise_quantile = s.noise_quantile;
  return e;
}

inline void run_energy(const ExperimentConfig& cfg, Artifacts& art, RunState& st) {
  const auto e = energy_config(cfg);
  CsvTable summary({"seed", "lambda_hat", "lambda_lsi", "eta_hat", "bound_fraction", "final_energy",
                    "plateau_energy", "plateau_bound"});
  for (auto seed : cfg.seeds) {
    const auto trace = run_energy_trajectory(e, seed);
    art.write(art.seed_dir(seed).filename() / "energy_trace.csv", energy_trace_table(trace));
    summary.row() << seed << trace.lambda_hat << 1.0 / cfg.spde.target_variance << trace.eta_hat
                  << trace.bound_fraction << trace.final_energy << trace.plateau_energy << trace.plateau_bound;
    // Written after every seed so an abort keeps the finished ones.
    art.write("energy_summary.csv", summary);
  }
  st.manifest["analytic_lsi_constant"] = 1.0 / cfg.spde.target_variance;
}

}  // namespace detail

/// Runs a validated config end to end. Outputs land in
/// <output_dir>/<name>-<UTC stamp>; a FAILED file marks an aborted run.
inline RunResult run_experiment(const ExperimentConfig& cfg, const std::string& config_path = {},
                                std::optional<fs::path> output_root = std::nullopt) {
  const auto started = std::chrono::steady_clock::now();
  detail::Artifacts art(output_root.value_or(fs::path(cfg.output_dir)), cfg.name);
  detail::RunState st;
  st.manifest["experiment"] = to_string(cfg.kind);
  st.manifest["name"] = cfg.name;
  st.manifest["config_path"] = config_path;
  st.manifest["config_hash"] = "fnv1a64:" + hex64(fnv1a64(cfg.source_text));
  st.manifest["seeds"] = cfg.seeds;
  st.manifest["started_utc"] = art.stamp();
  json versions = json::object();
  versions["siemkit"] = std::string(kVersion);
  for (const auto& [m, v] : kModuleVersions) versions[std::string(m)] = std::string(v);
  st.manifest["module_versions"] = versions;

  RunResult result;
  try {
    switch (cfg.kind) {
      case Kind::corruption_sweep:
      case Kind::truncation_study:
        detail::run_sweep(cfg, art, st);
        break;
      case Kind::training_progress:
        detail::run_training(cfg, art, st);
        break;
      case Kind::spde_energy:
        detail::run_energy(cfg, art, st);
        break;
    }
  } catch (const NumericalError& e) {
    result.status = RunStatus::numerical_abort;
    result.message = e.what();
  } catch (const std::exception& e) {
    result.status = RunStatus::failed;
    result.message = e.what();
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  st.manifest["status"] = result.status == RunStatus::ok ? "ok" : "failed";
  if (result.status != RunStatus::ok) {
    st.manifest["error"] = result.message;
    art.write("FAILED", result.message + "\n");
  }
  st.manifest["wall_time_seconds"] = result.wall_seconds;
  st.manifest["files"] = art.files();
  art.write("manifest.json", st.manifest.dump(2) + "\n");
  result.directory = art.finish();
  return result;
}

/// Pooled correlation matrix over the siem_summary.csv files of several runs.
inline CsvTable correlate_runs(const std::vector<fs::path>& dirs) {
  std::vector<std::vector<double>> cols(summary_metrics().size());
  for (const auto& d : dirs) {
    const fs::path f = fs::is_directory(d) ? d / "siem_summary.csv" : d;
    const auto t = read_numeric_csv(f);
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const auto& c = t.column(summary_metrics()[i]);
      cols[i].insert(cols[i].end(), c.begin(), c.end());
    }
  }
  return correlation_table(summary_metrics(), cols);
}

}  // namespace siem::experiment
