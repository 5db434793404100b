#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "siem/experiment/io.hpp"

namespace fs = std::filesystem;
namespace ex = siem::experiment;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / (std::string("siemkit_cli_") + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  Outcome siemkit(const std::string& args) const {
    const fs::path out = root_ / "stdout.txt", err = root_ / "stderr.txt";
    const std::string cmd = std::string(SIEMKIT_BINARY) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(out);
    o.err = slurp(err);
    return o;
  }

  fs::path write_config(const std::string& name, const std::string& text) const {
    const fs::path p = root_ / name;
    std::ofstream(p) << text;
    return p;
  }

  static fs::path printed_dir(const Outcome& o) {
    std::string line = o.out.substr(0, o.out.find('\n'));
    return fs::path(line);
  }

  fs::path output() const { return root_ / "runs"; }

  fs::path root_;
};

const char* kSmallSweep = R"(experiment: corruption_sweep
name: small_sweep
seeds: [4]
schedule:
  steps: 50
  beta_start: 2.0e-3
  beta_end: 0.3
target:
  weights: [0.5, 0.5]
  means: [[-1.5, 0.0], [1.5, 0.0]]
  variances: [[0.25, 0.25], [0.25, 0.25]]
siem:
  samples: 512
  smoothing_sigma: 5
corruption:
  amplitudes: [0, 0.05, 0.1, 0.2, 0.4, 0.8]
metrics:
  samples: 200
)";

const char* kNoiseless = R"(experiment: spde_energy
name: noiseless
seeds: [1]
spde:
  dim: 1
  cells: 128
  half_width: 8
  dt: 1.0e-3
  steps: 1000
  noise:
    scale: 0.0
)";

std::map<std::string, std::string> csv_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv")
      out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST_F(Cli, VersionAndUsage) {
  const auto v = siemkit("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find("1.0.0"), std::string::npos);
  EXPECT_NE(siemkit("").code, 0);
}

TEST_F(Cli, ValidateAcceptsShippedConfigs) {
  for (const char* name : {"corruption_sweep", "truncation_study", "training_progress", "spde_energy"}) {
    const auto o = siemkit("validate " + (fs::path(SIEMKIT_SOURCE_DIR) / "configs" / (std::string(name) + ".yaml")).string());
    EXPECT_EQ(o.code, 0) << name << ": " << o.err;
  }
}

TEST_F(Cli, InvalidConfigReportsFieldPathsAndCreatesNothing) {
  std::string text = kSmallSweep;
  text.replace(text.find("samples: 512"), 12, "samples: -5");
  text += "bogus_key: 1\n";
  const auto cfg = write_config("bad.yaml", text);
  const auto v = siemkit("validate " + cfg.string());
  EXPECT_EQ(v.code, 2);
  EXPECT_NE(v.err.find("siem.samples"), std::string::npos) << v.err;
  EXPECT_NE(v.err.find("bogus_key"), std::string::npos) << v.err;
  const auto r = siemkit("run " + cfg.string() + " -o " + output().string());
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(output()));
}

TEST_F(Cli, UnstableEnergyStepRejected) {
  std::string text = kNoiseless;
  text.replace(text.find("dt: 1.0e-3"), 10, "dt: 0.5");
  const auto o = siemkit("validate " + write_config("cfl.yaml", text).string());
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("spde.dt"), std::string::npos) << o.err;
}

TEST_F(Cli, NoiselessEnergyTraceIsNonincreasing) {
  const auto o = siemkit("run " + write_config("e.yaml", kNoiseless).string() + " -o " + output().string());
  ASSERT_EQ(o.code, 0) << o.err;
  const auto dir = printed_dir(o);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_FALSE(fs::exists(dir / "FAILED"));
  const auto t = ex::read_numeric_csv(dir / "seed_1" / "energy_trace.csv");
  for (const char* col : {"step", "time", "E", "D", "P", "bound_rhs"}) EXPECT_TRUE(t.has(col)) << col;
  const auto& e = t.column("E");
  ASSERT_EQ(e.size(), 1000u);
  for (std::size_t i = 1; i < e.size(); ++i) EXPECT_LE(e[i], e[i - 1]) << "step " << i;
}

TEST_F(Cli, SweepIsMonotoneAndReproducible) {
  const auto cfg = write_config("sweep.yaml", kSmallSweep);
  const auto first = siemkit("run " + cfg.string() + " -o " + output().string());
  ASSERT_EQ(first.code, 0) << first.err;
  const auto second = siemkit("run " + cfg.string() + " -o " + output().string());
  ASSERT_EQ(second.code, 0) << second.err;
  const auto a = printed_dir(first), b = printed_dir(second);
  ASSERT_NE(a, b);

  const auto t = ex::read_numeric_csv(a / "siem_summary.csv");
  for (const char* col : {"amplitude_or_checkpoint", "siem_full", "siem_trunc", "w2", "frechet", "seed"})
    EXPECT_TRUE(t.has(col)) << col;
  const auto& siem = t.column("siem_full");
  ASSERT_EQ(siem.size(), 6u);
  EXPECT_EQ(siem[0], 0.0);
  for (std::size_t i = 1; i < siem.size(); ++i) EXPECT_GT(siem[i], siem[i - 1]) << "row " << i;

  const auto fa = csv_files(a), fb = csv_files(b);
  EXPECT_EQ(fa.size(), 6u + 4u);
  ASSERT_EQ(fa.size(), fb.size());
  for (const auto& [name, text] : fa) {
    ASSERT_TRUE(fb.count(name)) << name;
    EXPECT_EQ(text, fb.at(name)) << name;
  }

  const auto m = slurp(a / "manifest.json");
  for (const char* key : {"config_hash", "seeds", "module_versions", "wall_time_seconds", "started_utc"})
    EXPECT_NE(m.find(key), std::string::npos) << key;

  const auto corr = siemkit("correlate " + a.string() + " " + b.string() + " -o " + (root_ / "corr.csv").string());
  ASSERT_EQ(corr.code, 0) << corr.err;
  std::istringstream lines(slurp(root_ / "corr.csv"));
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "row_metric,column_metric,rho,p");
  std::size_t rows = 0;
  while (std::getline(lines, line)) rows += !line.empty();
  EXPECT_EQ(rows, 25u);
  EXPECT_EQ(corr.out, slurp(root_ / "corr.csv"));

  const auto svg = root_ / "trace.svg";
  const auto plot = siemkit("plot " + (a / "seed_4" / "xi_trace_amp_0.4.csv").string() + " -o " + svg.string());
  ASSERT_EQ(plot.code, 0) << plot.err;
  const auto body = slurp(svg);
  EXPECT_EQ(body.rfind("<svg", 0), 0u);
  EXPECT_NE(body.find("</svg>"), std::string::npos);
  EXPECT_NE(body.find("mu_phi"), std::string::npos);
}

TEST_F(Cli, DivergingTrainingLeavesFailedMarker) {
  const std::string text = R"(experiment: training_progress
name: diverge
seeds: [1]
schedule:
  steps: 20
  beta_start: 1.0e-2
  beta_end: 0.3
target:
  weights: [1.0]
  means: [[0.0, 0.0]]
  variances: [[1.0, 1.0]]
siem:
  samples: 128
training:
  steps: 400
  width: 16
  batch: 64
  learning_rate: 1.0e+3
  checkpoints: 4
  data_samples: 500
metrics:
  samples: 100
)";
  const auto o = siemkit("run " + write_config("diverge.yaml", text).string() + " -o " + output().string());
  EXPECT_EQ(o.code, 3) << o.err;
  const auto dir = printed_dir(o);
  ASSERT_TRUE(fs::exists(dir / "FAILED"));
  EXPECT_NE(slurp(dir / "manifest.json").find("\"status\": \"failed\""), std::string::npos);
  for (const auto& e : fs::directory_iterator(output()))
    EXPECT_EQ(e.path().filename().string().find(".partial"), std::string::npos);
}
