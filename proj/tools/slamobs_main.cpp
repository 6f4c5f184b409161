// slamobs command-line driver: single runs, Monte Carlo ensembles,
// scenario dumps and the acceptance self-check.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "slamobs/config.hpp"
#include "slamobs/harness.hpp"

namespace {

namespace fs = std::filesystem;
using namespace slamobs;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::optional<double> dt;
  std::optional<int> ensemble;
  std::vector<std::string> variants;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Configuration file (default: built-in scenario)");
  cmd->add_option("--out", flags.out_dir, "Output directory");
  cmd->add_option("--seed", flags.seed, "Master seed override");
  cmd->add_option("--duration", flags.duration, "Run duration override (s)");
  cmd->add_option("--dt", flags.dt, "Integration step override (s)");
  cmd->add_option("--ensemble", flags.ensemble, "Ensemble size override");
  cmd->add_option("--variant", flags.variants,
                  "Behavior switch, e.g. bias-skew-includes-p=false")
      ->expected(-1);
}

ExperimentConfig load_config(const CommonFlags& flags) {
  ExperimentConfig config;
  if (flags.config_path.empty()) {
    config = default_paper_scenario();
  } else {
    std::ifstream in(flags.config_path, std::ios::binary);
    if (!in) {
      throw std::runtime_error("cannot open config file: " + flags.config_path);
    }
    std::ostringstream text;
    text << in.rdbuf();
    config = parse_config(text.str());
  }
  if (flags.seed) config.seed = *flags.seed;
  if (flags.duration) config.duration = *flags.duration;
  if (flags.dt) config.dt = *flags.dt;
  if (flags.ensemble) config.ensemble_size = *flags.ensemble;
  for (const std::string& v : flags.variants) {
    const auto eq = v.find('=');
    const std::string key = eq == std::string::npos ? v : v.substr(0, eq);
    const std::string value = eq == std::string::npos ? "true" : v.substr(eq + 1);
    if (key == "bias-skew-includes-p") {
      if (value != "true" && value != "false") {
        throw std::runtime_error("--variant " + key + " expects true or false");
      }
      config.observer.bias_skew_includes_position = (value == "true");
    } else {
      throw std::runtime_error("unknown --variant '" + key + "'");
    }
  }
  config.validate();
  return config;
}

/// Output directory: --out flag, then config, then SLAMOBS_OUT_DIR, then ./out.
fs::path resolve_out_dir(const CommonFlags& flags, const ExperimentConfig& config) {
  if (!flags.out_dir.empty()) return flags.out_dir;
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv("SLAMOBS_OUT_DIR"); env != nullptr && env[0] != '\0') {
    return env;
  }
  return "out";
}

void print_summary(const TailSummary& s) {
  std::printf("tail (last 20%%) means:\n");
  std::printf("  position error     %.6g m\n", s.mean_position_err);
  std::printf("  rotation error     %.6g (Frobenius)\n", s.mean_rotation_err);
  for (std::size_t i = 0; i < s.mean_landmark_err.size(); ++i) {
    std::printf("  landmark %zu error   %.6g m\n", i + 1, s.mean_landmark_err[i]);
  }
  std::printf("  gyro bias error    %.6g rad/s\n", s.mean_gyro_bias_err);
  std::printf("  velocity bias error %.6g m/s\n", s.mean_vel_bias_err);
  std::printf("  sigma error        %.6g\n", s.mean_sigma_err);
  std::printf("  Lyapunov value     %.6g\n", s.mean_lyapunov);
}

int cmd_run(const CommonFlags& flags) {
  const ExperimentConfig config = load_config(flags);
  const fs::path dir = resolve_out_dir(flags, config);
  const RunOutput output = run_single(config);
  const auto files = emit_csv(output, dir);
  std::printf("run complete: %lld steps, %zu samples, sigma_min=%.3g\n",
              config.step_count(), output.samples.size(), output.sigma_min);
  print_summary(output.summary);
  for (const auto& f : files) std::printf("wrote %s\n", f.string().c_str());
  return 0;
}

double percentile(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  const double idx = p * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(idx);
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double w = idx - static_cast<double>(lo);
  return xs[lo] * (1.0 - w) + xs[hi] * w;
}

int cmd_ensemble(const CommonFlags& flags) {
  const ExperimentConfig config = load_config(flags);
  const fs::path dir = resolve_out_dir(flags, config);
  const EnsembleOutput output = run_ensemble(config);

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
  }
  {
    std::ofstream mean_v(dir / "ensemble_mean_v.csv", std::ios::binary);
    mean_v << "t,mean_lyapunov\n";
    char buf[80];
    for (std::size_t i = 0; i < output.times.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", output.times[i], output.mean_lyapunov[i]);
      mean_v << buf;
    }
  }
  {
    std::ofstream sum(dir / "ensemble_summary.csv", std::ios::binary);
    sum << "run,tail_pos_err,tail_rot_err,tail_landmark_err_max,tail_bias_err,tail_lyapunov\n";
    char buf[200];
    for (std::size_t i = 0; i < output.run_summaries.size(); ++i) {
      const TailSummary& s = output.run_summaries[i];
      const double lm_max =
          *std::max_element(s.mean_landmark_err.begin(), s.mean_landmark_err.end());
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", i,
                    s.mean_position_err, s.mean_rotation_err, lm_max, s.mean_bias_err,
                    s.mean_lyapunov);
      sum << buf;
    }
  }

  std::vector<double> pos, lyap;
  for (const TailSummary& s : output.run_summaries) {
    pos.push_back(s.mean_position_err);
    lyap.push_back(s.mean_lyapunov);
  }
  std::printf("ensemble complete: %d runs\n", config.ensemble_size);
  std::printf("V(0)=%.6g  tail E[V]=%.6g  sigma_min=%.3g\n", output.v0, output.tail_mean_v,
              output.sigma_min);
  std::printf("envelope fit: c=%.6g  k/c=%.6g  residual=%.3g  accepted=%s\n", output.fit.c,
              output.fit.k_over_c, output.fit.residual, output.fit.accepted ? "yes" : "no");
  std::printf("tail position error: median=%.4g m  p90=%.4g m\n", percentile(pos, 0.5),
              percentile(pos, 0.9));
  std::printf("tail Lyapunov: median=%.4g  p90=%.4g\n", percentile(lyap, 0.5),
              percentile(lyap, 0.9));
  std::printf("wrote %s\n", (dir / "ensemble_mean_v.csv").string().c_str());
  std::printf("wrote %s\n", (dir / "ensemble_summary.csv").string().c_str());
  return 0;
}

int cmd_scenario_dump(const CommonFlags& flags) {
  ExperimentConfig config;
  if (flags.config_path.empty()) {
    config = default_paper_scenario();
  } else {
    config = load_config(flags);
  }
  std::fputs(serialize_config(config).c_str(), stdout);
  return 0;
}

/// Run the acceptance binary installed next to this executable.
int cmd_verify(const std::vector<std::string>& passthrough) {
  std::error_code ec;
  fs::path self = fs::read_symlink("/proc/self/exe", ec);
  if (ec) {
    throw std::runtime_error("cannot locate own executable: " + ec.message());
  }
  const fs::path acceptance = self.parent_path() / "slamobs-acceptance";
  if (!fs::exists(acceptance)) {
    throw std::runtime_error("acceptance binary not found at " + acceptance.string());
  }
  std::string cmd = "'" + acceptance.string() + "' --cli '" + self.string() + "'";
  for (const std::string& arg : passthrough) {
    cmd += " '" + arg + "'";
  }
  const int rc = std::system(cmd.c_str());
  return rc == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slamobs: stochastic SLAM observer simulation on SLAM_n(3)"};
  app.require_subcommand(1);

  CommonFlags run_flags, ensemble_flags, dump_flags;
  auto* run_cmd = app.add_subcommand("run", "Single seeded run; writes truth/estimate/errors/measurements CSVs");
  add_common_flags(run_cmd, run_flags);
  auto* ens_cmd = app.add_subcommand("ensemble", "Monte Carlo ensemble with Lyapunov envelope fit");
  add_common_flags(ens_cmd, ensemble_flags);
  auto* dump_cmd = app.add_subcommand("scenario-dump", "Print the reference scenario configuration");
  add_common_flags(dump_cmd, dump_flags);
  auto* verify_cmd = app.add_subcommand("verify", "Run the acceptance suite");
  verify_cmd->allow_extras();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return cmd_run(run_flags);
    if (ens_cmd->parsed()) return cmd_ensemble(ensemble_flags);
    if (dump_cmd->parsed()) return cmd_scenario_dump(dump_flags);
    if (verify_cmd->parsed()) return cmd_verify(verify_cmd->remaining());
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}
