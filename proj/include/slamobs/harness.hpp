#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "slamobs/analysis.hpp"
#include "slamobs/config.hpp"
#include "slamobs/dynamics.hpp"
#include "slamobs/observer.hpp"
#include "slamobs/sensors.hpp"

namespace slamobs {

/// Rate-noise standard deviations quoted in configs refer to this sampling
/// interval; diffusion Q = std * sqrt(kNoiseReferenceDt).
inline constexpr double kNoiseReferenceDt = 1e-3;

/// The reference simulation scenario: circular trajectory at 0.1 rad/s yaw
/// and 1.5 m/s forward speed over four coplanar landmarks, biased and noisy
/// velocity measurements, estimates initialized at the origin.
inline ExperimentConfig default_paper_scenario() {
  ExperimentConfig c;
  c.duration = 60.0;
  c.dt = 2e-5;
  c.seed = 7;
  c.ensemble_size = 100;
  c.decimation = 0;  // ~10 ms sampling

  c.truth_pose.rotation = Mat3::Identity();
  c.truth_pose.position = Vec3(0, 0, 1);
  c.landmarks = {Vec3(1.5, 0, 0), Vec3(-1.5, 0, 0), Vec3(0, 1.5, 0), Vec3(0, -1.5, 0)};
  c.landmark_velocities.assign(4, Vec3::Zero());

  c.profile_angular = Vec3(0, 0, 0.1);
  c.profile_translational = Vec3(1.5, 0, 0);

  c.estimate_pose.rotation = Mat3::Identity();
  c.estimate_pose.position = Vec3::Zero();
  c.estimate_landmarks.assign(4, Vec3::Zero());
  c.estimate_gyro_bias = Vec3::Zero();
  c.estimate_vel_bias = Vec3::Zero();
  c.estimate_sigma = Vec3::Zero();

  c.noise.gyro_bias = Vec3(0.05, -0.06, -0.07);
  c.noise.vel_bias = Vec3(0.04, 0.06, -0.08);
  c.noise.gyro_diffusion = Vec3::Constant(0.1 * std::sqrt(kNoiseReferenceDt));
  c.noise.vel_diffusion = Vec3::Constant(0.12 * std::sqrt(kNoiseReferenceDt));
  c.noise.landmark_noise_std = 0.01;

  c.gains.k_p = 10.0;
  c.gains.k_w = 10.0;
  c.gains.k_b = 10.0;
  c.gains.k_sigma = 1.0;
  c.gains.gamma_sigma = 1.0;
  c.gains.varrho = 0.3;
  c.gains.gamma_bias = 5.0;
  c.gains.alpha.assign(4, 0.04);

  c.observer.bias_skew_includes_position = true;
  return c;
}

/// One logged sample of the lock-step loop.
struct RunSample {
  double t = 0.0;
  WorldState truth;
  ObserverState estimate;
  MeasurementFrame meas;
  BodyVelocity true_velocity;
  ErrorRecord err;
};

/// Full single-run record at the configured decimation.
struct RunOutput {
  std::vector<RunSample> samples;
  TailSummary summary;       // over the trailing 20% of samples
  double sigma_min = 0.0;    // min sigma_hat component over every step
  double v0 = 0.0;           // Lyapunov value at t = 0
};

/// Aggregate of an ensemble of independent runs.
struct EnsembleOutput {
  std::vector<double> times;
  std::vector<double> mean_lyapunov;          // ensemble mean E[V](t)
  double v0 = 0.0;                            // mean_lyapunov front
  double tail_mean_v = 0.0;                   // mean over trailing 20%
  EnvelopeFit fit;
  double sigma_min = 0.0;                     // min over all runs and steps
  std::vector<TailSummary> run_summaries;     // per run, index order
};

inline constexpr double kTailFraction = 0.2;
inline constexpr double kDivergenceLimit = 1e9;

namespace detail {

inline void check_divergence(double norm, const char* quantity, long long step) {
  if (!(norm <= kDivergenceLimit)) {
    throw std::runtime_error("run diverged at step " + std::to_string(step) + ": " + quantity +
                             " norm " + std::to_string(norm));
  }
}

/// Sub-step count that keeps an explicit observer step well inside its
/// stability region over one sensor interval. The correction-loop rates grow
/// with the landmark levers, so two budgets apply: the first-order rate
/// budget (explicit Euler holds to rate*h = 2) and a damping-limited budget
/// for the weakly damped oscillatory bias loop.
inline long long observer_substep_count(const ObserverState& obs, const MeasurementFrame& meas,
                                        const GainSet& gains, double dt) {
  constexpr double kRateHeadroom = 0.8;
  constexpr double kOscHeadroom = 0.02;
  const CorrectionRates rates = correction_rates(obs, meas, gains);
  const double substeps_needed =
      std::max(rates.linear_rate * dt / kRateHeadroom, rates.oscillation * dt / kOscHeadroom);
  if (!(substeps_needed > 1.0)) {
    return 1;
  }
  if (substeps_needed > 1e7) {
    throw std::runtime_error("observer stiffness bound exceeds the integrable range");
  }
  return static_cast<long long>(substeps_needed) + 1;
}

}  // namespace detail

/// Core lock-step loop: truth step, measurement, observer step, error
/// computation. Calls `sink(sample)` for the initial state and after every
/// `decimation`-th step. Returns the minimum sigma_hat component seen at any
/// step. Deterministic for a fixed (config, run_index).
template <typename Sink>
double run_stream(const ExperimentConfig& config, std::uint64_t run_index, Sink&& sink) {
  config.validate();
  const double dt = config.dt;
  const long long n_steps = config.step_count();
  const long long decim = config.effective_decimation();

  WorldState truth;
  truth.pose = config.truth_pose;
  truth.landmarks = config.landmarks;
  truth.landmark_velocities = config.landmark_velocities;
  if (truth.landmark_velocities.empty()) {
    truth.landmark_velocities.assign(truth.landmarks.size(), Vec3::Zero());
  }

  ObserverState obs;
  obs.pose = config.estimate_pose;
  obs.landmarks = config.estimate_landmarks;
  obs.gyro_bias = config.estimate_gyro_bias;
  obs.vel_bias = config.estimate_vel_bias;
  obs.sigma = config.estimate_sigma;

  const VelocityProfile profile =
      constant_profile(config.profile_angular, config.profile_translational);
  SensorStreams streams = SensorStreams::for_run(config.seed, run_index);
  const Vec3 sigma_true = sigma_upper_bound(config.noise.gyro_diffusion, config.noise.vel_diffusion);

  // The frame logged with each sample is measured at that sample's truth
  // state and drives the observer over the following interval; the observer
  // therefore consumes measurements taken at its own time, which keeps the
  // perfect-initialization fixed point exact.
  double sigma_min = obs.sigma.minCoeff();
  RunSample sample;
  sample.t = 0.0;
  sample.truth = truth;
  sample.estimate = obs;
  sample.true_velocity = profile(0.0);
  measure_frame_into(sample.meas, truth, sample.true_velocity, config.noise, streams, 0.0, dt);
  sample.err = compute_errors(truth, obs, config.noise, sigma_true, config.gains, 0.0);
  sink(sample);

  for (long long k = 1; k <= n_steps; ++k) {
    detail::check_divergence(truth.pose.position.norm(), "truth position", k);
    detail::check_divergence(obs.pose.position.norm(), "estimated position", k);
    detail::check_divergence(obs.gyro_bias.norm() + obs.vel_bias.norm(), "bias estimate", k);
    detail::check_divergence(obs.sigma.norm(), "sigma estimate", k);
    for (const Vec3& lm : obs.landmarks) {
      detail::check_divergence(lm.norm(), "landmark estimate", k);
    }

    const double t_prev = static_cast<double>(k - 1) * dt;
    const double t_now = static_cast<double>(k) * dt;
    const BodyVelocity vel = profile(t_prev);
    // Truth and observer advance over the interval with the same sub-step,
    // so the perfect-initialization fixed point stays exact at any dt. When
    // the interval is split, the held landmark measurements are propagated
    // between sub-steps with the observer's bias-corrected rates, which is
    // the body-frame landmark kinematics y' = -[Omega]x y - V discretized
    // the same way as the truth.
    try {
      const long long m = detail::observer_substep_count(obs, sample.meas, config.gains, dt);
      const double h = dt / static_cast<double>(m);
      if (m == 1) {
        obs = observer_step(std::move(obs), sample.meas, config.gains, h, config.observer);
        truth = truth_step(std::move(truth), vel.angular, vel.translational, h);
      } else {
        MeasurementFrame held = sample.meas;
        // interval-constant increments: the truth rotation step, and the
        // prediction rates from the interval-entry bias estimates
        const Mat3 truth_rot_step = so3_exp(vel.angular * h);
        const Mat3 back_rotation = so3_exp(-(held.gyro - obs.gyro_bias) * h);
        const Vec3 pred_vel = held.vel - obs.vel_bias;
        for (long long s = 0; s < m; ++s) {
          obs = observer_step(std::move(obs), held, config.gains, h, config.observer);
          const Mat3 r = truth.pose.rotation;
          for (std::size_t i = 0; i < truth.landmarks.size(); ++i) {
            const Vec3& vi = truth.landmark_velocities[i];
            if (!vi.isZero(0.0)) {
              truth.landmarks[i] += r * vi * h;
            }
          }
          truth.pose.position += r * vel.translational * h;
          truth.pose.rotation = r * truth_rot_step;
          if (s + 1 < m) {
            for (Vec3& y : held.landmarks) {
              y = back_rotation * (y - pred_vel * h);
            }
          }
        }
      }
    } catch (const std::runtime_error& ex) {
      throw std::runtime_error("run diverged at step " + std::to_string(k) + ": " + ex.what());
    }

    const BodyVelocity vel_now = profile(t_now);
    measure_frame_into(sample.meas, truth, vel_now, config.noise, streams, t_now, dt);

    sigma_min = std::min(sigma_min, obs.sigma.minCoeff());

    if (k % decim == 0) {
      sample.t = t_now;
      sample.truth = truth;
      sample.estimate = obs;
      sample.true_velocity = vel_now;
      sample.err = compute_errors(truth, obs, config.noise, sigma_true, config.gains, t_now);
      sink(sample);
    }
  }
  return sigma_min;
}

/// Run index `run_index` of the configured experiment, keeping every logged
/// sample. run_single(config) is run index 0, so a single run reproduces the
/// first member of the ensemble exactly.
inline RunOutput run_single(const ExperimentConfig& config, std::uint64_t run_index = 0) {
  RunOutput out;
  out.samples.reserve(static_cast<std::size_t>(config.step_count() / config.effective_decimation()) + 1);
  out.sigma_min = run_stream(config, run_index, [&out](const RunSample& s) { out.samples.push_back(s); });
  std::vector<ErrorRecord> records;
  records.reserve(out.samples.size());
  for (const RunSample& s : out.samples) records.push_back(s.err);
  out.summary = summary_statistics(records, kTailFraction);
  out.v0 = out.samples.front().err.lyapunov;
  return out;
}

/// Ensemble of `config.ensemble_size` independent runs (sub-streams of the
/// master seed indexed 0..N-1), executed on up to `workers` threads. The
/// aggregation is a fixed-order reduction, so results do not depend on the
/// scheduling; a per-run failure is reported for the lowest failing index.
inline EnsembleOutput run_ensemble(const ExperimentConfig& config, unsigned workers = 0) {
  config.validate();
  const int n_runs = config.ensemble_size;
  if (workers == 0) {
    workers = std::max(1u, std::thread::hardware_concurrency());
  }
  workers = std::min<unsigned>(workers, static_cast<unsigned>(n_runs));

  struct PerRun {
    std::vector<double> v;
    TailSummary summary;
    double sigma_min = 0.0;
    std::string error;
    bool failed = false;
  };
  std::vector<PerRun> runs(static_cast<std::size_t>(n_runs));
  std::atomic<int> next{0};

  auto work = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n_runs) return;
      PerRun& r = runs[static_cast<std::size_t>(i)];
      try {
        std::vector<ErrorRecord> records;
        r.v.reserve(static_cast<std::size_t>(config.step_count() / config.effective_decimation()) + 1);
        r.sigma_min = run_stream(config, static_cast<std::uint64_t>(i), [&](const RunSample& s) {
          r.v.push_back(s.err.lyapunov);
          records.push_back(s.err);
        });
        r.summary = summary_statistics(records, kTailFraction);
      } catch (const std::exception& ex) {
        r.failed = true;
        r.error = ex.what();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();

  for (int i = 0; i < n_runs; ++i) {
    if (runs[static_cast<std::size_t>(i)].failed) {
      throw std::runtime_error("ensemble run " + std::to_string(i) + " failed: " +
                               runs[static_cast<std::size_t>(i)].error);
    }
  }

  EnsembleOutput out;
  const std::size_t len = runs.front().v.size();
  const long long decim = config.effective_decimation();
  out.times.resize(len);
  for (std::size_t s = 0; s < len; ++s) {
    out.times[s] = static_cast<double>(s) * static_cast<double>(decim) * config.dt;
  }
  out.mean_lyapunov.assign(len, 0.0);
  out.sigma_min = runs.front().sigma_min;
  for (const PerRun& r : runs) {
    if (r.v.size() != len) {
      throw std::logic_error("ensemble runs produced unequal series lengths");
    }
    for (std::size_t s = 0; s < len; ++s) out.mean_lyapunov[s] += r.v[s];
    out.sigma_min = std::min(out.sigma_min, r.sigma_min);
    out.run_summaries.push_back(r.summary);
  }
  const double inv = 1.0 / static_cast<double>(n_runs);
  for (double& v : out.mean_lyapunov) v *= inv;
  out.v0 = out.mean_lyapunov.front();

  const std::size_t tail = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                        kTailFraction * static_cast<double>(len)));
  double tail_sum = 0.0;
  for (std::size_t s = len - tail; s < len; ++s) tail_sum += out.mean_lyapunov[s];
  out.tail_mean_v = tail_sum / static_cast<double>(tail);

  out.fit = fit_envelope(out.times, out.mean_lyapunov, out.v0);
  return out;
}

namespace detail {

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path) : path_(path) {
    buffer_.reserve(1 << 20);
  }

  void header(const std::string& line) { buffer_ += line + "\n"; }

  void value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    if (!row_.empty()) row_ += ",";
    row_ += buf;
  }

  void vec(const Vec3& v) {
    value(v.x());
    value(v.y());
    value(v.z());
  }

  void mat_rowmajor(const Mat3& m) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) value(m(r, c));
  }

  void end_row() {
    buffer_ += row_ + "\n";
    row_.clear();
  }

  void flush() {
    std::ofstream out(path_, std::ios::binary);
    if (!out) {
      throw std::runtime_error("emit_csv: cannot open " + path_.string() + " for writing");
    }
    out << buffer_;
    if (!out) {
      throw std::runtime_error("emit_csv: write failed for " + path_.string());
    }
  }

 private:
  std::filesystem::path path_;
  std::string buffer_;
  std::string row_;
};

inline std::string pose_csv_header(const std::string& pos_prefix, const std::string& rot_prefix,
                                   const std::string& lm_prefix, std::size_t n) {
  std::string h = "t";
  h += "," + pos_prefix + "x," + pos_prefix + "y," + pos_prefix + "z";
  for (int r = 1; r <= 3; ++r)
    for (int c = 1; c <= 3; ++c) h += "," + rot_prefix + std::to_string(r) + std::to_string(c);
  for (std::size_t i = 1; i <= n; ++i) {
    const std::string p = lm_prefix + std::to_string(i) + "_";
    h += "," + p + "x," + p + "y," + p + "z";
  }
  return h;
}

}  // namespace detail

/// Write truth.csv, estimate.csv, errors.csv and measurements.csv under
/// `dir` (created if needed). Full-precision decimal text; byte-stable for
/// fixed inputs. Returns the paths written.
inline std::vector<std::filesystem::path> emit_csv(const RunOutput& output,
                                                   const std::filesystem::path& dir) {
  if (output.samples.empty()) {
    throw std::invalid_argument("emit_csv: no samples");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw std::runtime_error("emit_csv: cannot create directory " + dir.string() + ": " +
                             ec.message());
  }
  const std::size_t n = output.samples.front().truth.landmarks.size();

  detail::CsvWriter truth(dir / "truth.csv");
  truth.header(detail::pose_csv_header("P", "R", "p", n));
  detail::CsvWriter estimate(dir / "estimate.csv");
  estimate.header(detail::pose_csv_header("P", "R", "p", n));
  detail::CsvWriter errors(dir / "errors.csv");
  {
    std::string h = "t,pos_err,rot_err";
    for (std::size_t i = 1; i <= n; ++i) h += ",lm" + std::to_string(i) + "_err";
    h += ",gyro_bias_err,vel_bias_err,bias_err,sigma_err,innovation_norm,lyapunov";
    errors.header(h);
  }
  detail::CsvWriter meas(dir / "measurements.csv");
  meas.header(
      "t,gyro_m_x,gyro_m_y,gyro_m_z,vel_m_x,vel_m_y,vel_m_z,"
      "gyro_true_x,gyro_true_y,gyro_true_z,vel_true_x,vel_true_y,vel_true_z");

  for (const RunSample& s : output.samples) {
    truth.value(s.t);
    truth.vec(s.truth.pose.position);
    truth.mat_rowmajor(s.truth.pose.rotation);
    for (const Vec3& p : s.truth.landmarks) truth.vec(p);
    truth.end_row();

    estimate.value(s.t);
    estimate.vec(s.estimate.pose.position);
    estimate.mat_rowmajor(s.estimate.pose.rotation);
    for (const Vec3& p : s.estimate.landmarks) estimate.vec(p);
    estimate.end_row();

    errors.value(s.t);
    errors.value(s.err.position_err.norm());
    errors.value((Mat3::Identity() - s.err.rotation_err).norm());
    for (const Vec3& p : s.err.landmark_err) errors.value(p.norm());
    errors.value(s.err.gyro_bias_err.norm());
    errors.value(s.err.vel_bias_err.norm());
    errors.value(std::sqrt(s.err.gyro_bias_err.squaredNorm() + s.err.vel_bias_err.squaredNorm()));
    errors.value(s.err.sigma_err.norm());
    double innov2 = 0.0;
    for (const Vec3& e : s.err.innovation) innov2 += e.squaredNorm();
    errors.value(std::sqrt(innov2));
    errors.value(s.err.lyapunov);
    errors.end_row();

    meas.value(s.t);
    meas.vec(s.meas.gyro);
    meas.vec(s.meas.vel);
    meas.vec(s.true_velocity.angular);
    meas.vec(s.true_velocity.translational);
    meas.end_row();
  }

  truth.flush();
  estimate.flush();
  errors.flush();
  meas.flush();
  return {dir / "truth.csv", dir / "estimate.csv", dir / "errors.csv", dir / "measurements.csv"};
}

}  // namespace slamobs
