#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "slamobs/dynamics.hpp"
#include "slamobs/geometry.hpp"
#include "slamobs/random.hpp"

namespace slamobs {

/// Measurement corruption model: constant biases on the velocity and
/// landmark channels, Brownian diffusion on the velocities, and white
/// Gaussian noise on the landmark observations.
struct NoiseModel {
  Vec3 gyro_bias = Vec3::Zero();            // b_Omega (rad/s)
  Vec3 vel_bias = Vec3::Zero();             // b_V (m/s)
  std::vector<Vec3> landmark_bias;          // b_i^y (m); empty means all zero
  Vec3 gyro_diffusion = Vec3::Zero();       // Q_Omega diagonal (rad/s per sqrt(s))
  Vec3 vel_diffusion = Vec3::Zero();        // Q_V diagonal (m/s per sqrt(s))
  double landmark_noise_std = 0.0;          // per-axis std (m)
};

/// One batch of corrupted measurements at time t.
struct MeasurementFrame {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();        // Omega_m
  Vec3 vel = Vec3::Zero();         // V_m
  std::vector<Vec3> landmarks;     // y_i
};

/// Channel identifiers used to derive independent noise sub-streams.
enum class NoiseChannel : std::uint64_t { gyro = 1, vel = 2, landmark = 3 };

/// The three independent streams feeding one run's measurements.
/// Changing one channel's key leaves the other channels bit-identical.
struct SensorStreams {
  RandomSource gyro;
  RandomSource vel;
  RandomSource landmark;

  static SensorStreams for_run(std::uint64_t master_seed, std::uint64_t run_index) {
    const std::uint64_t run_key = derive_stream_key(master_seed, run_index);
    return SensorStreams{
        RandomSource::substream(run_key, static_cast<std::uint64_t>(NoiseChannel::gyro)),
        RandomSource::substream(run_key, static_cast<std::uint64_t>(NoiseChannel::vel)),
        RandomSource::substream(run_key, static_cast<std::uint64_t>(NoiseChannel::landmark))};
  }
};

/// Discrete Brownian increment over dt with diagonal diffusion Q:
/// returns Q sqrt(dt) z with z standard normal (Euler-Maruyama convention).
inline Vec3 sample_brownian_increment(RandomSource& rng, const Vec3& diffusion, double dt) {
  if (!(dt > 0.0)) {
    throw std::domain_error("sample_brownian_increment: dt must be positive");
  }
  const double root_dt = std::sqrt(dt);
  const Vec3 z = rng.normal3();
  return (diffusion * root_dt).cwiseProduct(z);
}

/// Biased, noisy velocity measurements
///   Omega_m = Omega + b_Omega + n_Omega,  V_m = V + b_V + n_V
/// where the rate noise n = Q dbeta/dt is realized as increment / dt.
inline std::pair<Vec3, Vec3> measure_velocities(const Vec3& omega_true, const Vec3& vel_true,
                                                const NoiseModel& noise, RandomSource& gyro_rng,
                                                RandomSource& vel_rng, double dt) {
  const Vec3 n_gyro = sample_brownian_increment(gyro_rng, noise.gyro_diffusion, dt) / dt;
  const Vec3 n_vel = sample_brownian_increment(vel_rng, noise.vel_diffusion, dt) / dt;
  return {omega_true + noise.gyro_bias + n_gyro, vel_true + noise.vel_bias + n_vel};
}

/// Body-frame landmark observations y_i = R^T (p_i - P) + b_i^y + n_i^y,
/// written into `out` (resized to the landmark count).
inline void measure_landmarks_into(std::vector<Vec3>& out, const Pose& pose,
                                   const std::vector<Vec3>& landmarks, const NoiseModel& noise,
                                   RandomSource& rng) {
  if (!noise.landmark_bias.empty() && noise.landmark_bias.size() != landmarks.size()) {
    throw std::invalid_argument("measure_landmarks: landmark bias count mismatch");
  }
  const Mat3 rt = pose.rotation.transpose();
  out.resize(landmarks.size());
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    Vec3 y = rt * (landmarks[i] - pose.position);
    if (!noise.landmark_bias.empty()) {
      y += noise.landmark_bias[i];
    }
    if (noise.landmark_noise_std > 0.0) {
      y += noise.landmark_noise_std * rng.normal3();
    }
    out[i] = y;
  }
}

inline std::vector<Vec3> measure_landmarks(const Pose& pose, const std::vector<Vec3>& landmarks,
                                           const NoiseModel& noise, RandomSource& rng) {
  std::vector<Vec3> out;
  measure_landmarks_into(out, pose, landmarks, noise, rng);
  return out;
}

/// Full measurement frame for one step, reusing `frame`'s storage.
inline void measure_frame_into(MeasurementFrame& frame, const WorldState& truth,
                               const BodyVelocity& true_vel, const NoiseModel& noise,
                               SensorStreams& streams, double t, double dt) {
  frame.t = t;
  auto [gyro, vel] = measure_velocities(true_vel.angular, true_vel.translational, noise,
                                        streams.gyro, streams.vel, dt);
  frame.gyro = gyro;
  frame.vel = vel;
  measure_landmarks_into(frame.landmarks, truth.pose, truth.landmarks, noise, streams.landmark);
}

inline MeasurementFrame measure_frame(const WorldState& truth, const BodyVelocity& true_vel,
                                      const NoiseModel& noise, SensorStreams& streams, double t,
                                      double dt) {
  MeasurementFrame frame;
  measure_frame_into(frame, truth, true_vel, noise, streams, t, dt);
  return frame;
}

}  // namespace slamobs
