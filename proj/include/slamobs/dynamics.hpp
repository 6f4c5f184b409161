#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "slamobs/geometry.hpp"

namespace slamobs {

/// Body-frame velocity pair (angular, translational).
struct BodyVelocity {
  Vec3 angular = Vec3::Zero();      // rad/s
  Vec3 translational = Vec3::Zero();  // m/s
};

/// True velocity profile as a function of time.
using VelocityProfile = std::function<BodyVelocity(double t)>;

inline VelocityProfile constant_profile(const Vec3& angular, const Vec3& translational) {
  return [angular, translational](double) { return BodyVelocity{angular, translational}; };
}

/// Ground-truth world: vehicle pose plus n landmark positions and their
/// body-frame velocities.
struct WorldState {
  Pose pose;
  std::vector<Vec3> landmarks;            // p_i, inertial frame (m)
  std::vector<Vec3> landmark_velocities;  // v_i, body frame (m/s)
};

/// One first-order geometric Euler step of the truth kinematics
///   R <- R exp([Omega dt]x),  P <- P + R V dt,  p_i <- p_i + R v_i dt
/// with R evaluated pre-update in the translation rows.
inline WorldState truth_step(WorldState state, const Vec3& omega, const Vec3& vel, double dt) {
  if (!(dt > 0.0)) {
    throw std::domain_error("truth_step: dt must be positive");
  }
  if (!omega.allFinite() || !vel.allFinite()) {
    throw std::domain_error("truth_step: non-finite velocity input");
  }
  const Mat3 r = state.pose.rotation;
  for (std::size_t i = 0; i < state.landmarks.size(); ++i) {
    const Vec3& vi = state.landmark_velocities[i];
    if (!vi.isZero(0.0)) {
      state.landmarks[i] += r * vi * dt;
    }
  }
  state.pose.position += r * vel * dt;
  state.pose.rotation = r * so3_exp(omega * dt);
  return state;
}

/// True iff some landmark triple spans a plane:
/// ||(p_j - p_i) x (p_k - p_i)|| > 1e-9 for some i < j < k.
/// Fewer than 3 landmarks is a configuration error.
inline bool noncollinear(const std::vector<Vec3>& landmarks) {
  if (landmarks.size() < 3) {
    throw std::invalid_argument("noncollinear: at least 3 landmarks required");
  }
  const double tol = 1e-9;
  for (std::size_t i = 0; i + 2 < landmarks.size(); ++i) {
    for (std::size_t j = i + 1; j + 1 < landmarks.size(); ++j) {
      for (std::size_t k = j + 1; k < landmarks.size(); ++k) {
        const Vec3 a = landmarks[j] - landmarks[i];
        const Vec3 b = landmarks[k] - landmarks[i];
        if (a.cross(b).norm() > tol) {
          return true;
        }
      }
    }
  }
  return false;
}

}  // namespace slamobs
