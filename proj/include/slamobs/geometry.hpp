#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace slamobs {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Skew-symmetric matrix of v, satisfying skew(v) * w == v x w.
inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  // clang-format off
  m <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return m;
}

/// Inverse of skew(). Rejects matrices that are not skew-symmetric to
/// within 1e-9 Frobenius, since that signals a malformed intermediate.
inline Vec3 vex(const Mat3& m) {
  if ((m + m.transpose()).norm() > 1e-9) {
    throw std::invalid_argument("vex: matrix is not skew-symmetric");
  }
  return Vec3(m(2, 1), m(0, 2), m(1, 0));
}

/// Rodrigues form of exp([v]x). Falls back to a second-order Taylor
/// expansion below 1e-8 where sin(t)/t loses accuracy.
inline Mat3 so3_exp(const Vec3& v) {
  const double theta2 = v.squaredNorm();
  const Mat3 vx = skew(v);
  if (theta2 < 1e-8 * 1e-8) {
    return Mat3::Identity() + vx + 0.5 * (vx * vx);
  }
  const double theta = std::sqrt(theta2);
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / theta2;
  return Mat3::Identity() + a * vx + b * (vx * vx);
}

/// ||R R^T - I||_F, the drift diagnostic for the rotation-group constraint.
inline double orthonormality_error(const Mat3& r) {
  return (r * r.transpose() - Mat3::Identity()).norm();
}

/// Rigid pose (R, P). Composition follows 4x4 homogeneous block
/// multiplication; the 4x4 form is never materialized.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 position = Vec3::Zero();

  static Pose identity() { return Pose{}; }
};

inline Pose compose(const Pose& a, const Pose& b) {
  return Pose{a.rotation * b.rotation, a.rotation * b.position + a.position};
}

inline Pose inverse(const Pose& a) {
  const Mat3 rt = a.rotation.transpose();
  return Pose{rt, -(rt * a.position)};
}

/// Apply the pose to a point: R * x + P.
inline Vec3 transform(const Pose& a, const Vec3& x) {
  return a.rotation * x + a.position;
}

}  // namespace slamobs
