#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "slamobs/geometry.hpp"
#include "slamobs/sensors.hpp"

namespace slamobs {

/// Observer state on SLAM_n(3): pose estimate, landmark estimates, the two
/// velocity-bias estimates, and the adaptive covariance-bound estimate.
struct ObserverState {
  Pose pose;                       // (R_hat, P_hat)
  std::vector<Vec3> landmarks;     // p_hat_i (m)
  Vec3 gyro_bias = Vec3::Zero();   // b_hat_Omega (rad/s)
  Vec3 vel_bias = Vec3::Zero();    // b_hat_V (m/s)
  Vec3 sigma = Vec3::Zero();       // sigma_hat (covariance upper-bound estimate)
};

/// Observer design parameters. All must be strictly positive. `gamma_bias`
/// is the scalar Gamma, applied as Gamma * I to each 3-vector bias block.
struct GainSet {
  double k_p = 10.0;
  double k_w = 10.0;
  double k_b = 10.0;
  double k_sigma = 1.0;
  double gamma_sigma = 1.0;
  double varrho = 0.3;
  double gamma_bias = 5.0;
  std::vector<double> alpha;  // alpha_i, one per landmark

  void validate(std::size_t landmark_count) const {
    const auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    if (!positive(k_p)) throw std::invalid_argument("gains: k_p must be positive");
    if (!positive(k_w)) throw std::invalid_argument("gains: k_w must be positive");
    if (!positive(k_b)) throw std::invalid_argument("gains: k_b must be positive");
    if (!positive(k_sigma)) throw std::invalid_argument("gains: k_sigma must be positive");
    if (!positive(gamma_sigma)) throw std::invalid_argument("gains: gamma_sigma must be positive");
    if (!positive(varrho)) throw std::invalid_argument("gains: varrho must be positive");
    if (!positive(gamma_bias)) throw std::invalid_argument("gains: gamma must be positive");
    if (alpha.size() != landmark_count) {
      throw std::invalid_argument("gains: alpha count must match landmark count");
    }
    for (double a : alpha) {
      if (!positive(a)) throw std::invalid_argument("gains: alpha_i must be positive");
    }
  }
};

/// Pose correction pair (W_Omega, W_V).
struct Correction {
  Vec3 angular = Vec3::Zero();
  Vec3 translational = Vec3::Zero();
};

/// Behavioral switches. The bias update's skew argument is printed with an
/// extra -P_hat relative to the pose-correction one; the default keeps it,
/// the switch drops it so the two variants can be compared.
struct ObserverOptions {
  bool bias_skew_includes_position = true;
};

/// Innovation e_i = p_hat_i - R_hat y_i - P_hat, one per landmark.
inline std::vector<Vec3> innovation(const ObserverState& obs, const std::vector<Vec3>& y) {
  if (y.size() != obs.landmarks.size()) {
    throw std::invalid_argument("innovation: measurement count does not match landmark count");
  }
  std::vector<Vec3> e(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    e[i] = obs.landmarks[i] - obs.pose.rotation * y[i] - obs.pose.position;
  }
  return e;
}

/// Pose correction terms
///   W_Omega = sum_i k_w (-R_hat^T [R_hat y_i + p_hat_i]x e_i)
///   W_V     = sum_i k_w  R_hat^T ([P_hat]x [R_hat y_i + p_hat_i]x - I) e_i
/// with the skew-matrix products carried out as cross products.
inline Correction correction_terms(const ObserverState& obs, const std::vector<Vec3>& y,
                                   const std::vector<Vec3>& e, double k_w) {
  if (y.size() != obs.landmarks.size() || e.size() != obs.landmarks.size()) {
    throw std::invalid_argument("correction_terms: inconsistent lengths");
  }
  const Mat3 rt = obs.pose.rotation.transpose();
  Vec3 sum_angular = Vec3::Zero();
  Vec3 sum_translational = Vec3::Zero();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const Vec3 lever = obs.pose.rotation * y[i] + obs.landmarks[i];
    const Vec3 lever_cross_e = lever.cross(e[i]);
    sum_angular -= rt * lever_cross_e;
    sum_translational += rt * (obs.pose.position.cross(lever_cross_e) - e[i]);
  }
  return Correction{k_w * sum_angular, k_w * sum_translational};
}

namespace detail {

/// Gain multiplying -e_i in the landmark estimate update:
///   k_p + (5/alpha_i) sigma_hat + (3/(varrho alpha_i)) (1 - Tr{[p_hat_i]x^2})^2
/// using Tr{[p]x^2} = -2 ||p||^2. sigma_hat enters as the scalar mean of its
/// (identically updated) components.
inline double landmark_rate_coefficient(const Vec3& landmark_est, double sigma_scalar,
                                        const GainSet& gains, std::size_t i) {
  const double trace_term = 1.0 + 2.0 * landmark_est.squaredNorm();
  return gains.k_p + (5.0 / gains.alpha[i]) * sigma_scalar +
         (3.0 / (gains.varrho * gains.alpha[i])) * trace_term * trace_term;
}

inline void require_finite(const Vec3& v, const char* tag) {
  if (!v.allFinite()) {
    throw std::runtime_error(std::string("observer_step: non-finite ") + tag);
  }
}

}  // namespace detail

/// Local stability budgets of the correction loops, from norms alone
/// (rotations preserve norms, so no matrix products are needed). The
/// landmark channel is integrated implicitly and does not contribute.
struct CorrectionRates {
  double linear_rate = 0.0;    // fastest first-order feedback rate (1/s)
  double oscillation = 0.0;    // bias <-> pose <-> innovation loop frequency (rad/s)
};

inline CorrectionRates correction_rates(const ObserverState& obs, const MeasurementFrame& meas,
                                        const GainSet& gains) {
  const double p_hat = obs.pose.position.norm();
  double rot_loop = 0.0;
  double vel_loop = 0.0;
  double bias_loop = 0.0;
  double alpha_min = gains.alpha.empty() ? 1.0 : gains.alpha[0];
  for (double a : gains.alpha) alpha_min = std::min(alpha_min, a);
  for (std::size_t i = 0; i < obs.landmarks.size(); ++i) {
    const double y = meas.landmarks[i].norm();
    const double lever = y + obs.landmarks[i].norm();
    rot_loop += lever * (y + 1.0);
    vel_loop += 1.0 + p_hat * lever;
    bias_loop += (lever + p_hat) * (y + 1.0);
  }
  CorrectionRates rates;
  rates.oscillation = std::sqrt(gains.gamma_bias / alpha_min * bias_loop);
  rates.linear_rate = gains.k_w * (rot_loop + vel_loop) + rates.oscillation +
                      gains.k_b * gains.gamma_bias + gains.k_sigma * gains.gamma_sigma;
  return rates;
}

/// Conservative bound on the fastest first-order feedback rate (1/s).
inline double correction_stiffness_bound(const ObserverState& obs, const MeasurementFrame& meas,
                                         const GainSet& gains) {
  return correction_rates(obs, meas, gains).linear_rate;
}

/// Frequency scale (rad/s) of the oscillatory bias <-> pose <-> innovation
/// loop. The loop's only damping is the bias leakage, so an explicit step
/// must satisfy a damping-limited budget h * omega << 1 in addition to the
/// first-order rate budget.
inline double bias_loop_frequency_bound(const ObserverState& obs, const MeasurementFrame& meas,
                                        const GainSet& gains) {
  return correction_rates(obs, meas, gains).oscillation;
}

/// One first-order geometric step of the observer. All rates are evaluated
/// on the incoming state, then applied:
///   R_hat <- R_hat exp([(Omega_m - b_hat_Omega - W_Omega) dt]x)
///   P_hat <- P_hat + R_hat (V_m - b_hat_V - W_V) dt        (pre-update R_hat)
///   p_hat_i <- p_hat_i - (c_i dt / (1 + c_i dt)) e_i,
///              c_i = k_p + (5/a_i) s_hat + (3/(rho a_i))(1 + 2 |p_hat_i|^2)^2
///              (semi-implicit in the landmark channel's own linear term)
///   b_hat   <- b_hat - [sum_i (Gamma/a_i) (lever-weighted e_i) + k_b Gamma b_hat] dt
///   s_hat   <- s_hat + [5 sum_i (gamma_s/a_i^2)|e_i|^4 - k_s gamma_s s_hat] dt
/// The sigma right-hand side is scalar and is applied identically to all
/// three components.
inline ObserverState observer_step(ObserverState obs, const MeasurementFrame& meas,
                                   const GainSet& gains, double dt,
                                   const ObserverOptions& options = {}) {
  if (!(dt > 0.0)) {
    throw std::domain_error("observer_step: dt must be positive");
  }
  const std::size_t n = obs.landmarks.size();
  if (meas.landmarks.size() != n) {
    throw std::invalid_argument("observer_step: measurement count does not match landmark count");
  }
  if (gains.alpha.size() != n) {
    throw std::invalid_argument("observer_step: alpha count does not match landmark count");
  }

  const Mat3 r_hat = obs.pose.rotation;
  const Mat3 rt = r_hat.transpose();
  const Vec3 p_hat = obs.pose.position;
  const double sigma_scalar = obs.sigma.sum() / 3.0;

  // Per-landmark sums accumulated in the world frame and rotated once.
  Vec3 w_angular_world = Vec3::Zero();
  Vec3 w_translational_world = Vec3::Zero();
  Vec3 bias_gyro_world = Vec3::Zero();
  Vec3 bias_vel_world = Vec3::Zero();
  double sigma_drive = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 r_y = r_hat * meas.landmarks[i];
    const Vec3 e = obs.landmarks[i] - r_y - p_hat;
    detail::require_finite(e, "innovation");

    const Vec3 lever = r_y + obs.landmarks[i];
    const Vec3 lever_cross_e = lever.cross(e);
    w_angular_world -= lever_cross_e;
    w_translational_world += p_hat.cross(lever_cross_e) - e;

    const Vec3 bias_lever =
        options.bias_skew_includes_position ? Vec3(lever - p_hat) : lever;
    const double inv_alpha = 1.0 / gains.alpha[i];
    bias_gyro_world -= inv_alpha * bias_lever.cross(e);
    bias_vel_world -= inv_alpha * e;

    const double e2 = e.squaredNorm();
    sigma_drive += inv_alpha * inv_alpha * e2 * e2;

    // Semi-implicit step of p_hat_i' = -coeff (p_hat_i - (R_hat y_i + P_hat)):
    // treating the linear term implicitly replaces the explicit factor
    // coeff*dt by coeff*dt / (1 + coeff*dt), which is stable for any
    // coeff > 0. The gain coefficient grows quartically in |p_hat_i|, so an
    // explicit step has no fixed dt that survives large estimate excursions.
    const double coeff = detail::landmark_rate_coefficient(obs.landmarks[i], sigma_scalar, gains, i);
    const double cdt = coeff * dt;
    obs.landmarks[i] -= (cdt / (1.0 + cdt)) * e;
    detail::require_finite(obs.landmarks[i], "landmark update");
  }

  const Vec3 w_angular = gains.k_w * (rt * w_angular_world);
  const Vec3 w_translational = gains.k_w * (rt * w_translational_world);
  const Vec3 bias_gyro_drive = rt * bias_gyro_world;
  const Vec3 bias_vel_drive = rt * bias_vel_world;
  detail::require_finite(w_angular, "pose correction");
  detail::require_finite(w_translational, "pose correction");

  // Pose update from the pre-update bias estimates.
  obs.pose.position += r_hat * (meas.vel - obs.vel_bias - w_translational) * dt;
  obs.pose.rotation = r_hat * so3_exp((meas.gyro - obs.gyro_bias - w_angular) * dt);
  detail::require_finite(obs.pose.position, "pose retraction");
  if (!obs.pose.rotation.allFinite()) {
    throw std::runtime_error("observer_step: non-finite pose retraction");
  }

  obs.gyro_bias +=
      (gains.gamma_bias * bias_gyro_drive - gains.k_b * gains.gamma_bias * obs.gyro_bias) * dt;
  obs.vel_bias +=
      (gains.gamma_bias * bias_vel_drive - gains.k_b * gains.gamma_bias * obs.vel_bias) * dt;
  detail::require_finite(obs.gyro_bias, "bias update");
  detail::require_finite(obs.vel_bias, "bias update");

  const double sigma_decay = gains.k_sigma * gains.gamma_sigma;
  obs.sigma += (Vec3::Constant(5.0 * gains.gamma_sigma * sigma_drive) - sigma_decay * obs.sigma) * dt;
  detail::require_finite(obs.sigma, "sigma update");

  return obs;
}

/// Componentwise covariance upper bound
///   sigma_k = max(Q_Omega(k,k)^2, Q_V(k,k)^2).
/// Analysis-side reference only; never available to the observer.
inline Vec3 sigma_upper_bound(const Vec3& gyro_diffusion, const Vec3& vel_diffusion) {
  return gyro_diffusion.cwiseProduct(gyro_diffusion)
      .cwiseMax(vel_diffusion.cwiseProduct(vel_diffusion));
}

}  // namespace slamobs
