#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "slamobs/dynamics.hpp"
#include "slamobs/geometry.hpp"
#include "slamobs/observer.hpp"

namespace slamobs {

/// Ground-truth error snapshot at one instant:
///   R_err = R_hat R^T,  P_err = P_hat - R_err P,  p_err_i = p_hat_i - R_err p_i,
///   bias errors b - b_hat,  sigma_err = sigma - sigma_hat,
///   e_i = p_err_i - P_err,  and the Lyapunov value of the error blocks.
struct ErrorRecord {
  double t = 0.0;
  Mat3 rotation_err = Mat3::Identity();
  Vec3 position_err = Vec3::Zero();
  std::vector<Vec3> landmark_err;
  Vec3 gyro_bias_err = Vec3::Zero();
  Vec3 vel_bias_err = Vec3::Zero();
  Vec3 sigma_err = Vec3::Zero();
  std::vector<Vec3> innovation;
  double lyapunov = 0.0;
};

/// Lyapunov candidate
///   V = sum_i |e_i|^4 / (4 alpha_i) + |b_err_Omega|^2 / (2 Gamma)
///     + |b_err_V|^2 / (2 Gamma) + |sigma_err|^2 / (2 gamma_sigma).
inline double lyapunov_value(const std::vector<Vec3>& e, const Vec3& gyro_bias_err,
                             const Vec3& vel_bias_err, const Vec3& sigma_err,
                             const GainSet& gains) {
  if (e.size() != gains.alpha.size()) {
    throw std::invalid_argument("lyapunov_value: innovation count does not match alpha count");
  }
  double v = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double e2 = e[i].squaredNorm();
    v += e2 * e2 / (4.0 * gains.alpha[i]);
  }
  v += gyro_bias_err.squaredNorm() / (2.0 * gains.gamma_bias);
  v += vel_bias_err.squaredNorm() / (2.0 * gains.gamma_bias);
  v += sigma_err.squaredNorm() / (2.0 * gains.gamma_sigma);
  return v;
}

/// Truth-side error computation. `sigma_true` is the analysis-side
/// covariance bound (sigma_upper_bound of the actual diffusions).
inline ErrorRecord compute_errors(const WorldState& truth, const ObserverState& obs,
                                  const NoiseModel& noise, const Vec3& sigma_true,
                                  const GainSet& gains, double t = 0.0) {
  if (truth.landmarks.size() != obs.landmarks.size()) {
    throw std::invalid_argument("compute_errors: landmark count mismatch");
  }
  ErrorRecord rec;
  rec.t = t;
  rec.rotation_err = obs.pose.rotation * truth.pose.rotation.transpose();
  rec.position_err = obs.pose.position - rec.rotation_err * truth.pose.position;
  rec.landmark_err.resize(truth.landmarks.size());
  rec.innovation.resize(truth.landmarks.size());
  for (std::size_t i = 0; i < truth.landmarks.size(); ++i) {
    rec.landmark_err[i] = obs.landmarks[i] - rec.rotation_err * truth.landmarks[i];
    rec.innovation[i] = rec.landmark_err[i] - rec.position_err;
  }
  rec.gyro_bias_err = noise.gyro_bias - obs.gyro_bias;
  rec.vel_bias_err = noise.vel_bias - obs.vel_bias;
  rec.sigma_err = sigma_true - obs.sigma;
  rec.lyapunov =
      lyapunov_value(rec.innovation, rec.gyro_bias_err, rec.vel_bias_err, rec.sigma_err, gains);
  return rec;
}

/// Fitted ultimate-bound envelope V(0) exp(-c t) + k/c.
struct EnvelopeFit {
  double c = 0.0;         // decay rate (1/s)
  double k_over_c = 0.0;  // asymptotic offset
  double residual = 0.0;  // root-mean-square fit residual
  bool accepted = false;
};

namespace detail {

/// Least-squares offset for fixed decay rate, lifted to the smallest value
/// that also keeps the curve an upper bound of the series within the
/// allowed slack, and clamped nonnegative.
inline double envelope_offset(std::span<const double> t, std::span<const double> v, double v0,
                              double c, double slack, double slack_floor) {
  double sum = 0.0;
  double required = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double decay = v0 * std::exp(-c * t[i]);
    sum += v[i] - decay;
    required = std::max(required, (v[i] - slack * slack_floor) / (1.0 + slack) - decay);
  }
  return std::max({0.0, sum / static_cast<double>(t.size()), required});
}

inline double envelope_rss(std::span<const double> t, std::span<const double> v, double v0,
                           double c, double b) {
  double rss = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double r = v0 * std::exp(-c * t[i]) + b - v[i];
    rss += r * r;
  }
  return rss;
}

}  // namespace detail

/// Least-squares fit of (c, k/c) to a mean-V series under the model
/// v0 exp(-c t) + k/c, by log-grid search over c with golden-section
/// refinement (the offset is linear in the model and solved exactly per c).
///
/// The first `skip_fraction` of samples is excluded from both the fit and
/// the acceptance check: the adaptive sigma estimate overshoots during the
/// initial transient, which the single-exponential model cannot represent.
/// The fit is accepted when the curve upper-bounds the remaining series
/// pointwise, allowing `slack` relative leeway plus the same fraction of
/// the series' settled tail level to absorb ensemble (Monte Carlo)
/// fluctuation around the bound.
inline EnvelopeFit fit_envelope(std::span<const double> t, std::span<const double> v, double v0,
                                double slack = 0.05, double skip_fraction = 0.05) {
  if (t.size() != v.size()) {
    throw std::invalid_argument("fit_envelope: time and value series differ in length");
  }
  if (t.size() < 10) {
    throw std::invalid_argument("fit_envelope: series too short (need >= 10 samples)");
  }

  const double vmax = *std::max_element(v.begin(), v.end());
  if (!(v0 > 0.0) || vmax <= 0.0) {
    // Degenerate all-zero series: any decay rate works, offset zero.
    EnvelopeFit fit;
    fit.c = 1.0;
    fit.k_over_c = 0.0;
    fit.residual = 0.0;
    fit.accepted = true;
    return fit;
  }

  const auto skip = static_cast<std::size_t>(std::ceil(skip_fraction * static_cast<double>(t.size())));
  if (t.size() - skip < 4) {
    throw std::invalid_argument("fit_envelope: too few samples after the skipped window");
  }
  const std::span<const double> tw = t.subspan(skip);
  const std::span<const double> vw = v.subspan(skip);

  // Settled level: mean of the last 20% of the series. Used both as the
  // Monte Carlo slack floor and as the acceptance scale for k/c.
  const std::size_t tail_start = t.size() - std::max<std::size_t>(1, t.size() / 5);
  double tail_mean = 0.0;
  for (std::size_t i = tail_start; i < t.size(); ++i) {
    tail_mean += v[i];
  }
  tail_mean /= static_cast<double>(t.size() - tail_start);

  const auto offset_for = [&](double c) {
    return detail::envelope_offset(tw, vw, v0, c, slack, tail_mean);
  };

  const double t_span = std::max(t.back() - t.front(), 1e-12);
  const double c_lo = 1e-6 / t_span;
  const double c_hi = 1e6 / t_span;

  // Log-grid scan.
  const int grid = 400;
  double best_c = c_lo;
  double best_rss = std::numeric_limits<double>::infinity();
  const double log_lo = std::log(c_lo);
  const double log_hi = std::log(c_hi);
  for (int g = 0; g <= grid; ++g) {
    const double c = std::exp(log_lo + (log_hi - log_lo) * g / grid);
    const double rss = detail::envelope_rss(tw, vw, v0, c, offset_for(c));
    if (rss < best_rss) {
      best_rss = rss;
      best_c = c;
    }
  }

  // Golden-section refinement around the best grid cell.
  const double ratio = std::exp((log_hi - log_lo) / grid);
  double lo = best_c / ratio;
  double hi = best_c * ratio;
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 80; ++it) {
    const double m1 = hi - phi * (hi - lo);
    const double m2 = lo + phi * (hi - lo);
    const double r1 = detail::envelope_rss(tw, vw, v0, m1, offset_for(m1));
    const double r2 = detail::envelope_rss(tw, vw, v0, m2, offset_for(m2));
    if (r1 < r2) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  best_c = 0.5 * (lo + hi);
  const double best_b = offset_for(best_c);
  best_rss = detail::envelope_rss(tw, vw, v0, best_c, best_b);

  EnvelopeFit fit;
  fit.c = best_c;
  fit.k_over_c = best_b;
  fit.residual = std::sqrt(best_rss / static_cast<double>(tw.size()));

  // Accepted when the curve upper-bounds the post-skip series within slack,
  // its asymptote stays at the settled level rather than being forced up by
  // late growth, and the series actually decays toward that level.
  double head_mean = 0.0;
  const std::size_t head_count = std::max<std::size_t>(1, tw.size() / 5);
  for (std::size_t i = 0; i < head_count; ++i) head_mean += vw[i];
  head_mean /= static_cast<double>(head_count);

  bool ok = fit.c > 0.0 && fit.k_over_c >= 0.0 &&
            fit.k_over_c <= (1.0 + 2.0 * slack) * tail_mean &&
            tail_mean <= (1.0 + 2.0 * slack) * head_mean;
  for (std::size_t i = 0; ok && i < tw.size(); ++i) {
    const double bound = v0 * std::exp(-fit.c * tw[i]) + fit.k_over_c;
    ok = vw[i] <= (1.0 + slack) * bound + slack * tail_mean;
  }
  fit.accepted = ok;
  return fit;
}

/// Tail statistics of a run: mean and max of each error norm over the
/// trailing `tail_fraction` of the record series.
struct TailSummary {
  double mean_position_err = 0.0, max_position_err = 0.0;
  double mean_rotation_err = 0.0, max_rotation_err = 0.0;  // ||I - R_err||_F
  std::vector<double> mean_landmark_err, max_landmark_err;
  double mean_gyro_bias_err = 0.0, max_gyro_bias_err = 0.0;
  double mean_vel_bias_err = 0.0, max_vel_bias_err = 0.0;
  double mean_bias_err = 0.0, max_bias_err = 0.0;  // stacked 6-vector norm
  double mean_sigma_err = 0.0, max_sigma_err = 0.0;
  double mean_lyapunov = 0.0, max_lyapunov = 0.0;
  std::size_t samples = 0;
};

inline TailSummary summary_statistics(const std::vector<ErrorRecord>& records,
                                      double tail_fraction) {
  if (records.empty()) {
    throw std::invalid_argument("summary_statistics: empty record series");
  }
  if (!(tail_fraction > 0.0) || tail_fraction > 1.0) {
    throw std::invalid_argument("summary_statistics: tail_fraction must be in (0, 1]");
  }
  const std::size_t n_landmarks = records.front().landmark_err.size();
  std::size_t count =
      static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(records.size())));
  count = std::max<std::size_t>(1, std::min(count, records.size()));
  const std::size_t start = records.size() - count;

  TailSummary s;
  s.samples = count;
  s.mean_landmark_err.assign(n_landmarks, 0.0);
  s.max_landmark_err.assign(n_landmarks, 0.0);
  for (std::size_t k = start; k < records.size(); ++k) {
    const ErrorRecord& r = records[k];
    const double pos = r.position_err.norm();
    const double rot = (Mat3::Identity() - r.rotation_err).norm();
    const double bg = r.gyro_bias_err.norm();
    const double bv = r.vel_bias_err.norm();
    const double bias = std::sqrt(r.gyro_bias_err.squaredNorm() + r.vel_bias_err.squaredNorm());
    const double sig = r.sigma_err.norm();
    s.mean_position_err += pos;
    s.max_position_err = std::max(s.max_position_err, pos);
    s.mean_rotation_err += rot;
    s.max_rotation_err = std::max(s.max_rotation_err, rot);
    s.mean_gyro_bias_err += bg;
    s.max_gyro_bias_err = std::max(s.max_gyro_bias_err, bg);
    s.mean_vel_bias_err += bv;
    s.max_vel_bias_err = std::max(s.max_vel_bias_err, bv);
    s.mean_bias_err += bias;
    s.max_bias_err = std::max(s.max_bias_err, bias);
    s.mean_sigma_err += sig;
    s.max_sigma_err = std::max(s.max_sigma_err, sig);
    s.mean_lyapunov += r.lyapunov;
    s.max_lyapunov = std::max(s.max_lyapunov, r.lyapunov);
    for (std::size_t i = 0; i < n_landmarks; ++i) {
      const double lm = r.landmark_err[i].norm();
      s.mean_landmark_err[i] += lm;
      s.max_landmark_err[i] = std::max(s.max_landmark_err[i], lm);
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  s.mean_position_err *= inv;
  s.mean_rotation_err *= inv;
  s.mean_gyro_bias_err *= inv;
  s.mean_vel_bias_err *= inv;
  s.mean_bias_err *= inv;
  s.mean_sigma_err *= inv;
  s.mean_lyapunov *= inv;
  for (double& m : s.mean_landmark_err) {
    m *= inv;
  }
  return s;
}

}  // namespace slamobs
