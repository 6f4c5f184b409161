#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "slamobs/dynamics.hpp"
#include "slamobs/geometry.hpp"
#include "slamobs/observer.hpp"
#include "slamobs/sensors.hpp"

namespace slamobs {

/// Full description of one experiment: timing, seeding, the true world and
/// velocity profile, the observer's initialization and gains, and the noise
/// model. Parsed from / serialized to a line-oriented `key = value` text
/// format with dotted section names (grammar documented in the README).
struct ExperimentConfig {
  // run
  double duration = 60.0;   // s
  double dt = 2e-5;         // s
  std::uint64_t seed = 7;
  int ensemble_size = 100;
  long long decimation = 0;  // steps between logged samples; 0 picks ~10 ms
  std::string output_dir;    // empty: resolved by the CLI

  // truth
  Pose truth_pose;
  std::vector<Vec3> landmarks;
  std::vector<Vec3> landmark_velocities;  // empty means all zero

  // constant true velocity profile
  Vec3 profile_angular = Vec3::Zero();
  Vec3 profile_translational = Vec3::Zero();

  // observer initialization
  Pose estimate_pose;
  std::vector<Vec3> estimate_landmarks;
  Vec3 estimate_gyro_bias = Vec3::Zero();
  Vec3 estimate_vel_bias = Vec3::Zero();
  Vec3 estimate_sigma = Vec3::Zero();

  // noise (diffusion form; see parse_config for the std-style entry)
  NoiseModel noise;

  GainSet gains;
  ObserverOptions observer;

  /// Effective decimation: configured value, or one sample per ~10 ms.
  long long effective_decimation() const {
    if (decimation > 0) return decimation;
    return std::max(1LL, static_cast<long long>(0.01 / dt + 0.5));
  }

  long long step_count() const { return static_cast<long long>(duration / dt + 1e-9); }

  /// Rejects invalid configurations with the violated constraint named.
  void validate() const {
    const auto fail = [](const std::string& what) {
      throw std::invalid_argument("config: " + what);
    };
    if (!(duration > 0.0)) fail("run.duration must be positive");
    if (!(dt > 0.0)) fail("run.dt must be positive");
    if (dt > duration) fail("run.dt must not exceed run.duration");
    if (ensemble_size < 1) fail("run.ensemble_size must be at least 1");
    if (decimation < 0) fail("run.decimation must be nonnegative");
    if (landmarks.size() < 3) fail("truth.landmarks: at least 3 landmarks required (Assumption 1)");
    if (!noncollinear(landmarks)) fail("truth.landmarks: landmarks are collinear (Assumption 1)");
    if (!landmark_velocities.empty() && landmark_velocities.size() != landmarks.size())
      fail("truth.landmark_velocities count must match truth.landmarks");
    if (estimate_landmarks.size() != landmarks.size())
      fail("estimate.landmarks count must match truth.landmarks");
    if (!noise.landmark_bias.empty() && noise.landmark_bias.size() != landmarks.size())
      fail("noise.landmark_bias count must match truth.landmarks");
    if (orthonormality_error(truth_pose.rotation) > 1e-6)
      fail("truth.rotation is not orthonormal");
    if (orthonormality_error(estimate_pose.rotation) > 1e-6)
      fail("estimate.rotation is not orthonormal");
    if ((noise.gyro_diffusion.array() < 0.0).any()) fail("noise.gyro_diffusion must be nonnegative");
    if ((noise.vel_diffusion.array() < 0.0).any()) fail("noise.vel_diffusion must be nonnegative");
    if (noise.landmark_noise_std < 0.0) fail("noise.landmark_noise_std must be nonnegative");
    try {
      gains.validate(landmarks.size());
    } catch (const std::invalid_argument& ex) {
      fail(ex.what());
    }
    for (const Vec3& p : landmarks)
      if (!p.allFinite()) fail("truth.landmarks contains non-finite values");
    if (!truth_pose.position.allFinite() || !estimate_pose.position.allFinite())
      fail("positions must be finite");
    if (!profile_angular.allFinite() || !profile_translational.allFinite())
      fail("profile velocities must be finite");
  }
};

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  const auto veq = [](const std::vector<Vec3>& x, const std::vector<Vec3>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] != y[i]) return false;
    return true;
  };
  return a.duration == b.duration && a.dt == b.dt && a.seed == b.seed &&
         a.ensemble_size == b.ensemble_size && a.decimation == b.decimation &&
         a.output_dir == b.output_dir && a.truth_pose.rotation == b.truth_pose.rotation &&
         a.truth_pose.position == b.truth_pose.position && veq(a.landmarks, b.landmarks) &&
         veq(a.landmark_velocities, b.landmark_velocities) &&
         a.profile_angular == b.profile_angular &&
         a.profile_translational == b.profile_translational &&
         a.estimate_pose.rotation == b.estimate_pose.rotation &&
         a.estimate_pose.position == b.estimate_pose.position &&
         veq(a.estimate_landmarks, b.estimate_landmarks) &&
         a.estimate_gyro_bias == b.estimate_gyro_bias &&
         a.estimate_vel_bias == b.estimate_vel_bias && a.estimate_sigma == b.estimate_sigma &&
         a.noise.gyro_bias == b.noise.gyro_bias && a.noise.vel_bias == b.noise.vel_bias &&
         veq(a.noise.landmark_bias, b.noise.landmark_bias) &&
         a.noise.gyro_diffusion == b.noise.gyro_diffusion &&
         a.noise.vel_diffusion == b.noise.vel_diffusion &&
         a.noise.landmark_noise_std == b.noise.landmark_noise_std &&
         a.gains.k_p == b.gains.k_p && a.gains.k_w == b.gains.k_w && a.gains.k_b == b.gains.k_b &&
         a.gains.k_sigma == b.gains.k_sigma && a.gains.gamma_sigma == b.gains.gamma_sigma &&
         a.gains.varrho == b.gains.varrho && a.gains.gamma_bias == b.gains.gamma_bias &&
         a.gains.alpha == b.gains.alpha &&
         a.observer.bias_skew_includes_position == b.observer.bias_skew_includes_position;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string format_vec3(const Vec3& v) {
  return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
}

inline std::string format_mat3(const Mat3& m) {
  std::string s;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      if (!s.empty()) s += " ";
      s += format_double(m(r, c));
    }
  return s;
}

inline std::string format_vec3_list(const std::vector<Vec3>& xs) {
  std::string s;
  for (const Vec3& v : xs) {
    if (!s.empty()) s += " ; ";
    s += format_vec3(v);
  }
  return s;
}

class ConfigReader {
 public:
  explicit ConfigReader(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("config parse: line " + std::to_string(lineno) +
                                    ": expected 'key = value'");
      }
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw std::invalid_argument("config parse: line " + std::to_string(lineno) + ": empty key");
      }
      if (!entries_.emplace(key, value).second) {
        throw std::invalid_argument("config parse: duplicate key '" + key + "'");
      }
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string take(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      throw std::invalid_argument("config parse: missing required key '" + key + "'");
    }
    std::string v = it->second;
    entries_.erase(it);
    return v;
  }

  std::optional<std::string> take_optional(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    std::string v = it->second;
    entries_.erase(it);
    return v;
  }

  void reject_unknown() const {
    if (!entries_.empty()) {
      throw std::invalid_argument("config parse: unknown key '" + entries_.begin()->first + "'");
    }
  }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

 private:
  std::map<std::string, std::string> entries_;
};

inline std::vector<double> parse_numbers(const std::string& key, const std::string& value,
                                         std::size_t expected = 0) {
  std::istringstream in(value);
  std::vector<double> out;
  double x;
  while (in >> x) out.push_back(x);
  in.clear();
  std::string rest;
  if (in >> rest) {
    throw std::invalid_argument("config parse: key '" + key + "': not a number near '" + rest + "'");
  }
  if (expected != 0 && out.size() != expected) {
    throw std::invalid_argument("config parse: key '" + key + "': expected " +
                                std::to_string(expected) + " numbers, got " +
                                std::to_string(out.size()));
  }
  return out;
}

inline double parse_scalar(const std::string& key, const std::string& value) {
  return parse_numbers(key, value, 1)[0];
}

inline Vec3 parse_vec3(const std::string& key, const std::string& value) {
  const auto n = parse_numbers(key, value, 3);
  return Vec3(n[0], n[1], n[2]);
}

inline Mat3 parse_mat3(const std::string& key, const std::string& value) {
  const auto n = parse_numbers(key, value, 9);
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = n[3 * r + c];
  return m;
}

inline std::vector<Vec3> parse_vec3_list(const std::string& key, const std::string& value) {
  std::vector<Vec3> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    auto semi = value.find(';', start);
    const std::string group =
        ConfigReader::trim(value.substr(start, semi == std::string::npos ? semi : semi - start));
    if (!group.empty()) out.push_back(parse_vec3(key, group));
    if (semi == std::string::npos) break;
    start = semi + 1;
  }
  if (out.empty()) {
    throw std::invalid_argument("config parse: key '" + key + "': empty list");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config parse: key '" + key + "': expected true/false");
}

}  // namespace detail

/// Serialize with full precision; parse(serialize(c)) reproduces c exactly.
inline std::string serialize_config(const ExperimentConfig& c) {
  using detail::format_double;
  using detail::format_mat3;
  using detail::format_vec3;
  using detail::format_vec3_list;
  std::string s;
  s += "# slamobs experiment configuration\n";
  s += "run.duration = " + format_double(c.duration) + "\n";
  s += "run.dt = " + format_double(c.dt) + "\n";
  s += "run.seed = " + std::to_string(c.seed) + "\n";
  s += "run.ensemble_size = " + std::to_string(c.ensemble_size) + "\n";
  s += "run.decimation = " + std::to_string(c.decimation) + "\n";
  if (!c.output_dir.empty()) s += "run.output_dir = " + c.output_dir + "\n";
  s += "truth.rotation = " + format_mat3(c.truth_pose.rotation) + "\n";
  s += "truth.position = " + format_vec3(c.truth_pose.position) + "\n";
  s += "truth.landmarks = " + format_vec3_list(c.landmarks) + "\n";
  if (!c.landmark_velocities.empty())
    s += "truth.landmark_velocities = " + format_vec3_list(c.landmark_velocities) + "\n";
  s += "profile.angular_velocity = " + format_vec3(c.profile_angular) + "\n";
  s += "profile.translational_velocity = " + format_vec3(c.profile_translational) + "\n";
  s += "estimate.rotation = " + format_mat3(c.estimate_pose.rotation) + "\n";
  s += "estimate.position = " + format_vec3(c.estimate_pose.position) + "\n";
  s += "estimate.landmarks = " + format_vec3_list(c.estimate_landmarks) + "\n";
  s += "estimate.gyro_bias = " + format_vec3(c.estimate_gyro_bias) + "\n";
  s += "estimate.vel_bias = " + format_vec3(c.estimate_vel_bias) + "\n";
  s += "estimate.sigma = " + format_vec3(c.estimate_sigma) + "\n";
  s += "noise.gyro_bias = " + format_vec3(c.noise.gyro_bias) + "\n";
  s += "noise.vel_bias = " + format_vec3(c.noise.vel_bias) + "\n";
  if (!c.noise.landmark_bias.empty())
    s += "noise.landmark_bias = " + format_vec3_list(c.noise.landmark_bias) + "\n";
  s += "noise.gyro_diffusion = " + format_vec3(c.noise.gyro_diffusion) + "\n";
  s += "noise.vel_diffusion = " + format_vec3(c.noise.vel_diffusion) + "\n";
  s += "noise.landmark_noise_std = " + format_double(c.noise.landmark_noise_std) + "\n";
  s += "gains.k_p = " + format_double(c.gains.k_p) + "\n";
  s += "gains.k_w = " + format_double(c.gains.k_w) + "\n";
  s += "gains.k_b = " + format_double(c.gains.k_b) + "\n";
  s += "gains.k_sigma = " + format_double(c.gains.k_sigma) + "\n";
  s += "gains.gamma_sigma = " + format_double(c.gains.gamma_sigma) + "\n";
  s += "gains.varrho = " + format_double(c.gains.varrho) + "\n";
  s += "gains.gamma = " + format_double(c.gains.gamma_bias) + "\n";
  {
    std::string a;
    for (double v : c.gains.alpha) {
      if (!a.empty()) a += " ";
      a += format_double(v);
    }
    s += "gains.alpha = " + a + "\n";
  }
  s += std::string("observer.bias_skew_includes_p = ") +
       (c.observer.bias_skew_includes_position ? "true" : "false") + "\n";
  return s;
}

/// Parse the key-value text format. Velocity noise accepts either direct
/// diffusion entries (`noise.gyro_diffusion`) or a rate-noise standard
/// deviation at a reference sampling interval (`noise.gyro_noise_std` with
/// `noise.reference_dt`), converted as Q = std * sqrt(reference_dt).
/// Giving both styles for the same channel is an error.
inline ExperimentConfig parse_config(const std::string& text) {
  using namespace detail;
  ConfigReader reader(text);
  ExperimentConfig c;

  c.duration = parse_scalar("run.duration", reader.take("run.duration"));
  c.dt = parse_scalar("run.dt", reader.take("run.dt"));
  {
    const std::string seed_text = ConfigReader::trim(reader.take("run.seed"));
    std::size_t consumed = 0;
    bool ok = !seed_text.empty() && seed_text.find('-') == std::string::npos;
    if (ok) {
      try {
        c.seed = std::stoull(seed_text, &consumed);
        ok = consumed == seed_text.size();
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) {
      throw std::invalid_argument("config parse: key 'run.seed': expected unsigned integer");
    }
  }
  if (auto v = reader.take_optional("run.ensemble_size")) {
    c.ensemble_size = static_cast<int>(parse_scalar("run.ensemble_size", *v));
  }
  if (auto v = reader.take_optional("run.decimation")) {
    c.decimation = static_cast<long long>(parse_scalar("run.decimation", *v));
  }
  if (auto v = reader.take_optional("run.output_dir")) c.output_dir = *v;

  c.truth_pose.rotation = parse_mat3("truth.rotation", reader.take("truth.rotation"));
  c.truth_pose.position = parse_vec3("truth.position", reader.take("truth.position"));
  c.landmarks = parse_vec3_list("truth.landmarks", reader.take("truth.landmarks"));
  if (auto v = reader.take_optional("truth.landmark_velocities")) {
    c.landmark_velocities = parse_vec3_list("truth.landmark_velocities", *v);
  }
  c.profile_angular = parse_vec3("profile.angular_velocity", reader.take("profile.angular_velocity"));
  c.profile_translational =
      parse_vec3("profile.translational_velocity", reader.take("profile.translational_velocity"));

  c.estimate_pose.rotation = parse_mat3("estimate.rotation", reader.take("estimate.rotation"));
  c.estimate_pose.position = parse_vec3("estimate.position", reader.take("estimate.position"));
  c.estimate_landmarks = parse_vec3_list("estimate.landmarks", reader.take("estimate.landmarks"));
  c.estimate_gyro_bias = parse_vec3("estimate.gyro_bias", reader.take("estimate.gyro_bias"));
  c.estimate_vel_bias = parse_vec3("estimate.vel_bias", reader.take("estimate.vel_bias"));
  c.estimate_sigma = parse_vec3("estimate.sigma", reader.take("estimate.sigma"));

  if (auto v = reader.take_optional("noise.gyro_bias")) c.noise.gyro_bias = parse_vec3("noise.gyro_bias", *v);
  if (auto v = reader.take_optional("noise.vel_bias")) c.noise.vel_bias = parse_vec3("noise.vel_bias", *v);
  if (auto v = reader.take_optional("noise.landmark_bias"))
    c.noise.landmark_bias = parse_vec3_list("noise.landmark_bias", *v);
  double reference_dt = 1e-3;
  if (auto v = reader.take_optional("noise.reference_dt")) {
    reference_dt = parse_scalar("noise.reference_dt", *v);
    if (!(reference_dt > 0.0)) {
      throw std::invalid_argument("config parse: noise.reference_dt must be positive");
    }
  }
  const auto gyro_diff = reader.take_optional("noise.gyro_diffusion");
  const auto gyro_std = reader.take_optional("noise.gyro_noise_std");
  if (gyro_diff && gyro_std) {
    throw std::invalid_argument(
        "config parse: give noise.gyro_diffusion or noise.gyro_noise_std, not both");
  }
  if (gyro_diff) c.noise.gyro_diffusion = parse_vec3("noise.gyro_diffusion", *gyro_diff);
  if (gyro_std) {
    c.noise.gyro_diffusion =
        Vec3::Constant(parse_scalar("noise.gyro_noise_std", *gyro_std) * std::sqrt(reference_dt));
  }
  const auto vel_diff = reader.take_optional("noise.vel_diffusion");
  const auto vel_std = reader.take_optional("noise.vel_noise_std");
  if (vel_diff && vel_std) {
    throw std::invalid_argument(
        "config parse: give noise.vel_diffusion or noise.vel_noise_std, not both");
  }
  if (vel_diff) c.noise.vel_diffusion = parse_vec3("noise.vel_diffusion", *vel_diff);
  if (vel_std) {
    c.noise.vel_diffusion =
        Vec3::Constant(parse_scalar("noise.vel_noise_std", *vel_std) * std::sqrt(reference_dt));
  }
  if (auto v = reader.take_optional("noise.landmark_noise_std")) {
    c.noise.landmark_noise_std = parse_scalar("noise.landmark_noise_std", *v);
  }

  c.gains.k_p = parse_scalar("gains.k_p", reader.take("gains.k_p"));
  c.gains.k_w = parse_scalar("gains.k_w", reader.take("gains.k_w"));
  c.gains.k_b = parse_scalar("gains.k_b", reader.take("gains.k_b"));
  c.gains.k_sigma = parse_scalar("gains.k_sigma", reader.take("gains.k_sigma"));
  c.gains.gamma_sigma = parse_scalar("gains.gamma_sigma", reader.take("gains.gamma_sigma"));
  c.gains.varrho = parse_scalar("gains.varrho", reader.take("gains.varrho"));
  c.gains.gamma_bias = parse_scalar("gains.gamma", reader.take("gains.gamma"));
  c.gains.alpha = parse_numbers("gains.alpha", reader.take("gains.alpha"));
  if (c.gains.alpha.size() == 1 && c.landmarks.size() > 1) {
    c.gains.alpha.assign(c.landmarks.size(), c.gains.alpha[0]);
  }

  if (auto v = reader.take_optional("observer.bias_skew_includes_p")) {
    c.observer.bias_skew_includes_position = parse_bool("observer.bias_skew_includes_p", *v);
  }

  reader.reject_unknown();
  return c;
}

}  // namespace slamobs
