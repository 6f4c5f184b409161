#include <catch2/catch.hpp>

#include <cmath>

#include "slamobs/dynamics.hpp"
#include "slamobs/random.hpp"

using namespace slamobs;

namespace {

WorldState scenario_state() {
  WorldState s;
  s.pose.rotation = Mat3::Identity();
  s.pose.position = Vec3(0, 0, 1);
  s.landmarks = {Vec3(1.5, 0, 0), Vec3(-1.5, 0, 0), Vec3(0, 1.5, 0), Vec3(0, -1.5, 0)};
  s.landmark_velocities.assign(4, Vec3::Zero());
  return s;
}

}  // namespace

TEST_CASE("truth_step equilibrium at zero velocity") {
  WorldState s = scenario_state();
  const WorldState next = truth_step(s, Vec3::Zero(), Vec3::Zero(), 0.5);
  CHECK(next.pose.rotation == s.pose.rotation);
  CHECK(next.pose.position == s.pose.position);
  for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
    CHECK(next.landmarks[i] == s.landmarks[i]);
  }
}

TEST_CASE("truth_step single Euler step") {
  WorldState s = scenario_state();
  const WorldState next = truth_step(s, Vec3::Zero(), Vec3(1.5, 0, 0), 0.1);
  CHECK(next.pose.position.isApprox(Vec3(0.15, 0, 1), 1e-15));
  CHECK(next.pose.rotation.isIdentity(1e-15));
}

TEST_CASE("truth_step full revolution returns near identity") {
  WorldState s = scenario_state();
  const Vec3 omega(0, 0, 0.1);
  const double dt = 1e-3;
  const long long steps = 62830;  // ~ 2*pi / 0.1 seconds
  for (long long k = 0; k < steps; ++k) {
    s = truth_step(std::move(s), omega, Vec3::Zero(), dt);
  }
  CHECK((s.pose.rotation - Mat3::Identity()).norm() < 1e-3);
  CHECK(orthonormality_error(s.pose.rotation) < 1e-11);
}

TEST_CASE("truth_step leaves static landmarks bit-identical") {
  WorldState s = scenario_state();
  const std::vector<Vec3> before = s.landmarks;
  for (int k = 0; k < 1000; ++k) {
    s = truth_step(std::move(s), Vec3(0.2, -0.1, 0.3), Vec3(1, 2, 3), 1e-3);
  }
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(s.landmarks[i] == before[i]);
  }
}

TEST_CASE("moving landmarks follow the body-frame velocity") {
  WorldState s = scenario_state();
  s.landmark_velocities[0] = Vec3(2, 0, 0);
  const WorldState next = truth_step(s, Vec3::Zero(), Vec3::Zero(), 0.25);
  CHECK(next.landmarks[0].isApprox(Vec3(2, 0, 0), 1e-15));
  CHECK(next.landmarks[1] == s.landmarks[1]);
}

TEST_CASE("position growth is linear for constant translational velocity") {
  WorldState s = scenario_state();
  const Vec3 vel(0.3, -0.4, 0.5);
  for (int k = 0; k < 400; ++k) {
    s = truth_step(std::move(s), Vec3::Zero(), vel, 0.01);
  }
  CHECK(s.pose.position.isApprox(Vec3(0, 0, 1) + 4.0 * vel, 1e-10));
}

TEST_CASE("two half steps match one step to second order in rotation") {
  const Vec3 omega(0.7, -0.4, 0.9);
  for (double dt : {1e-2, 1e-3}) {
    WorldState one = scenario_state();
    one = truth_step(std::move(one), omega, Vec3::Zero(), dt);
    WorldState two = scenario_state();
    two = truth_step(std::move(two), omega, Vec3::Zero(), dt / 2);
    two = truth_step(std::move(two), omega, Vec3::Zero(), dt / 2);
    const double diff = (one.pose.rotation - two.pose.rotation).norm();
    // both equal R*exp(omega dt) exactly for constant omega
    CHECK(diff < 1e-13);
    CHECK((one.pose.rotation - scenario_state().pose.rotation * so3_exp(omega * dt)).norm() <
          1e-14);
  }
}

TEST_CASE("truth_step rejects invalid input") {
  WorldState s = scenario_state();
  CHECK_THROWS_AS(truth_step(s, Vec3::Zero(), Vec3::Zero(), 0.0), std::domain_error);
  CHECK_THROWS_AS(
      truth_step(s, Vec3(std::nan(""), 0, 0), Vec3::Zero(), 1e-3), std::domain_error);
  CHECK_THROWS_AS(truth_step(s, Vec3::Zero(),
                             Vec3(0, std::numeric_limits<double>::infinity(), 0), 1e-3),
                  std::domain_error);
}

TEST_CASE("noncollinear detects planes and lines") {
  CHECK(noncollinear({Vec3(1.5, 0, 0), Vec3(-1.5, 0, 0), Vec3(0, 1.5, 0), Vec3(0, -1.5, 0)}));
  CHECK_FALSE(noncollinear({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)}));
  CHECK(noncollinear({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0)}));
  CHECK_THROWS_AS(noncollinear({Vec3(0, 0, 0), Vec3(1, 0, 0)}), std::invalid_argument);
}
