#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "usn/repositioning.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace usn;

namespace {

Line3Fit line_through(const Vec3& p1, const Vec3& p2) {
  Line3Fit fit;
  fit.valid = true;
  fit.point = 0.5 * (p1 + p2);
  fit.direction = (p2 - p1).normalized();
  fit.inlier_count = 10;
  return fit;
}

// Max |y| of the line's points in the frame of `pose`, sampled along X.
double max_plane_residual(const Line3Fit& line, const RigidTransform& pose) {
  double worst = 0.0;
  for (int i = -10; i <= 10; ++i) {
    const Vec3 q = base_to_probe(line.point + 5.0 * i * line.direction, pose);
    worst = std::max(worst, std::abs(q.y()));
  }
  return worst;
}

Scene default_scene() {
  Scene scene;  // default needle: entry (-30,0,20) along +x, 30 mm inserted
  return scene;
}

}  // namespace

TEST_CASE("closed-form command: parallel offset line") {
  const Line3Fit line = line_through({-10.0, 2.0, 25.0}, {10.0, 2.0, 25.0});
  const RepositionCommand cmd = compute_reposition(line, RigidTransform::identity());
  CHECK(cmd.delta_y_mm == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(cmd.delta_theta_deg == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cmd.delta_p().x() == 0.0);
  CHECK(cmd.delta_p().z() == 0.0);
}

TEST_CASE("closed-form command: through-origin diagonal line") {
  const Line3Fit line = line_through({0.0, 0.0, 20.0}, {10.0, 10.0, 20.0});
  const RepositionCommand cmd = compute_reposition(line, RigidTransform::identity());
  CHECK(cmd.delta_y_mm == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(cmd.delta_theta_deg == doctest::Approx(45.0).epsilon(1e-9));
}

TEST_CASE("closed-form command: worked slope example") {
  const Line3Fit line = line_through({-5.0, 1.0, 20.0}, {5.0, 3.0, 20.0});
  const RepositionCommand cmd = compute_reposition(line, RigidTransform::identity());
  CHECK(cmd.delta_y_mm == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(cmd.delta_theta_deg == doctest::Approx(rad_to_deg(std::atan(0.2))).epsilon(1e-9));
}

TEST_CASE("input point order does not change the command") {
  const Line3Fit fwd = line_through({-5.0, 1.0, 20.0}, {5.0, 3.0, 20.0});
  Line3Fit rev = fwd;
  rev.direction = -rev.direction;
  const RepositionCommand a = compute_reposition(fwd, RigidTransform::identity());
  const RepositionCommand b = compute_reposition(rev, RigidTransform::identity());
  CHECK(a.delta_y_mm == doctest::Approx(b.delta_y_mm).epsilon(1e-12));
  CHECK(a.delta_theta_deg == doctest::Approx(b.delta_theta_deg).epsilon(1e-12));
}

TEST_CASE("degenerate projection throws") {
  const Line3Fit line = line_through({0.0, -5.0, 20.0}, {0.0, 5.0, 20.0});
  CHECK_THROWS_AS(compute_reposition(line, RigidTransform::identity()), std::invalid_argument);
}

TEST_CASE("apply: zero command and pure yaw") {
  RigidTransform pose;
  pose.translation = Vec3(3.0, -2.0, 7.0);

  const RigidTransform same = apply(pose, {});
  CHECK((same.rotation - pose.rotation).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((same.translation - pose.translation).cwiseAbs().maxCoeff() < 1e-12);

  RepositionCommand yaw;
  yaw.delta_theta_deg = 10.0;
  const RigidTransform turned = apply(pose, yaw);
  const Vec3 expected_x =
      Eigen::AngleAxisd(deg_to_rad(10.0), Vec3::UnitZ()).toRotationMatrix().col(0);
  CHECK((turned.x_axis() - expected_x).norm() < 1e-12);
  CHECK((turned.translation - pose.translation).norm() < 1e-12);
}

TEST_CASE("reposition exactness on random lines") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 p1(10.0 * unit(rng), 10.0 * unit(rng), 20.0 + 5.0 * unit(rng));
    Vec3 dir(1.0 + 0.5 * unit(rng), unit(rng), 0.3 * unit(rng));
    dir.normalize();
    const Line3Fit line = line_through(p1, p1 + 20.0 * dir);

    RigidTransform pose = RigidTransform::rot_z(deg_to_rad(20.0 * unit(rng)));
    pose.translation = Vec3(5.0 * unit(rng), 5.0 * unit(rng), 0.0);

    const RepositionCommand cmd = compute_reposition(line, pose);
    const RigidTransform adjusted = apply(pose, cmd);
    CHECK(max_plane_residual(line, adjusted) < 1e-9);

    // idempotence: a second command on the aligned pose is (numerically) null
    const RepositionCommand again = compute_reposition(line, adjusted);
    CHECK(std::abs(again.delta_y_mm) < 1e-6);
    CHECK(std::abs(again.delta_theta_deg) < 1e-6);
  }
}

TEST_CASE("mirroring the scene across the probe X-Z plane flips the command signs") {
  const Vec3 p1(-8.0, 3.0, 22.0), p2(9.0, 5.0, 23.0);
  const RepositionCommand cmd = compute_reposition(line_through(p1, p2), RigidTransform::identity());
  const Vec3 m1(p1.x(), -p1.y(), p1.z()), m2(p2.x(), -p2.y(), p2.z());
  const RepositionCommand mirrored =
      compute_reposition(line_through(m1, m2), RigidTransform::identity());
  CHECK(mirrored.delta_y_mm == doctest::Approx(-cmd.delta_y_mm).epsilon(1e-12));
  CHECK(mirrored.delta_theta_deg == doctest::Approx(-cmd.delta_theta_deg).epsilon(1e-12));
}

TEST_CASE("closed loop without perturbation stays in monitoring") {
  EpisodeConfig config;
  config.inject_delta_theta_deg = 0.0;
  config.inject_delta_p_mm = 0.0;
  config.max_monitor_frames = 60;
  config.seed = 4;

  const EpisodeLog log = run_closed_loop(default_scene(), RigidTransform::identity(), config);
  CHECK(log.final_state == ControllerState::kMonitoring);
  CHECK(log.trigger_frame == -1);
  CHECK_FALSE(log.success);
}

TEST_CASE("closed loop restores a clean 5-degree perturbation") {
  EpisodeConfig config;
  config.inject_delta_theta_deg = 5.0;
  config.inject_delta_p_mm = 0.0;
  config.seed = 8;

  const EpisodeLog log = run_closed_loop(default_scene(), RigidTransform::identity(), config);
  REQUIRE(log.success);
  CHECK(log.final_state == ControllerState::kRestored);
  CHECK(log.trigger_frame == config.perturb_frame);
  CHECK(log.e_p_mm <= 0.2);
  CHECK(log.e_theta_deg <= 0.2);
}

TEST_CASE("closed loop restores the far grid corner with noise") {
  EpisodeConfig config;
  config.inject_delta_theta_deg = 15.0;
  config.inject_delta_p_mm = 6.0;
  config.degradation = default_stress_degradation();
  config.seed = 12;

  const EpisodeLog log = run_closed_loop(default_scene(), RigidTransform::identity(), config);
  REQUIRE(log.success);
  CHECK(log.e_p_mm <= 2.0);
  CHECK(log.e_theta_deg <= 2.0);
}

TEST_CASE("controller state names are stable for logs") {
  CHECK(std::string(to_string(ControllerState::kRestored)) == "Restored");
  CHECK(std::string(to_string(ControllerState::kFailed)) == "Failed");
}
