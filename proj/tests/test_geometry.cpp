#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "usn/geometry.hpp"

#include <doctest.h>

#include <random>

using namespace usn;

namespace {

RigidTransform random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(-kPi, kPi);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  RigidTransform t;
  t.rotation = (Eigen::AngleAxisd(angle(rng), Vec3::UnitZ()) *
                Eigen::AngleAxisd(angle(rng), Vec3::UnitY()) *
                Eigen::AngleAxisd(angle(rng), Vec3::UnitX()))
                   .toRotationMatrix();
  t.translation = Vec3(shift(rng), shift(rng), shift(rng));
  return t;
}

}  // namespace

TEST_CASE("compose with identity and inverse") {
  std::mt19937_64 rng(7);
  const RigidTransform t = random_pose(rng);

  const RigidTransform ti = compose(t, RigidTransform::identity());
  CHECK((ti.rotation - t.rotation).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ti.translation - t.translation).cwiseAbs().maxCoeff() < 1e-12);

  const RigidTransform round = compose(t, invert(t));
  CHECK((round.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(round.translation.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("rotations about one axis commute and add") {
  const RigidTransform a = RigidTransform::rot_z(deg_to_rad(30.0));
  const RigidTransform b = RigidTransform::rot_z(deg_to_rad(15.0));
  const RigidTransform expected = RigidTransform::rot_z(deg_to_rad(45.0));
  const RigidTransform ab = compose(a, b);
  CHECK((ab.rotation - expected.rotation).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pose chain inverse property") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 25; ++i) {
    const RigidTransform a = random_pose(rng);
    const RigidTransform b = random_pose(rng);
    const RigidTransform lhs = invert(compose(a, b));
    const RigidTransform rhs = compose(invert(b), invert(a));
    CHECK((lhs.rotation - rhs.rotation).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((lhs.translation - rhs.translation).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("pixel_to_probe default probe geometry") {
  const CalibrationMap cal;  // 671 x 657, 51.3 mm footprint, 50 mm depth

  const Vec3 origin = pixel_to_probe({0.0, 0.0}, cal);
  CHECK(origin.x() == doctest::Approx(-25.65).epsilon(1e-12));
  CHECK(origin.y() == doctest::Approx(0.0));
  CHECK(origin.z() == doctest::Approx(0.0));

  // Far edge of the pixel grid spans exactly the footprint.
  const Vec3 right = pixel_to_probe({671.0, 0.0}, cal);
  CHECK(right.x() == doctest::Approx(25.65).epsilon(1e-12));

  const Vec3 center = pixel_to_probe({335.0, 328.0}, cal);
  CHECK(center.x() == doctest::Approx(0.0).epsilon(0.05));
  CHECK(center.z() == doctest::Approx(24.96).epsilon(0.01));

  CHECK_THROWS_AS(pixel_to_probe({-1.0, 0.0}, cal), std::out_of_range);
  CHECK_THROWS_AS(pixel_to_probe({0.0, 658.0}, cal), std::out_of_range);
}

TEST_CASE("pixel grid spans footprint x depth within one spacing") {
  const CalibrationMap cal;
  const Vec3 far_corner = pixel_to_probe({static_cast<double>(cal.width - 1),
                                          static_cast<double>(cal.height - 1)},
                                         cal);
  const Vec3 near_corner = pixel_to_probe({0.0, 0.0}, cal);
  const double span_x = far_corner.x() - near_corner.x();
  const double span_z = far_corner.z() - near_corner.z();
  CHECK(std::abs(span_x - cal.footprint_mm()) <= cal.pixel_spacing_u + 1e-12);
  CHECK(std::abs(span_z - cal.depth_mm()) <= cal.pixel_spacing_v + 1e-12);
}

TEST_CASE("pixel_to_probe lands on the image plane and inverts") {
  const CalibrationMap cal;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> du(0.0, cal.width);
  std::uniform_real_distribution<double> dv(0.0, cal.height);
  for (int i = 0; i < 50; ++i) {
    const ImagePoint px(du(rng), dv(rng));
    const Vec3 p = pixel_to_probe(px, cal);
    CHECK(p.y() == doctest::Approx(0.0));
    const ImagePoint back = probe_to_pixel(p, cal);
    CHECK(back.x() == doctest::Approx(px.x()).epsilon(1e-9));
    CHECK(back.y() == doctest::Approx(px.y()).epsilon(1e-9));
  }
}

TEST_CASE("probe_to_base applies the rigid transform") {
  const Vec3 p(1.0, 2.0, 3.0);
  CHECK((probe_to_base(p, RigidTransform::identity()) - p).norm() == doctest::Approx(0.0));

  const RigidTransform shift = RigidTransform::from_translation({5.0, -1.0, 2.0});
  CHECK((probe_to_base(p, shift) - Vec3(6.0, 1.0, 5.0)).norm() == doctest::Approx(0.0));

  std::mt19937_64 rng(23);
  for (int i = 0; i < 20; ++i) {
    const RigidTransform pose = random_pose(rng);
    const Vec3 round = base_to_probe(probe_to_base(p, pose), pose);
    CHECK((round - p).norm() < 1e-9);
  }
}
