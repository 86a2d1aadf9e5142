// SPDX-License-Identifier: Apache-2.0
#include "ocular/error.hpp"
#include "ocular/geom.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ocular;
using namespace ocular::geom;
using ocular::testing::kDeg;
using ocular::testing::random_transform;
using ocular::testing::random_unit;

namespace {

CameraModel pinhole120() { return make_camera(ModelKind::radial_tangential, 120, 120, 120, 120, {0, 0, 0, 0, 0}, 240, 240); }

CameraModel fisheye70() { return make_camera(ModelKind::equidistant_fisheye, 70, 70, 120, 120, {0, 0, 0, 0}, 240, 240); }

RigidTransform rot_z(double deg, const FrameId& from, const FrameId& to) {
  return RigidTransform(Eigen::Quaterniond(Eigen::AngleAxisd(deg * kDeg, Vec3::UnitZ())), Vec3::Zero(), from, to);
}

}  // namespace

TEST(Transform, IdentityComposition) {
  std::mt19937_64 rng(1);
  const RigidTransform t = random_transform(rng, "A", "B");
  const RigidTransform c = compose(RigidTransform::identity("A"), t);
  EXPECT_LT(rotation_angle_between(c, t), 1e-12);
  EXPECT_LT((c.translation() - t.translation()).norm(), 1e-12);
  EXPECT_EQ(c.from_frame(), "A");
  EXPECT_EQ(c.to_frame(), "B");
}

TEST(Transform, ComposeWithInverseIsIdentity) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const RigidTransform t = random_transform(rng, "A", "B");
    const RigidTransform c = compose(t, invert(t));
    EXPECT_LT(rotation_angle(c.rotation_matrix()), 1e-9);
    EXPECT_LT(c.translation().norm(), 1e-9);
    EXPECT_EQ(c.from_frame(), "A");
    EXPECT_EQ(c.to_frame(), "A");
  }
}

TEST(Transform, TwoQuarterTurnsAboutZ) {
  const RigidTransform c = compose(rot_z(90, "A", "B"), rot_z(90, "B", "C"));
  // Oracle: Rz(90)^2 written out by hand.
  EXPECT_LT((c.apply(Vec3(1, 0, 0)) - Vec3(-1, 0, 0)).norm(), 1e-12);
}

TEST(Transform, FrameMismatchThrows) {
  EXPECT_THROW(compose(rot_z(10, "A", "B"), rot_z(10, "C", "D")), FrameError);
}

TEST(Transform, InvertPureTranslation) {
  const RigidTransform t(Mat3::Identity(), Vec3(1, 2, 3), "A", "B");
  const RigidTransform inv = invert(t);
  EXPECT_LT((inv.translation() - Vec3(-1, -2, -3)).norm(), 1e-15);
  EXPECT_EQ(inv.from_frame(), "B");
  const RigidTransform id = invert(RigidTransform::identity("A"));
  EXPECT_LT(id.translation().norm(), 1e-15);
  EXPECT_LT(rotation_angle(id.rotation_matrix()), 1e-15);
}

TEST(Transform, DoubleInverseProperty) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const RigidTransform t = random_transform(rng, "A", "B");
    const RigidTransform tt = invert(invert(t));
    EXPECT_LT(rotation_angle_between(t, tt), 1e-12);
    EXPECT_LT((t.translation() - tt.translation()).norm(), 1e-12);
  }
}

TEST(Transform, AssociativeProperty) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const RigidTransform a = random_transform(rng, "A", "B");
    const RigidTransform b = random_transform(rng, "B", "C");
    const RigidTransform c = random_transform(rng, "C", "D");
    const RigidTransform l = compose(compose(a, b), c);
    const RigidTransform r = compose(a, compose(b, c));
    ASSERT_LT(rotation_angle_between(l, r), 1e-10);
    ASSERT_LT((l.translation() - r.translation()).norm(), 1e-10);
  }
}

TEST(Transform, RotationMatrixIsOrthonormal) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    // Deliberately unnormalized quaternion: construction renormalizes.
    std::normal_distribution<double> n(0, 3);
    const RigidTransform t(Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)), Vec3::Zero(), "A", "B");
    EXPECT_NEAR(t.rotation().norm(), 1.0, 1e-9);
    const Mat3 r = t.rotation_matrix();
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).norm(), 1e-10);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-10);
  }
}

TEST(So3, ExpLogRoundTrip) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> ang(0.0, 3.1);
  for (int i = 0; i < 200; ++i) {
    const Vec3 w = ang(rng) * random_unit(rng);
    EXPECT_LT((log_so3(exp_so3(w)) - w).norm(), 1e-9);
  }
  EXPECT_LT(log_so3(Mat3::Identity()).norm(), 1e-15);
}

// --- projection ---------------------------------------------------------------------------

TEST(Project, PinholeExamples) {
  const CameraModel cam = pinhole120();
  EXPECT_LT((project(cam, Vec3(0, 0, 100)) - Vec2(120, 120)).norm(), 1e-12);
  // u = fx * x / z + cx
  EXPECT_LT((project(cam, Vec3(10, 0, 100)) - Vec2(132, 120)).norm(), 1e-12);
}

TEST(Project, FisheyeExample) {
  // u = fx * theta + cx with theta = atan(1)
  const Vec2 px = project(fisheye70(), Vec3(100, 0, 100));
  EXPECT_NEAR(px.x(), 70.0 * std::atan(1.0) + 120.0, 1e-9);
  EXPECT_NEAR(px.x(), 174.978, 1e-3);
  EXPECT_NEAR(px.y(), 120.0, 1e-12);
}

TEST(Project, BehindCameraThrows) {
  EXPECT_THROW(project(pinhole120(), Vec3(0, 0, -1)), ProjectionError);
  EXPECT_THROW(project(pinhole120(), Vec3(1, 0, 0)), ProjectionError);
  EXPECT_THROW(project(fisheye70(), Vec3(0, 0, 0)), ProjectionError);
  // Fisheye sees behind the image plane.
  EXPECT_NO_THROW(project(fisheye70(), Vec3(1, 0, -0.1)));
}

TEST(Unproject, PrincipalPointAndPinholeInverse) {
  EXPECT_LT((unproject(pinhole120(), Vec2(120, 120)) - Vec3(0, 0, 1)).norm(), 1e-12);
  const Vec3 d = unproject(pinhole120(), Vec2(132, 120));
  EXPECT_LT((d - Vec3(0.1, 0, 1).normalized()).norm(), 1e-12);
}

class RoundTrip : public ::testing::TestWithParam<ModelKind> {};

TEST_P(RoundTrip, PixelRoundTripWithModerateDistortion) {
  // Focal lengths keep every pixel inside the monotone part of the
  // distortion curve, so each pixel has exactly one viewing direction.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> k(-0.3, 0.3), small(-1.0, 1.0), px(0.0, 239.0);
  const ModelKind kind = GetParam();
  for (int i = 0; i < 1000; ++i) {
    CameraModel cam;
    if (kind == ModelKind::radial_tangential) {
      cam = make_camera(kind, 260, 258, 119.5, 121, {k(rng), 0.01 * small(rng), 1e-3 * small(rng), 1e-3 * small(rng), 0.0},
                        240, 240);
    } else {
      cam = make_camera(kind, 140, 141, 119.5, 120.5, {0.05 * small(rng), 0.01 * small(rng), 0.002 * small(rng), 0.0},
                        240, 240);
    }
    const Vec2 p(px(rng), px(rng));
    const Vec3 d = unproject(cam, p);
    EXPECT_GT(d.z(), 0.0);
    EXPECT_LT((project(cam, d) - p).norm(), 1e-6) << "pixel " << p.transpose();
  }
}

TEST_P(RoundTrip, DirectionRoundTripWithinIncidenceRange) {
  std::mt19937_64 rng(8);
  const ModelKind kind = GetParam();
  const double max_deg = kind == ModelKind::radial_tangential ? 55.0 : 75.0;
  const CameraModel cam = kind == ModelKind::radial_tangential
                              ? make_camera(kind, 300, 300, 320, 240, {-0.05, 0.01, 0.001, -0.001, 0.0}, 640, 480)
                              : make_camera(kind, 70, 70, 120, 120, {0.02, -0.01, 0.002, 0.0}, 240, 240);
  std::uniform_real_distribution<double> th(0.0, max_deg * kDeg), ph(-3.14159, 3.14159);
  for (int i = 0; i < 1000; ++i) {
    const double t = th(rng), p = ph(rng);
    const Vec3 dir(std::sin(t) * std::cos(p), std::sin(t) * std::sin(p), std::cos(t));
    const Vec3 back = unproject(cam, project(cam, 50.0 * dir));
    EXPECT_LT(angle_between(back, dir), 1e-8);
  }
}

INSTANTIATE_TEST_SUITE_P(Models, RoundTrip,
                         ::testing::Values(ModelKind::radial_tangential, ModelKind::equidistant_fisheye),
                         [](const auto& info) { return std::string(to_string(info.param)); });

// Central differences written independently of solve::numeric_jacobian.
TEST_P(RoundTrip, ProjectionJacobiansMatchCentralDifferences) {
  std::mt19937_64 rng(9);
  const ModelKind kind = GetParam();
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const CameraModel cam = kind == ModelKind::radial_tangential
                                ? make_camera(kind, 300 + 20 * u(rng), 305, 320, 240,
                                              {0.1 * u(rng), 0.02 * u(rng), 0.003 * u(rng), 0.003 * u(rng), 0.01 * u(rng)},
                                              640, 480)
                                : make_camera(kind, 70 + 5 * u(rng), 71, 120, 119,
                                              {0.05 * u(rng), 0.02 * u(rng), 0.01 * u(rng), 0.005 * u(rng)}, 240, 240);
    const Vec3 p(20 * u(rng), 20 * u(rng), 60 + 10 * u(rng));
    Eigen::Matrix<double, 2, 3> jp;
    Eigen::Matrix<double, 2, Eigen::Dynamic> jk;
    project(cam, p, &jp, &jk);

    for (int j = 0; j < 3; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(p[j]));
      Vec3 a = p, b = p;
      a[j] += h;
      b[j] -= h;
      const Vec2 fd = (project(cam, a) - project(cam, b)) / (2 * h);
      for (int r = 0; r < 2; ++r) EXPECT_LT(std::abs(jp(r, j) - fd[r]) / std::max(1.0, std::abs(fd[r])), 1e-4);
    }
    const Eigen::VectorXd k0 = cam.parameters();
    ASSERT_EQ(jk.cols(), k0.size());
    for (Eigen::Index j = 0; j < k0.size(); ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(k0[j]));
      Eigen::VectorXd a = k0, b = k0;
      a[j] += h;
      b[j] -= h;
      const Vec2 fd = (project(cam.with_parameters(a), p) - project(cam.with_parameters(b), p)) / (2 * h);
      for (int r = 0; r < 2; ++r) EXPECT_LT(std::abs(jk(r, j) - fd[r]) / std::max(1.0, std::abs(fd[r])), 1e-4);
    }
  }
}

TEST(CameraModel, ValidateRejectsBadParameters) {
  EXPECT_THROW(make_camera(ModelKind::radial_tangential, -1, 100, 120, 120, {0, 0, 0, 0, 0}, 240, 240).validate(),
               InputError);
  EXPECT_THROW(make_camera(ModelKind::radial_tangential, 100, 100, 240, 120, {0, 0, 0, 0, 0}, 240, 240).validate(),
               InputError);
  EXPECT_THROW(make_camera(ModelKind::equidistant_fisheye, 100, 100, 120, 120, {0, 0, 0}, 240, 240).validate(),
               InputError);
}

// --- planes, rays, reflection ---------------------------------------------------------------

TEST(Reflect, Examples) {
  const Plane z0 = Plane::make(Vec3(0, 0, 1), 0.0);
  EXPECT_LT((reflect_point(z0, Vec3(1, 2, 3)) - Vec3(1, 2, -3)).norm(), 1e-15);
  EXPECT_LT((reflect_point(z0, Vec3(4, -5, 0)) - Vec3(4, -5, 0)).norm(), 1e-15);
}

TEST(Reflect, InvolutionAndIsometry) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 100; ++i) {
    const Plane pl = Plane::make(random_unit(rng), u(rng));
    EXPECT_NEAR(pl.normal.norm(), 1.0, 1e-12);
    const Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
    EXPECT_LT((reflect_point(pl, reflect_point(pl, a)) - a).norm(), 1e-12);
    EXPECT_NEAR((reflect_point(pl, a) - reflect_point(pl, b)).norm(), (a - b).norm(), 1e-10);
    // p' = p - 2 (n.p - d) n
    EXPECT_LT((reflect_point(pl, a) - (a - 2 * (pl.normal.dot(a) - pl.offset) * pl.normal)).norm(), 1e-12);
  }
}

TEST(PlaneFromBoard, Examples) {
  const Plane p0 = plane_from_board_pose(RigidTransform::identity("board"), 0.0);
  EXPECT_LT((p0.normal - Vec3(0, 0, 1)).norm(), 1e-15);
  EXPECT_NEAR(p0.offset, 0.0, 1e-15);
  const Plane p2 = plane_from_board_pose(RigidTransform::identity("board"), 2.0);
  EXPECT_NEAR(p2.offset, 2.0, 1e-15);

  const RigidTransform pose(Eigen::Quaterniond(Eigen::AngleAxisd(90 * kDeg, Vec3::UnitX())), Vec3(0, 50, 0), "board",
                            "ref");
  const Plane p = plane_from_board_pose(pose, 0.0);
  const Vec3 n = pose.rotation_matrix() * Vec3::UnitZ();  // rotated board +z
  EXPECT_LT((p.normal - n).norm(), 1e-12);
  EXPECT_LT((p.normal - Vec3(0, -1, 0)).norm(), 1e-12);
  EXPECT_NEAR(p.offset, n.dot(Vec3(0, 50, 0)), 1e-12);
}

TEST(PlaneFromBoard, TransformPlaneAgreesWithPointMapping) {
  std::mt19937_64 rng(11);
  const RigidTransform t = random_transform(rng, "A", "B");
  const Plane pa = Plane::make(random_unit(rng), 30.0, "A");
  const Plane pb = transform_plane(t, pa);
  // Any point of pa maps onto pb.
  const Vec3 on = pa.normal * pa.offset + pa.normal.cross(Vec3(1, 2, 3)).normalized() * 17.0;
  EXPECT_NEAR(pb.signed_distance(t.apply(on)), 0.0, 1e-9);
}

TEST(RayPlane, Examples) {
  const Ray r = Ray::make(Vec3::Zero(), Vec3(0, 0, 1));
  EXPECT_LT((intersect_ray_plane(r, Plane::make(Vec3(0, 0, 1), 10.0)) - Vec3(0, 0, 10)).norm(), 1e-12);
  EXPECT_THROW(intersect_ray_plane(Ray::make(Vec3::Zero(), Vec3(1, 0, 0)), Plane::make(Vec3(0, 0, 1), 10.0)),
               GeometryError);
  EXPECT_THROW(intersect_ray_plane(r, Plane::make(Vec3(0, 0, 1), -10.0)), GeometryError);
}

TEST(RayPlane, ResidualProperty) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-50, 50);
  int hits = 0;
  for (int i = 0; i < 500; ++i) {
    const Ray r = Ray::make(Vec3(u(rng), u(rng), u(rng)), random_unit(rng));
    const Plane pl = Plane::make(random_unit(rng), u(rng));
    try {
      const Vec3 p = intersect_ray_plane(r, pl);
      EXPECT_NEAR(pl.signed_distance(p), 0.0, 1e-9);
      ++hits;
    } catch (const GeometryError&) {
    }
  }
  EXPECT_GT(hits, 100);
}

TEST(Rays, ClosestPointExactIntersection) {
  const Vec3 target(10, -5, 40);
  const Ray a = Ray::make(Vec3(0, 0, 0), target);
  const Ray b = Ray::make(Vec3(30, 0, 0), target - Vec3(30, 0, 0));
  const Ray rays[] = {a, b};
  const RayIntersection x = closest_point_to_rays(rays, 0.5 * kDeg);
  EXPECT_LT((x.point - target).norm(), 1e-9);
  EXPECT_LT(x.rms, 1e-9);
  const Ray par[] = {a, Ray::make(Vec3(1, 0, 0), a.direction)};
  EXPECT_THROW(closest_point_to_rays(par, 0.5 * kDeg), DegenerateError);
}

TEST(Checkerboard, CornerLayoutAndValidation) {
  const CheckerboardSpec b{4, 5, 3.0};
  EXPECT_LT((b.corner(2, 3) - Vec3(9.0, 6.0, 0.0)).norm(), 1e-15);
  EXPECT_EQ(b.corners().size(), 20u);
  EXPECT_NO_THROW(b.validate());
  EXPECT_THROW((CheckerboardSpec{5, 5, 3.0}).validate(), InputError);
  EXPECT_THROW((CheckerboardSpec{2, 5, 3.0}).validate(), InputError);
  EXPECT_THROW((CheckerboardSpec{4, 5, 0.0}).validate(), InputError);
}
