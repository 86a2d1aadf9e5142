// SPDX-License-Identifier: Apache-2.0
//
// Frames, rigid transforms, camera projection models, planes, rays and
// mirror reflection. Units: millimeters and pixels. Frames are right-handed,
// cameras look along +z and image y points down with the origin at the
// center of the top-left pixel.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ocular::geom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using FrameId = std::string;

Mat3 skew(const Vec3& v);
/// Rodrigues map from an axis-angle vector to a rotation matrix.
Mat3 exp_so3(const Vec3& axis_angle);
/// Inverse of exp_so3; angle in [0, pi].
Vec3 log_so3(const Mat3& rotation);

/// SE(3) pose mapping coordinates expressed in `from_frame` into `to_frame`:
/// p_to = R * p_from + t.
class RigidTransform {
 public:
  RigidTransform() = default;
  RigidTransform(const Eigen::Quaterniond& rotation, const Vec3& translation,
                 FrameId from_frame, FrameId to_frame);
  RigidTransform(const Mat3& rotation, const Vec3& translation,
                 FrameId from_frame, FrameId to_frame);

  static RigidTransform identity(const FrameId& frame);

  const Eigen::Quaterniond& rotation() const { return rotation_; }
  Mat3 rotation_matrix() const { return rotation_.toRotationMatrix(); }
  const Vec3& translation() const { return translation_; }
  const FrameId& from_frame() const { return from_; }
  const FrameId& to_frame() const { return to_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 apply_direction(const Vec3& v) const { return rotation_ * v; }

  /// Same motion, different frame labels.
  RigidTransform relabeled(FrameId from_frame, FrameId to_frame) const;

 private:
  // Canonical sign: w >= 0.
  Eigen::Quaterniond rotation_ = Eigen::Quaterniond::Identity();
  Vec3 translation_ = Vec3::Zero();
  FrameId from_;
  FrameId to_;
};

/// a: A->B, b: B->C gives A->C (apply a, then b). Throws FrameError when
/// a.to_frame() != b.from_frame().
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

/// Angle of the relative rotation between two transforms, radians.
double rotation_angle_between(const RigidTransform& a, const RigidTransform& b);
double rotation_angle(const Mat3& r);

enum class ModelKind { radial_tangential, equidistant_fisheye };

const char* to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);
/// 5 for radial_tangential (k1,k2,p1,p2,k3), 4 for fisheye (k1..k4).
std::size_t distortion_size(ModelKind kind);

struct CameraModel {
  ModelKind kind = ModelKind::equidistant_fisheye;
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::vector<double> dist;
  int width = 0;
  int height = 0;

  /// Throws InputError on out-of-range parameters or a wrong coefficient count.
  void validate() const;

  /// Parameter vector [fx, fy, cx, cy, dist...].
  Eigen::VectorXd parameters() const;
  CameraModel with_parameters(const Eigen::VectorXd& params) const;
  std::size_t parameter_count() const { return 4 + dist.size(); }

  bool contains(const Vec2& px, double margin = 0.0) const;
};

CameraModel make_camera(ModelKind kind, double fx, double fy, double cx,
                        double cy, std::vector<double> dist, int width,
                        int height);

/// Projects a camera-frame point to pixels. Throws ProjectionError when the
/// point is at/behind the camera (radial_tangential: z <= 0; fisheye: p == 0).
Vec2 project(const CameraModel& cam, const Vec3& p_cam);

/// Projection with Jacobians w.r.t. the camera-frame point (2x3) and the
/// intrinsic parameter vector (2 x parameter_count()). Either output may be null.
Vec2 project(const CameraModel& cam, const Vec3& p_cam,
             Eigen::Matrix<double, 2, 3>* d_point,
             Eigen::Matrix<double, 2, Eigen::Dynamic>* d_intrinsics);

/// Unit viewing direction for a pixel. Distortion is inverted by damped
/// Newton iteration (tolerance 1e-10 normalized, at most 50 iterations);
/// throws UndistortError on failure.
Vec3 unproject(const CameraModel& cam, const Vec2& px);

struct Plane {
  Vec3 normal = Vec3::UnitZ();  // unit length
  double offset = 0.0;          // n . p = offset for points on the plane
  FrameId frame;

  /// Normalizes `normal` and rescales `offset` to match.
  static Plane make(const Vec3& normal, double offset, FrameId frame = {});
  double signed_distance(const Vec3& p) const { return normal.dot(p) - offset; }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();  // unit length
  FrameId frame;

  static Ray make(const Vec3& origin, const Vec3& direction, FrameId frame = {});
  Vec3 at(double t) const { return origin + t * direction; }
};

/// Planar calibration target. Corner (row, col) sits at
/// (col * square_mm, row * square_mm, 0) in the board frame.
struct CheckerboardSpec {
  int inner_rows = 0;
  int inner_cols = 0;
  double square_mm = 0.0;

  void validate() const;
  std::size_t corner_count() const {
    return static_cast<std::size_t>(inner_rows) * static_cast<std::size_t>(inner_cols);
  }
  Vec3 corner(int row, int col) const;
  std::vector<Vec3> corners() const;
  Vec3 center() const;
};

Vec3 reflect_point(const Plane& plane, const Vec3& p);
Vec3 reflect_direction(const Plane& plane, const Vec3& v);
Ray reflect_ray(const Plane& plane, const Ray& r);

/// Plane coincident with the board z=0 plane of `board_pose` (board -> ref)
/// shifted by offset_mm along the board +z axis mapped into the reference frame.
Plane plane_from_board_pose(const RigidTransform& board_pose, double offset_mm);

/// Re-expresses a plane given in t.from_frame() in t.to_frame().
Plane transform_plane(const RigidTransform& t, const Plane& plane);

/// Throws GeometryError when parallel (|n.d| <= 1e-9) or when the
/// intersection lies behind the ray origin.
Vec3 intersect_ray_plane(const Ray& r, const Plane& pl);

/// Least-squares point closest to all rays (midpoint method) and the RMS
/// point-to-ray distance. Throws DegenerateError when fewer than two rays are
/// given or no pair of rays spans more than `min_angle_rad`.
struct RayIntersection {
  Vec3 point;
  double rms = 0.0;
};
RayIntersection closest_point_to_rays(std::span<const Ray> rays,
                                      double min_angle_rad);

/// Distance from a point to the infinite line carrying a ray.
double distance_to_line(const Ray& r, const Vec3& p);

double angle_between(const Vec3& a, const Vec3& b);

}  // namespace ocular::geom
