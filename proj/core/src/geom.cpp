// SPDX-License-Identifier: Apache-2.0
#include "ocular/geom.hpp"

#include "ocular/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace ocular::geom {

namespace {

Eigen::Quaterniond canonical(Eigen::Quaterniond q) {
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

constexpr int kMaxUndistortIterations = 50;
constexpr double kUndistortTolerance = 1e-10;

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Mat3 exp_so3(const Vec3& w) {
  const double theta = w.norm();
  if (theta < 1e-12) return Mat3::Identity() + skew(w);
  return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

Vec3 log_so3(const Mat3& r) {
  Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

RigidTransform::RigidTransform(const Eigen::Quaterniond& rotation,
                               const Vec3& translation, FrameId from_frame,
                               FrameId to_frame)
    : rotation_(canonical(rotation)),
      translation_(translation),
      from_(std::move(from_frame)),
      to_(std::move(to_frame)) {}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation,
                               FrameId from_frame, FrameId to_frame)
    : RigidTransform(Eigen::Quaterniond(rotation), translation,
                     std::move(from_frame), std::move(to_frame)) {}

RigidTransform RigidTransform::identity(const FrameId& frame) {
  return RigidTransform(Eigen::Quaterniond::Identity(), Vec3::Zero(), frame, frame);
}

RigidTransform RigidTransform::relabeled(FrameId from_frame, FrameId to_frame) const {
  RigidTransform out = *this;
  out.from_ = std::move(from_frame);
  out.to_ = std::move(to_frame);
  return out;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  if (a.to_frame() != b.from_frame()) {
    throw FrameError("cannot compose " + a.from_frame() + "->" + a.to_frame() +
                     " with " + b.from_frame() + "->" + b.to_frame());
  }
  return RigidTransform(b.rotation() * a.rotation(),
                        b.rotation() * a.translation() + b.translation(),
                        a.from_frame(), b.to_frame());
}

RigidTransform invert(const RigidTransform& t) {
  const Eigen::Quaterniond qi = t.rotation().conjugate();
  return RigidTransform(qi, -(qi * t.translation()), t.to_frame(), t.from_frame());
}

double rotation_angle(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  // acos loses precision near zero; use the skew part there.
  const Vec3 s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * s.norm(), c);
}

double rotation_angle_between(const RigidTransform& a, const RigidTransform& b) {
  return a.rotation().angularDistance(b.rotation());
}

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::radial_tangential: return "radial_tangential";
    case ModelKind::equidistant_fisheye: return "equidistant_fisheye";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "radial_tangential") return ModelKind::radial_tangential;
  if (name == "equidistant_fisheye") return ModelKind::equidistant_fisheye;
  throw InputError("unknown camera model kind '" + name + "'");
}

std::size_t distortion_size(ModelKind kind) {
  return kind == ModelKind::radial_tangential ? 5 : 4;
}

void CameraModel::validate() const {
  std::ostringstream err;
  if (!(fx > 0.0) || !(fy > 0.0)) err << "focal lengths must be positive; ";
  if (width <= 0 || height <= 0) err << "image size must be positive; ";
  if (!(cx >= 0.0 && cx < width)) err << "cx outside [0, width); ";
  if (!(cy >= 0.0 && cy < height)) err << "cy outside [0, height); ";
  if (dist.size() != distortion_size(kind)) {
    err << "expected " << distortion_size(kind) << " distortion coefficients, got "
        << dist.size() << "; ";
  }
  for (double d : dist) {
    if (!std::isfinite(d)) err << "non-finite distortion coefficient; ";
  }
  if (!err.str().empty()) throw InputError("invalid camera model: " + err.str());
}

Eigen::VectorXd CameraModel::parameters() const {
  Eigen::VectorXd p(parameter_count());
  p << fx, fy, cx, cy, Eigen::Map<const Eigen::VectorXd>(dist.data(), dist.size());
  return p;
}

CameraModel CameraModel::with_parameters(const Eigen::VectorXd& p) const {
  CameraModel out = *this;
  out.fx = p[0];
  out.fy = p[1];
  out.cx = p[2];
  out.cy = p[3];
  for (std::size_t i = 0; i < dist.size(); ++i) out.dist[i] = p[4 + static_cast<Eigen::Index>(i)];
  return out;
}

bool CameraModel::contains(const Vec2& px, double margin) const {
  return px.x() >= -0.5 - margin && px.y() >= -0.5 - margin &&
         px.x() <= width - 0.5 + margin && px.y() <= height - 0.5 + margin;
}

CameraModel make_camera(ModelKind kind, double fx, double fy, double cx, double cy,
                        std::vector<double> dist, int width, int height) {
  CameraModel cam{kind, fx, fy, cx, cy, std::move(dist), width, height};
  cam.validate();
  return cam;
}

namespace {

// Radial-tangential distortion of normalized coordinates with its 2x2 Jacobian.
Vec2 distort_rt(const std::vector<double>& d, const Vec2& n, Eigen::Matrix2d* jac) {
  const double k1 = d[0], k2 = d[1], p1 = d[2], p2 = d[3], k3 = d[4];
  const double x = n.x(), y = n.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
  const Vec2 out(x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
                 y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y);
  if (jac) {
    const double dr = k1 + 2.0 * k2 * r2 + 3.0 * k3 * r2 * r2;
    (*jac)(0, 0) = radial + 2.0 * x * x * dr + 2.0 * p1 * y + 6.0 * p2 * x;
    (*jac)(0, 1) = 2.0 * x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y;
    (*jac)(1, 0) = 2.0 * x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y;
    (*jac)(1, 1) = radial + 2.0 * y * y * dr + 6.0 * p1 * y + 2.0 * p2 * x;
  }
  return out;
}

double fisheye_theta_d(const std::vector<double>& k, double theta, double* derivative) {
  const double t2 = theta * theta;
  const double poly = 1.0 + t2 * (k[0] + t2 * (k[1] + t2 * (k[2] + t2 * k[3])));
  if (derivative) {
    *derivative = 1.0 + t2 * (3.0 * k[0] + t2 * (5.0 * k[1] + t2 * (7.0 * k[2] + t2 * 9.0 * k[3])));
  }
  return theta * poly;
}

}  // namespace

Vec2 project(const CameraModel& cam, const Vec3& p) {
  return project(cam, p, nullptr, nullptr);
}

Vec2 project(const CameraModel& cam, const Vec3& p,
             Eigen::Matrix<double, 2, 3>* d_point,
             Eigen::Matrix<double, 2, Eigen::Dynamic>* d_intr) {
  Vec2 nd;                                   // distorted normalized coordinates
  Eigen::Matrix<double, 2, 3> dnd_dp;        // d nd / d p
  Eigen::Matrix<double, 2, Eigen::Dynamic> dnd_dk(2, cam.dist.size());

  if (cam.kind == ModelKind::radial_tangential) {
    if (!(p.z() > 0.0)) throw ProjectionError("point at or behind the camera");
    const double iz = 1.0 / p.z();
    const Vec2 n(p.x() * iz, p.y() * iz);
    Eigen::Matrix2d dd;
    nd = distort_rt(cam.dist, n, &dd);
    if (d_point) {
      Eigen::Matrix<double, 2, 3> dn;
      dn << iz, 0.0, -p.x() * iz * iz, 0.0, iz, -p.y() * iz * iz;
      dnd_dp = dd * dn;
    }
    if (d_intr) {
      const double x = n.x(), y = n.y(), r2 = x * x + y * y;
      dnd_dk << x * r2, x * r2 * r2, 2.0 * x * y, r2 + 2.0 * x * x, x * r2 * r2 * r2,
          y * r2, y * r2 * r2, r2 + 2.0 * y * y, 2.0 * x * y, y * r2 * r2 * r2;
    }
  } else {
    const double rho = std::hypot(p.x(), p.y());
    const double norm = std::hypot(rho, p.z());
    if (!(norm > 0.0)) throw ProjectionError("point coincides with the camera center");
    const double theta = std::atan2(rho, p.z());
    double dtd = 0.0;
    const double td = fisheye_theta_d(cam.dist, theta, &dtd);
    if (rho < 1e-12 * norm) {
      // On the optical axis theta_d / rho -> 1 / z.
      if (!(p.z() > 0.0)) throw ProjectionError("point on the optical axis behind the camera");
      const double iz = 1.0 / p.z();
      nd = Vec2(p.x() * iz, p.y() * iz);
      dnd_dp << iz, 0.0, 0.0, 0.0, iz, 0.0;
      dnd_dk.setZero();
    } else {
      const double s = td / rho;
      nd = Vec2(s * p.x(), s * p.y());
      if (d_point) {
        const double r2 = norm * norm;
        const Eigen::RowVector3d dtheta(p.z() * p.x() / (rho * r2), p.z() * p.y() / (rho * r2),
                                        -rho / r2);
        const Eigen::RowVector3d drho(p.x() / rho, p.y() / rho, 0.0);
        const Eigen::RowVector3d ds = (dtd * dtheta * rho - td * drho) / (rho * rho);
        dnd_dp.row(0) = p.x() * ds;
        dnd_dp.row(1) = p.y() * ds;
        dnd_dp(0, 0) += s;
        dnd_dp(1, 1) += s;
      }
      if (d_intr) {
        double tp = theta;
        const double t2 = theta * theta;
        for (std::size_t i = 0; i < cam.dist.size(); ++i) {
          tp *= t2;
          dnd_dk(0, static_cast<Eigen::Index>(i)) = p.x() / rho * tp;
          dnd_dk(1, static_cast<Eigen::Index>(i)) = p.y() / rho * tp;
        }
      }
    }
  }

  if (d_point) {
    d_point->row(0) = cam.fx * dnd_dp.row(0);
    d_point->row(1) = cam.fy * dnd_dp.row(1);
  }
  if (d_intr) {
    d_intr->resize(2, static_cast<Eigen::Index>(cam.parameter_count()));
    d_intr->setZero();
    (*d_intr)(0, 0) = nd.x();
    (*d_intr)(1, 1) = nd.y();
    (*d_intr)(0, 2) = 1.0;
    (*d_intr)(1, 3) = 1.0;
    d_intr->block(0, 4, 1, dnd_dk.cols()) = cam.fx * dnd_dk.row(0);
    d_intr->block(1, 4, 1, dnd_dk.cols()) = cam.fy * dnd_dk.row(1);
  }
  return Vec2(cam.fx * nd.x() + cam.cx, cam.fy * nd.y() + cam.cy);
}

Vec3 unproject(const CameraModel& cam, const Vec2& px) {
  const Vec2 nd((px.x() - cam.cx) / cam.fx, (px.y() - cam.cy) / cam.fy);

  if (cam.kind == ModelKind::radial_tangential) {
    Vec2 n = nd;
    Eigen::Matrix2d jac;
    Vec2 res = distort_rt(cam.dist, n, &jac) - nd;
    double err = res.norm();
    int it = 0;
    for (; it < kMaxUndistortIterations && err > kUndistortTolerance; ++it) {
      const Vec2 step = jac.fullPivLu().solve(-res);
      double scale = 1.0;
      bool improved = false;
      for (int halving = 0; halving < 30; ++halving, scale *= 0.5) {
        const Vec2 trial = n + scale * step;
        Eigen::Matrix2d trial_jac;
        const Vec2 trial_res = distort_rt(cam.dist, trial, &trial_jac) - nd;
        if (std::isfinite(trial_res.norm()) && trial_res.norm() < err) {
          n = trial;
          res = trial_res;
          jac = trial_jac;
          err = trial_res.norm();
          improved = true;
          break;
        }
      }
      if (!improved) break;
    }
    if (!(err <= kUndistortTolerance)) {
      throw UndistortError("radial-tangential undistortion did not converge (residual " +
                               std::to_string(err) + ")",
                           err);
    }
    return Vec3(n.x(), n.y(), 1.0).normalized();
  }

  const double td = nd.norm();
  if (td == 0.0) return Vec3::UnitZ();
  double theta = td;
  double dtd = 0.0;
  double res = fisheye_theta_d(cam.dist, theta, &dtd) - td;
  double err = std::abs(res);
  for (int it = 0; it < kMaxUndistortIterations && err > kUndistortTolerance; ++it) {
    const double step = -res / dtd;
    double scale = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 30; ++halving, scale *= 0.5) {
      const double trial = theta + scale * step;
      if (trial < 0.0 || trial >= std::numbers::pi) continue;
      double trial_d = 0.0;
      const double trial_res = fisheye_theta_d(cam.dist, trial, &trial_d) - td;
      if (std::abs(trial_res) < err) {
        theta = trial;
        res = trial_res;
        dtd = trial_d;
        err = std::abs(trial_res);
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (!(err <= kUndistortTolerance)) {
    throw UndistortError("fisheye undistortion did not converge (residual " +
                             std::to_string(err) + ")",
                         err);
  }
  const double s = std::sin(theta) / td;
  return Vec3(s * nd.x(), s * nd.y(), std::cos(theta));
}

Plane Plane::make(const Vec3& normal, double offset, FrameId frame) {
  const double n = normal.norm();
  if (!(n > 0.0)) throw GeometryError("plane normal must be non-zero");
  return Plane{normal / n, offset / n, std::move(frame)};
}

Ray Ray::make(const Vec3& origin, const Vec3& direction, FrameId frame) {
  const double n = direction.norm();
  if (!(n > 0.0)) throw GeometryError("ray direction must be non-zero");
  return Ray{origin, direction / n, std::move(frame)};
}

void CheckerboardSpec::validate() const {
  if (inner_rows < 3 || inner_cols < 3) {
    throw InputError("checkerboard needs at least 3x3 inner corners");
  }
  if (inner_rows == inner_cols) {
    throw InputError("checkerboard rows and columns must differ to fix orientation");
  }
  if (!(square_mm > 0.0)) throw InputError("checkerboard square size must be positive");
}

Vec3 CheckerboardSpec::corner(int row, int col) const {
  return Vec3(col * square_mm, row * square_mm, 0.0);
}

std::vector<Vec3> CheckerboardSpec::corners() const {
  std::vector<Vec3> out;
  out.reserve(corner_count());
  for (int r = 0; r < inner_rows; ++r) {
    for (int c = 0; c < inner_cols; ++c) out.push_back(corner(r, c));
  }
  return out;
}

Vec3 CheckerboardSpec::center() const {
  return Vec3(0.5 * (inner_cols - 1) * square_mm, 0.5 * (inner_rows - 1) * square_mm, 0.0);
}

Vec3 reflect_point(const Plane& plane, const Vec3& p) {
  return p - 2.0 * plane.signed_distance(p) * plane.normal;
}

Vec3 reflect_direction(const Plane& plane, const Vec3& v) {
  return v - 2.0 * plane.normal.dot(v) * plane.normal;
}

Ray reflect_ray(const Plane& plane, const Ray& r) {
  return Ray{reflect_point(plane, r.origin), reflect_direction(plane, r.direction), r.frame};
}

Plane plane_from_board_pose(const RigidTransform& board_pose, double offset_mm) {
  const Vec3 n = board_pose.apply_direction(Vec3::UnitZ()).normalized();
  return Plane{n, n.dot(board_pose.translation()) + offset_mm, board_pose.to_frame()};
}

Plane transform_plane(const RigidTransform& t, const Plane& plane) {
  const Vec3 n = t.apply_direction(plane.normal).normalized();
  return Plane{n, plane.offset + n.dot(t.translation()), t.to_frame()};
}

Vec3 intersect_ray_plane(const Ray& r, const Plane& pl) {
  const double denom = pl.normal.dot(r.direction);
  if (std::abs(denom) <= 1e-9) throw GeometryError("ray is parallel to the plane");
  const double t = (pl.offset - pl.normal.dot(r.origin)) / denom;
  if (t < 0.0) throw GeometryError("plane intersection lies behind the ray origin");
  return r.at(t);
}

double distance_to_line(const Ray& r, const Vec3& p) {
  const Vec3 d = p - r.origin;
  return (d - d.dot(r.direction) * r.direction).norm();
}

RayIntersection closest_point_to_rays(std::span<const Ray> rays, double min_angle_rad) {
  if (rays.size() < 2) throw DegenerateError("triangulation needs at least two rays");
  double widest = 0.0;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    for (std::size_t j = i + 1; j < rays.size(); ++j) {
      widest = std::max(widest, angle_between(rays[i].direction, rays[j].direction));
    }
  }
  if (widest <= min_angle_rad) {
    throw DegenerateError("rays are nearly parallel (widest angle " +
                          std::to_string(widest * 180.0 / std::numbers::pi) + " deg)");
  }
  Mat3 a = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (const Ray& r : rays) {
    const Mat3 p = Mat3::Identity() - r.direction * r.direction.transpose();
    a += p;
    b += p * r.origin;
  }
  RayIntersection out;
  out.point = a.ldlt().solve(b);
  double sq = 0.0;
  for (const Ray& r : rays) {
    const double d = distance_to_line(r, out.point);
    sq += d * d;
  }
  out.rms = std::sqrt(sq / static_cast<double>(rays.size()));
  return out;
}

}  // namespace ocular::geom
