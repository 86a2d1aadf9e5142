// SPDX-License-Identifier: Apache-2.0
#include "ocular/gaze.hpp"

#include "ocular/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

namespace ocular::gaze {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

EstimatedPoint pupil_center_3d(std::span<const EyeFeatureObservation> obs, const RigCalibration& rig) {
  std::map<CameraId, Vec2> pixels;
  for (const auto& o : obs) {
    if (o.pupil_center_px) pixels[o.camera_id] = *o.pupil_center_px;
  }
  if (pixels.size() < 2) {
    throw InputError("pupil center needs observations from at least 2 cameras, got " +
                     std::to_string(pixels.size()));
  }
  const calib::TriangulatedPoint p = calib::triangulate_virtual_point(pixels, rig.cameras);
  return EstimatedPoint{p.point, p.rms_mm};
}

EstimatedPoint cornea_center_from_glints(std::span<const EyeFeatureObservation> obs,
                                         const RigCalibration& rig) {
  struct Constraint {
    Vec3 normal;
    Vec3 origin;
  };
  std::vector<Constraint> planes;
  std::set<CameraId> cameras;
  for (const auto& o : obs) {
    if (o.glints_px.empty()) continue;
    cameras.insert(o.camera_id);
    const calib::CalibratedCamera& cam = rig.camera(o.camera_id);
    for (const auto& [led, px] : o.glints_px) {
      auto eye_it = rig.leds.find(led.eye);
      if (eye_it == rig.leds.end() || !eye_it->second.contains(led.index)) {
        throw InputError("glint from unknown LED " + led.str());
      }
      const Vec3& l = eye_it->second.at(led.index);
      const Ray ray = cam.ray(px);
      const Vec3 n = (l - ray.origin).cross(ray.direction);
      const double len = n.norm();
      if (len < 1e-12) continue;  // glint ray points straight at the LED
      planes.push_back({n / len, ray.origin});
    }
  }

  geom::Mat3 a = geom::Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (const auto& c : planes) {
    a += c.normal * c.normal.transpose();
    b += c.normal * c.normal.dot(c.origin);
  }
  Eigen::SelfAdjointEigenSolver<geom::Mat3> eig(a);
  const auto ev = eig.eigenvalues();
  // All planes of a single camera share the line through its center and the
  // cornea center, so one camera never suffices.
  if (cameras.size() < 2 || planes.size() < 3 || !(ev[0] > 1e-8 * std::max(1.0, ev[2]))) {
    throw DegenerateError("cornea center underdetermined; need >=2 cameras or known cornea radius");
  }
  const Vec3 p = a.ldlt().solve(b);
  double sq = 0.0;
  for (const auto& c : planes) {
    const double d = c.normal.dot(p - c.origin);
    sq += d * d;
  }
  return EstimatedPoint{p, std::sqrt(sq / static_cast<double>(planes.size()))};
}

Ray optical_axis(const Vec3& cornea, const Vec3& pupil) {
  const Vec3 d = pupil - cornea;
  if (!(d.norm() > 0.5)) {
    throw DegenerateError("cornea and pupil centers are closer than 0.5 mm");
  }
  return Ray::make(cornea, d);
}

Vergence vergence_point(const Ray& left, const Ray& right) {
  const Vec3& u = left.direction;
  const Vec3& v = right.direction;
  if (geom::angle_between(u, v) <= 0.1 * kDeg) {
    throw DegenerateError("gaze rays are parallel; fixation at infinity");
  }
  const Vec3 w0 = left.origin - right.origin;
  const double b = u.dot(v);
  const double d = u.dot(w0), e = v.dot(w0);
  const double denom = 1.0 - b * b;
  const double s = (b * e - d) / denom;
  const double t = (e - b * d) / denom;
  const Vec3 p = left.at(s), q = right.at(t);
  return Vergence{0.5 * (p + q), (p - q).norm()};
}

SceneGaze gaze_in_scene(const Ray& axis_world, const RigCalibration& rig, const CameraId& scene_id,
                        double depth_mm) {
  const calib::CalibratedCamera& scene = rig.camera(scene_id);
  const Vec3 o = scene.pose.apply(axis_world.origin);
  const Vec3 d = scene.pose.apply_direction(axis_world.direction);
  const Ray ray = Ray::make(o, d, scene_id);
  if (std::abs(d.z()) < 1e-12) throw ProjectionError("gaze ray is parallel to the image plane");
  const double t = (depth_mm - o.z()) / d.z();
  if (t < 0.0) throw ProjectionError("gaze ray does not reach the target depth in front of the scene camera");
  const Vec3 hit = ray.at(t);
  return SceneGaze{ray, geom::project(scene.model, hit)};
}

GazeSample reconstruct_eye(const std::string& eye, std::int64_t host_ts_us,
                           std::span<const EyeFeatureObservation> obs, const RigCalibration& rig) {
  GazeSample s;
  s.eye = eye;
  s.host_ts_us = host_ts_us;
  try {
    const EstimatedPoint p = pupil_center_3d(obs, rig);
    s.pupil_center_mm = p.point;
    s.pupil_rms = p.rms;
  } catch (const InputError&) {
  } catch (const DegenerateError&) {
  }
  try {
    const EstimatedPoint c = cornea_center_from_glints(obs, rig);
    s.cornea_center_mm = c.point;
    s.cornea_rms = c.rms;
  } catch (const DegenerateError&) {
  }
  if (s.cornea_center_mm && s.pupil_center_mm) {
    try {
      s.optical_axis = optical_axis(*s.cornea_center_mm, *s.pupil_center_mm);
    } catch (const DegenerateError&) {
    }
  }
  return s;
}

std::string csv_header() { return "host_ts_us,eye,cx_mm,cy_mm,cz_mm,px_mm,py_mm,pz_mm,ax,ay,az,rms"; }

std::string csv_row(const GazeSample& s) {
  std::string row = std::to_string(s.host_ts_us) + "," + s.eye;
  auto vec = [&](const std::optional<Vec3>& v) {
    for (int i = 0; i < 3; ++i) row += "," + (v ? fmt_num((*v)[i]) : std::string());
  };
  vec(s.cornea_center_mm);
  vec(s.pupil_center_mm);
  vec(s.optical_axis ? std::optional<Vec3>(s.optical_axis->direction) : std::nullopt);
  const std::optional<double> rms = s.cornea_rms ? s.cornea_rms : s.pupil_rms;
  row += "," + (rms ? fmt_num(*rms) : std::string());
  return row;
}

}  // namespace ocular::gaze
