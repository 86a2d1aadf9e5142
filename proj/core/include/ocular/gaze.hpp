// SPDX-License-Identifier: Apache-2.0
//
// Geometric eye reconstruction from multi-camera pupil and glint features:
// stereo pupil triangulation, cornea center from corneal reflections of known
// LEDs, optical axis and binocular vergence.
#pragma once

#include "ocular/calib.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ocular::gaze {

using calib::CameraId;
using calib::LedId;
using calib::RigCalibration;
using geom::Ray;
using geom::Vec2;
using geom::Vec3;

struct EyeFeatureObservation {
  CameraId camera_id;
  std::optional<Vec2> pupil_center_px;
  std::map<LedId, Vec2> glints_px;
  std::int64_t timestamp_us = 0;  // host timeline
};

struct EstimatedPoint {
  Vec3 point;
  double rms = 0.0;
};

/// Midpoint triangulation of the pupil center from every observation that
/// carries one. Throws InputError with fewer than 2 such observations.
EstimatedPoint pupil_center_3d(std::span<const EyeFeatureObservation> obs, const RigCalibration& rig);

/// Cornea center as the least-squares intersection of the planes spanned by
/// each camera center, LED and glint ray (the reflection plane of a
/// spherical mirror contains its center). rms is the RMS plane distance, mm.
/// Throws DegenerateError when the planes do not pin down a point (e.g. all
/// glints from a single camera).
EstimatedPoint cornea_center_from_glints(std::span<const EyeFeatureObservation> obs,
                                         const RigCalibration& rig);

/// Ray from the cornea center through the pupil center. Throws
/// DegenerateError when the points are closer than 0.5 mm.
Ray optical_axis(const Vec3& cornea, const Vec3& pupil);

struct Vergence {
  Vec3 point;
  double gap_mm = 0.0;
};

/// Midpoint of closest approach of two gaze rays. Throws DegenerateError
/// when the rays are within 0.1 deg of parallel (fixation at infinity).
Vergence vergence_point(const Ray& left, const Ray& right);

struct SceneGaze {
  Ray ray;    // scene camera frame
  Vec2 pixel;
};

/// Maps a world-frame gaze ray into the scene camera and projects its
/// intersection with the plane z = depth_mm. Throws ProjectionError when the
/// ray never reaches that plane in front of the camera.
SceneGaze gaze_in_scene(const Ray& axis_world, const RigCalibration& rig, const CameraId& scene_id,
                        double depth_mm);

struct GazeSample {
  std::string eye;
  std::int64_t host_ts_us = 0;
  std::optional<Vec3> cornea_center_mm;
  std::optional<Vec3> pupil_center_mm;
  std::optional<Ray> optical_axis;
  std::optional<double> cornea_rms;
  std::optional<double> pupil_rms;
};

/// Everything recoverable for one eye from one synchronized set of
/// observations; estimates that cannot be formed are left empty.
GazeSample reconstruct_eye(const std::string& eye, std::int64_t host_ts_us,
                           std::span<const EyeFeatureObservation> obs, const RigCalibration& rig);

/// CSV header and row: host_ts_us,eye,cx_mm,cy_mm,cz_mm,px_mm,py_mm,pz_mm,ax,ay,az,rms.
/// rms is the cornea plane rms when available, otherwise the pupil ray rms.
std::string csv_header();
std::string csv_row(const GazeSample& s);

}  // namespace ocular::gaze
