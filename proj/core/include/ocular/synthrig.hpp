// SPDX-License-Identifier: Apache-2.0
//
// Synthetic eyeglass-frame rig: ground-truth geometry, board and mirror
// captures, eye features with corneal glints, frame timestamps and a tiny
// feature rasterizer. Everything is deterministic under a seed.
//
// The default rig is laid out in a frame F with its origin at the bridge of
// the frame, x toward the wearer's right, y up and z toward the face. The
// world frame is the scene camera frame.
#pragma once

#include "ocular/calib.hpp"
#include "ocular/gaze.hpp"
#include "ocular/sync.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ocular::synthrig {

using calib::BoardView;
using calib::CameraId;
using calib::LedId;
using calib::MirrorSession;
using calib::RigCalibration;
using geom::CheckerboardSpec;
using geom::Plane;
using geom::RigidTransform;
using geom::Vec2;
using geom::Vec3;

struct EyeModel {
  double cornea_radius_mm = 7.8;
  double pupil_distance_mm = 4.2;     // cornea center to pupil center
  double rotation_to_cornea_mm = 5.3; // eye rotation center to cornea center
  double cornea_cap_deg = 60.0;       // glints beyond this angle from the axis fall off the cornea
};

struct EyeState {
  std::string eye;  // "L" or "R"
  Vec3 cornea_center;
  double cornea_radius_mm = 7.8;
  Vec3 pupil_center;
  std::int64_t timestamp_us = 0;

  Vec3 gaze() const { return (pupil_center - cornea_center).normalized(); }
};

struct GroundTruthRig {
  RigCalibration calibration;  // rooted at the scene camera
  std::uint64_t seed = 0;
  CameraId scene_id = "scene";
  std::map<std::string, std::vector<CameraId>> eye_cameras;  // "L" -> {L0, L1}
  std::map<std::string, Vec3> eye_centers;                    // rotation centers, world
  RigidTransform frame_to_world;                              // F -> world
  EyeModel eye_model;

  Vec3 from_frame(const Vec3& p_f) const { return frame_to_world.apply(p_f); }
  Vec3 from_frame_dir(const Vec3& v_f) const { return frame_to_world.apply_direction(v_f); }
};

/// Four 240x240 fisheye eye cameras (two per eye, ~30 mm baseline, verging
/// ~25 deg on the eye), four LEDs per eye, and a 640x480 scene camera at the
/// bridge. The seed perturbs placement and intrinsics slightly.
GroundTruthRig make_default_rig(std::uint64_t seed);

/// Eye gazing along `gaze_world` (unit) from its rotation center.
EyeState eye_looking(const GroundTruthRig& rig, const std::string& eye, const Vec3& gaze_world,
                     std::int64_t timestamp_us = 0);
/// Eye rotated by yaw (about frame y) and pitch (about frame x) from straight ahead.
EyeState eye_rotated(const GroundTruthRig& rig, const std::string& eye, double yaw_deg, double pitch_deg,
                     std::int64_t timestamp_us = 0);

// --- observations --------------------------------------------------------------

/// One view per (pose, camera) where at least 9 corners survive; `poses` map
/// board -> world. Corners are projected exactly, perturbed by N(0, noise_px)
/// and dropped when out of bounds. Throws GenerationError when nothing survives.
std::vector<BoardView> gen_board_views(const RigCalibration& rig, std::span<const CameraId> cameras,
                                       const CheckerboardSpec& board, std::span<const RigidTransform> poses,
                                       double noise_px, std::uint64_t seed,
                                       std::vector<std::string>* warnings = nullptr);

/// Paired views of the same board poses; poses not seen by both are skipped.
calib::StereoPair gen_stereo_pair(const RigCalibration& rig, const CameraId& a, const CameraId& b,
                                  const CheckerboardSpec& board, std::span<const RigidTransform> poses,
                                  double noise_px, std::uint64_t seed);

struct MirrorTarget {
  enum class Kind { led, scene_marker, camera };
  Kind kind = Kind::led;
  LedId led;        // kind == led
  CameraId camera;  // kind == camera
  Vec3 position;    // world
};

struct MirrorSetup {
  Plane plane;  // reflective surface, world
  CheckerboardSpec board;
  RigidTransform board_pose;  // board -> world, lying on the mirror
  double offset_mm = 0.0;
  std::vector<CameraId> observers;
};

/// Board pose lying on `plane` (shifted by -offset along the board normal),
/// centered at the plane point closest to `near`, with +z facing away from
/// `observer` and `roll_deg` about the normal.
RigidTransform board_on_mirror(const Plane& plane, const CheckerboardSpec& board, const Vec3& near,
                               const Vec3& observer, double offset_mm, double roll_deg = 0.0);

/// Labels of reflected targets in every observer that sees them, plus views
/// of the on-mirror pattern. Throws GenerationError naming a target visible
/// in fewer than min(2, observers) cameras, or when no observer sees the pattern.
MirrorSession gen_mirror_session(const RigCalibration& rig, const MirrorSetup& setup,
                                 std::span<const MirrorTarget> targets, double noise_px, std::uint64_t seed);

/// Specular point on a sphere for light from `led` reaching `camera`: the
/// reflection law holds in the plane through the center, LED and camera and
/// the point is solved by bisection on its polar angle. Throws GeometryError
/// when the LED or camera is inside the sphere or the path is occluded.
Vec3 reflect_on_sphere(const Vec3& center, double radius, const Vec3& led, const Vec3& camera);

/// Pupil and glint features for each state, one observation per camera of
/// that eye (cameras that see nothing still get an empty observation).
std::vector<std::vector<gaze::EyeFeatureObservation>> gen_eye_frames(const GroundTruthRig& rig,
                                                                     std::span<const EyeState> states,
                                                                     double noise_px, std::uint64_t seed);

struct StreamClock {
  double offset_us = 0.0;  // alpha: host = alpha + beta * device
  double skew = 1.0;       // beta
  double phase_us = 0.0;   // constant capture offset of this stream
};

struct TimestampConfig {
  int n_streams = 4;
  double duration_s = 60.0;
  double fps = 45.0;
  std::vector<StreamClock> clocks;  // one per stream; missing entries are ideal clocks
  double jitter_max_us = 0.0;       // host delay ~ U[0, jitter_max_us]
  double drop_rate = 0.0;
  std::uint64_t seed = 0;
  std::int64_t start_host_us = 0;   // 0 = chosen so every device clock is positive
  int first_stream_id = 0;
};

struct TimestampSet {
  std::map<sync::StreamId, std::vector<sync::FrameMeta>> streams;
  std::map<sync::StreamId, std::vector<std::uint32_t>> dropped;
  std::uint32_t ticks = 0;
  std::int64_t start_host_us = 0;
  /// Frames with equal frame_index across streams were captured at the same tick.
};

/// Throws InputError for fps <= 0 or a drop rate outside [0, 0.5].
TimestampSet gen_timestamps(const TimestampConfig& config);

// --- default captures ------------------------------------------------------

struct CaptureOptions {
  double corner_noise_px = 0.0;
  double label_noise_px = 0.0;
  std::uint64_t seed = 0;
  int intrinsic_views = 20;
  int stereo_views = 15;
  int led_sessions = 3;
};

struct MirrorCapture {
  MirrorSetup setup;
  MirrorSession session;
};

struct CapturePlan {
  CheckerboardSpec large_board{6, 9, 12.0};
  CheckerboardSpec small_board{4, 5, 3.0};
  CheckerboardSpec mirror_board{5, 7, 4.0};
  std::map<CameraId, std::vector<BoardView>> intrinsics;
  std::vector<calib::StereoPair> stereo;  // L0-L1, R0-R1, L0-R0
  std::vector<std::string> stereo_boards; // "small" or "large", parallel to stereo
  std::vector<MirrorCapture> led_sessions;
  MirrorCapture scene_position;
  MirrorCapture scene_orientation;
};

/// Every capture the staged calibration needs, on the default layout.
CapturePlan make_default_captures(const GroundTruthRig& rig, const CaptureOptions& options);

// --- raster ----------------------------------------------------------------

struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major 8-bit gray
};

struct RasterFeatures {
  std::vector<Vec2> dark_disks;   // pupils
  double disk_radius_px = 10.0;
  std::vector<Vec2> bright_dots;  // glints, reflected spots
  std::vector<Vec2> dark_dots;    // board corners
};

Raster render_features(int width, int height, const RasterFeatures& features);

}  // namespace ocular::synthrig
