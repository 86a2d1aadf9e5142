// SPDX-License-Identifier: Apache-2.0
//
// Staged rig calibration: intrinsics from planar boards, pairwise stereo
// extrinsics, mirror-based LED triangulation, mirror-based scene camera pose
// and composition of pairwise transforms into one world frame.
#pragma once

#include "ocular/geom.hpp"
#include "ocular/solve.hpp"

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ocular::calib {

using geom::CameraModel;
using geom::FrameId;
using geom::Mat3;
using geom::Plane;
using geom::RigidTransform;
using geom::Vec2;
using geom::Vec3;
using CameraId = std::string;

struct FrameRef {
  int stream_id = 0;
  std::uint32_t frame_index = 0;
  auto operator<=>(const FrameRef&) const = default;
};

struct Correspondence {
  Vec3 board;  // z = 0, mm
  Vec2 image;  // px
};

struct BoardView {
  CameraId camera_id;
  std::optional<FrameRef> frame_ref;
  std::vector<Correspondence> correspondences;

  static constexpr std::size_t kMinCorrespondences = 9;
};

/// Simultaneous views of one physical board pose by two cameras.
struct StereoPair {
  CameraId camera_a;
  CameraId camera_b;
  std::vector<std::pair<BoardView, BoardView>> views;
};

struct LedId {
  std::string eye;  // "L" or "R"
  int index = 0;

  auto operator<=>(const LedId&) const = default;
  std::string str() const;
  /// Parses "L:0".
  static LedId parse(const std::string& text);
};

/// One mirror placement. Depending on the stage it carries reflected LED
/// spots, the scene camera back marker, or reflections of other cameras.
struct MirrorSession {
  std::vector<BoardView> mirror_views;                        // on-mirror pattern
  std::map<CameraId, std::map<LedId, Vec2>> spot_labels;      // camera -> LED -> px
  std::map<CameraId, Vec2> marker_labels;                     // camera -> scene back marker px
  std::map<CameraId, std::map<CameraId, Vec2>> camera_labels; // observer -> target camera -> px
  double offset_mm = 0.0;                                     // pattern-to-mirror offset
};

struct CalibratedCamera {
  CameraModel model;
  RigidTransform pose;  // world -> camera

  Vec3 center() const;                    // in world
  geom::Ray ray(const Vec2& px) const;    // in world
};

using CameraRig = std::map<CameraId, CalibratedCamera>;

struct RigCalibration {
  CameraId root_camera;
  CameraRig cameras;
  std::map<std::string, std::map<int, Vec3>> leds;  // eye -> LED index -> world mm
  double wavelength_nm = 850.0;
  double fps_nominal = 45.0;

  /// Throws InputError on a violated invariant.
  void validate() const;
  const CalibratedCamera& camera(const CameraId& id) const;
  /// Same physical rig expressed relative to a new root frame: `new_from_old`
  /// maps old world coordinates into the new world frame.
  RigCalibration rerooted(const RigidTransform& new_from_old, const CameraId& new_root) const;
};

// --- planar calibration ---------------------------------------------------

/// Normalized DLT mapping board (x, y, 1) to image (u, v, 1); |H|_F = 1.
/// Throws DegenerateError for fewer than 4 points or a rank-deficient system.
Mat3 estimate_homography(std::span<const Vec2> board, std::span<const Vec2> image);

/// Closed-form pinhole intrinsics (zero skew, zero distortion) from >= 3
/// board homographies. Throws DegenerateError when the conic system is
/// ill-conditioned (condition > 1e12), e.g. all views share one orientation.
CameraModel zhang_initialize(std::span<const Mat3> homographies, int width, int height);

struct PnpResult {
  RigidTransform pose;  // board -> camera
  double rms_px = 0.0;
  solve::SolveReport report;
};

/// Board pose from planar correspondences: homography initialization on
/// unprojected rays followed by LM on reprojection error.
PnpResult solve_pnp(std::span<const Vec3> object_points, std::span<const Vec2> image_points,
                    const CameraModel& cam, const FrameId& board_frame = "board",
                    const FrameId& camera_frame = "camera");

/// Reprojection problems behind solve_pnp, calibrate_intrinsics and
/// calibrate_stereo, with their analytic Jacobians. Parameters:
///   pnp        [pose]
///   intrinsics [fx, fy, cx, cy, dist..., pose per view]
///   stereo     [a->b, board->a per view]
/// where a pose is [axis-angle, t] updated on the left. The problems own
/// copies of their inputs.
solve::LeastSquaresProblem pnp_problem(std::span<const Vec3> object_points, std::span<const Vec2> image_points,
                                       const CameraModel& cam);
solve::LeastSquaresProblem intrinsics_problem(std::span<const BoardView> views, const CameraModel& init);
solve::LeastSquaresProblem stereo_problem(const StereoPair& pair, const CameraModel& intr_a,
                                          const CameraModel& intr_b);

struct IntrinsicsResult {
  CameraModel model;
  std::vector<RigidTransform> view_poses;  // board -> camera, one per input view
  double rms_px = 0.0;
  solve::SolveReport report;
  std::vector<std::string> warnings;
};

struct IntrinsicsOptions {
  int width = 0;
  int height = 0;
  solve::SolveOptions solver;
};

/// Joint LM over intrinsics, distortion and all view poses. Throws InputError
/// for fewer than 5 views and SolveError on divergence.
IntrinsicsResult calibrate_intrinsics(std::span<const BoardView> views, geom::ModelKind kind,
                                      const IntrinsicsOptions& options);

struct StereoResult {
  RigidTransform transform;  // camera_a -> camera_b
  double rms_px = 0.0;
  solve::SolveReport report;
};

/// Pairwise extrinsics with intrinsics held fixed. Throws InputError for
/// fewer than 5 views or when per-view estimates disagree by more than 20 deg.
StereoResult calibrate_stereo(const StereoPair& pair, const CameraModel& intr_a,
                              const CameraModel& intr_b);

// --- mirror-based stages ----------------------------------------------------

/// Mirror plane in the rig's world frame from views of the on-mirror pattern.
Plane estimate_mirror_plane(std::span<const BoardView> views, const CameraRig& rig,
                            double offset_mm);

struct TriangulatedPoint {
  Vec3 point;
  double rms_mm = 0.0;
};

/// Midpoint triangulation of one labeled point seen by >= 2 calibrated cameras.
/// Throws DegenerateError when all rays are within 0.5 deg of each other.
TriangulatedPoint triangulate_virtual_point(const std::map<CameraId, Vec2>& pixels,
                                            const CameraRig& rig);

struct LedEstimate {
  Vec3 position;       // world mm, mean over sessions
  double spread_mm = 0.0;  // max pairwise distance between per-session estimates
  std::vector<Vec3> per_session;
  std::vector<Vec3> virtual_points;
  std::vector<Plane> mirror_planes;
};

/// Per session: triangulate each reflected spot, reflect across the
/// session's mirror plane; aggregate across sessions by mean. Throws
/// InputError naming the LED when it is never labeled in >= 2 cameras.
std::map<LedId, LedEstimate> calibrate_led_positions(std::span<const MirrorSession> sessions,
                                                     const CameraRig& rig);

/// Scene camera center from eye-camera labels of its back marker seen in a mirror.
TriangulatedPoint calibrate_scene_position(const MirrorSession& session, const CameraRig& eye_rig);

struct SceneOrientationOptions {
  /// Distance from the back marker to the sensor center along the optical
  /// axis (positive = marker behind the sensor). Applied in one correction pass.
  double marker_offset_mm = 0.0;
  /// World mirror plane for the same mirror pose observed by eye cameras,
  /// when available; otherwise the initial orientation comes from a coarse
  /// rotation search.
  std::optional<Plane> initial_world_plane;
  int max_fixed_point_iter = 5;
};

struct SceneOrientationResult {
  RigidTransform pose;  // world -> scene
  Vec3 position;        // scene camera center in world (after marker correction)
  Plane scene_mirror_plane;  // mirror plane in the scene camera frame
  double rms_rad = 0.0;      // angular residual of labeled camera directions
  int fixed_point_iterations = 0;
  solve::SolveReport report;
};

/// Scene camera orientation from its own mirror view: the on-mirror pattern
/// gives the mirror plane in the scene frame, and the labeled reflections of
/// eye cameras give directions that are aligned with their predicted world
/// directions. Throws DegenerateError with fewer than 2 non-parallel
/// directions and SolveError when the estimate does not settle.
SceneOrientationResult calibrate_scene_orientation(const MirrorSession& session,
                                                   const CameraId& scene_id,
                                                   const Vec3& scene_position,
                                                   const CameraModel& scene_intrinsics,
                                                   const CameraRig& eye_rig,
                                                   const SceneOrientationOptions& options = {});

// --- world composition ------------------------------------------------------

struct GraphEdge {
  RigidTransform transform;
  double residual = 0.0;
};

class TransformGraph {
 public:
  void add_node(const FrameId& id) { nodes_.insert(id); }
  void add_edge(const RigidTransform& t, double residual = 0.0);

  const std::set<FrameId>& nodes() const { return nodes_; }
  const std::vector<GraphEdge>& edges() const { return edges_; }

 private:
  std::set<FrameId> nodes_;
  std::vector<GraphEdge> edges_;
};

struct LoopClosure {
  FrameId from;
  FrameId to;
  double rotation_rad = 0.0;
  double translation_mm = 0.0;
};

struct WorldComposition {
  FrameId root;
  std::map<FrameId, RigidTransform> poses;  // root -> node
  std::vector<LoopClosure> loop_closures;
};

/// Breadth-first concatenation from `root` along fewest-edge paths. Edges
/// not on the spanning tree are reported as loop closures. Throws GraphError
/// naming unreachable frames.
WorldComposition compose_world(const TransformGraph& graph, const FrameId& root);

}  // namespace ocular::calib
