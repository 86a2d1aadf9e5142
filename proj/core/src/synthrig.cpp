// SPDX-License-Identifier: Apache-2.0
#include "ocular/synthrig.hpp"

#include "ocular/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace ocular::synthrig {

using geom::Mat3;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double jitter(double s) { return s == 0.0 ? 0.0 : uniform(-s, s); }
  double normal(double sigma) {
    const double z = std::normal_distribution<double>(0.0, 1.0)(engine_);
    return sigma * z;
  }
  bool chance(double p) { return uniform(0.0, 1.0) < p; }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

// Camera -> F rotation for a camera at `eye` looking at `target`, image y
// pointing as close as possible to `down`.
Mat3 look_at(const Vec3& eye, const Vec3& target, const Vec3& down) {
  const Vec3 z = (target - eye).normalized();
  const Vec3 x = down.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

Mat3 small_rotation(Rng& rng, double max_deg) {
  return geom::exp_so3(Vec3(rng.jitter(max_deg), rng.jitter(max_deg), rng.jitter(max_deg)) * kDeg);
}

Vec3 any_perpendicular(const Vec3& z) {
  const Vec3 ref = std::abs(z.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return (ref - ref.dot(z) * z).normalized();
}

// Board -> world pose centered at `center` whose +z is `facing` tilted by
// `tilt_deg` toward azimuth `azimuth_deg`, rolled about its normal.
RigidTransform board_pose(const CheckerboardSpec& board, const Vec3& center, const Vec3& facing,
                          double tilt_deg, double azimuth_deg, double roll_deg) {
  const Vec3 f = facing.normalized();
  const Vec3 u = any_perpendicular(f);
  const Vec3 axis = Eigen::AngleAxisd(azimuth_deg * kDeg, f) * u;
  const Vec3 z = Eigen::AngleAxisd(tilt_deg * kDeg, axis) * f;
  const Vec3 x0 = any_perpendicular(z);
  const Vec3 x = Eigen::AngleAxisd(roll_deg * kDeg, z) * x0;
  Mat3 r;
  r.col(0) = x;
  r.col(1) = z.cross(x);
  r.col(2) = z;
  return RigidTransform(r, center - r * board.center(), "board", "world");
}

bool visible_direction(const geom::CameraModel& cam, const Vec3& p_cam) {
  if (cam.kind == geom::ModelKind::radial_tangential) return p_cam.z() > 1e-6;
  return p_cam.z() > p_cam.norm() * std::cos(85.0 * kDeg);
}

std::optional<BoardView> board_view(const calib::CalibratedCamera& cam, const CameraId& id,
                                    const CheckerboardSpec& board, const RigidTransform& pose, double noise,
                                    Rng& rng) {
  const RigidTransform world_to_cam = cam.pose;
  const RigidTransform board_to_cam = compose(pose.relabeled("board", world_to_cam.from_frame()), world_to_cam);
  // A printed board is only visible from its front (-z) side.
  const bool from_front = invert(board_to_cam).translation().z() < 0.0;
  BoardView view;
  view.camera_id = id;
  for (int r = 0; r < board.inner_rows; ++r) {
    for (int c = 0; c < board.inner_cols; ++c) {
      const Vec3 obj = board.corner(r, c);
      const Vec3 p = board_to_cam.apply(obj);
      const Vec2 n(rng.normal(noise), rng.normal(noise));
      if (!from_front || !visible_direction(cam.model, p)) continue;
      const Vec2 px = geom::project(cam.model, p) + n;
      if (!cam.model.contains(px)) continue;
      view.correspondences.push_back({obj, px});
    }
  }
  if (view.correspondences.size() < BoardView::kMinCorrespondences) return std::nullopt;
  return view;
}

}  // namespace

// --- rig -------------------------------------------------------------------

GroundTruthRig make_default_rig(std::uint64_t seed) {
  Rng rng(seed ^ 0x6f63756c61727267ULL);
  GroundTruthRig rig;
  rig.seed = seed;
  rig.eye_model = EyeModel{};
  const geom::FrameId world = rig.scene_id;

  // Scene camera at the bridge, looking forward (-z in F).
  const Vec3 scene_f(rng.jitter(0.3), 18.0 + rng.jitter(0.3), -8.0 + rng.jitter(0.3));
  Mat3 scene_axes;
  scene_axes.col(0) = Vec3::UnitX();
  scene_axes.col(1) = -Vec3::UnitY();
  scene_axes.col(2) = -Vec3::UnitZ();
  scene_axes = small_rotation(rng, 1.0) * scene_axes;
  const RigidTransform scene_to_f(scene_axes, scene_f, world, "F");
  rig.frame_to_world = invert(scene_to_f);

  RigCalibration& cal = rig.calibration;
  cal.root_camera = world;
  {
    const double f = 320.0 + rng.jitter(3.0);
    geom::CameraModel m = geom::make_camera(
        geom::ModelKind::radial_tangential, f, f * (1.0 + rng.jitter(0.003)), 319.5 + rng.jitter(2.0),
        239.5 + rng.jitter(2.0), {-0.05 + rng.jitter(0.01), 0.01 + rng.jitter(0.003), 0.0005, -0.0003, 0.0}, 640,
        480);
    cal.cameras[world] = calib::CalibratedCamera{m, RigidTransform::identity(world)};
  }

  struct Placement {
    CameraId id;
    std::string eye;
    Vec3 center_f;
  };
  const std::vector<Placement> placements = {
      {"L0", "L", {-47.0, -18.0, 5.0}},
      {"L1", "L", {-17.0, -18.0, 5.0}},
      {"R0", "R", {47.0, -18.0, 5.0}},
      {"R1", "R", {17.0, -18.0, 5.0}},
  };
  const std::map<std::string, Vec3> eye_f = {{"L", {-32.0, 0.0, 30.0}}, {"R", {32.0, 0.0, 30.0}}};
  std::map<std::string, Vec3> eye_center_f;
  for (const auto& [eye, c] : eye_f) {
    eye_center_f[eye] = c + Vec3(rng.jitter(0.5), rng.jitter(0.5), rng.jitter(0.5));
    rig.eye_centers[eye] = rig.frame_to_world.apply(eye_center_f[eye]);
  }

  for (const Placement& p : placements) {
    const Vec3 c = p.center_f + Vec3(rng.jitter(0.5), rng.jitter(0.5), rng.jitter(0.5));
    const Vec3 aim = eye_center_f[p.eye] + Vec3(rng.jitter(2.0), 6.0 + rng.jitter(2.0), 40.0 + rng.jitter(2.0));
    const RigidTransform cam_to_f(look_at(c, aim, -Vec3::UnitY()), c, p.id, "F");
    const RigidTransform cam_to_world = compose(cam_to_f, rig.frame_to_world.relabeled("F", world));
    const double f = 120.0 + rng.jitter(2.0);
    geom::CameraModel m = geom::make_camera(
        geom::ModelKind::equidistant_fisheye, f, f * (1.0 + rng.jitter(0.003)), 119.5 + rng.jitter(1.5),
        119.5 + rng.jitter(1.5),
        {-0.01 + rng.jitter(0.003), 0.004 + rng.jitter(0.001), -0.001 + rng.jitter(0.0005), 0.0002 + rng.jitter(0.0001)},
        240, 240);
    cal.cameras[p.id] = calib::CalibratedCamera{m, invert(cam_to_world)};
    rig.eye_cameras[p.eye].push_back(p.id);
  }

  const std::vector<Vec3> left_leds = {{-54.0, 12.0, 3.0}, {-10.0, 14.0, 3.0}, {-12.0, -13.0, 3.0}, {-53.0, -15.0, 3.0}};
  for (const std::string eye : {"L", "R"}) {
    for (int i = 0; i < 4; ++i) {
      Vec3 p = left_leds[static_cast<std::size_t>(i)];
      if (eye == "R") p.x() = -p.x();
      p += Vec3(rng.jitter(0.5), rng.jitter(0.5), rng.jitter(0.5));
      cal.leds[eye][i] = rig.frame_to_world.apply(p);
    }
  }
  cal.validate();
  return rig;
}

EyeState eye_looking(const GroundTruthRig& rig, const std::string& eye, const Vec3& gaze_world,
                     std::int64_t timestamp_us) {
  auto it = rig.eye_centers.find(eye);
  if (it == rig.eye_centers.end()) throw InputError("unknown eye '" + eye + "'");
  const Vec3 g = gaze_world.normalized();
  EyeState s;
  s.eye = eye;
  s.cornea_radius_mm = rig.eye_model.cornea_radius_mm;
  s.cornea_center = it->second + rig.eye_model.rotation_to_cornea_mm * g;
  s.pupil_center = s.cornea_center + rig.eye_model.pupil_distance_mm * g;
  s.timestamp_us = timestamp_us;
  return s;
}

EyeState eye_rotated(const GroundTruthRig& rig, const std::string& eye, double yaw_deg, double pitch_deg,
                     std::int64_t timestamp_us) {
  const Vec3 g_f = Eigen::AngleAxisd(yaw_deg * kDeg, Vec3::UnitY()) *
                   (Eigen::AngleAxisd(pitch_deg * kDeg, Vec3::UnitX()) * Vec3(-Vec3::UnitZ()));
  return eye_looking(rig, eye, rig.frame_to_world.apply_direction(g_f), timestamp_us);
}

// --- observations --------------------------------------------------------------

std::vector<BoardView> gen_board_views(const RigCalibration& rig, std::span<const CameraId> cameras,
                                       const CheckerboardSpec& board, std::span<const RigidTransform> poses,
                                       double noise_px, std::uint64_t seed, std::vector<std::string>* warnings) {
  board.validate();
  Rng rng(seed);
  std::vector<BoardView> out;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    for (const CameraId& id : cameras) {
      auto v = board_view(rig.camera(id), id, board, poses[k], noise_px, rng);
      if (v) {
        out.push_back(std::move(*v));
      } else if (warnings) {
        warnings->push_back("board pose " + std::to_string(k) + " dropped for camera " + id +
                            " (fewer than 9 visible corners)");
      }
    }
  }
  if (out.empty()) throw GenerationError("no usable board views");
  return out;
}

calib::StereoPair gen_stereo_pair(const RigCalibration& rig, const CameraId& a, const CameraId& b,
                                  const CheckerboardSpec& board, std::span<const RigidTransform> poses,
                                  double noise_px, std::uint64_t seed) {
  board.validate();
  Rng rng(seed);
  calib::StereoPair pair{a, b, {}};
  for (const RigidTransform& pose : poses) {
    auto va = board_view(rig.camera(a), a, board, pose, noise_px, rng);
    auto vb = board_view(rig.camera(b), b, board, pose, noise_px, rng);
    if (va && vb) pair.views.emplace_back(std::move(*va), std::move(*vb));
  }
  if (pair.views.empty()) throw GenerationError("no board pose seen by both " + a + " and " + b);
  return pair;
}

RigidTransform board_on_mirror(const Plane& plane, const CheckerboardSpec& board, const Vec3& near,
                               const Vec3& observer, double offset_mm, double roll_deg) {
  Vec3 z = plane.normal;
  if (z.dot(observer) - plane.offset > 0.0) z = -z;  // observer must be on the -z side
  const Vec3 on_plane = near - plane.signed_distance(near) * plane.normal;
  const Vec3 center = on_plane - offset_mm * z;
  const Vec3 x = Eigen::AngleAxisd(roll_deg * kDeg, z) * any_perpendicular(z);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = z.cross(x);
  r.col(2) = z;
  return RigidTransform(r, center - r * board.center(), "board", plane.frame.empty() ? "world" : plane.frame);
}

MirrorSession gen_mirror_session(const RigCalibration& rig, const MirrorSetup& setup,
                                 std::span<const MirrorTarget> targets, double noise_px, std::uint64_t seed) {
  Rng rng(seed);
  MirrorSession s;
  s.offset_mm = setup.offset_mm;
  const std::size_t needed = std::min<std::size_t>(2, setup.observers.size());

  for (const MirrorTarget& t : targets) {
    const Vec3 virt = geom::reflect_point(setup.plane, t.position);
    const double side_t = setup.plane.signed_distance(t.position);
    std::size_t seen = 0;
    for (const CameraId& id : setup.observers) {
      const Vec2 n(rng.normal(noise_px), rng.normal(noise_px));
      if (t.kind == MirrorTarget::Kind::camera && t.camera == id) continue;
      const calib::CalibratedCamera& cam = rig.camera(id);
      const double side_c = setup.plane.signed_distance(cam.center());
      if (!(side_c * side_t > 1e-9)) continue;  // not on the reflective side together
      const Vec3 p = cam.pose.apply(virt);
      if (!visible_direction(cam.model, p)) continue;
      const Vec2 px = geom::project(cam.model, p) + n;
      if (!cam.model.contains(px)) continue;
      ++seen;
      switch (t.kind) {
        case MirrorTarget::Kind::led: s.spot_labels[id][t.led] = px; break;
        case MirrorTarget::Kind::scene_marker: s.marker_labels[id] = px; break;
        case MirrorTarget::Kind::camera: s.camera_labels[id][t.camera] = px; break;
      }
    }
    if (seen < needed) {
      std::string name = t.kind == MirrorTarget::Kind::led            ? "LED " + t.led.str()
                         : t.kind == MirrorTarget::Kind::scene_marker ? std::string("scene marker")
                                                                      : "camera " + t.camera;
      throw GenerationError("reflection of " + name + " visible in " + std::to_string(seen) +
                            " camera(s), need " + std::to_string(needed));
    }
  }

  for (const CameraId& id : setup.observers) {
    auto v = board_view(rig.camera(id), id, setup.board, setup.board_pose, noise_px, rng);
    if (v) s.mirror_views.push_back(std::move(*v));
  }
  if (s.mirror_views.empty()) throw GenerationError("no observer sees the on-mirror pattern");
  return s;
}

Vec3 reflect_on_sphere(const Vec3& center, double radius, const Vec3& led, const Vec3& camera) {
  const Vec3 l = led - center, k = camera - center;
  if (!(l.norm() > radius) || !(k.norm() > radius)) {
    throw GeometryError("LED and camera must lie outside the sphere");
  }
  const Vec3 e1 = l.normalized();
  Vec3 e2 = k - k.dot(e1) * e1;
  if (e2.norm() < 1e-12 * k.norm()) {
    if (k.dot(e1) < 0.0) throw GeometryError("LED and camera on opposite sides of the sphere");
    return center + radius * e1;  // both on one ray from the center
  }
  e2.normalize();
  const double phi_k = std::atan2(k.dot(e2), k.dot(e1));  // in (0, pi)

  // Signed angle of `v` from the normal at q, measured in the e1-e2 plane.
  auto surface = [&](double phi) { return Vec3(std::cos(phi) * e1 + std::sin(phi) * e2); };
  auto residual = [&](double phi) {
    const Vec3 n = surface(phi);
    const Vec3 tangent(-std::sin(phi) * e1 + std::cos(phi) * e2);
    const Vec3 q = center + radius * n;
    const Vec3 to_l = led - q, to_k = camera - q;
    const double al = std::atan2(to_l.dot(tangent), to_l.dot(n));
    const double ak = std::atan2(to_k.dot(tangent), to_k.dot(n));
    return al + ak;
  };

  double lo = 0.0, hi = phi_k;
  double flo = residual(lo);
  for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double fm = residual(mid);
    if (fm == 0.0) {
      lo = hi = mid;
      break;
    }
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  const double phi = 0.5 * (lo + hi);
  const Vec3 n = surface(phi);
  const Vec3 q = center + radius * n;
  if (!(n.dot(led - q) > 0.0) || !(n.dot(camera - q) > 0.0)) {
    throw GeometryError("specular path is occluded by the sphere");
  }
  return q;
}

std::vector<std::vector<gaze::EyeFeatureObservation>> gen_eye_frames(const GroundTruthRig& rig,
                                                                     std::span<const EyeState> states,
                                                                     double noise_px, std::uint64_t seed) {
  Rng rng(seed);
  const double cap = std::cos(rig.eye_model.cornea_cap_deg * kDeg);
  std::vector<std::vector<gaze::EyeFeatureObservation>> out;
  out.reserve(states.size());
  for (const EyeState& st : states) {
    std::vector<gaze::EyeFeatureObservation> frame;
    const Vec3 g = st.gaze();
    auto cams = rig.eye_cameras.find(st.eye);
    if (cams == rig.eye_cameras.end()) throw InputError("unknown eye '" + st.eye + "'");
    for (const CameraId& id : cams->second) {
      const calib::CalibratedCamera& cam = rig.calibration.camera(id);
      const Vec3 o = cam.center();
      gaze::EyeFeatureObservation obs;
      obs.camera_id = id;
      obs.timestamp_us = st.timestamp_us;

      const Vec2 pn(rng.normal(noise_px), rng.normal(noise_px));
      const Vec3 pc = cam.pose.apply(st.pupil_center);
      if (g.dot((o - st.pupil_center).normalized()) > 0.1 && visible_direction(cam.model, pc)) {
        const Vec2 px = geom::project(cam.model, pc) + pn;
        if (cam.model.contains(px)) obs.pupil_center_px = px;
      }

      for (const auto& [idx, led] : rig.calibration.leds.at(st.eye)) {
        const Vec2 gn(rng.normal(noise_px), rng.normal(noise_px));
        Vec3 q;
        try {
          q = reflect_on_sphere(st.cornea_center, st.cornea_radius_mm, led, o);
        } catch (const GeometryError&) {
          continue;
        }
        if ((q - st.cornea_center).normalized().dot(g) < cap) continue;
        const Vec3 qc = cam.pose.apply(q);
        if (!visible_direction(cam.model, qc)) continue;
        const Vec2 px = geom::project(cam.model, qc) + gn;
        if (cam.model.contains(px)) obs.glints_px[LedId{st.eye, idx}] = px;
      }
      frame.push_back(std::move(obs));
    }
    out.push_back(std::move(frame));
  }
  return out;
}

TimestampSet gen_timestamps(const TimestampConfig& cfg) {
  if (!(cfg.fps > 0.0)) throw InputError("fps must be positive");
  if (!(cfg.drop_rate >= 0.0 && cfg.drop_rate <= 0.5)) throw InputError("drop rate must be within [0, 0.5]");
  if (cfg.n_streams < 1) throw InputError("need at least one stream");
  Rng rng(cfg.seed);
  auto clock = [&](int s) {
    return static_cast<std::size_t>(s) < cfg.clocks.size() ? cfg.clocks[static_cast<std::size_t>(s)] : StreamClock{};
  };

  TimestampSet out;
  std::int64_t start = cfg.start_host_us;
  if (start == 0) {
    double worst = 0.0;
    for (int s = 0; s < cfg.n_streams; ++s) worst = std::max(worst, clock(s).offset_us - clock(s).phase_us);
    start = static_cast<std::int64_t>(std::ceil(worst)) + 1'000'000;
  }
  out.start_host_us = start;
  const double period = 1e6 / cfg.fps;
  out.ticks = static_cast<std::uint32_t>(std::floor(cfg.duration_s * cfg.fps + 1e-9));

  for (int s = 0; s < cfg.n_streams; ++s) {
    const int id = cfg.first_stream_id + s;
    out.streams[id];
    out.dropped[id];
  }
  for (std::uint32_t k = 0; k < out.ticks; ++k) {
    for (int s = 0; s < cfg.n_streams; ++s) {
      const int id = cfg.first_stream_id + s;
      const StreamClock c = clock(s);
      const double t = static_cast<double>(start) + k * period + c.phase_us;
      const double delay = cfg.jitter_max_us > 0.0 ? rng.uniform(0.0, cfg.jitter_max_us) : 0.0;
      const bool drop = cfg.drop_rate > 0.0 && rng.chance(cfg.drop_rate);
      if (drop) {
        out.dropped[id].push_back(k);
        continue;
      }
      sync::FrameMeta m;
      m.stream_id = id;
      m.frame_index = k;
      m.device_ts_us = static_cast<std::uint64_t>(std::llround((t - c.offset_us) / c.skew));
      m.host_ts_us = std::llround(t + delay);
      out.streams[id].push_back(m);
    }
  }
  return out;
}

// --- default captures ------------------------------------------------------

CapturePlan make_default_captures(const GroundTruthRig& rig, const CaptureOptions& opt) {
  Rng rng(opt.seed ^ 0x63617074757265ULL);
  CapturePlan plan;
  const RigCalibration& cal = rig.calibration;
  auto F = [&](const Vec3& p) { return rig.from_frame(p); };
  auto Fd = [&](const Vec3& v) { return rig.from_frame_dir(v); };

  // Intrinsics: large board at varying distance and tilt around each optical axis.
  for (const auto& [id, cam] : cal.cameras) {
    const bool scene = id == rig.scene_id;
    const RigidTransform cam_to_world = invert(cam.pose);
    const Vec3 axis = cam_to_world.apply_direction(Vec3::UnitZ());
    std::vector<RigidTransform> poses;
    for (int i = 0; i < 3 * opt.intrinsic_views; ++i) {
      const double off = rng.uniform(0.0, scene ? 15.0 : 25.0);
      const Vec3 dir = Eigen::AngleAxisd(off * kDeg, Eigen::AngleAxisd(rng.uniform(0, 360) * kDeg, axis) *
                                                         any_perpendicular(axis)) *
                       axis;
      const double dist = scene ? rng.uniform(150.0, 300.0) : rng.uniform(70.0, 110.0);
      poses.push_back(board_pose(plan.large_board, cam_to_world.translation() + dist * dir, dir,
                                 rng.uniform(scene ? 15.0 : 10.0, scene ? 45.0 : 40.0), rng.uniform(0.0, 360.0),
                                 rng.uniform(-180.0, 180.0)));
    }
    const CameraId ids[] = {id};
    auto views = gen_board_views(cal, ids, plan.large_board, poses, opt.corner_noise_px, rng.next());
    if (views.size() > static_cast<std::size_t>(opt.intrinsic_views)) views.resize(static_cast<std::size_t>(opt.intrinsic_views));
    plan.intrinsics[id] = std::move(views);
  }

  // Stereo: small board near each eye for the intra-eye pairs, large board
  // behind the frame for the outer cross pair.
  auto stereo = [&](const CameraId& a, const CameraId& b, const char* board_name, const Vec3& center,
                    double spread, double max_tilt) {
    const CheckerboardSpec& board = std::string(board_name) == "small" ? plan.small_board : plan.large_board;
    const Vec3 mid = 0.5 * (cal.camera(a).center() + cal.camera(b).center());
    std::vector<RigidTransform> poses;
    for (int i = 0; i < 3 * opt.stereo_views; ++i) {
      const Vec3 c = center + Vec3(rng.jitter(spread), rng.jitter(spread), rng.jitter(spread));
      poses.push_back(board_pose(board, c, c - mid, rng.uniform(0.0, max_tilt), rng.uniform(0.0, 360.0),
                                 rng.uniform(-180.0, 180.0)));
    }
    calib::StereoPair p = gen_stereo_pair(cal, a, b, board, poses, opt.corner_noise_px, rng.next());
    if (p.views.size() > static_cast<std::size_t>(opt.stereo_views)) p.views.resize(static_cast<std::size_t>(opt.stereo_views));
    plan.stereo.push_back(std::move(p));
    plan.stereo_boards.emplace_back(board_name);
  };
  stereo("L0", "L1", "small", rig.eye_centers.at("L") + Fd(Vec3(0.0, 3.0, 0.0)), 4.0, 30.0);
  stereo("R0", "R1", "small", rig.eye_centers.at("R") + Fd(Vec3(0.0, 3.0, 0.0)), 4.0, 30.0);
  stereo("L0", "R0", "large", F(Vec3(0.0, 5.0, 75.0)), 10.0, 25.0);

  const std::vector<CameraId> eye_ids = {"L0", "L1", "R0", "R1"};
  auto mirror = [&](const Vec3& point_f, double tilt_deg, const Vec3& board_near_f,
                    const std::vector<CameraId>& observers, const Vec3& observer_f, const CheckerboardSpec& board) {
    const Vec3 n_f = Eigen::AngleAxisd(rng.jitter(tilt_deg) * kDeg, Vec3::UnitX()) *
                     (Eigen::AngleAxisd(rng.jitter(tilt_deg) * kDeg, Vec3::UnitY()) * Vec3(Vec3::UnitZ()));
    const Vec3 n = Fd(n_f);
    MirrorSetup setup;
    setup.plane = Plane::make(n, n.dot(F(point_f)), rig.scene_id);
    setup.board = board;
    setup.offset_mm = 0.0;
    setup.board_pose = board_on_mirror(setup.plane, board, F(board_near_f), F(observer_f), setup.offset_mm,
                                       rng.uniform(-180.0, 180.0));
    setup.observers = observers;
    return setup;
  };

  std::vector<MirrorTarget> leds;
  for (const auto& [eye, of_eye] : cal.leds) {
    for (const auto& [idx, p] : of_eye) leds.push_back({MirrorTarget::Kind::led, LedId{eye, idx}, {}, p});
  }
  for (int k = 0; k < opt.led_sessions; ++k) {
    MirrorSetup setup = mirror(Vec3(0.0, rng.jitter(3.0), 28.0 + rng.jitter(3.0)), 8.0,
                               Vec3(rng.jitter(4.0), rng.jitter(4.0), 28.0), eye_ids, Vec3(0.0, -18.0, 5.0),
                               plan.mirror_board);
    MirrorSession s = gen_mirror_session(cal, setup, leds, opt.label_noise_px, rng.next());
    plan.led_sessions.push_back({std::move(setup), std::move(s)});
  }

  {
    MirrorSetup setup = mirror(Vec3(0.0, rng.jitter(3.0), 45.0 + rng.jitter(2.0)), 5.0,
                               Vec3(rng.jitter(4.0), rng.jitter(4.0), 45.0), eye_ids, Vec3(0.0, -18.0, 5.0),
                               plan.mirror_board);
    const MirrorTarget marker{MirrorTarget::Kind::scene_marker, {}, {}, cal.camera(rig.scene_id).center()};
    MirrorSession s = gen_mirror_session(cal, setup, std::span(&marker, 1), opt.label_noise_px, rng.next());
    plan.scene_position = {std::move(setup), std::move(s)};
  }
  {
    MirrorSetup setup = mirror(Vec3(0.0, 0.0, -150.0 + rng.jitter(5.0)), 5.0, Vec3(35.0, 25.0, -150.0),
                               {rig.scene_id}, Vec3(0.0, 18.0, -8.0), plan.large_board);
    std::vector<MirrorTarget> cams;
    for (const CameraId& id : eye_ids) cams.push_back({MirrorTarget::Kind::camera, {}, id, cal.camera(id).center()});
    MirrorSession s = gen_mirror_session(cal, setup, cams, opt.label_noise_px, rng.next());
    plan.scene_orientation = {std::move(setup), std::move(s)};
  }
  return plan;
}

// --- raster ----------------------------------------------------------------

Raster render_features(int width, int height, const RasterFeatures& f) {
  Raster r{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 96)};
  auto disk = [&](const Vec2& c, double radius, std::uint8_t value) {
    const int x0 = std::max(0, static_cast<int>(std::floor(c.x() - radius)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(c.x() + radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(c.y() - radius)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(c.y() + radius)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - c.x(), dy = y - c.y();
        if (dx * dx + dy * dy <= radius * radius) {
          r.pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] = value;
        }
      }
    }
  };
  for (const Vec2& p : f.dark_disks) disk(p, f.disk_radius_px, 16);
  for (const Vec2& p : f.dark_dots) disk(p, 1.5, 0);
  for (const Vec2& p : f.bright_dots) disk(p, 2.0, 250);
  return r;
}

}  // namespace ocular::synthrig
