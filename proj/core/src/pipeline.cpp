// SPDX-License-Identifier: Apache-2.0
#include "ocular/pipeline.hpp"

#include "ocular/error.hpp"
#include "ocular/gaze.hpp"
#include "ocular/synthrig.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>
#include <tuple>

namespace ocular::pipeline {

using nlohmann::json;
using session::LabelClass;
using session::LabelRecord;
using session::Session;
using geom::RigidTransform;
using geom::Vec2;
using geom::Vec3;

namespace {

constexpr const char* kEpochUtc = "1970-01-01T00:00:00Z";
constexpr double kPi = std::numbers::pi;

// Stream layout of simulated sessions.
const std::vector<std::pair<CameraId, std::string>>& sim_streams() {
  static const std::vector<std::pair<CameraId, std::string>> s = {
      {"L0", "eye_L0"}, {"L1", "eye_L1"}, {"R0", "eye_R0"}, {"R1", "eye_R1"}, {"scene", "scene"}};
  return s;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json vec_json(const Vec3& v) {
  return json::array({session::round12(v.x()), session::round12(v.y()), session::round12(v.z())});
}
json vec_json(const Vec2& v) { return json::array({session::round12(v.x()), session::round12(v.y())}); }

json pose_json(const RigidTransform& t) {
  const auto& q = t.rotation();
  return json{{"q", {session::round12(q.w()), session::round12(q.x()), session::round12(q.y()), session::round12(q.z())}},
              {"t_mm", vec_json(t.translation())}};
}

Vec3 vec3_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() || !j[2].is_number()) {
    throw FormatError(where + ": expected 3 numbers");
  }
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

RigidTransform pose_from(const json& j, const geom::FrameId& from, const geom::FrameId& to, const std::string& where) {
  if (!j.is_object() || !j.contains("q") || !j.contains("t_mm") || !j["q"].is_array() || j["q"].size() != 4) {
    throw FormatError(where + ": expected {q: [w,x,y,z], t_mm: [x,y,z]}");
  }
  const auto& q = j["q"];
  Eigen::Quaterniond quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
  quat.normalize();
  return RigidTransform(quat, vec3_from(j["t_mm"], where + ".t_mm"), from, to);
}

json model_json(const geom::CameraModel& m) {
  json dist = json::array();
  for (double d : m.dist) dist.push_back(session::round12(d));
  return json{{"model_kind", geom::to_string(m.kind)},
              {"fx", session::round12(m.fx)},
              {"fy", session::round12(m.fy)},
              {"cx", session::round12(m.cx)},
              {"cy", session::round12(m.cy)},
              {"dist", dist},
              {"width", m.width},
              {"height", m.height}};
}

json clock_json(const sync::ClockModel& c) {
  return json{{"offset_us", c.offset_us},
              {"skew", c.skew},
              {"fit_residual_us", c.fit_residual_us},
              {"sample_count", c.sample_count}};
}

// Which command produces a staged file, for prerequisite messages.
std::string producer_of(const std::string& rel) {
  if (rel.rfind("calib/intrinsics_", 0) == 0) {
    return "calib-intrinsics --camera " + rel.substr(17, rel.size() - 17 - 5);
  }
  if (rel.rfind("calib/stereo_", 0) == 0) {
    std::string p = rel.substr(13, rel.size() - 13 - 5);
    std::replace(p.begin(), p.end(), '_', ',');
    return "calib-stereo --pair " + p;
  }
  if (rel == "calib/leds.json") return "calib-leds";
  if (rel == "calib/scene.json") return "calib-scene";
  if (rel == session::kCalibrationFile) return "compose-world";
  if (rel == kFeaturesFile) return "simulate (or an external feature detector)";
  return "the producing stage";
}

json read_stage_file(const fs::path& dir, const std::string& rel, const std::string& needed_by) {
  const fs::path p = dir / rel;
  if (!fs::exists(p)) {
    throw InputError(needed_by + ": missing prerequisite " + rel + " (run " + producer_of(rel) + " first)");
  }
  try {
    return json::parse(session::read_text(p));
  } catch (const json::parse_error& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void write_stage_file(const fs::path& dir, const std::string& rel, const json& j, StageOutput& out) {
  session::write_atomic(dir / rel, dump(j));
  out.files.emplace_back(rel);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Context {
  Session session;
  session::Captures captures;
  std::map<calib::FrameRef, std::vector<LabelRecord>> labels;

  static Context load(const fs::path& dir) {
    Context c{Session::load(dir), {}, {}};
    if (!c.session.manifest().captures) {
      throw InputError(dir.string() + "/manifest.json lists no calibration captures");
    }
    c.captures = *c.session.manifest().captures;
    c.labels = group_labels(c.session.labels());
    return c;
  }

  int stream_of(const CameraId& cam) const { return session.manifest().stream_for_camera(cam).id; }

  const std::vector<LabelRecord>& frame_labels(const CameraId& cam, std::uint32_t frame) const {
    static const std::vector<LabelRecord> none;
    auto it = labels.find({stream_of(cam), frame});
    return it == labels.end() ? none : it->second;
  }

  std::optional<calib::BoardView> view(const CameraId& cam, const std::string& board, std::uint32_t frame) const {
    return board_view_from_labels(frame_labels(cam, frame), cam, captures.boards.at(board),
                                  calib::FrameRef{stream_of(cam), frame});
  }

  std::vector<CameraId> eye_cameras() const {
    std::vector<CameraId> out;
    for (const auto& s : session.manifest().streams) {
      if (s.role.rfind("eye_", 0) == 0) out.push_back(session::camera_for_role(s.role));
    }
    return out;
  }

  calib::MirrorSession mirror(const session::MirrorCaptureRef& ref) const {
    calib::MirrorSession ms;
    ms.offset_mm = ref.offset_mm;
    for (const CameraId& obs : ref.observers) {
      if (auto v = view(obs, ref.board, ref.frame)) ms.mirror_views.push_back(std::move(*v));
      for (const LabelRecord& l : frame_labels(obs, ref.frame)) {
        const LabelClass c = LabelClass::parse(l.cls);
        const Vec2 px(l.x_px, l.y_px);
        switch (c.kind) {
          case LabelClass::Kind::glint: ms.spot_labels[obs][c.led] = px; break;
          case LabelClass::Kind::scene_marker: ms.marker_labels[obs] = px; break;
          case LabelClass::Kind::camera_marker: ms.camera_labels[obs][c.camera] = px; break;
          case LabelClass::Kind::corner: break;
        }
      }
    }
    return ms;
  }

  const session::MirrorCaptureRef& single_mirror(session::MirrorKind kind, const std::string& needed_by) const {
    for (const auto& m : captures.mirrors) {
      if (m.kind == kind) return m;
    }
    throw InputError(needed_by + ": session has no " + std::string(session::to_string(kind)) + " mirror capture");
  }
};

struct EyeRig {
  CameraId root;
  calib::CameraRig rig;
};

// Eye cameras chained by their stereo results, expressed in the frame of the
// first eye camera.
EyeRig load_eye_rig(const fs::path& dir, const Context& ctx, const std::string& needed_by) {
  const std::vector<CameraId> eyes = ctx.eye_cameras();
  if (eyes.empty()) throw InputError(needed_by + ": session has no eye cameras");
  const std::set<CameraId> eye_set(eyes.begin(), eyes.end());
  calib::TransformGraph graph;
  for (const CameraId& c : eyes) graph.add_node(c);
  for (const auto& s : ctx.captures.stereo) {
    if (!eye_set.contains(s.camera_a) || !eye_set.contains(s.camera_b)) continue;
    const std::string rel = stereo_file(s.camera_a, s.camera_b);
    const json j = read_stage_file(dir, rel, needed_by);
    graph.add_edge(pose_from(j.at("transform"), s.camera_a, s.camera_b, rel), j.at("rms_px").get<double>());
  }
  EyeRig out;
  out.root = eyes.front();
  const calib::WorldComposition comp = calib::compose_world(graph, out.root);
  for (const CameraId& c : eyes) {
    out.rig[c] = calib::CalibratedCamera{load_intrinsics(dir, c, needed_by), comp.poses.at(c)};
  }
  return out;
}

}  // namespace

// --- helpers -----------------------------------------------------------------------

std::string intrinsics_file(const CameraId& camera) { return "calib/intrinsics_" + camera + ".json"; }
std::string stereo_file(const CameraId& a, const CameraId& b) { return "calib/stereo_" + a + "_" + b + ".json"; }

std::map<calib::FrameRef, std::vector<LabelRecord>> group_labels(const std::vector<LabelRecord>& labels) {
  std::map<calib::FrameRef, std::vector<LabelRecord>> out;
  for (const LabelRecord& l : labels) out[{l.stream_id, l.frame_index}].push_back(l);
  return out;
}

std::optional<calib::BoardView> board_view_from_labels(const std::vector<LabelRecord>& frame_labels,
                                                       const CameraId& camera, const geom::CheckerboardSpec& board,
                                                       const calib::FrameRef& ref) {
  calib::BoardView v;
  v.camera_id = camera;
  v.frame_ref = ref;
  for (const LabelRecord& l : frame_labels) {
    const LabelClass c = LabelClass::parse(l.cls);
    if (c.kind != LabelClass::Kind::corner) continue;
    if (c.row >= board.inner_rows || c.col >= board.inner_cols) {
      throw InputError("label " + l.cls + " in stream " + std::to_string(ref.stream_id) + " frame " +
                       std::to_string(ref.frame_index) + " lies outside the " + std::to_string(board.inner_rows) +
                       "x" + std::to_string(board.inner_cols) + " board");
    }
    v.correspondences.push_back({board.corner(c.row, c.col), Vec2(l.x_px, l.y_px)});
  }
  if (v.correspondences.size() < calib::BoardView::kMinCorrespondences) return std::nullopt;
  return v;
}

geom::CameraModel load_intrinsics(const fs::path& dir, const CameraId& camera, const std::string& needed_by) {
  const std::string rel = intrinsics_file(camera);
  const json j = read_stage_file(dir, rel, needed_by);
  try {
    const json& m = j.at("model");
    return geom::make_camera(geom::model_kind_from_string(m.at("model_kind").get<std::string>()),
                             m.at("fx").get<double>(), m.at("fy").get<double>(), m.at("cx").get<double>(),
                             m.at("cy").get<double>(), m.at("dist").get<std::vector<double>>(),
                             m.at("width").get<int>(), m.at("height").get<int>());
  } catch (const json::exception& e) {
    throw FormatError((dir / rel).string() + ": " + e.what());
  }
}

calib::RigCalibration truth_calibration(const fs::path& dir) {
  const fs::path p = dir / session::kTruthFile;
  if (!fs::exists(p)) throw InputError(p.string() + " does not exist (not a synthetic session?)");
  const json j = json::parse(session::read_text(p));
  return session::calibration_from_json(j.at("calibration").dump(), p.string() + ".calibration");
}

// --- simulate ------------------------------------------------------------------------

namespace {

struct FrameContent {
  synthrig::RasterFeatures raster;
  std::vector<std::pair<std::string, Vec2>> labels;
  std::optional<gaze::EyeFeatureObservation> features;
};

}  // namespace

SimulateResult simulate_session(const fs::path& dir, const SimulateOptions& opt) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    throw InputError("refusing to simulate into non-empty directory " + dir.string());
  }
  if (opt.capture_spacing < 1) throw InputError("capture spacing must be at least 1 tick");
  const synthrig::GroundTruthRig rig = synthrig::make_default_rig(opt.seed);
  synthrig::CaptureOptions co;
  co.corner_noise_px = opt.corner_noise_px;
  co.label_noise_px = opt.label_noise_px;
  co.seed = opt.seed;
  const synthrig::CapturePlan plan = synthrig::make_default_captures(rig, co);
  const double fps = rig.calibration.fps_nominal;

  std::map<CameraId, int> stream_id;
  for (std::size_t i = 0; i < sim_streams().size(); ++i) stream_id[sim_streams()[i].first] = static_cast<int>(i);

  std::map<std::uint32_t, std::map<int, FrameContent>> frames;  // tick -> stream -> content
  std::uint32_t tick = 0;
  auto next_capture = [&] {
    const std::uint32_t t = tick;
    tick += static_cast<std::uint32_t>(opt.capture_spacing);
    return t;
  };
  auto add_view = [&](std::uint32_t t, const calib::BoardView& v, const geom::CheckerboardSpec& b) {
    FrameContent& fc = frames[t][stream_id.at(v.camera_id)];
    for (const auto& c : v.correspondences) {
      const long row = std::lround(c.board.y() / b.square_mm), col = std::lround(c.board.x() / b.square_mm);
      fc.labels.emplace_back("corner:" + std::to_string(row) + ":" + std::to_string(col), c.image);
      fc.raster.dark_dots.push_back(c.image);
    }
  };

  session::Captures caps;
  caps.boards = {{"large", plan.large_board}, {"small", plan.small_board}, {"mirror", plan.mirror_board}};

  // Intrinsic views interleaved across cameras so every stream spans the recording.
  std::size_t most = 0;
  for (const auto& [cam, views] : plan.intrinsics) most = std::max(most, views.size());
  std::map<CameraId, session::IntrinsicsCapture> intr;
  for (std::size_t i = 0; i < most; ++i) {
    for (const auto& [cam, views] : plan.intrinsics) {
      if (i >= views.size()) continue;
      const std::uint32_t t = next_capture();
      add_view(t, views[i], plan.large_board);
      auto& ic = intr[cam];
      ic.camera = cam;
      ic.board = "large";
      ic.frames.push_back(t);
    }
  }
  for (auto& [cam, ic] : intr) caps.intrinsics.push_back(std::move(ic));

  for (std::size_t p = 0; p < plan.stereo.size(); ++p) {
    const calib::StereoPair& sp = plan.stereo[p];
    const std::string& board = plan.stereo_boards.at(p);
    session::StereoCapture sc{sp.camera_a, sp.camera_b, board, {}};
    for (const auto& [va, vb] : sp.views) {
      const std::uint32_t t = next_capture();
      add_view(t, va, caps.boards.at(board));
      add_view(t, vb, caps.boards.at(board));
      sc.frames.push_back(t);
    }
    caps.stereo.push_back(std::move(sc));
  }

  auto add_mirror = [&](const synthrig::MirrorCapture& mc, session::MirrorKind kind, const std::string& board) {
    const std::uint32_t t = next_capture();
    for (const auto& v : mc.session.mirror_views) add_view(t, v, caps.boards.at(board));
    for (const auto& [cam, spots] : mc.session.spot_labels) {
      FrameContent& fc = frames[t][stream_id.at(cam)];
      for (const auto& [led, px] : spots) {
        fc.labels.emplace_back("glint:" + led.str(), px);
        fc.raster.bright_dots.push_back(px);
      }
    }
    for (const auto& [cam, px] : mc.session.marker_labels) {
      FrameContent& fc = frames[t][stream_id.at(cam)];
      fc.labels.emplace_back("marker:scene_back", px);
      fc.raster.bright_dots.push_back(px);
    }
    for (const auto& [cam, targets] : mc.session.camera_labels) {
      FrameContent& fc = frames[t][stream_id.at(cam)];
      for (const auto& [target, px] : targets) {
        fc.labels.emplace_back("marker:cam:" + target, px);
        fc.raster.bright_dots.push_back(px);
      }
    }
    // Observers that saw nothing still recorded the frame.
    for (const CameraId& cam : mc.setup.observers) frames[t][stream_id.at(cam)];
    caps.mirrors.push_back({kind, board, mc.setup.offset_mm, t, mc.setup.observers});
  };
  for (const auto& mc : plan.led_sessions) add_mirror(mc, session::MirrorKind::leds, "mirror");
  add_mirror(plan.scene_position, session::MirrorKind::scene_position, "mirror");
  add_mirror(plan.scene_orientation, session::MirrorKind::scene_orientation, "large");

  // Clocks: independent boot offsets and skews, small per-stream capture phase.
  std::mt19937_64 rng(opt.seed ^ 0x73696d756c617465ULL);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  synthrig::TimestampConfig tc;
  tc.n_streams = static_cast<int>(sim_streams().size());
  tc.fps = fps;
  tc.jitter_max_us = opt.jitter_max_us;
  tc.seed = opt.seed ^ 0x74696d65ULL;
  tc.start_host_us = 1'600'000'000'000'000;
  for (int s = 0; s < tc.n_streams; ++s) {
    synthrig::StreamClock c;
    c.offset_us = static_cast<double>(tc.start_host_us) - uni(1e6, 3e8);
    c.skew = 1.0 + uni(-opt.skew_ppm, opt.skew_ppm) * 1e-6;
    c.phase_us = uni(0.0, 500.0);
    tc.clocks.push_back(c);
  }

  // Gaze recording: both eyes fixate a target that wanders through the scene.
  const std::uint32_t gaze_start = tick;
  const auto gaze_ticks = static_cast<std::uint32_t>(std::lround(opt.gaze_seconds * fps));
  const double a = uni(0.0, 2 * kPi), b = uni(0.0, 2 * kPi), c = uni(0.0, 2 * kPi);
  std::vector<synthrig::EyeState> states;
  for (std::uint32_t k = 0; k < gaze_ticks; ++k) {
    const double t = k / fps;
    const Vec3 target_f(180.0 * std::sin(1.3 * t + a), 90.0 * std::sin(1.7 * t + b), -600.0 + 250.0 * std::sin(0.9 * t + c));
    const Vec3 target = rig.from_frame(target_f);
    const std::int64_t ts = tc.start_host_us + std::llround((gaze_start + k) * 1e6 / fps);
    for (const char* eye : {"L", "R"}) {
      const Vec3 g = (target - rig.eye_centers.at(eye)).normalized();
      states.push_back(synthrig::eye_looking(rig, eye, g, ts));
    }
  }
  const auto eye_obs = synthrig::gen_eye_frames(rig, states, opt.feature_noise_px, opt.seed ^ 0x67617a65ULL);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const std::uint32_t t = gaze_start + static_cast<std::uint32_t>(i / 2);
    for (const auto& obs : eye_obs[i]) {
      if (opt.drop_rate > 0.0 && uni(0.0, 1.0) < opt.drop_rate) continue;
      FrameContent& fc = frames[t][stream_id.at(obs.camera_id)];
      if (obs.pupil_center_px) fc.raster.dark_disks.push_back(*obs.pupil_center_px);
      for (const auto& [led, px] : obs.glints_px) fc.raster.bright_dots.push_back(px);
      fc.raster.disk_radius_px = 12.0;
      fc.features = obs;
    }
    caps.eye_frames.push_back(t);
  }
  caps.eye_frames.erase(std::unique(caps.eye_frames.begin(), caps.eye_frames.end()), caps.eye_frames.end());
  tick = gaze_start + gaze_ticks;
  tc.duration_s = tick / fps;
  const synthrig::TimestampSet ts = synthrig::gen_timestamps(tc);

  // --- write --------------------------------------------------------------
  fs::create_directories(dir);
  session::SessionManifest m;
  m.session_id = "sim-" + std::to_string(opt.seed);
  m.created_utc = kEpochUtc;
  for (const auto& [cam, role] : sim_streams()) {
    const auto& model = rig.calibration.camera(cam).model;
    m.streams.push_back({stream_id.at(cam), role, model.width, model.height, fps, std::nullopt, false, {}});
  }
  m.captures = caps;

  SimulateResult res;
  res.ticks = tick;
  std::vector<LabelRecord> labels;
  json features = json::object();
  std::map<int, std::string> index;
  for (const auto& s : m.streams) index[s.id] = session::index_header() + "\n";
  for (const auto& [t, streams] : frames) {
    for (const auto& [sid, fc] : streams) {
      const session::StreamInfo& info = *m.find_stream(sid);
      const sync::FrameMeta& meta = ts.streams.at(sid).at(t);
      const std::string rel = session::frame_file_name(t);
      const fs::path sdir = session::stream_dir(dir, sid);
      fs::create_directories(sdir / "frames");
      const synthrig::Raster r = synthrig::render_features(info.width, info.height, fc.raster);
      session::write_pgm(sdir / rel, {r.width, r.height, r.pixels});
      index[sid] += session::index_row({t, meta.device_ts_us, meta.host_ts_us, rel}) + "\n";
      ++res.frames;
      for (const auto& [cls, px] : fc.labels) {
        labels.push_back({sid, t, cls, px.x(), px.y(), "simulate", kEpochUtc, 0});
      }
      if (fc.features) {
        json f{{"pupil", fc.features->pupil_center_px ? vec_json(*fc.features->pupil_center_px) : json(nullptr)}};
        json g = json::object();
        for (const auto& [led, px] : fc.features->glints_px) g[led.str()] = vec_json(px);
        f["glints"] = g;
        features[std::to_string(sid)][std::to_string(t)] = f;
      }
    }
  }
  for (const auto& [sid, csv] : index) {
    fs::create_directories(session::stream_dir(dir, sid));
    session::write_atomic(session::stream_dir(dir, sid) / "index.csv", csv);
  }
  std::sort(labels.begin(), labels.end(), [](const LabelRecord& x, const LabelRecord& y) {
    return std::tie(x.stream_id, x.frame_index, x.cls) < std::tie(y.stream_id, y.frame_index, y.cls);
  });
  res.labels = labels.size();
  session::write_atomic(dir / session::kLabelsFile, session::labels_to_json(labels));
  session::write_atomic(dir / kFeaturesFile, dump(features));
  session::write_atomic(dir / session::kManifestFile, session::manifest_to_json(m));

  json truth{{"seed", opt.seed},
             {"calibration", json::parse(session::calibration_to_json(rig.calibration))},
             {"noise",
              {{"corner_px", opt.corner_noise_px},
               {"label_px", opt.label_noise_px},
               {"feature_px", opt.feature_noise_px},
               {"drop_rate", opt.drop_rate},
               {"jitter_max_us", opt.jitter_max_us}}}};
  json clocks = json::object();
  for (std::size_t s = 0; s < tc.clocks.size(); ++s) {
    clocks[std::to_string(s)] = {{"offset_us", tc.clocks[s].offset_us},
                                 {"skew", tc.clocks[s].skew},
                                 {"phase_us", tc.clocks[s].phase_us}};
  }
  truth["clocks"] = clocks;
  json eyes = json::array();
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto& st = states[i];
    eyes.push_back({{"tick", gaze_start + i / 2},
                    {"host_ts_us", st.timestamp_us},
                    {"eye", st.eye},
                    {"cornea_center", vec_json(st.cornea_center)},
                    {"pupil_center", vec_json(st.pupil_center)},
                    {"optical_axis", vec_json(st.gaze())}});
  }
  truth["eye_states"] = eyes;
  json mirrors = json::array();
  auto mirror_truth = [&](const synthrig::MirrorCapture& mc, std::size_t i) {
    mirrors.push_back({{"frame", caps.mirrors[i].frame},
                       {"kind", session::to_string(caps.mirrors[i].kind)},
                       {"normal", vec_json(mc.setup.plane.normal)},
                       {"offset_mm", session::round12(mc.setup.plane.offset)}});
  };
  for (std::size_t i = 0; i < plan.led_sessions.size(); ++i) mirror_truth(plan.led_sessions[i], i);
  mirror_truth(plan.scene_position, plan.led_sessions.size());
  mirror_truth(plan.scene_orientation, plan.led_sessions.size() + 1);
  truth["mirrors"] = mirrors;
  session::write_atomic(dir / session::kTruthFile, dump(truth));
  return res;
}

// --- stages ---------------------------------------------------------------------------

StageOutput calib_intrinsics(const fs::path& dir, const std::optional<CameraId>& camera) {
  const Context ctx = Context::load(dir);
  std::vector<CameraId> cams;
  for (const auto& ic : ctx.captures.intrinsics) {
    if (std::find(cams.begin(), cams.end(), ic.camera) == cams.end()) cams.push_back(ic.camera);
  }
  if (camera) {
    if (std::find(cams.begin(), cams.end(), *camera) == cams.end()) {
      throw InputError("calib-intrinsics: session has no intrinsics capture for camera '" + *camera + "'");
    }
    cams = {*camera};
  }
  StageOutput out;
  for (const CameraId& cam : cams) {
    std::vector<calib::BoardView> views;
    std::size_t skipped = 0;
    for (const auto& ic : ctx.captures.intrinsics) {
      if (ic.camera != cam) continue;
      for (std::uint32_t f : ic.frames) {
        if (auto v = ctx.view(cam, ic.board, f)) {
          views.push_back(std::move(*v));
        } else {
          ++skipped;
        }
      }
    }
    const session::StreamInfo& info = ctx.session.manifest().stream_for_camera(cam);
    const geom::ModelKind kind =
        info.role == "scene" ? geom::ModelKind::radial_tangential : geom::ModelKind::equidistant_fisheye;
    calib::IntrinsicsOptions io;
    io.width = info.width;
    io.height = info.height;
    const calib::IntrinsicsResult r = calib::calibrate_intrinsics(views, kind, io);
    json j{{"camera", cam},
           {"model", model_json(r.model)},
           {"rms_px", session::round12(r.rms_px)},
           {"views", views.size()},
           {"views_skipped", skipped},
           {"iterations", r.report.iterations},
           {"warnings", r.warnings}};
    write_stage_file(dir, intrinsics_file(cam), j, out);
    out.summary += cam + ": fx " + fmt("%.3f", r.model.fx) + " fy " + fmt("%.3f", r.model.fy) + " rms " +
                   fmt("%.4f", r.rms_px) + " px over " + std::to_string(views.size()) + " views\n";
    for (const auto& w : r.warnings) out.summary += cam + ": warning: " + w + "\n";
  }
  return out;
}

StageOutput calib_stereo(const fs::path& dir, const std::optional<std::pair<CameraId, CameraId>>& pair) {
  const Context ctx = Context::load(dir);
  std::vector<session::StereoCapture> todo;
  if (pair) {
    for (const auto& s : ctx.captures.stereo) {
      if (s.camera_a == pair->first && s.camera_b == pair->second) {
        todo.push_back(s);
      } else if (s.camera_a == pair->second && s.camera_b == pair->first) {
        session::StereoCapture flipped = s;
        std::swap(flipped.camera_a, flipped.camera_b);
        todo.push_back(flipped);
      }
    }
    if (todo.empty()) {
      throw InputError("calib-stereo: session has no stereo capture for " + pair->first + "," + pair->second);
    }
  } else {
    todo = ctx.captures.stereo;
  }
  StageOutput out;
  for (const auto& sc : todo) {
    const geom::CameraModel ia = load_intrinsics(dir, sc.camera_a, "calib-stereo");
    const geom::CameraModel ib = load_intrinsics(dir, sc.camera_b, "calib-stereo");
    calib::StereoPair sp{sc.camera_a, sc.camera_b, {}};
    for (std::uint32_t f : sc.frames) {
      auto va = ctx.view(sc.camera_a, sc.board, f);
      auto vb = ctx.view(sc.camera_b, sc.board, f);
      if (va && vb) sp.views.emplace_back(std::move(*va), std::move(*vb));
    }
    const calib::StereoResult r = calib::calibrate_stereo(sp, ia, ib);
    json j{{"camera_a", sc.camera_a},
           {"camera_b", sc.camera_b},
           {"transform", pose_json(r.transform)},
           {"rms_px", session::round12(r.rms_px)},
           {"views", sp.views.size()},
           {"iterations", r.report.iterations}};
    write_stage_file(dir, stereo_file(sc.camera_a, sc.camera_b), j, out);
    out.summary += sc.camera_a + "->" + sc.camera_b + ": baseline " + fmt("%.3f", r.transform.translation().norm()) +
                   " mm rms " + fmt("%.4f", r.rms_px) + " px over " + std::to_string(sp.views.size()) + " views\n";
  }
  return out;
}

StageOutput calib_leds(const fs::path& dir) {
  const Context ctx = Context::load(dir);
  const EyeRig eyes = load_eye_rig(dir, ctx, "calib-leds");
  std::vector<calib::MirrorSession> sessions;
  for (const auto& m : ctx.captures.mirrors) {
    if (m.kind == session::MirrorKind::leds) sessions.push_back(ctx.mirror(m));
  }
  if (sessions.empty()) throw InputError("calib-leds: session has no leds mirror capture");
  const auto leds = calib::calibrate_led_positions(sessions, eyes.rig);
  // Every LED of an eye with cameras must be recovered.
  std::set<std::string> eye_names;
  for (const auto& [cam, _] : eyes.rig) eye_names.insert(cam.substr(0, 1));
  for (const std::string& e : eye_names) {
    for (int i = 0; i < session::kLedsPerEye; ++i) {
      const calib::LedId id{e, i};
      if (!leds.contains(id)) {
        throw InputError("LED " + id.str() + " is not labeled in at least 2 cameras in any session");
      }
    }
  }
  json jl = json::object();
  StageOutput out;
  for (const auto& [id, est] : leds) {
    jl[id.eye][std::to_string(id.index)] = {{"position", vec_json(est.position)},
                                            {"spread_mm", session::round12(est.spread_mm)},
                                            {"sessions", est.per_session.size()}};
    out.summary += "LED " + id.str() + ": spread " + fmt("%.4f", est.spread_mm) + " mm over " +
                   std::to_string(est.per_session.size()) + " sessions\n";
  }
  write_stage_file(dir, "calib/leds.json", json{{"root_camera", eyes.root}, {"leds", jl}}, out);
  return out;
}

StageOutput calib_scene(const fs::path& dir) {
  const Context ctx = Context::load(dir);
  CameraId scene_id;
  for (const auto& s : ctx.session.manifest().streams) {
    if (s.role == "scene") scene_id = session::camera_for_role(s.role);
  }
  if (scene_id.empty()) throw InputError("calib-scene: session has no scene stream");
  const EyeRig eyes = load_eye_rig(dir, ctx, "calib-scene");
  const geom::CameraModel scene_model = load_intrinsics(dir, scene_id, "calib-scene");

  const calib::MirrorSession pos_session =
      ctx.mirror(ctx.single_mirror(session::MirrorKind::scene_position, "calib-scene"));
  const calib::TriangulatedPoint pos = calib::calibrate_scene_position(pos_session, eyes.rig);
  const calib::MirrorSession orient_session =
      ctx.mirror(ctx.single_mirror(session::MirrorKind::scene_orientation, "calib-scene"));
  const calib::SceneOrientationResult r =
      calib::calibrate_scene_orientation(orient_session, scene_id, pos.point, scene_model, eyes.rig);

  StageOutput out;
  json j{{"root_camera", eyes.root},
         {"camera", scene_id},
         {"pose", pose_json(r.pose)},
         {"position", vec_json(r.position)},
         {"position_rms_mm", session::round12(pos.rms_mm)},
         {"rms_rad", session::round12(r.rms_rad)}};
  write_stage_file(dir, "calib/scene.json", j, out);
  out.summary += scene_id + ": center rms " + fmt("%.4f", pos.rms_mm) + " mm, direction rms " +
                 fmt("%.5f", r.rms_rad * 180.0 / kPi) + " deg\n";
  return out;
}

StageOutput compose_world(const fs::path& dir, const CameraId& root) {
  const Context ctx = Context::load(dir);
  calib::TransformGraph graph;
  calib::RigCalibration rig;
  std::map<CameraId, geom::CameraModel> models;
  for (const auto& s : ctx.session.manifest().streams) {
    const CameraId cam = session::camera_for_role(s.role);
    graph.add_node(cam);
    models[cam] = load_intrinsics(dir, cam, "compose-world");
    rig.fps_nominal = s.fps_nominal;
  }
  if (!models.contains(root)) throw InputError("compose-world: root '" + root + "' is not a camera of the session");
  for (const auto& s : ctx.captures.stereo) {
    const std::string rel = stereo_file(s.camera_a, s.camera_b);
    const json j = read_stage_file(dir, rel, "compose-world");
    graph.add_edge(pose_from(j.at("transform"), s.camera_a, s.camera_b, rel), j.at("rms_px").get<double>());
  }
  if (fs::exists(dir / "calib/scene.json")) {
    const json j = read_stage_file(dir, "calib/scene.json", "compose-world");
    graph.add_edge(pose_from(j.at("pose"), j.at("root_camera").get<std::string>(), j.at("camera").get<std::string>(),
                             "calib/scene.json"),
                   j.at("rms_rad").get<double>());
  }
  calib::WorldComposition comp;
  try {
    comp = calib::compose_world(graph, root);
  } catch (const GraphError& e) {
    throw GraphError(std::string(e.what()) + " (missing calib-stereo or calib-scene output?)");
  }
  rig.root_camera = root;
  for (const auto& [cam, model] : models) rig.cameras[cam] = calib::CalibratedCamera{model, comp.poses.at(cam)};
  if (fs::exists(dir / "calib/leds.json")) {
    const json j = read_stage_file(dir, "calib/leds.json", "compose-world");
    const CameraId led_root = j.at("root_camera").get<std::string>();
    const RigidTransform to_root = geom::invert(comp.poses.at(led_root));
    for (const auto& [eye, of_eye] : j.at("leds").items()) {
      for (const auto& [idx, e] : of_eye.items()) {
        rig.leds[eye][std::stoi(idx)] = to_root.apply(vec3_from(e.at("position"), "calib/leds.json"));
      }
    }
  }
  rig.validate();
  StageOutput out;
  session::write_atomic(dir / session::kCalibrationFile, session::calibration_to_json(rig));
  out.files.emplace_back(session::kCalibrationFile);
  out.summary += "root " + root + ", " + std::to_string(rig.cameras.size()) + " cameras, " +
                 std::to_string(rig.leds.empty() ? 0 : rig.leds.begin()->second.size() * rig.leds.size()) + " LEDs\n";
  for (const auto& lc : comp.loop_closures) {
    out.summary += "loop " + lc.from + "->" + lc.to + ": " + fmt("%.4f", lc.rotation_rad * 180.0 / kPi) + " deg, " +
                   fmt("%.4f", lc.translation_mm) + " mm\n";
  }
  return out;
}

StageOutput sync_fit(const fs::path& dir) {
  const Session s = Session::load(dir);
  std::map<sync::StreamId, std::vector<sync::FrameMeta>> metas;
  std::map<sync::StreamId, sync::ClockModel> models;
  json jm = json::object(), skipped = json::object();
  StageOutput out;
  double fps = 0.0;
  for (const auto& st : s.manifest().streams) {
    fps = std::max(fps, st.fps_nominal);
    auto meta = s.frame_meta(st.id);
    try {
      const sync::ClockModel m = sync::fit_clock_model(meta);
      models[st.id] = m;
      metas[st.id] = std::move(meta);
      jm[std::to_string(st.id)] = clock_json(m);
      out.summary += "stream " + std::to_string(st.id) + ": skew " + fmt("%+.2f", (m.skew - 1.0) * 1e6) +
                     " ppm, residual " + fmt("%.1f", m.fit_residual_us) + " us\n";
    } catch (const Error& e) {
      skipped[std::to_string(st.id)] = e.kind() + ": " + e.what();
      out.summary += "stream " + std::to_string(st.id) + ": skipped (" + e.what() + ")\n";
    }
  }
  const auto period = static_cast<std::int64_t>(std::llround(1e6 / fps));
  const std::int64_t tol = period / 2;
  json j{{"period_us", period}, {"tolerance_us", tol}, {"streams", jm}, {"skipped", skipped}};
  if (models.size() >= 2) {
    const sync::Alignment al = sync::align_streams(metas, models, period, tol);
    json dr = json::object();
    for (const auto& [id, d] : al.drops.streams) {
      dr[std::to_string(id)] = {{"coverage", d.coverage}, {"missing_group_ts", d.missing_group_ts}};
    }
    j["groups"] = al.groups.size();
    j["drop_report"] = dr;
    out.summary += std::to_string(al.groups.size()) + " synchronized groups\n";
  }
  write_stage_file(dir, kSyncFile, j, out);
  return out;
}

StageOutput gaze(const fs::path& dir, const fs::path& out_path) {
  const Session s = Session::load(dir);
  const auto rig_opt = s.calibration();
  if (!rig_opt) {
    throw InputError(std::string("gaze: missing prerequisite ") + session::kCalibrationFile + " (run compose-world first)");
  }
  const calib::RigCalibration& rig = *rig_opt;
  const json feats = read_stage_file(dir, kFeaturesFile, "gaze");

  std::map<sync::StreamId, std::vector<sync::FrameMeta>> metas;
  std::map<sync::StreamId, sync::ClockModel> models;
  std::map<sync::StreamId, CameraId> camera_of;
  const json sync_j = fs::exists(dir / kSyncFile) ? read_stage_file(dir, kSyncFile, "gaze") : json::object();
  for (const auto& st : s.manifest().streams) {
    if (st.role.rfind("eye_", 0) != 0) continue;
    camera_of[st.id] = session::camera_for_role(st.role);
    metas[st.id] = s.frame_meta(st.id);
    const std::string key = std::to_string(st.id);
    if (sync_j.contains("streams") && sync_j["streams"].contains(key)) {
      const json& c = sync_j["streams"][key];
      models[st.id] = {c.at("offset_us").get<double>(), c.at("skew").get<double>(),
                       c.at("fit_residual_us").get<double>(), c.at("sample_count").get<std::size_t>()};
    } else {
      models[st.id] = sync::fit_clock_model(metas[st.id]);
    }
  }
  const double fps = s.manifest().streams.empty() ? 45.0 : s.manifest().streams.front().fps_nominal;
  const auto period = static_cast<std::int64_t>(std::llround(1e6 / fps));
  const sync::Alignment al = sync::align_streams(metas, models, period, period / 2);

  auto vec2 = [](const json& j) { return Vec2(j.at(0).get<double>(), j.at(1).get<double>()); };
  std::string csv = gaze::csv_header() + "\n";
  std::map<std::string, std::size_t> rows, axes;
  for (const sync::SyncedGroup& g : al.groups) {
    std::map<std::string, std::vector<gaze::EyeFeatureObservation>> by_eye;
    for (const auto& [sid, fidx] : g.members) {
      const std::string skey = std::to_string(sid), fkey = std::to_string(fidx);
      if (!feats.contains(skey) || !feats[skey].contains(fkey)) continue;
      const json& f = feats[skey][fkey];
      gaze::EyeFeatureObservation o;
      o.camera_id = camera_of.at(sid);
      if (f.contains("pupil") && !f["pupil"].is_null()) o.pupil_center_px = vec2(f["pupil"]);
      if (f.contains("glints")) {
        for (const auto& [led, px] : f["glints"].items()) o.glints_px[calib::LedId::parse(led)] = vec2(px);
      }
      by_eye[o.camera_id.substr(0, 1)].push_back(std::move(o));
    }
    for (const auto& [eye, obs] : by_eye) {
      const gaze::GazeSample smp = gaze::reconstruct_eye(eye, g.group_ts_us, obs, rig);
      csv += gaze::csv_row(smp) + "\n";
      ++rows[eye];
      if (smp.optical_axis) ++axes[eye];
    }
  }
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  session::write_atomic(out_path, csv);
  StageOutput out;
  out.files.push_back(out_path);
  for (const auto& [eye, n] : rows) {
    out.summary += eye + ": " + std::to_string(n) + " samples, " + std::to_string(axes[eye]) + " with optical axis\n";
  }
  return out;
}

bool is_calibration_stage(const std::string& kind) {
  return kind == "calib-intrinsics" || kind == "calib-stereo" || kind == "calib-leds" || kind == "calib-scene" ||
         kind == "compose-world";
}

StageOutput run_stage(const fs::path& dir, const std::string& kind, const std::map<std::string, std::string>& params) {
  auto param = [&](const std::string& k) -> std::optional<std::string> {
    auto it = params.find(k);
    if (it == params.end() || it->second.empty()) return std::nullopt;
    return it->second;
  };
  if (kind == "calib-intrinsics") return calib_intrinsics(dir, param("camera"));
  if (kind == "calib-stereo") {
    std::optional<std::pair<CameraId, CameraId>> pair;
    if (auto p = param("pair")) {
      const auto comma = p->find(',');
      if (comma == std::string::npos || comma == 0 || comma + 1 == p->size()) {
        throw UsageError("pair must look like A,B, got '" + *p + "'");
      }
      pair = std::make_pair(p->substr(0, comma), p->substr(comma + 1));
    }
    return calib_stereo(dir, pair);
  }
  if (kind == "calib-leds") return calib_leds(dir);
  if (kind == "calib-scene") return calib_scene(dir);
  if (kind == "compose-world") return compose_world(dir, param("root").value_or("scene"));
  if (kind == "sync-fit") return sync_fit(dir);
  if (kind == "gaze") {
    auto o = param("out");
    if (!o) throw UsageError("gaze needs an output path");
    return gaze(dir, *o);
  }
  throw UsageError("unknown stage '" + kind + "'");
}

}  // namespace ocular::pipeline
