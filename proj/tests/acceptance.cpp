// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion, followed by the
// measured figures; exits non-zero when any criterion fails.
//
//   acceptance            run A1..A8
//   acceptance A4 A6      run a subset
#include "ocular/calib.hpp"
#include "ocular/error.hpp"
#include "ocular/gaze.hpp"
#include "ocular/net.hpp"
#include "ocular/pipeline.hpp"
#include "ocular/session.hpp"
#include "ocular/solve.hpp"
#include "ocular/sync.hpp"
#include "ocular/synthrig.hpp"
#include "ocular/wire.hpp"
#include "oracles.hpp"
#include "support.hpp"


#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <set>

using namespace ocular;
using ocular::testing::kDeg;
using ocular::testing::median;
using ocular::testing::rot_err_deg;
using ocular::testing::run_cli;
using ocular::testing::TempDir;
using ocular::testing::trans_err;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Result {
  std::vector<std::string> failures;
  std::vector<std::string> figures;

  void check(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void figure(const char* fmt, ...) __attribute__((format(printf, 2, 3))) {
    char buf[512];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, ap);
    va_end(ap);
    figures.emplace_back(buf);
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double max_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = session::read_text(e.path());
  }
  return out;
}

int cli(const std::string& args, const fs::path& dir) { return run_cli(args + " --session " + dir.string()); }

bool cli_pipeline(const fs::path& dir, const fs::path& csv, Result& r) {
  for (const char* s : {"calib-intrinsics", "calib-stereo", "calib-leds", "calib-scene", "compose-world", "sync-fit"}) {
    if (const int rc = cli(s, dir); rc != 0) {
      r.check(false, std::string(s) + " exited " + std::to_string(rc));
      return false;
    }
  }
  const int rc = cli("gaze --out " + csv.string(), dir);
  r.check(rc == 0, "gaze exited " + std::to_string(rc));
  return rc == 0;
}

const synthrig::GroundTruthRig& rig7() {
  static const synthrig::GroundTruthRig rig = synthrig::make_default_rig(7);
  return rig;
}

// --- A1 -----------------------------------------------------------------------------

void a1(Result& r) {
  TempDir tmp("a1");
  const fs::path dir = tmp / "s7";
  const auto t0 = Clock::now();
  r.check(cli("simulate --seed 7", dir) == 0, "simulate failed");
  if (!cli_pipeline(dir, tmp / "gaze.csv", r)) return;
  const double secs = seconds_since(t0);
  r.check(secs < 60.0, "runtime above 60 s");

  const auto truth = pipeline::truth_calibration(dir);
  const auto got = session::calibration_from_json(session::read_text(dir / session::kCalibrationFile), "calibration.json");
  r.check(got.root_camera == truth.root_camera, "root camera differs from truth");
  double cam_rot = 0, cam_t = 0, scene_rot = 0, scene_t = 0, led = 0;
  for (const auto& [id, cam] : truth.cameras) {
    if (!got.cameras.contains(id)) {
      r.check(false, "camera " + id + " missing");
      continue;
    }
    const double dr = rot_err_deg(got.camera(id).pose, cam.pose);
    const double dt = trans_err(got.camera(id).pose, cam.pose);
    if (id == "scene") {
      scene_rot = dr;
      scene_t = dt;
    } else {
      cam_rot = std::max(cam_rot, dr);
      cam_t = std::max(cam_t, dt);
    }
  }
  std::size_t n_led = 0;
  for (const auto& [eye, of_eye] : truth.leds) {
    for (const auto& [idx, p] : of_eye) {
      ++n_led;
      if (!got.leds.contains(eye) || !got.leds.at(eye).contains(idx)) {
        r.check(false, "LED " + eye + ":" + std::to_string(idx) + " missing");
        continue;
      }
      led = std::max(led, (got.leds.at(eye).at(idx) - p).norm());
    }
  }
  r.check(n_led == 8, "expected 8 LEDs in truth");
  r.check(cam_rot < 0.01 && cam_t < 0.05, "eye camera pose outside 0.01 deg / 0.05 mm");
  r.check(led < 0.1, "LED outside 0.1 mm");
  r.check(scene_rot < 0.01 && scene_t < 0.1, "scene pose outside 0.01 deg / 0.1 mm");
  r.figure("eye cameras max %.2e deg / %.2e mm; scene %.2e deg / %.2e mm", cam_rot, cam_t, scene_rot, scene_t);
  r.figure("LEDs max %.2e mm over %zu; runtime %.1f s", led, n_led, secs);
}

// --- A2 -----------------------------------------------------------------------------

void a2(Result& r) {
  const auto& cal = rig7().calibration;
  std::map<calib::CameraId, std::vector<double>> rms, dfx;
  std::vector<double> led_err;
  for (std::uint64_t s = 0; s < 20; ++s) {
    synthrig::CaptureOptions o;
    o.corner_noise_px = 0.2;
    o.seed = 1000 + s;
    o.led_sessions = 1;
    const auto plan = synthrig::make_default_captures(rig7(), o);
    for (const auto& [id, views] : plan.intrinsics) {
      const geom::CameraModel& truth = cal.camera(id).model;
      calib::IntrinsicsOptions io;
      io.width = truth.width;
      io.height = truth.height;
      const auto res = calib::calibrate_intrinsics(views, truth.kind, io);
      rms[id].push_back(res.rms_px);
      dfx[id].push_back(std::max(std::abs(res.model.fx / truth.fx - 1.0), std::abs(res.model.fy / truth.fy - 1.0)));
    }

    synthrig::CaptureOptions lo;
    lo.label_noise_px = 0.5;
    lo.seed = 2000 + s;
    lo.led_sessions = 1;
    const auto lplan = synthrig::make_default_captures(rig7(), lo);
    calib::CameraRig eyes = cal.cameras;
    eyes.erase("scene");
    const calib::MirrorSession one[] = {lplan.led_sessions[0].session};
    for (const auto& [id, e] : calib::calibrate_led_positions(one, eyes)) {
      led_err.push_back((e.position - cal.leds.at(id.eye).at(id.index)).norm());
    }
  }
  for (const auto& [id, v] : rms) {
    const double m = median(v);
    r.check(m >= 0.15 && m <= 0.30, id + " median rms " + std::to_string(m) + " outside [0.15, 0.30]");
    r.check(median(dfx[id]) < 0.01, id + " focal error above 1%");
    r.figure("%-5s rms median %.4f px, focal error median %.3f%% (max %.3f%%)", id.c_str(), m, 100 * median(dfx[id]),
             100 * max_of(dfx[id]));
  }
  r.check(median(led_err) < 1.0, "median LED error above 1 mm");
  r.figure("LEDs at 0.5 px label noise: median %.3f mm over %zu estimates (20 runs)", median(led_err), led_err.size());
}

// --- A3 -----------------------------------------------------------------------------

synthrig::EyeState random_state(std::mt19937_64& rng, const std::string& eye, double max_deg) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double theta = max_deg * kDeg * std::sqrt(u(rng));
  const double phi = 2.0 * M_PI * u(rng);
  const geom::Vec3 g_f = Eigen::AngleAxisd(theta, geom::Vec3(std::cos(phi), std::sin(phi), 0.0)) * geom::Vec3(0, 0, -1);
  return synthrig::eye_looking(rig7(), eye, rig7().from_frame_dir(g_f));
}

// Cornea error (mm) and axis error (deg); negative when reconstruction is incomplete.
std::pair<double, double> gaze_errors(const synthrig::EyeState& s, double noise, std::uint64_t seed) {
  const synthrig::EyeState one[] = {s};
  const auto obs = synthrig::gen_eye_frames(rig7(), one, noise, seed).at(0);
  const gaze::GazeSample g = gaze::reconstruct_eye(s.eye, 0, obs, rig7().calibration);
  if (!g.cornea_center_mm || !g.optical_axis) return {-1, -1};
  return {(*g.cornea_center_mm - s.cornea_center).norm(), geom::angle_between(g.optical_axis->direction, s.gaze()) / kDeg};
}

void a3(Result& r) {
  std::mt19937_64 rng(31);
  std::vector<synthrig::EyeState> states;
  for (int k = 0; k < 100; ++k) states.push_back(random_state(rng, k % 2 ? "L" : "R", 25.0));
  double prev_c = -1, prev_a = -1;
  for (double sigma : {0.0, 0.1, 0.3, 0.5}) {
    std::vector<double> c, a;
    int incomplete = 0;
    for (std::size_t k = 0; k < states.size(); ++k) {
      const auto [ec, ea] = gaze_errors(states[k], sigma, 7000 + k);
      if (ec < 0) {
        ++incomplete;
        continue;
      }
      c.push_back(ec);
      a.push_back(ea);
    }
    r.check(incomplete == 0, std::to_string(incomplete) + " incomplete reconstructions at sigma " + std::to_string(sigma));
    if (sigma == 0.0) {
      r.check(max_of(c) < 1e-2, "noiseless cornea error above 1e-2 mm");
      r.check(max_of(a) < 0.1, "noiseless axis error above 0.1 deg");
    }
    if (sigma == 0.3) r.check(median(c) < 1.0, "median cornea error at 0.3 px above 1 mm");
    r.check(median(c) >= prev_c && median(a) >= prev_a, "error not monotone at sigma " + std::to_string(sigma));
    prev_c = median(c);
    prev_a = median(a);
    r.figure("sigma %.1f px: cornea median %.4f mm (max %.4f), axis median %.3f deg (max %.3f)", sigma, median(c),
             max_of(c), median(a), max_of(a));
  }
}

// --- A4 -----------------------------------------------------------------------------

void a4(Result& r) {
  std::mt19937_64 rng(4444);
  std::vector<double> err;
  for (int k = 0; k < 100; ++k) {
    const oracle::GlintConfig g = oracle::random_glint_config(rng);
    geom::Vec3 q;
    try {
      q = synthrig::reflect_on_sphere(g.center, g.radius, g.led, g.cam);
    } catch (const Error& e) {
      r.check(false, std::string("config ") + std::to_string(k) + ": " + e.what());
      continue;
    }
    const geom::Vec3 b = oracle::specular_point_brute_force(g.center, g.radius, g.led, g.cam, 1'000'000);
    err.push_back((q - b).norm());
  }
  r.check(err.size() == 100, "not every configuration was solved");
  r.check(max_of(err) < 1e-4, "disagreement above 1e-4 mm");
  r.figure("100 configurations, 1e6 candidates per round: max %.2e mm, median %.2e mm", max_of(err), median(err));
}

// --- A5 -----------------------------------------------------------------------------

void a5(Result& r) {
  constexpr double kAlpha = 3.7e6, kPpm = 50.0;
  const std::vector<synthrig::StreamClock> clocks = {
      {kAlpha, 1 + kPpm * 1e-6, 0}, {-kAlpha, 1 - kPpm * 1e-6, 0}, {kAlpha, 1 - kPpm * 1e-6, 0}, {-kAlpha, 1 + kPpm * 1e-6, 0}};
  std::map<sync::StreamId, std::vector<double>> d_skew, d_off;
  double worst_f1 = 1.0;
  std::size_t drops = 0, report_mismatch = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    synthrig::TimestampConfig c;
    c.n_streams = 4;
    c.duration_s = 60.0;
    c.fps = 45.0;
    c.clocks = clocks;
    c.jitter_max_us = 5000.0;
    c.drop_rate = 0.02;
    c.seed = 500 + s;
    const auto ts = synthrig::gen_timestamps(c);

    std::map<sync::StreamId, sync::ClockModel> models;
    for (const auto& [id, frames] : ts.streams) {
      models[id] = sync::fit_clock_model(frames);
      const auto& truth = clocks[static_cast<std::size_t>(id)];
      d_skew[id].push_back((models[id].skew - truth.skew) * 1e6);
      d_off[id].push_back(models[id].offset_us - truth.offset_us);
    }
    const auto period = static_cast<std::int64_t>(std::llround(1e6 / c.fps));
    const sync::Alignment a = sync::align_streams(ts.streams, models, period, period / 2);

    // Ground truth: frames sharing a frame index were captured at the same tick.
    std::map<std::uint32_t, std::set<sync::StreamId>> by_tick;
    for (const auto& [id, frames] : ts.streams) {
      for (const auto& f : frames) by_tick[f.frame_index].insert(id);
    }
    std::size_t truth_pairs = 0, tp = 0, fp = 0;
    for (const auto& [t, ids] : by_tick) truth_pairs += ids.size() * (ids.size() - 1) / 2;
    std::map<std::int64_t, std::uint32_t> tick_of_group;
    for (const auto& g : a.groups) {
      for (auto i = g.members.begin(); i != g.members.end(); ++i) {
        for (auto j = std::next(i); j != g.members.end(); ++j) (i->second == j->second ? tp : fp)++;
      }
      if (!g.members.empty()) tick_of_group[g.group_ts_us] = g.members.begin()->second;
    }
    const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = truth_pairs ? static_cast<double>(tp) / static_cast<double>(truth_pairs) : 0.0;
    worst_f1 = std::min(worst_f1, prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0);

    // Drop report: exactly the dropped ticks on which some other stream delivered.
    for (const auto& [id, dropped] : ts.dropped) {
      std::set<std::uint32_t> expect;
      for (auto t : dropped) {
        if (by_tick.contains(t)) expect.insert(t);
      }
      drops += dropped.size();
      std::set<std::uint32_t> reported;
      for (auto gts : a.drops.streams.at(id).missing_group_ts) {
        auto it = tick_of_group.find(gts);
        reported.insert(it == tick_of_group.end() ? UINT32_MAX : it->second);
      }
      report_mismatch += reported != expect;
    }
  }
  for (const auto& [id, v] : d_skew) {
    const double ms = median(v), mo = median(d_off[id]);
    r.check(std::abs(ms) < 5.0, "stream " + std::to_string(id) + " skew error " + std::to_string(ms) + " ppm");
    r.check(std::abs(mo) < 1000.0, "stream " + std::to_string(id) + " offset error " + std::to_string(mo) + " us");
    r.figure("stream %d: median skew error %+.3f ppm, median offset error %+.1f us", id, ms, mo);
  }
  r.check(worst_f1 == 1.0, "alignment F1 below 1");
  r.check(report_mismatch == 0, std::to_string(report_mismatch) + " stream drop reports differ from truth");
  r.check(drops > 0, "no drops were simulated");
  r.figure("alignment F1 min %.6f over 20 seeds; %zu drops, drop reports exact: %s", worst_f1, drops,
           report_mismatch == 0 ? "yes" : "no");
}

// --- A6 -----------------------------------------------------------------------------

void a6(Result& r) {
  TempDir tmp("a6");
  wire::MockServerConfig cfg;
  for (int i = 0; i < 4; ++i) {
    wire::MockStreamConfig s;
    s.stream_id = static_cast<std::uint8_t>(i);
    s.width = 240;
    s.height = 240;
    s.fps = 45.0;
    s.device_start_us = 10'000'000ULL * static_cast<std::uint64_t>(i + 1);
    s.skew = 1.0 + 15e-6 * i;
    cfg.streams.push_back(s);
  }
  wire::MockServer srv(cfg);
  srv.start();
  const auto ports = srv.ports();
  const char* roles[] = {"eye_L0", "eye_L1", "eye_R0", "eye_R1"};
  std::vector<wire::Endpoint> eps;
  for (int i = 0; i < 4; ++i) {
    wire::Endpoint e;
    e.port = ports[static_cast<std::size_t>(i)];
    e.stream_id = i;
    e.role = roles[i];
    eps.push_back(e);
  }
  wire::RecordOptions o;
  o.duration_s = 10.0;
  o.created_utc = "2026-01-01T00:00:00Z";
  const auto rec = wire::record_session(eps, o, tmp / "rec");
  srv.stop();

  std::size_t frames = 0, lost = 0, mismatched = 0, corrupt = 0;
  try {
    const auto report = session::validate_session(tmp / "rec");
    const session::Session s = session::Session::load(tmp / "rec");
    for (int id = 0; id < 4; ++id) {
      const auto* info = s.manifest().find_stream(id);
      r.check(info && !info->degraded, "stream " + std::to_string(id) + " degraded");
      corrupt += rec.stats.at(id).corrupt;
      const auto& idx = s.index(id);
      r.check(idx.size() >= 440, "stream " + std::to_string(id) + " recorded only " + std::to_string(idx.size()));
      r.check(srv.frames_sent(static_cast<std::size_t>(id)) >= idx.size(), "more frames stored than sent");
      for (std::size_t k = 0; k < idx.size(); ++k) {
        lost += idx[k].frame_index != k;
        const auto img = s.frame(id, idx[k].frame_index);
        mismatched += img.pixels != wire::mock_payload(cfg.streams[static_cast<std::size_t>(id)], idx[k].frame_index);
      }
      frames += idx.size();
      r.check(report.frames.at(id) == idx.size(), "validation frame count differs from index");
    }
  } catch (const Error& e) {
    r.check(false, std::string("session does not validate: ") + e.what());
  }
  r.check(lost == 0, std::to_string(lost) + " frames lost");
  r.check(mismatched == 0, std::to_string(mismatched) + " payloads differ from what was sent");
  r.check(corrupt == 0, std::to_string(corrupt) + " corrupt frames");
  r.figure("loopback 4 x 240x240 @ 45 fps x 10 s: %zu frames stored, %zu lost, %zu payload mismatches", frames, lost,
           mismatched);

  // Single-byte header fuzz: every byte replaced by a different value.
  std::mt19937_64 rng(66);
  std::uniform_int_distribution<std::size_t> pos(0, wire::kHeaderSize - 1);
  std::uniform_int_distribution<int> val(1, 255);
  std::size_t accepted = 0;
  for (int k = 0; k < 10'000; ++k) {
    wire::FrameMessage m;
    m.stream_id = static_cast<std::uint8_t>(k % 5);
    m.frame_index = static_cast<std::uint32_t>(rng());
    m.device_ts_us = rng();
    m.width = 240;
    m.height = 240;
    m.payload = wire::mock_payload(cfg.streams[static_cast<std::size_t>(k % 4)], static_cast<std::uint32_t>(k));
    auto b = wire::encode_frame(m);
    const std::size_t p = pos(rng);
    b[p] = static_cast<std::uint8_t>(b[p] ^ val(rng));
    try {
      wire::decode_frame(b);
      ++accepted;
    } catch (const ProtocolError&) {
    }
  }
  r.check(accepted == 0, std::to_string(accepted) + " corrupted frames accepted");
  r.figure("header fuzz: 10000 single-byte corruptions, %zu accepted", accepted);
}

// --- A7 -----------------------------------------------------------------------------

// Central differences through the problem's manifold, written here rather
// than taken from the solver.
Eigen::MatrixXd central_differences(const solve::LeastSquaresProblem& p, const Eigen::VectorXd& x) {
  Eigen::MatrixXd j(p.num_residuals, p.num_params);
  for (Eigen::Index c = 0; c < p.num_params; ++c) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[c]));
    Eigen::VectorXd d = Eigen::VectorXd::Zero(p.num_params);
    d[c] = h;
    j.col(c) = (p.residual(solve::plus(p.layout, x, d)) - p.residual(solve::plus(p.layout, x, -d))) / (2 * h);
  }
  return j;
}

double rel_dev(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return ((a - b).array().abs() / b.array().abs().max(1.0)).maxCoeff();
}

Eigen::VectorXd jiggled(const solve::LeastSquaresProblem& p, const Eigen::VectorXd& x, std::mt19937_64& rng, double rot,
                        double lin) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd d(x.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = lin * n(rng);
  for (auto b : p.layout.rotation_blocks) d.segment<3>(b) = rot * geom::Vec3(n(rng), n(rng), n(rng));
  return solve::plus(p.layout, x, d);
}

Eigen::VectorXd pack(const geom::RigidTransform& t) {
  Eigen::VectorXd v(6);
  v.head<3>() = geom::log_so3(t.rotation_matrix());
  v.tail<3>() = t.translation();
  return v;
}

std::pair<std::vector<geom::Vec3>, std::vector<geom::Vec2>> split(const calib::BoardView& v) {
  std::vector<geom::Vec3> o;
  std::vector<geom::Vec2> i;
  for (const auto& c : v.correspondences) {
    o.push_back(c.board);
    i.push_back(c.image);
  }
  return {o, i};
}

void a7(Result& r) {
  const auto& cal = rig7().calibration;
  std::mt19937_64 rng(77);
  std::map<std::string, double> worst;

  // Projection Jacobians of both camera models.
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const auto& [id, cam] : cal.cameras) {
    for (int k = 0; k < 50; ++k) {
      const geom::Vec3 p(25 * u(rng), 25 * u(rng), 80 + 30 * u(rng));
      Eigen::Matrix<double, 2, 3> jp;
      Eigen::Matrix<double, 2, Eigen::Dynamic> jk;
      geom::project(cam.model, p, &jp, &jk);
      Eigen::MatrixXd np(2, 3), nk(2, jk.cols());
      for (int j = 0; j < 3; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(p[j]));
        geom::Vec3 a = p, b = p;
        a[j] += h;
        b[j] -= h;
        np.col(j) = (geom::project(cam.model, a) - geom::project(cam.model, b)) / (2 * h);
      }
      const Eigen::VectorXd k0 = cam.model.parameters();
      for (Eigen::Index j = 0; j < k0.size(); ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(k0[j]));
        Eigen::VectorXd a = k0, b = k0;
        a[j] += h;
        b[j] -= h;
        nk.col(j) = (geom::project(cam.model.with_parameters(a), p) - geom::project(cam.model.with_parameters(b), p)) / (2 * h);
      }
      const std::string key = std::string("project/") + geom::to_string(cam.model.kind);
      worst[key] = std::max({worst[key], rel_dev(jp, np), rel_dev(jk, nk)});
    }
  }

  // Reprojection problems.
  const auto plan = synthrig::make_default_captures(rig7(), {});
  for (const auto& [id, views] : plan.intrinsics) {
    const geom::CameraModel& m = cal.camera(id).model;
    const auto [o, i] = split(views[3]);
    const auto pnp = calib::pnp_problem(o, i, m);
    const Eigen::VectorXd xp = pack(calib::solve_pnp(o, i, m).pose);
    const std::span<const calib::BoardView> few = std::span(views).first(5);
    const auto intr = calib::intrinsics_problem(few, m);
    Eigen::VectorXd xi(intr.num_params);
    xi.head(static_cast<Eigen::Index>(m.parameter_count())) = m.parameters();
    for (std::size_t k = 0; k < few.size(); ++k) {
      const auto [fo, fi] = split(few[k]);
      xi.segment<6>(static_cast<Eigen::Index>(m.parameter_count() + 6 * k)) = pack(calib::solve_pnp(fo, fi, m).pose);
    }
    for (int k = 0; k < 10; ++k) {
      Eigen::VectorXd x = jiggled(pnp, xp, rng, 0.02, 0.5);
      worst["pnp"] = std::max(worst["pnp"], rel_dev(pnp.jacobian(x), central_differences(pnp, x)));
      x = jiggled(intr, xi, rng, 0.01, 1e-3);
      worst["intrinsics"] = std::max(worst["intrinsics"], rel_dev(intr.jacobian(x), central_differences(intr, x)));
    }
  }
  for (calib::StereoPair p : plan.stereo) {
    p.views.resize(5);
    const auto& ma = cal.camera(p.camera_a).model;
    const auto& mb = cal.camera(p.camera_b).model;
    const auto prob = calib::stereo_problem(p, ma, mb);
    Eigen::VectorXd x0(prob.num_params);
    x0.head<6>() = pack(geom::compose(geom::invert(cal.camera(p.camera_a).pose), cal.camera(p.camera_b).pose));
    for (std::size_t k = 0; k < p.views.size(); ++k) {
      const auto [o, i] = split(p.views[k].first);
      x0.segment<6>(static_cast<Eigen::Index>(6 + 6 * k)) = pack(calib::solve_pnp(o, i, ma).pose);
    }
    for (int k = 0; k < 10; ++k) {
      const Eigen::VectorXd x = jiggled(prob, x0, rng, 0.01, 0.2);
      worst["stereo"] = std::max(worst["stereo"], rel_dev(prob.jacobian(x), central_differences(prob, x)));
    }
  }
  for (const auto& [name, dev] : worst) {
    r.check(dev < 1e-4, name + " Jacobian deviates by " + std::to_string(dev));
    r.figure("%-32s max relative deviation %.2e", name.c_str(), dev);
  }

  // Every LM run of the calibration stages, on noiseless and noisy captures:
  // accepted steps must strictly lower the cost.
  std::size_t runs = 0, steps = 0, violations = 0;
  auto audit = [&](const solve::SolveReport& rep) {
    ++runs;
    for (std::size_t k = 1; k < rep.accepted_costs.size(); ++k) {
      ++steps;
      violations += !(rep.accepted_costs[k] < rep.accepted_costs[k - 1]);
    }
  };
  for (double sigma : {0.0, 0.2, 0.5}) {
    synthrig::CaptureOptions co;
    co.corner_noise_px = sigma;
    co.label_noise_px = sigma;
    co.seed = 700 + static_cast<std::uint64_t>(10 * sigma);
    const auto pl = synthrig::make_default_captures(rig7(), co);
    std::map<calib::CameraId, geom::CameraModel> intr;
    for (const auto& [id, views] : pl.intrinsics) {
      calib::IntrinsicsOptions io;
      io.width = cal.camera(id).model.width;
      io.height = cal.camera(id).model.height;
      const auto res = calib::calibrate_intrinsics(views, cal.camera(id).model.kind, io);
      audit(res.report);
      intr[id] = res.model;
      for (const auto& v : views) {
        const auto [o, i] = split(v);
        audit(calib::solve_pnp(o, i, res.model).report);
      }
    }
    for (const auto& p : pl.stereo) audit(calib::calibrate_stereo(p, intr.at(p.camera_a), intr.at(p.camera_b)).report);
    calib::CameraRig eyes = cal.cameras;
    eyes.erase("scene");
    const auto pos = calib::calibrate_scene_position(pl.scene_position.session, eyes);
    audit(calib::calibrate_scene_orientation(pl.scene_orientation.session, "scene", pos.point, cal.camera("scene").model,
                                             eyes)
              .report);
  }
  r.check(violations == 0, std::to_string(violations) + " accepted steps did not lower the cost");
  r.figure("LM audit: %zu runs, %zu accepted steps, %zu non-decreasing", runs, steps, violations);
}

// --- A8 -----------------------------------------------------------------------------

void a8(Result& r) {
  TempDir tmp("a8");
  const std::vector<std::string> variants = {
      "simulate --seed 7",
      "simulate --seed 11 --corner-noise 0.2 --label-noise 0.5 --feature-noise 0.3 --drop-rate 0.02"};
  std::size_t files = 0;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::map<std::string, std::string> raw[2], snap[2];
    std::string csv[2];
    for (int run = 0; run < 2; ++run) {
      const fs::path dir = tmp / ("v" + std::to_string(v) + "_" + std::to_string(run));
      r.check(cli(variants[v], dir) == 0, variants[v] + " failed");
      raw[run] = snapshot(dir);  // the session before any stage
      const fs::path out = tmp / ("gaze_" + std::to_string(v) + "_" + std::to_string(run) + ".csv");
      if (!cli_pipeline(dir, out, r)) return;
      snap[run] = snapshot(dir);
      csv[run] = session::read_text(out);
    }
    r.check(!raw[0].empty() && raw[0] == raw[1], "sessions differ: " + variants[v]);
    r.check(snap[0].contains(session::kCalibrationFile) &&
                snap[0].at(session::kCalibrationFile) == snap[1].at(session::kCalibrationFile),
            "calibration.json differs: " + variants[v]);
    r.check(snap[0] == snap[1], "pipeline outputs differ: " + variants[v]);
    r.check(!csv[0].empty() && csv[0] == csv[1], "gaze CSV differs: " + variants[v]);
    files += snap[0].size();
  }
  r.figure("2 seeds x 2 runs (noiseless and noisy): %zu files and gaze CSVs byte-identical", files);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Result&)>>> all = {
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5}, {"A6", a6}, {"A7", a7}, {"A8", a8}};
  std::set<std::string> pick(argv + 1, argv + argc);
  bool ok = true;
  for (const auto& [id, fn] : all) {
    if (!pick.empty() && !pick.contains(id)) continue;
    Result res;
    const auto t0 = Clock::now();
    try {
      fn(res);
    } catch (const std::exception& e) {
      res.check(false, std::string("exception: ") + e.what());
    }
    const bool pass = res.failures.empty();
    ok = ok && pass;
    std::printf("%s %s (%.1f s)\n", id.c_str(), pass ? "PASS" : "FAIL", seconds_since(t0));
    for (const auto& f : res.figures) std::printf("    %s\n", f.c_str());
    for (const auto& f : res.failures) std::printf("    failed: %s\n", f.c_str());
    std::fflush(stdout);
  }
  return ok ? 0 : 1;
}
