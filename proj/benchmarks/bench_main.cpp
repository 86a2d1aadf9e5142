// SPDX-License-Identifier: Apache-2.0
// Hot paths: projection, glint formation, reprojection solves, gaze
// reconstruction, the frame codec and clock fitting.
#include "ocular/calib.hpp"
#include "ocular/gaze.hpp"
#include "ocular/geom.hpp"
#include "ocular/sync.hpp"
#include "ocular/synthrig.hpp"
#include "ocular/wire.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace ocular;

namespace {

const synthrig::GroundTruthRig& rig() {
  static const synthrig::GroundTruthRig r = synthrig::make_default_rig(7);
  return r;
}

const synthrig::CapturePlan& plan() {
  static const synthrig::CapturePlan p = [] {
    synthrig::CaptureOptions o;
    o.corner_noise_px = 0.2;
    o.seed = 1;
    return synthrig::make_default_captures(rig(), o);
  }();
  return p;
}

void BM_ProjectFisheyeWithJacobians(benchmark::State& state) {
  const geom::CameraModel& cam = rig().calibration.camera("L0").model;
  const geom::Vec3 p(4.0, -3.0, 40.0);
  Eigen::Matrix<double, 2, 3> jp;
  Eigen::Matrix<double, 2, Eigen::Dynamic> jk;
  for (auto _ : state) benchmark::DoNotOptimize(geom::project(cam, p, &jp, &jk));
}
BENCHMARK(BM_ProjectFisheyeWithJacobians);

void BM_Unproject(benchmark::State& state) {
  const geom::CameraModel& cam = rig().calibration.camera("L0").model;
  const geom::Vec2 px(60.0, 190.0);
  for (auto _ : state) benchmark::DoNotOptimize(geom::unproject(cam, px));
}
BENCHMARK(BM_Unproject);

void BM_ReflectOnSphere(benchmark::State& state) {
  const geom::Vec3 c(0, 0, 0), led(12, 8, 25), cam(-10, -15, 30);
  for (auto _ : state) benchmark::DoNotOptimize(synthrig::reflect_on_sphere(c, 7.8, led, cam));
}
BENCHMARK(BM_ReflectOnSphere);

void BM_SolvePnp(benchmark::State& state) {
  const calib::BoardView& v = plan().intrinsics.at("L0")[0];
  std::vector<geom::Vec3> o;
  std::vector<geom::Vec2> i;
  for (const auto& c : v.correspondences) {
    o.push_back(c.board);
    i.push_back(c.image);
  }
  const geom::CameraModel& cam = rig().calibration.camera("L0").model;
  for (auto _ : state) benchmark::DoNotOptimize(calib::solve_pnp(o, i, cam));
}
BENCHMARK(BM_SolvePnp)->Unit(benchmark::kMicrosecond);

void BM_CalibrateIntrinsics20Views(benchmark::State& state) {
  const auto& views = plan().intrinsics.at("L0");
  const geom::CameraModel& truth = rig().calibration.camera("L0").model;
  calib::IntrinsicsOptions o;
  o.width = truth.width;
  o.height = truth.height;
  for (auto _ : state) benchmark::DoNotOptimize(calib::calibrate_intrinsics(views, truth.kind, o));
}
BENCHMARK(BM_CalibrateIntrinsics20Views)->Unit(benchmark::kMillisecond);

void BM_ReconstructEye(benchmark::State& state) {
  const synthrig::EyeState s[] = {synthrig::eye_rotated(rig(), "L", 8, -4)};
  const auto obs = synthrig::gen_eye_frames(rig(), s, 0.1, 3).at(0);
  for (auto _ : state) benchmark::DoNotOptimize(gaze::reconstruct_eye("L", 0, obs, rig().calibration));
}
BENCHMARK(BM_ReconstructEye)->Unit(benchmark::kMicrosecond);

wire::FrameMessage full_frame() {
  wire::FrameMessage m;
  m.width = 240;
  m.height = 240;
  m.payload.resize(240 * 240);
  std::mt19937 rng(1);
  for (auto& b : m.payload) b = static_cast<std::uint8_t>(rng());
  return m;
}

void BM_EncodeFrame240(benchmark::State& state) {
  const wire::FrameMessage m = full_frame();
  for (auto _ : state) benchmark::DoNotOptimize(wire::encode_frame(m));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * 57'600);
}
BENCHMARK(BM_EncodeFrame240);

void BM_DecodeFrame240(benchmark::State& state) {
  const auto bytes = wire::encode_frame(full_frame());
  for (auto _ : state) benchmark::DoNotOptimize(wire::decode_frame(bytes));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * 57'600);
}
BENCHMARK(BM_DecodeFrame240);

synthrig::TimestampSet minute_of_timestamps() {
  synthrig::TimestampConfig c;
  c.n_streams = 4;
  c.clocks = {{3.7e6, 1 + 50e-6, 0}, {-1e6, 1 - 20e-6, 0}};
  c.jitter_max_us = 5000;
  c.drop_rate = 0.02;
  c.seed = 9;
  return synthrig::gen_timestamps(c);
}

void BM_FitClockModel60s(benchmark::State& state) {
  const auto ts = minute_of_timestamps();
  for (auto _ : state) benchmark::DoNotOptimize(sync::fit_clock_model(ts.streams.at(0)));
}
BENCHMARK(BM_FitClockModel60s)->Unit(benchmark::kMicrosecond);

void BM_AlignFourStreams60s(benchmark::State& state) {
  const auto ts = minute_of_timestamps();
  std::map<sync::StreamId, sync::ClockModel> models;
  for (const auto& [id, f] : ts.streams) models[id] = sync::fit_clock_model(f);
  for (auto _ : state) benchmark::DoNotOptimize(sync::align_streams(ts.streams, models, 22222, 11111));
}
BENCHMARK(BM_AlignFourStreams60s)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
