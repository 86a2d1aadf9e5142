// SPDX-License-Identifier: Apache-2.0
//
// ocular: one executable for every pipeline stage.
//   exit 0 on success, 1 on a runtime error, 2 on a usage error.
#include "calibsvc/calibsvc.hpp"

#include "ocular/error.hpp"
#include "ocular/net.hpp"
#include "ocular/pipeline.hpp"
#include "ocular/session.hpp"

#include "CLI11.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace ocular;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

// Blocks until SIGINT/SIGTERM or `seconds` elapse (<= 0 waits for a signal).
void wait_for(double seconds) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
  while (!g_interrupted) {
    if (seconds > 0 && std::chrono::steady_clock::now() >= until) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

const std::vector<std::string> kDefaultRoles = {"eye_L0", "eye_L1", "eye_R0", "eye_R1", "scene"};

// "role=host:port" or "host:port"; stream ids follow list order.
std::vector<wire::Endpoint> parse_endpoints(const std::vector<std::string>& items) {
  std::vector<wire::Endpoint> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::string item = items[i];
    wire::Endpoint e;
    e.stream_id = static_cast<int>(i);
    if (const auto eq = item.find('='); eq != std::string::npos) {
      e.role = item.substr(0, eq);
      item = item.substr(eq + 1);
    } else if (i < kDefaultRoles.size()) {
      e.role = kDefaultRoles[i];
    } else {
      throw UsageError("endpoint '" + items[i] + "' needs a role (role=host:port)");
    }
    if (!session::is_known_role(e.role)) throw UsageError("unknown stream role '" + e.role + "'");
    const auto colon = item.rfind(':');
    if (colon == std::string::npos || colon == 0) throw UsageError("endpoint '" + items[i] + "' is not host:port");
    e.host = item.substr(0, colon);
    try {
      const int port = std::stoi(item.substr(colon + 1));
      if (port <= 0 || port > 65535) throw std::out_of_range("port");
      e.port = static_cast<std::uint16_t>(port);
    } catch (const std::logic_error&) {
      throw UsageError("bad port in endpoint '" + items[i] + "'");
    }
    out.push_back(e);
  }
  return out;
}

std::vector<std::uint8_t> pixels_of(const session::Image& im) { return im.pixels; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ocular: eye-tracker rig calibration, synchronization and gaze toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string session_dir;
  std::uint64_t seed = 7;
  bool verbose = false;
  app.add_option("--session", session_dir, "Session directory (serve: directory holding sessions)");
  app.add_option("--seed", seed, "Random seed");
  app.add_flag("--verbose", verbose, "Print timings to standard error");

  // simulate
  pipeline::SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic session with ground truth");
  simulate->add_option("--corner-noise", sim.corner_noise_px, "Board corner label noise sigma, px")->check(CLI::NonNegativeNumber);
  simulate->add_option("--label-noise", sim.label_noise_px, "Mirror spot/marker label noise sigma, px")->check(CLI::NonNegativeNumber);
  simulate->add_option("--feature-noise", sim.feature_noise_px, "Pupil/glint feature noise sigma, px")->check(CLI::NonNegativeNumber);
  simulate->add_option("--gaze-seconds", sim.gaze_seconds, "Length of the gaze recording")->check(CLI::PositiveNumber);
  simulate->add_option("--drop-rate", sim.drop_rate, "Frame drop probability in the gaze recording")->check(CLI::Range(0.0, 0.5));
  simulate->add_option("--jitter-us", sim.jitter_max_us, "Maximum host arrival jitter, us")->check(CLI::NonNegativeNumber);
  simulate->add_option("--skew-ppm", sim.skew_ppm, "Maximum clock skew, ppm")->check(CLI::Range(0.0, 1000.0));

  // serve-mock
  int mock_streams = 4;
  double mock_fps = 45.0;
  int mock_port = 9000;
  double mock_duration = 0.0;
  std::string mock_source;
  auto* serve_mock = app.add_subcommand("serve-mock", "Serve synthetic camera streams over TCP");
  serve_mock->add_option("--streams", mock_streams, "Number of streams")->check(CLI::Range(1, 5));
  serve_mock->add_option("--fps", mock_fps, "Frame rate")->check(CLI::Range(1.0, 1000.0));
  serve_mock->add_option("--port", mock_port, "Port of stream 0; stream i uses port+i (0 = any)")->check(CLI::Range(0, 65535));
  serve_mock->add_option("--duration", mock_duration, "Seconds to serve (0 = until interrupted)")->check(CLI::NonNegativeNumber);
  serve_mock->add_option("--source-session", mock_source, "Cycle the frames of this session instead of a test pattern");

  // record
  std::vector<std::string> endpoints;
  double record_duration = 10.0;
  auto* record = app.add_subcommand("record", "Record streams from endpoints into --session");
  record->add_option("--endpoints", endpoints, "Comma-separated [role=]host:port list")->delimiter(',')->required();
  record->add_option("--duration", record_duration, "Recording length, seconds")->check(CLI::PositiveNumber);

  std::string camera, pair, root = "scene", out_csv;
  auto* ci = app.add_subcommand("calib-intrinsics", "Per-camera intrinsics from board labels");
  ci->add_option("--camera", camera, "Only this camera");
  auto* cs = app.add_subcommand("calib-stereo", "Eye camera extrinsics from shared board views");
  cs->add_option("--pair", pair, "Only this pair, as A,B");
  auto* cl = app.add_subcommand("calib-leds", "LED positions from mirror reflections");
  auto* csc = app.add_subcommand("calib-scene", "Scene camera pose from mirror captures");
  auto* cw = app.add_subcommand("compose-world", "Merge staged results into calibration.json");
  cw->add_option("--root", root, "Camera defining the world frame");
  auto* sf = app.add_subcommand("sync-fit", "Clock models and synchronized groups");
  auto* gz = app.add_subcommand("gaze", "Per-frame cornea center and optical axis");
  gz->add_option("--out", out_csv, "Output CSV")->required();
  auto* val = app.add_subcommand("validate", "Check a session directory");

  // serve
  int serve_port = 8750;
  std::string serve_host = "127.0.0.1";
  std::string ui_dir;
  auto* serve = app.add_subcommand("serve", "Start the calibration service for the labeling UI");
  serve->add_option("--port", serve_port, "Listen port (0 = any)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", serve_host, "Listen address");
  serve->add_option("--ui", ui_dir, "Built UI bundle served at /")->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto need_session = [&]() -> fs::path {
    if (session_dir.empty()) throw UsageError("--session is required");
    return session_dir;
  };
  auto print = [](const std::string& text) { std::fputs(text.c_str(), stdout); };

  try {
    const std::map<const CLI::App*, std::function<void()>> actions = {
        {simulate,
         [&] {
           sim.seed = seed;
           const auto r = pipeline::simulate_session(need_session(), sim);
           print("wrote " + std::to_string(r.frames) + " frames, " + std::to_string(r.labels) + " labels over " +
                 std::to_string(r.ticks) + " ticks\n");
         }},
        {serve_mock,
         [&] {
           wire::MockServerConfig cfg;
           cfg.base_port = static_cast<std::uint16_t>(mock_port);
           std::optional<session::Session> src;
           if (!mock_source.empty()) src = session::Session::load(mock_source);
           for (int i = 0; i < mock_streams; ++i) {
             wire::MockStreamConfig s;
             s.stream_id = static_cast<std::uint8_t>(i);
             s.fps = mock_fps;
             if (src) {
               const auto* info = src->manifest().find_stream(i);
               if (!info) throw InputError("source session has no stream " + std::to_string(i));
               s.width = static_cast<std::uint16_t>(info->width);
               s.height = static_cast<std::uint16_t>(info->height);
               for (const auto& row : src->index(i)) s.frames.push_back(pixels_of(src->frame(i, row.frame_index)));
               if (s.frames.empty()) throw InputError("source stream " + std::to_string(i) + " has no frames");
             }
             cfg.streams.push_back(std::move(s));
           }
           wire::MockServer server(cfg);
           server.start();
           const auto ports = server.ports();
           for (std::size_t i = 0; i < ports.size(); ++i) {
             print("stream " + std::to_string(i) + " listening on " + cfg.host + ":" + std::to_string(ports[i]) + "\n");
           }
           std::fflush(stdout);
           wait_for(mock_duration);
           server.stop();
         }},
        {record,
         [&] {
           wire::RecordOptions o;
           o.duration_s = record_duration;
           const auto r = wire::record_session(parse_endpoints(endpoints), o, need_session());
           for (const auto& st : r.manifest.streams) {
             const auto& s = r.stats.at(st.id);
             print("stream " + std::to_string(st.id) + " (" + st.role + "): " + std::to_string(s.frames) + " frames, " +
                   std::to_string(s.corrupt) + " corrupt, " + std::to_string(s.duplicates) + " duplicates" +
                   (st.degraded ? ", degraded: " + st.degraded_reason : "") + "\n");
           }
         }},
        {ci, [&] { print(pipeline::run_stage(need_session(), "calib-intrinsics", {{"camera", camera}}).summary); }},
        {cs, [&] { print(pipeline::run_stage(need_session(), "calib-stereo", {{"pair", pair}}).summary); }},
        {cl, [&] { print(pipeline::calib_leds(need_session()).summary); }},
        {csc, [&] { print(pipeline::calib_scene(need_session()).summary); }},
        {cw, [&] { print(pipeline::compose_world(need_session(), root).summary); }},
        {sf, [&] { print(pipeline::sync_fit(need_session()).summary); }},
        {gz, [&] { print(pipeline::gaze(need_session(), out_csv).summary); }},
        {val,
         [&] {
           const auto rep = session::validate_session(need_session());
           for (const auto& [id, n] : rep.frames) print("stream " + std::to_string(id) + ": " + std::to_string(n) + " frames\n");
           print(std::to_string(rep.labels) + " labels" + (rep.has_calibration ? ", calibration present" : "") + "\n");
           print("ok\n");
         }},
        {serve,
         [&] {
           calibsvc::ServiceOptions o;
           o.root = need_session();
           o.host = serve_host;
           o.port = serve_port;
           if (!ui_dir.empty()) o.ui_dir = fs::path(ui_dir);
           calibsvc::Service svc(o);
           const int port = svc.start();
           print("serving " + o.root.string() + " on http://" + o.host + ":" + std::to_string(port) + "/\n");
           std::fflush(stdout);
           wait_for(0);
           svc.stop();
         }},
    };
    for (const auto& [sub, action] : actions) {
      if (sub->parsed()) action();
    }
  } catch (const UsageError& e) {
    std::cerr << "error: UsageError: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  if (verbose) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "done in %.3f s\n", s);
  }
  return 0;
}
