// SPDX-License-Identifier: Apache-2.0
//
// Session-level pipeline stages shared by the command line tool and the
// calibration service. Each stage reads the session directory (labels,
// captures and the outputs of earlier stages) and writes exactly its own
// output file(s):
//
//   calib-intrinsics  calib/intrinsics_<camera>.json
//   calib-stereo      calib/stereo_<a>_<b>.json
//   calib-leds        calib/leds.json
//   calib-scene       calib/scene.json
//   compose-world     calibration.json
//   sync-fit          sync.json
//   gaze              the requested CSV
//
// Outputs are a pure function of the session contents, so running a stage
// twice, or through the service, produces byte-identical files.
#pragma once

#include "ocular/calib.hpp"
#include "ocular/session.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ocular::pipeline {

namespace fs = std::filesystem;
using calib::CameraId;

inline constexpr const char* kFeaturesFile = "features.json";
inline constexpr const char* kSyncFile = "sync.json";

struct SimulateOptions {
  std::uint64_t seed = 7;
  double corner_noise_px = 0.0;
  double label_noise_px = 0.0;
  double feature_noise_px = 0.0;
  double gaze_seconds = 2.0;
  double drop_rate = 0.0;        // applied to the gaze recording only
  double jitter_max_us = 5000.0; // host arrival delay ~ U[0, jitter]
  double skew_ppm = 50.0;        // per-stream clock skew drawn from +-skew_ppm
  int capture_spacing = 5;       // ticks between calibration captures
};

struct SimulateResult {
  std::size_t frames = 0;
  std::size_t labels = 0;
  std::uint32_t ticks = 0;
};

/// Writes a complete synthetic session: frames, index files, labels for every
/// calibration capture, detector-style eye features, and the ground truth.
/// Refuses a non-empty target directory.
SimulateResult simulate_session(const fs::path& dir, const SimulateOptions& options);

struct StageOutput {
  std::vector<fs::path> files;  // relative to the session directory
  std::string summary;          // human-readable, one line per result
};

StageOutput calib_intrinsics(const fs::path& dir, const std::optional<CameraId>& camera = std::nullopt);
StageOutput calib_stereo(const fs::path& dir,
                         const std::optional<std::pair<CameraId, CameraId>>& pair = std::nullopt);
StageOutput calib_leds(const fs::path& dir);
StageOutput calib_scene(const fs::path& dir);
StageOutput compose_world(const fs::path& dir, const CameraId& root = "scene");
StageOutput sync_fit(const fs::path& dir);
/// `out` is taken as is (relative paths resolve against the working directory).
StageOutput gaze(const fs::path& dir, const fs::path& out);

/// Stage by name with string parameters, as submitted to the service:
/// camera, pair ("A,B"), root, out.
StageOutput run_stage(const fs::path& dir, const std::string& kind, const std::map<std::string, std::string>& params);
bool is_calibration_stage(const std::string& kind);

// --- helpers exposed for the service and tests ------------------------------------

/// Board view of `camera` in one frame from its corner labels; nullopt when
/// the frame has fewer corner labels than a view needs.
std::optional<calib::BoardView> board_view_from_labels(const std::vector<session::LabelRecord>& frame_labels,
                                                       const CameraId& camera, const geom::CheckerboardSpec& board,
                                                       const calib::FrameRef& ref);

/// Labels grouped by (stream, frame).
std::map<calib::FrameRef, std::vector<session::LabelRecord>> group_labels(
    const std::vector<session::LabelRecord>& labels);

/// Calibration stored in truth.json of a synthetic session.
calib::RigCalibration truth_calibration(const fs::path& dir);

std::string intrinsics_file(const CameraId& camera);
std::string stereo_file(const CameraId& a, const CameraId& b);

/// Intrinsics written by calib-intrinsics. Throws InputError naming the file
/// when the stage has not run.
geom::CameraModel load_intrinsics(const fs::path& dir, const CameraId& camera, const std::string& needed_by);

}  // namespace ocular::pipeline
