// SPDX-License-Identifier: Apache-2.0
//
// On-disk session layout and the JSON interchange formats.
//
//   <dir>/manifest.json
//   <dir>/labels.json
//   <dir>/calibration.json        (optional, written by compose-world)
//   <dir>/truth.json              (optional, synthetic sessions only)
//   <dir>/streams/<id>/index.csv  frame_index,device_ts_us,host_ts_us,file
//   <dir>/streams/<id>/frames/%06u.pgm
//
// A session directory is self-describing: nothing outside it is needed to
// load or validate it.
#pragma once

#include "ocular/calib.hpp"
#include "ocular/sync.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ocular::session {

namespace fs = std::filesystem;
using calib::CameraId;

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kLabelsFile = "labels.json";
inline constexpr const char* kCalibrationFile = "calibration.json";
inline constexpr const char* kTruthFile = "truth.json";

// --- manifest ---------------------------------------------------------------

struct StreamInfo {
  int id = 0;
  std::string role;  // eye_L0, eye_L1, eye_R0, eye_R1, scene
  int width = 0;
  int height = 0;
  double fps_nominal = 45.0;
  std::optional<sync::ClockModel> clock_model;
  bool degraded = false;
  std::string degraded_reason;
};

/// Camera id used by calibration for a stream role ("eye_L0" -> "L0").
CameraId camera_for_role(const std::string& role);
std::string role_for_camera(const CameraId& camera);
bool is_known_role(const std::string& role);

enum class MirrorKind { leds, scene_position, scene_orientation };
const char* to_string(MirrorKind kind);
MirrorKind mirror_kind_from_string(const std::string& name);

struct IntrinsicsCapture {
  CameraId camera;
  std::string board;
  std::vector<std::uint32_t> frames;
};

/// Frame indices shared by both streams: the board was seen by both at once.
struct StereoCapture {
  CameraId camera_a;
  CameraId camera_b;
  std::string board;
  std::vector<std::uint32_t> frames;
};

struct MirrorCaptureRef {
  MirrorKind kind = MirrorKind::leds;
  std::string board;
  double offset_mm = 0.0;
  std::uint32_t frame = 0;
  std::vector<CameraId> observers;
};

/// Which frames hold which calibration capture. Labels for these frames
/// live in labels.json.
struct Captures {
  std::map<std::string, geom::CheckerboardSpec> boards;
  std::vector<IntrinsicsCapture> intrinsics;
  std::vector<StereoCapture> stereo;
  std::vector<MirrorCaptureRef> mirrors;
  std::vector<std::uint32_t> eye_frames;  // gaze recording segment
};

struct SessionManifest {
  std::string session_id;
  std::string created_utc;
  std::vector<StreamInfo> streams;
  std::optional<sync::DropReport> drop_report;
  std::optional<std::string> calibration_ref;
  std::optional<Captures> captures;

  /// Throws FormatError on duplicate stream ids or roles and unknown roles.
  void validate() const;
  const StreamInfo* find_stream(int id) const;
  const StreamInfo* find_camera(const CameraId& camera) const;
  const StreamInfo& stream_for_camera(const CameraId& camera) const;
};

std::string manifest_to_json(const SessionManifest& m);
/// `where` names the source in error messages.
SessionManifest manifest_from_json(const std::string& text, const std::string& where);

// --- labels -----------------------------------------------------------------

struct LabelRecord {
  int stream_id = 0;
  std::uint32_t frame_index = 0;
  std::string cls;
  double x_px = 0.0;
  double y_px = 0.0;
  std::string labeler;
  std::string ts_utc;
  int revision = 0;  // server-assigned; 0 means never stored through the service
};

/// Parsed label class.
struct LabelClass {
  enum class Kind { glint, scene_marker, camera_marker, corner };
  Kind kind = Kind::glint;
  calib::LedId led;
  CameraId camera;
  int row = 0;
  int col = 0;

  /// Vocabulary: glint:<eye>:<led 0..3>, marker:scene_back,
  /// marker:cam:<camera>, corner:<row>:<col>. Throws InputError.
  static LabelClass parse(const std::string& text);
  std::string str() const;
};

inline constexpr int kLedsPerEye = 4;

std::string labels_to_json(const std::vector<LabelRecord>& labels);
std::vector<LabelRecord> labels_from_json(const std::string& text, const std::string& where);

// --- calibration --------------------------------------------------------------

std::string calibration_to_json(const calib::RigCalibration& rig);
calib::RigCalibration calibration_from_json(const std::string& text, const std::string& where);

/// JSON number text with 12 significant digits, the precision used by every
/// file this project writes.
double round12(double v);

// --- images -------------------------------------------------------------------

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major 8-bit gray
};

void write_pgm(const fs::path& path, const Image& image);
/// Binary P5 with maxval 255 only. Throws FormatError.
Image read_pgm(const fs::path& path);
std::vector<std::uint8_t> encode_png(const Image& image);

// --- files --------------------------------------------------------------------

std::string read_text(const fs::path& path);
/// Write to a temporary sibling and rename over the target.
void write_atomic(const fs::path& path, const std::string& content);

// --- session handle ----------------------------------------------------------

struct IndexRow {
  std::uint32_t frame_index = 0;
  std::uint64_t device_ts_us = 0;
  std::int64_t host_ts_us = 0;
  std::string file;  // relative to the stream directory
};

std::string index_header();
std::string index_row(const IndexRow& row);
std::vector<IndexRow> read_index(const fs::path& path);

fs::path stream_dir(const fs::path& session, int stream_id);
std::string frame_file_name(std::uint32_t frame_index, bool raw = true);

struct ValidationReport {
  std::map<int, std::size_t> frames;  // stream -> frame count
  std::size_t labels = 0;
  bool has_calibration = false;
};

/// Checks manifest schema, index/file agreement, per-stream timestamp
/// monotonicity and payload sizes. Throws FormatError naming the offending path.
ValidationReport validate_session(const fs::path& dir);

class Session {
 public:
  /// Reads the manifest and every index; validation is separate.
  static Session load(const fs::path& dir);

  const fs::path& dir() const { return dir_; }
  const SessionManifest& manifest() const { return manifest_; }
  const std::vector<IndexRow>& index(int stream_id) const;
  const IndexRow* find_frame(int stream_id, std::uint32_t frame_index) const;
  Image frame(int stream_id, std::uint32_t frame_index) const;
  /// Empty when labels.json is absent.
  std::vector<LabelRecord> labels() const;
  std::optional<calib::RigCalibration> calibration() const;
  /// Frame metadata of a stream as used by the clock fit.
  std::vector<sync::FrameMeta> frame_meta(int stream_id) const;

 private:
  fs::path dir_;
  SessionManifest manifest_;
  std::map<int, std::vector<IndexRow>> index_;
};

}  // namespace ocular::session
