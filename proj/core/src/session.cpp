// SPDX-License-Identifier: Apache-2.0
#include "ocular/session.hpp"

#include "ocular/error.hpp"

#include "json.hpp"
#include <png.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

namespace ocular::session {

using nlohmann::json;
using geom::RigidTransform;
using geom::Vec3;

namespace {

const std::vector<std::string>& known_roles() {
  static const std::vector<std::string> roles = {"eye_L0", "eye_L1", "eye_R0", "eye_R1", "scene"};
  return roles;
}

// Field access with a JSON-path-like trail for error messages.
struct Cursor {
  const json& j;
  std::string path;

  Cursor at(const std::string& key) const {
    if (!j.is_object()) throw FormatError(path + ": expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw FormatError(path + "." + key + ": missing");
    return Cursor{*it, path + "." + key};
  }
  Cursor at(std::size_t i) const { return Cursor{j.at(i), path + "[" + std::to_string(i) + "]"}; }
  bool has(const std::string& key) const { return j.is_object() && j.contains(key); }

  template <typename T>
  T as() const {
    try {
      return j.get<T>();
    } catch (const json::exception&) {
      throw FormatError(path + ": wrong type");
    }
  }
  double num() const {
    if (!j.is_number()) throw FormatError(path + ": expected a number");
    return j.get<double>();
  }
  std::string str() const {
    if (!j.is_string()) throw FormatError(path + ": expected a string");
    return j.get<std::string>();
  }
  const json& array() const {
    if (!j.is_array()) throw FormatError(path + ": expected an array");
    return j;
  }
  Vec3 vec3() const {
    if (!j.is_array() || j.size() != 3) throw FormatError(path + ": expected 3 numbers");
    return Vec3(at(0).num(), at(1).num(), at(2).num());
  }
};

json parse(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(where + ": " + e.what());
  }
}

json vec_json(const Vec3& v) { return json::array({round12(v.x()), round12(v.y()), round12(v.z())}); }

json clock_json(const sync::ClockModel& c) {
  return json{{"offset_us", c.offset_us},
              {"skew", c.skew},
              {"fit_residual_us", c.fit_residual_us},
              {"sample_count", c.sample_count}};
}

sync::ClockModel clock_from(const Cursor& c) {
  sync::ClockModel m;
  m.offset_us = c.at("offset_us").num();
  m.skew = c.at("skew").num();
  m.fit_residual_us = c.at("fit_residual_us").num();
  m.sample_count = c.at("sample_count").as<std::size_t>();
  return m;
}

json board_json(const geom::CheckerboardSpec& b) {
  return json{{"inner_rows", b.inner_rows}, {"inner_cols", b.inner_cols}, {"square_mm", round12(b.square_mm)}};
}

json captures_json(const Captures& c) {
  json boards = json::object();
  for (const auto& [name, b] : c.boards) boards[name] = board_json(b);
  json intr = json::array();
  for (const auto& i : c.intrinsics) intr.push_back({{"camera", i.camera}, {"board", i.board}, {"frames", i.frames}});
  json st = json::array();
  for (const auto& s : c.stereo) {
    st.push_back({{"cameras", {s.camera_a, s.camera_b}}, {"board", s.board}, {"frames", s.frames}});
  }
  json mi = json::array();
  for (const auto& m : c.mirrors) {
    mi.push_back({{"kind", to_string(m.kind)},
                  {"board", m.board},
                  {"offset_mm", round12(m.offset_mm)},
                  {"frame", m.frame},
                  {"observers", m.observers}});
  }
  return json{{"boards", boards}, {"intrinsics", intr}, {"stereo", st}, {"mirrors", mi}, {"eye_frames", c.eye_frames}};
}

Captures captures_from(const Cursor& c) {
  Captures out;
  const Cursor boards = c.at("boards");
  if (!boards.j.is_object()) throw FormatError(boards.path + ": expected an object");
  for (auto it = boards.j.begin(); it != boards.j.end(); ++it) {
    const Cursor b = boards.at(it.key());
    geom::CheckerboardSpec spec{b.at("inner_rows").as<int>(), b.at("inner_cols").as<int>(), b.at("square_mm").num()};
    try {
      spec.validate();
    } catch (const Error& e) {
      throw FormatError(b.path + ": " + e.what());
    }
    out.boards[it.key()] = spec;
  }
  auto board_name = [&](const Cursor& x) {
    std::string name = x.str();
    if (!out.boards.contains(name)) throw FormatError(x.path + ": unknown board '" + name + "'");
    return name;
  };
  const Cursor intr = c.at("intrinsics");
  for (std::size_t i = 0; i < intr.array().size(); ++i) {
    const Cursor e = intr.at(i);
    out.intrinsics.push_back(
        {e.at("camera").str(), board_name(e.at("board")), e.at("frames").as<std::vector<std::uint32_t>>()});
  }
  const Cursor st = c.at("stereo");
  for (std::size_t i = 0; i < st.array().size(); ++i) {
    const Cursor e = st.at(i);
    const auto cams = e.at("cameras").as<std::vector<std::string>>();
    if (cams.size() != 2) throw FormatError(e.path + ".cameras: expected 2 camera ids");
    out.stereo.push_back(
        {cams[0], cams[1], board_name(e.at("board")), e.at("frames").as<std::vector<std::uint32_t>>()});
  }
  const Cursor mi = c.at("mirrors");
  for (std::size_t i = 0; i < mi.array().size(); ++i) {
    const Cursor e = mi.at(i);
    MirrorCaptureRef m;
    try {
      m.kind = mirror_kind_from_string(e.at("kind").str());
    } catch (const InputError& err) {
      throw FormatError(e.path + ".kind: " + err.what());
    }
    m.board = board_name(e.at("board"));
    m.offset_mm = e.at("offset_mm").num();
    m.frame = e.at("frame").as<std::uint32_t>();
    m.observers = e.at("observers").as<std::vector<std::string>>();
    out.mirrors.push_back(std::move(m));
  }
  if (c.has("eye_frames")) out.eye_frames = c.at("eye_frames").as<std::vector<std::uint32_t>>();
  return out;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::size_t parse_pgm_header(std::istream& in, int& w, int& h, const std::string& where) {
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  if (token() != "P5") throw FormatError(where + ": not a binary PGM");
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    if (std::stoi(token()) != 255) throw FormatError(where + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw FormatError(where + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0) throw FormatError(where + ": bad PGM size");
  return static_cast<std::size_t>(in.tellg());
}

}  // namespace

double round12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return std::strtod(buf, nullptr);
}

// --- manifest -------------------------------------------------------------------

CameraId camera_for_role(const std::string& role) { return role.rfind("eye_", 0) == 0 ? role.substr(4) : role; }

std::string role_for_camera(const CameraId& camera) { return camera == "scene" ? camera : "eye_" + camera; }

bool is_known_role(const std::string& role) {
  const auto& r = known_roles();
  return std::find(r.begin(), r.end(), role) != r.end();
}

const char* to_string(MirrorKind kind) {
  switch (kind) {
    case MirrorKind::leds: return "leds";
    case MirrorKind::scene_position: return "scene_position";
    case MirrorKind::scene_orientation: return "scene_orientation";
  }
  return "unknown";
}

MirrorKind mirror_kind_from_string(const std::string& name) {
  if (name == "leds") return MirrorKind::leds;
  if (name == "scene_position") return MirrorKind::scene_position;
  if (name == "scene_orientation") return MirrorKind::scene_orientation;
  throw InputError("unknown mirror capture kind '" + name + "'");
}

void SessionManifest::validate() const {
  std::set<int> ids;
  std::set<std::string> roles;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    const StreamInfo& s = streams[i];
    const std::string where = "streams[" + std::to_string(i) + "]";
    if (s.id < 0 || s.id > 255) throw FormatError(where + ".id: outside 0..255");
    if (!ids.insert(s.id).second) throw FormatError(where + ".id: duplicate stream id " + std::to_string(s.id));
    if (!is_known_role(s.role)) throw FormatError(where + ".role: unknown role '" + s.role + "'");
    if (!roles.insert(s.role).second) throw FormatError(where + ".role: duplicate role '" + s.role + "'");
    if (s.width <= 0 || s.height <= 0 || s.width > 65535 || s.height > 65535) {
      throw FormatError(where + ": bad frame size");
    }
    if (!(s.fps_nominal > 0.0)) throw FormatError(where + ".fps_nominal: must be positive");
  }
}

const StreamInfo* SessionManifest::find_stream(int id) const {
  for (const auto& s : streams) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

const StreamInfo* SessionManifest::find_camera(const CameraId& camera) const {
  for (const auto& s : streams) {
    if (camera_for_role(s.role) == camera) return &s;
  }
  return nullptr;
}

const StreamInfo& SessionManifest::stream_for_camera(const CameraId& camera) const {
  const StreamInfo* s = find_camera(camera);
  if (!s) throw InputError("session has no stream for camera '" + camera + "'");
  return *s;
}

std::string manifest_to_json(const SessionManifest& m) {
  json streams = json::array();
  for (const auto& s : m.streams) {
    json js{{"id", s.id}, {"role", s.role}, {"width", s.width}, {"height", s.height}, {"fps_nominal", s.fps_nominal}};
    if (s.clock_model) js["clock_model"] = clock_json(*s.clock_model);
    if (s.degraded) {
      js["degraded"] = true;
      js["degraded_reason"] = s.degraded_reason;
    }
    streams.push_back(std::move(js));
  }
  json j{{"session_id", m.session_id}, {"created_utc", m.created_utc}, {"streams", streams}};
  if (m.drop_report) {
    json dr = json::object();
    for (const auto& [id, d] : m.drop_report->streams) {
      dr[std::to_string(id)] = {{"missing_group_ts", d.missing_group_ts}, {"coverage", d.coverage}};
    }
    j["drop_report"] = {{"streams", dr}};
  }
  if (m.calibration_ref) j["calibration_ref"] = *m.calibration_ref;
  if (m.captures) j["captures"] = captures_json(*m.captures);
  return dump(j);
}

SessionManifest manifest_from_json(const std::string& text, const std::string& where) {
  const json j = parse(text, where);
  const Cursor c{j, where};
  SessionManifest m;
  m.session_id = c.at("session_id").str();
  m.created_utc = c.at("created_utc").str();
  const Cursor streams = c.at("streams");
  for (std::size_t i = 0; i < streams.array().size(); ++i) {
    const Cursor s = streams.at(i);
    StreamInfo info;
    info.id = s.at("id").as<int>();
    info.role = s.at("role").str();
    info.width = s.at("width").as<int>();
    info.height = s.at("height").as<int>();
    info.fps_nominal = s.at("fps_nominal").num();
    if (s.has("clock_model")) info.clock_model = clock_from(s.at("clock_model"));
    if (s.has("degraded")) info.degraded = s.at("degraded").as<bool>();
    if (s.has("degraded_reason")) info.degraded_reason = s.at("degraded_reason").str();
    m.streams.push_back(std::move(info));
  }
  if (c.has("drop_report")) {
    const Cursor dr = c.at("drop_report").at("streams");
    sync::DropReport rep;
    for (auto it = dr.j.begin(); it != dr.j.end(); ++it) {
      const Cursor e = dr.at(it.key());
      int id = 0;
      const auto& k = it.key();
      if (std::from_chars(k.data(), k.data() + k.size(), id).ec != std::errc()) {
        throw FormatError(e.path + ": stream key is not an integer");
      }
      rep.streams[id] = {e.at("missing_group_ts").as<std::vector<std::int64_t>>(), e.at("coverage").num()};
    }
    m.drop_report = std::move(rep);
  }
  if (c.has("calibration_ref")) m.calibration_ref = c.at("calibration_ref").str();
  if (c.has("captures")) m.captures = captures_from(c.at("captures"));
  try {
    m.validate();
  } catch (const FormatError& e) {
    throw FormatError(where + ": " + e.what());
  }
  return m;
}

// --- labels ----------------------------------------------------------------------

LabelClass LabelClass::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string p;
  while (std::getline(ss, p, ':')) parts.push_back(p);
  auto integer = [&](const std::string& s, int lo, int hi) {
    int v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || v < lo || v > hi) {
      throw InputError("class '" + text + "' is not in the label vocabulary");
    }
    return v;
  };
  LabelClass c;
  if (parts.size() == 3 && parts[0] == "glint" && (parts[1] == "L" || parts[1] == "R")) {
    c.kind = Kind::glint;
    c.led = calib::LedId{parts[1], integer(parts[2], 0, kLedsPerEye - 1)};
    return c;
  }
  if (parts.size() == 2 && parts[0] == "marker" && parts[1] == "scene_back") {
    c.kind = Kind::scene_marker;
    return c;
  }
  if (parts.size() == 3 && parts[0] == "marker" && parts[1] == "cam" && is_known_role(role_for_camera(parts[2]))) {
    c.kind = Kind::camera_marker;
    c.camera = parts[2];
    return c;
  }
  if (parts.size() == 3 && parts[0] == "corner") {
    c.kind = Kind::corner;
    c.row = integer(parts[1], 0, 999);
    c.col = integer(parts[2], 0, 999);
    return c;
  }
  throw InputError("class '" + text + "' is not in the label vocabulary");
}

std::string LabelClass::str() const {
  switch (kind) {
    case Kind::glint: return "glint:" + led.eye + ":" + std::to_string(led.index);
    case Kind::scene_marker: return "marker:scene_back";
    case Kind::camera_marker: return "marker:cam:" + camera;
    case Kind::corner: return "corner:" + std::to_string(row) + ":" + std::to_string(col);
  }
  return {};
}

std::string labels_to_json(const std::vector<LabelRecord>& labels) {
  json arr = json::array();
  for (const auto& l : labels) {
    json j{{"stream_id", l.stream_id},
           {"frame_index", l.frame_index},
           {"class", l.cls},
           {"x_px", round12(l.x_px)},
           {"y_px", round12(l.y_px)},
           {"labeler", l.labeler},
           {"ts_utc", l.ts_utc}};
    if (l.revision > 0) j["revision"] = l.revision;
    arr.push_back(std::move(j));
  }
  return dump(arr);
}

std::vector<LabelRecord> labels_from_json(const std::string& text, const std::string& where) {
  const json j = parse(text, where);
  const Cursor c{j, where};
  std::vector<LabelRecord> out;
  for (std::size_t i = 0; i < c.array().size(); ++i) {
    const Cursor e = c.at(i);
    LabelRecord r;
    r.stream_id = e.at("stream_id").as<int>();
    r.frame_index = e.at("frame_index").as<std::uint32_t>();
    r.cls = e.at("class").str();
    try {
      LabelClass::parse(r.cls);
    } catch (const InputError& err) {
      throw FormatError(e.path + ".class: " + err.what());
    }
    r.x_px = e.at("x_px").num();
    r.y_px = e.at("y_px").num();
    r.labeler = e.has("labeler") ? e.at("labeler").str() : std::string();
    r.ts_utc = e.has("ts_utc") ? e.at("ts_utc").str() : std::string();
    if (e.has("revision")) r.revision = e.at("revision").as<int>();
    out.push_back(std::move(r));
  }
  return out;
}

// --- calibration ---------------------------------------------------------------------

std::string calibration_to_json(const calib::RigCalibration& rig) {
  json cams = json::object();
  for (const auto& [id, cam] : rig.cameras) {
    json dist = json::array();
    for (double d : cam.model.dist) dist.push_back(round12(d));
    const auto& q = cam.pose.rotation();
    cams[id] = {{"model_kind", geom::to_string(cam.model.kind)},
                {"fx", round12(cam.model.fx)},
                {"fy", round12(cam.model.fy)},
                {"cx", round12(cam.model.cx)},
                {"cy", round12(cam.model.cy)},
                {"dist", dist},
                {"width", cam.model.width},
                {"height", cam.model.height},
                {"pose",
                 {{"q", {round12(q.w()), round12(q.x()), round12(q.y()), round12(q.z())}},
                  {"t_mm", vec_json(cam.pose.translation())}}}};
  }
  json leds = json::object();
  for (const auto& [eye, of_eye] : rig.leds) {
    json e = json::object();
    for (const auto& [idx, p] : of_eye) e[std::to_string(idx)] = vec_json(p);
    leds[eye] = e;
  }
  json j{{"root_camera", rig.root_camera},
         {"cameras", cams},
         {"leds", leds},
         {"meta", {{"wavelength_nm", round12(rig.wavelength_nm)}, {"fps_nominal", round12(rig.fps_nominal)}}}};
  return dump(j);
}

calib::RigCalibration calibration_from_json(const std::string& text, const std::string& where) {
  const json j = parse(text, where);
  const Cursor c{j, where};
  calib::RigCalibration rig;
  rig.root_camera = c.at("root_camera").str();
  const Cursor cams = c.at("cameras");
  if (!cams.j.is_object()) throw FormatError(cams.path + ": expected an object");
  for (auto it = cams.j.begin(); it != cams.j.end(); ++it) {
    const Cursor e = cams.at(it.key());
    calib::CalibratedCamera cam;
    try {
      cam.model = geom::make_camera(geom::model_kind_from_string(e.at("model_kind").str()), e.at("fx").num(),
                                    e.at("fy").num(), e.at("cx").num(), e.at("cy").num(),
                                    e.at("dist").as<std::vector<double>>(), e.at("width").as<int>(),
                                    e.at("height").as<int>());
    } catch (const InputError& err) {
      throw FormatError(e.path + ": " + err.what());
    }
    const Cursor q = e.at("pose").at("q");
    if (!q.j.is_array() || q.j.size() != 4) throw FormatError(q.path + ": expected 4 numbers");
    Eigen::Quaterniond quat(q.at(0).num(), q.at(1).num(), q.at(2).num(), q.at(3).num());
    if (std::abs(quat.norm() - 1.0) > 1e-6) throw FormatError(q.path + ": not a unit quaternion");
    quat.normalize();
    cam.pose = RigidTransform(quat, e.at("pose").at("t_mm").vec3(), rig.root_camera, it.key());
    rig.cameras[it.key()] = std::move(cam);
  }
  const Cursor leds = c.at("leds");
  for (auto it = leds.j.begin(); it != leds.j.end(); ++it) {
    const Cursor e = leds.at(it.key());
    for (auto jt = e.j.begin(); jt != e.j.end(); ++jt) {
      int idx = 0;
      const auto& k = jt.key();
      if (std::from_chars(k.data(), k.data() + k.size(), idx).ec != std::errc()) {
        throw FormatError(e.path + "." + k + ": LED id is not an integer");
      }
      rig.leds[it.key()][idx] = e.at(k).vec3();
    }
  }
  if (c.has("meta")) {
    const Cursor meta = c.at("meta");
    if (meta.has("wavelength_nm")) rig.wavelength_nm = meta.at("wavelength_nm").num();
    if (meta.has("fps_nominal")) rig.fps_nominal = meta.at("fps_nominal").num();
  }
  try {
    rig.validate();
  } catch (const InputError& e) {
    throw FormatError(where + ": " + e.what());
  }
  return rig;
}

// --- images --------------------------------------------------------------------------

void write_pgm(const fs::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Image read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": missing frame file");
  Image img;
  parse_pgm_header(in, img.width, img.height, path.string());
  img.pixels.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  return img;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        auto* v = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        v->insert(v->end(), data, data + n);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(y) * image.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

// --- files ----------------------------------------------------------------------------

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot replace " + path.string() + ": " + ec.message());
  }
}

// --- index and session -----------------------------------------------------------------

std::string index_header() { return "frame_index,device_ts_us,host_ts_us,file"; }

std::string index_row(const IndexRow& r) {
  return std::to_string(r.frame_index) + "," + std::to_string(r.device_ts_us) + "," + std::to_string(r.host_ts_us) +
         "," + r.file;
}

std::vector<IndexRow> read_index(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": missing index");
  std::string line;
  if (!std::getline(in, line) || line != index_header()) {
    throw FormatError(path.string() + ": header must be '" + index_header() + "'");
  }
  std::vector<IndexRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 4) throw FormatError(where + ": expected 4 columns");
    IndexRow r;
    auto num = [&](const std::string& s, auto& out) {
      auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      if (ec != std::errc() || end != s.data() + s.size()) throw FormatError(where + ": bad number '" + s + "'");
    };
    num(f[0], r.frame_index);
    num(f[1], r.device_ts_us);
    num(f[2], r.host_ts_us);
    r.file = f[3];
    if (r.file.empty() || r.file.find("..") != std::string::npos || r.file.front() == '/') {
      throw FormatError(where + ": bad file reference '" + r.file + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

fs::path stream_dir(const fs::path& session, int stream_id) { return session / "streams" / std::to_string(stream_id); }

std::string frame_file_name(std::uint32_t frame_index, bool raw) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frames/%06u.%s", frame_index, raw ? "pgm" : "bin");
  return buf;
}

ValidationReport validate_session(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError(dir.string() + ": not a directory");
  const fs::path mpath = dir / kManifestFile;
  if (!fs::exists(mpath)) throw FormatError(mpath.string() + ": missing");
  const SessionManifest m = manifest_from_json(read_text(mpath), mpath.string());

  ValidationReport rep;
  for (const StreamInfo& s : m.streams) {
    const fs::path sdir = stream_dir(dir, s.id);
    const fs::path ipath = sdir / "index.csv";
    const std::vector<IndexRow> rows = read_index(ipath);
    std::set<std::string> listed;
    const IndexRow* prev = nullptr;
    for (const IndexRow& r : rows) {
      const fs::path f = sdir / r.file;
      if (prev && r.frame_index <= prev->frame_index) {
        throw FormatError(ipath.string() + ": frame_index " + std::to_string(r.frame_index) + " not increasing");
      }
      if (prev && r.device_ts_us <= prev->device_ts_us) {
        throw FormatError(ipath.string() + ": device_ts_us not increasing at frame " + std::to_string(r.frame_index));
      }
      if (!fs::exists(f)) throw FormatError(f.string() + ": missing frame file");
      if (f.extension() == ".pgm") {
        std::ifstream in(f, std::ios::binary);
        int w = 0, h = 0;
        const std::size_t header = parse_pgm_header(in, w, h, f.string());
        if (w != s.width || h != s.height) {
          throw FormatError(f.string() + ": frame is " + std::to_string(w) + "x" + std::to_string(h) +
                            ", stream declares " + std::to_string(s.width) + "x" + std::to_string(s.height));
        }
        if (fs::file_size(f) != header + static_cast<std::size_t>(w) * static_cast<std::size_t>(h)) {
          throw FormatError(f.string() + ": payload size does not match " + std::to_string(w) + "x" +
                            std::to_string(h));
        }
      }
      listed.insert(fs::path(r.file).lexically_normal().string());
      prev = &r;
    }
    const fs::path fdir = sdir / "frames";
    if (fs::is_directory(fdir)) {
      for (const auto& e : fs::directory_iterator(fdir)) {
        const std::string rel = fs::path("frames" / e.path().filename()).string();
        if (!listed.contains(rel)) throw FormatError(e.path().string() + ": frame file not in index");
      }
    }
    rep.frames[s.id] = rows.size();
  }

  const fs::path lpath = dir / kLabelsFile;
  if (fs::exists(lpath)) {
    const auto labels = labels_from_json(read_text(lpath), lpath.string());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!m.find_stream(labels[i].stream_id)) {
        throw FormatError(lpath.string() + "[" + std::to_string(i) + "].stream_id: unknown stream " +
                          std::to_string(labels[i].stream_id));
      }
    }
    rep.labels = labels.size();
  }
  const fs::path cpath = dir / kCalibrationFile;
  if (fs::exists(cpath)) {
    calibration_from_json(read_text(cpath), cpath.string());
    rep.has_calibration = true;
  }
  return rep;
}

Session Session::load(const fs::path& dir) {
  const fs::path mpath = dir / kManifestFile;
  if (!fs::exists(mpath)) throw FormatError(mpath.string() + ": missing");
  Session s;
  s.dir_ = dir;
  s.manifest_ = manifest_from_json(read_text(mpath), mpath.string());
  for (const StreamInfo& st : s.manifest_.streams) {
    s.index_[st.id] = read_index(stream_dir(dir, st.id) / "index.csv");
  }
  return s;
}

const std::vector<IndexRow>& Session::index(int stream_id) const {
  auto it = index_.find(stream_id);
  if (it == index_.end()) throw InputError("unknown stream " + std::to_string(stream_id));
  return it->second;
}

const IndexRow* Session::find_frame(int stream_id, std::uint32_t frame_index) const {
  const auto& rows = index(stream_id);
  auto it = std::lower_bound(rows.begin(), rows.end(), frame_index,
                             [](const IndexRow& r, std::uint32_t v) { return r.frame_index < v; });
  return it != rows.end() && it->frame_index == frame_index ? &*it : nullptr;
}

Image Session::frame(int stream_id, std::uint32_t frame_index) const {
  const IndexRow* r = find_frame(stream_id, frame_index);
  if (!r) {
    throw InputError("stream " + std::to_string(stream_id) + " has no frame " + std::to_string(frame_index));
  }
  return read_pgm(stream_dir(dir_, stream_id) / r->file);
}

std::vector<LabelRecord> Session::labels() const {
  const fs::path p = dir_ / kLabelsFile;
  if (!fs::exists(p)) return {};
  return labels_from_json(read_text(p), p.string());
}

std::optional<calib::RigCalibration> Session::calibration() const {
  const fs::path p = dir_ / kCalibrationFile;
  if (!fs::exists(p)) return std::nullopt;
  return calibration_from_json(read_text(p), p.string());
}

std::vector<sync::FrameMeta> Session::frame_meta(int stream_id) const {
  std::vector<sync::FrameMeta> out;
  for (const IndexRow& r : index(stream_id)) out.push_back({stream_id, r.frame_index, r.device_ts_us, r.host_ts_us});
  return out;
}

}  // namespace ocular::session
