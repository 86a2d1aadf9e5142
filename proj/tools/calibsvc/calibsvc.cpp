// SPDX-License-Identifier: Apache-2.0
#include "calibsvc.hpp"

#include "ocular/error.hpp"
#include "ocular/pipeline.hpp"
#include "ocular/session.hpp"

#include "httplib.h"
#include "json.hpp"

#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace ocular::calibsvc {

namespace fs = std::filesystem;
using nlohmann::json;
using session::LabelRecord;

namespace {

struct HttpError {
  int status;
  std::string message;
  std::string path;  // field path for schema errors
};

struct Job {
  std::string id;
  std::string session;
  std::string kind;
  std::map<std::string, std::string> params;
  std::string state = "queued";
  std::string result_ref;
  std::string error;
};

json job_json(const Job& j) {
  json out{{"job_id", j.id}, {"session", j.session}, {"kind", j.kind}, {"state", j.state}};
  if (!j.result_ref.empty()) out["result_ref"] = j.result_ref;
  if (!j.error.empty()) out["error"] = j.error;
  return out;
}

json label_json(const LabelRecord& l) {
  return json{{"stream_id", l.stream_id}, {"frame_index", l.frame_index}, {"class", l.cls},
              {"x_px", l.x_px},           {"y_px", l.y_px},               {"labeler", l.labeler},
              {"ts_utc", l.ts_utc},       {"revision", l.revision}};
}

void reply_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", "application/json");
}

void reply_error(httplib::Response& res, const HttpError& e) {
  json body{{"error", e.message}};
  if (!e.path.empty()) body["path"] = e.path;
  reply_json(res, body, e.status);
}

// Strict parse of one label from a PUT body; `where` is the JSON path.
LabelRecord parse_label(const json& j, const std::string& where, const session::SessionManifest& m) {
  if (!j.is_object()) throw HttpError{400, "label must be an object", where};
  auto field = [&](const char* key) -> const json& {
    auto it = j.find(key);
    if (it == j.end()) throw HttpError{400, std::string("missing field ") + key, where + "." + key};
    return *it;
  };
  LabelRecord r;
  const json& sid = field("stream_id");
  if (!sid.is_number_integer()) throw HttpError{400, "stream_id must be an integer", where + ".stream_id"};
  r.stream_id = sid.get<int>();
  if (!m.find_stream(r.stream_id)) {
    throw HttpError{400, "unknown stream " + std::to_string(r.stream_id), where + ".stream_id"};
  }
  const json& fi = field("frame_index");
  if (!fi.is_number_unsigned()) throw HttpError{400, "frame_index must be a non-negative integer", where + ".frame_index"};
  r.frame_index = fi.get<std::uint32_t>();
  const json& cls = field("class");
  if (!cls.is_string()) throw HttpError{400, "class must be a string", where + ".class"};
  r.cls = cls.get<std::string>();
  try {
    session::LabelClass::parse(r.cls);
  } catch (const InputError& e) {
    throw HttpError{400, e.what(), where + ".class"};
  }
  for (const char* k : {"x_px", "y_px"}) {
    const json& v = field(k);
    if (!v.is_number()) throw HttpError{400, std::string(k) + " must be a number", where + "." + k};
  }
  r.x_px = j["x_px"].get<double>();
  r.y_px = j["y_px"].get<double>();
  for (const char* k : {"labeler", "ts_utc"}) {
    auto it = j.find(k);
    if (it != j.end() && !it->is_string()) throw HttpError{400, std::string(k) + " must be a string", where + "." + k};
  }
  r.labeler = j.value("labeler", "");
  r.ts_utc = j.value("ts_utc", "");
  return r;
}

}  // namespace

struct Service::Impl {
  ServiceOptions opt;
  httplib::Server server;
  std::thread http_thread;
  int port = 0;

  std::mutex labels_mu;  // serializes label writes (all sessions; writes are short)

  std::mutex jobs_mu;
  std::condition_variable jobs_cv;
  std::map<std::string, Job> jobs;
  std::deque<std::string> queue;
  std::map<std::string, std::string> active;  // session -> job id
  std::size_t next_job = 1;
  bool stopping = false;
  std::thread runner;

  explicit Impl(ServiceOptions o) : opt(std::move(o)) {}

  fs::path session_dir(const std::string& id) const {
    if (id.empty() || id == "." || id == ".." || id.find('/') != std::string::npos) {
      throw HttpError{404, "unknown session '" + id + "'", ""};
    }
    const fs::path d = opt.root / id;
    if (!fs::exists(d / session::kManifestFile)) throw HttpError{404, "unknown session '" + id + "'", ""};
    return d;
  }

  template <typename F>
  auto guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        reply_error(res, e);
      } catch (const FormatError& e) {
        reply_error(res, {500, e.kind() + ": " + e.what(), ""});
      } catch (const Error& e) {
        reply_error(res, {400, e.kind() + ": " + e.what(), ""});
      } catch (const std::exception& e) {
        reply_error(res, {500, e.what(), ""});
      }
    };
  }

  void routes() {
    server.Get("/api/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      std::vector<fs::path> dirs;
      if (fs::is_directory(opt.root)) {
        for (const auto& e : fs::directory_iterator(opt.root)) {
          if (e.is_directory() && fs::exists(e.path() / session::kManifestFile)) dirs.push_back(e.path());
        }
      }
      std::sort(dirs.begin(), dirs.end());
      for (const auto& d : dirs) {
        out.push_back({{"id", d.filename().string()},
                       {"manifest", json::parse(session::read_text(d / session::kManifestFile))}});
      }
      reply_json(res, out);
    }));

    server.Get(R"(/api/sessions/([^/]+)/streams/(\d+)/frames/(\d+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const fs::path dir = session_dir(req.matches[1]);
                 const session::Session s = session::Session::load(dir);
                 const int sid = std::stoi(req.matches[2]);
                 const auto n = static_cast<std::uint32_t>(std::stoul(req.matches[3]));
                 if (!s.manifest().find_stream(sid)) throw HttpError{404, "unknown stream " + std::to_string(sid), ""};
                 if (!s.find_frame(sid, n)) throw HttpError{404, "unknown frame " + std::to_string(n), ""};
                 const auto png = session::encode_png(s.frame(sid, n));
                 res.set_content(std::string(png.begin(), png.end()), "image/png");
               }));

    server.Get(R"(/api/sessions/([^/]+)/labels)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const fs::path dir = session_dir(req.matches[1]);
                 std::lock_guard lock(labels_mu);
                 json out = json::array();
                 for (const auto& l : session::Session::load(dir).labels()) out.push_back(label_json(l));
                 reply_json(res, out);
               }));

    server.Put(R"(/api/sessions/([^/]+)/labels)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const fs::path dir = session_dir(req.matches[1]);
                 json body;
                 try {
                   body = json::parse(req.body);
                 } catch (const json::parse_error& e) {
                   throw HttpError{400, std::string("malformed JSON: ") + e.what(), ""};
                 }
                 if (!body.is_array()) throw HttpError{400, "expected an array of labels", "$"};
                 std::lock_guard lock(labels_mu);
                 const session::Session s = session::Session::load(dir);
                 // Validate the whole batch before touching anything.
                 std::vector<LabelRecord> batch;
                 for (std::size_t i = 0; i < body.size(); ++i) {
                   batch.push_back(parse_label(body[i], "$[" + std::to_string(i) + "]", s.manifest()));
                 }
                 std::vector<LabelRecord> all = s.labels();
                 std::vector<LabelRecord> stored;
                 for (LabelRecord r : batch) {
                   auto it = std::find_if(all.begin(), all.end(), [&](const LabelRecord& x) {
                     return x.stream_id == r.stream_id && x.frame_index == r.frame_index && x.cls == r.cls;
                   });
                   if (it == all.end()) {
                     r.revision = 1;
                     all.push_back(r);
                   } else {
                     r.revision = it->revision + 1;
                     *it = r;
                   }
                   stored.push_back(r);
                 }
                 session::write_atomic(dir / session::kLabelsFile, session::labels_to_json(all));
                 json out = json::array();
                 for (const auto& l : stored) out.push_back(label_json(l));
                 reply_json(res, out);
               }));

    server.Post(R"(/api/sessions/([^/]+)/jobs)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const std::string sid = req.matches[1];
                  session_dir(sid);
                  json body;
                  try {
                    body = json::parse(req.body);
                  } catch (const json::parse_error& e) {
                    throw HttpError{400, std::string("malformed JSON: ") + e.what(), ""};
                  }
                  if (!body.is_object() || !body.contains("kind") || !body["kind"].is_string()) {
                    throw HttpError{400, "kind must be a string", "$.kind"};
                  }
                  Job job;
                  job.session = sid;
                  job.kind = body["kind"].get<std::string>();
                  if (!pipeline::is_calibration_stage(job.kind)) {
                    throw HttpError{400, "unknown job kind '" + job.kind + "'", "$.kind"};
                  }
                  if (body.contains("params")) {
                    if (!body["params"].is_object()) throw HttpError{400, "params must be an object", "$.params"};
                    for (const auto& [k, v] : body["params"].items()) {
                      if (!v.is_string()) throw HttpError{400, "params values must be strings", "$.params." + k};
                      job.params[k] = v.get<std::string>();
                    }
                  }
                  std::lock_guard lock(jobs_mu);
                  if (active.contains(sid)) {
                    throw HttpError{409, "job " + active[sid] + " is already running for session " + sid, ""};
                  }
                  job.id = "job-" + std::to_string(next_job++);
                  active[sid] = job.id;
                  queue.push_back(job.id);
                  jobs[job.id] = job;
                  jobs_cv.notify_one();
                  reply_json(res, job_json(job), 202);
                }));

    server.Get(R"(/api/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 std::lock_guard lock(jobs_mu);
                 auto it = jobs.find(req.matches[1]);
                 if (it == jobs.end()) throw HttpError{404, "unknown job '" + std::string(req.matches[1]) + "'", ""};
                 reply_json(res, job_json(it->second));
               }));

    server.Get(R"(/api/sessions/([^/]+)/calibration)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const fs::path p = session_dir(req.matches[1]) / session::kCalibrationFile;
                 if (!fs::exists(p)) throw HttpError{404, "session has no calibration.json yet", ""};
                 res.set_content(session::read_text(p), "application/json");
               }));

    server.Get(R"(/api/sessions/([^/]+)/overlay/([^/]+)/(\d+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 reply_json(res, overlay(session_dir(req.matches[1]), req.matches[2],
                                         static_cast<std::uint32_t>(std::stoul(req.matches[3]))));
               }));

    if (opt.ui_dir) {
      server.set_mount_point("/", opt.ui_dir->string());
    } else {
      server.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("<!doctype html><title>ocular calibsvc</title><p>No UI bundle configured; the API is under /api.</p>\n",
                        "text/html");
      });
    }
  }

  json overlay(const fs::path& dir, const std::string& camera, std::uint32_t n);

  void run_jobs() {
    for (;;) {
      Job job;
      {
        std::unique_lock lock(jobs_mu);
        jobs_cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        const std::string id = queue.front();
        queue.pop_front();
        jobs[id].state = "running";
        job = jobs[id];
      }
      std::string result, error;
      try {
        const fs::path dir = opt.root / job.session;
        const pipeline::StageOutput out = pipeline::run_stage(dir, job.kind, job.params);
        if (!out.files.empty()) result = out.files.front().string();
      } catch (const Error& e) {
        error = e.kind() + ": " + e.what();
      } catch (const std::exception& e) {
        error = e.what();
      }
      std::lock_guard lock(jobs_mu);
      Job& j = jobs[job.id];
      j.state = error.empty() ? "done" : "failed";
      j.result_ref = result;
      j.error = error;
      active.erase(job.session);
    }
  }
};

json Service::Impl::overlay(const fs::path& dir, const std::string& camera, std::uint32_t n) {
  const session::Session s = session::Session::load(dir);
  const session::StreamInfo* info = s.manifest().find_camera(camera);
  if (!info) throw HttpError{404, "unknown camera '" + camera + "'", ""};
  if (!s.find_frame(info->id, n)) throw HttpError{404, "unknown frame " + std::to_string(n), ""};

  const auto rig = s.calibration();
  geom::CameraModel model;
  if (rig && rig->cameras.contains(camera)) {
    model = rig->camera(camera).model;
  } else if (fs::exists(dir / pipeline::intrinsics_file(camera))) {
    model = pipeline::load_intrinsics(dir, camera, "overlay");
  } else {
    throw HttpError{404, "camera '" + camera + "' is not calibrated yet", ""};
  }

  std::vector<LabelRecord> labels;
  for (const auto& l : s.labels()) {
    if (l.stream_id == info->id && l.frame_index == n) labels.push_back(l);
  }
  std::map<std::string, geom::Vec2> observed;
  for (const auto& l : labels) observed[l.cls] = geom::Vec2(l.x_px, l.y_px);

  // Board and mirror offset used in this frame, if it belongs to a capture.
  std::optional<geom::CheckerboardSpec> board;
  std::optional<double> mirror_offset;
  if (const auto& caps = s.manifest().captures) {
    auto has = [&](const std::vector<std::uint32_t>& v) { return std::find(v.begin(), v.end(), n) != v.end(); };
    for (const auto& c : caps->intrinsics) {
      if (c.camera == camera && has(c.frames)) board = caps->boards.at(c.board);
    }
    for (const auto& c : caps->stereo) {
      if ((c.camera_a == camera || c.camera_b == camera) && has(c.frames)) board = caps->boards.at(c.board);
    }
    for (const auto& c : caps->mirrors) {
      if (c.frame == n && std::find(c.observers.begin(), c.observers.end(), camera) != c.observers.end()) {
        board = caps->boards.at(c.board);
        mirror_offset = c.offset_mm;
      }
    }
  }

  json points = json::array();
  auto add = [&](const std::string& cls, const geom::Vec2& px) {
    json p{{"class", cls}, {"predicted", {px.x(), px.y()}}};
    auto it = observed.find(cls);
    p["observed"] = it == observed.end() ? json(nullptr) : json{it->second.x(), it->second.y()};
    points.push_back(std::move(p));
  };
  auto project = [&](const geom::Vec3& p_cam) -> std::optional<geom::Vec2> {
    try {
      const geom::Vec2 px = geom::project(model, p_cam);
      if (model.contains(px)) return px;
    } catch (const Error&) {
    }
    return std::nullopt;
  };

  std::optional<geom::RigidTransform> board_pose;
  if (board) {
    if (auto v = pipeline::board_view_from_labels(labels, camera, *board, {info->id, n})) {
      std::vector<geom::Vec3> obj;
      std::vector<geom::Vec2> img;
      for (const auto& c : v->correspondences) {
        obj.push_back(c.board);
        img.push_back(c.image);
      }
      try {
        board_pose = calib::solve_pnp(obj, img, model).pose;
      } catch (const Error&) {
      }
    }
  }
  if (board_pose) {
    for (int r = 0; r < board->inner_rows; ++r) {
      for (int c = 0; c < board->inner_cols; ++c) {
        const std::string cls = "corner:" + std::to_string(r) + ":" + std::to_string(c);
        if (auto px = project(board_pose->apply(board->corner(r, c)))) add(cls, *px);
      }
    }
  }
  // Entities of the calibrated rig, seen directly or through the mirror.
  if (rig && rig->cameras.contains(camera)) {
    const calib::CalibratedCamera& cam = rig->camera(camera);
    std::optional<geom::Plane> mirror;
    if (mirror_offset && board_pose) mirror = geom::plane_from_board_pose(*board_pose, *mirror_offset);
    auto entity = [&](const std::string& cls, const geom::Vec3& world) {
      geom::Vec3 p = cam.pose.apply(world);
      if (mirror) p = geom::reflect_point(*mirror, p);
      if (auto px = project(p)) add(cls, *px);
    };
    for (const auto& [eye, of_eye] : rig->leds) {
      for (const auto& [idx, p] : of_eye) entity("glint:" + eye + ":" + std::to_string(idx), p);
    }
    if (mirror) {
      for (const auto& [id, other] : rig->cameras) {
        if (id == camera) continue;
        entity(id == "scene" ? "marker:scene_back" : "marker:cam:" + id, other.center());
      }
    }
  }
  return json{{"camera", camera}, {"frame_index", n}, {"points", points}};
}

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() { stop(); }

int Service::start() {
  impl_->routes();
  if (impl_->opt.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(impl_->opt.host);
  } else if (impl_->server.bind_to_port(impl_->opt.host, impl_->opt.port)) {
    impl_->port = impl_->opt.port;
  } else {
    impl_->port = -1;
  }
  if (impl_->port <= 0) {
    throw IoError("cannot bind " + impl_->opt.host + ":" + std::to_string(impl_->opt.port));
  }
  impl_->runner = std::thread([this] { impl_->run_jobs(); });
  impl_->http_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void Service::wait() {
  if (impl_->http_thread.joinable()) impl_->http_thread.join();
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  {
    std::lock_guard lock(impl_->jobs_mu);
    impl_->stopping = true;
  }
  impl_->jobs_cv.notify_all();
  if (impl_->runner.joinable()) impl_->runner.join();
  if (impl_->http_thread.joinable()) impl_->http_thread.join();
}

}  // namespace ocular::calibsvc
