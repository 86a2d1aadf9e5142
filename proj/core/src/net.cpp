// SPDX-License-Identifier: Apache-2.0
#include "ocular/net.hpp"

#include "ocular/error.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <fstream>
#include <mutex>

namespace ocular::wire {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }

 private:
  int fd_ = -1;
};

bool send_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
    if (k < 0 && errno == EINTR) continue;
    if (k <= 0) return false;
    data += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

void set_timeouts(int fd) {
  timeval tv{1, 0};
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

std::int64_t wall_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

Fd connect_to(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0) return Fd();
  Fd out;
  for (addrinfo* a = res; a; a = a->ai_next) {
    Fd fd(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
    if (!fd) continue;
    if (::connect(fd.get(), a->ai_addr, a->ai_addrlen) == 0) {
      set_timeouts(fd.get());
      out = std::move(fd);
      break;
    }
  }
  ::freeaddrinfo(res);
  return out;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  ::gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

// --- mock server -------------------------------------------------------------------

std::vector<std::uint8_t> mock_payload(const MockStreamConfig& s, std::uint32_t frame_index) {
  if (!s.frames.empty()) return s.frames[frame_index % s.frames.size()];
  // Diagonal ramp that moves one pixel per frame, tagged with the stream id.
  std::vector<std::uint8_t> p(static_cast<std::size_t>(s.width) * s.height);
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      p[y * s.width + x] = static_cast<std::uint8_t>(x + y + frame_index + 37u * s.stream_id);
    }
  }
  return p;
}

struct MockServer::Stream {
  MockStreamConfig config;
  Fd listener;
  std::uint16_t port = 0;
  std::thread thread;
  std::atomic<std::uint64_t> sent{0};
  Clock::time_point boot;
};

MockServer::MockServer(MockServerConfig config) : config_(std::move(config)) {}

MockServer::~MockServer() { stop(); }

void MockServer::start() {
  for (std::size_t i = 0; i < config_.streams.size(); ++i) {
    auto s = std::make_unique<Stream>();
    s->config = config_.streams[i];
    if (!(s->config.fps > 0.0)) throw InputError("mock stream fps must be positive");
    s->listener = Fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s->listener) throw IoError("socket: " + std::string(std::strerror(errno)));
    int one = 1;
    ::setsockopt(s->listener.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    const std::uint16_t want = config_.base_port == 0 ? 0 : static_cast<std::uint16_t>(config_.base_port + i);
    addr.sin_port = htons(want);
    if (::inet_pton(AF_INET, config_.host.c_str(), &addr.sin_addr) != 1) {
      throw IoError("bad listen address '" + config_.host + "'");
    }
    if (::bind(s->listener.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        ::listen(s->listener.get(), 4) != 0) {
      throw IoError("cannot bind " + config_.host + ":" + std::to_string(want) + ": " + std::strerror(errno));
    }
    socklen_t len = sizeof addr;
    ::getsockname(s->listener.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    s->port = ntohs(addr.sin_port);
    streams_.push_back(std::move(s));
  }
  const auto boot = Clock::now();
  for (auto& s : streams_) {
    s->boot = boot;
    s->thread = std::thread([this, st = s.get()] { run(*st); });
  }
}

void MockServer::stop() {
  stopping_ = true;
  for (auto& s : streams_) {
    if (s->thread.joinable()) s->thread.join();
  }
}

std::vector<std::uint16_t> MockServer::ports() const {
  std::vector<std::uint16_t> out;
  for (const auto& s : streams_) out.push_back(s->port);
  return out;
}

std::uint64_t MockServer::frames_sent(std::size_t stream) const { return streams_.at(stream)->sent.load(); }

void MockServer::run(Stream& s) {
  const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / s.config.fps));
  Fd client;
  bool streaming = false;
  std::uint32_t next_index = 0;
  Clock::time_point due;

  while (!stopping_) {
    pollfd fds[2] = {{s.listener.get(), POLLIN, 0}, {client.get(), POLLIN, 0}};
    int wait_ms = 50;
    if (streaming) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(due - Clock::now()).count();
      wait_ms = static_cast<int>(std::clamp<long long>(left, 0, 50));
    }
    ::poll(fds, client ? 2 : 1, wait_ms);

    if (fds[0].revents & POLLIN) {
      Fd c(::accept(s.listener.get(), nullptr, nullptr));
      if (c && client) {
        const std::uint8_t refuse = kRefuse;
        send_all(c.get(), &refuse, 1);
      } else if (c) {
        set_timeouts(c.get());
        client = std::move(c);
      }
    }
    if (client && (fds[1].revents & (POLLIN | POLLHUP | POLLERR))) {
      std::uint8_t cmd[64];
      const ssize_t n = ::recv(client.get(), cmd, sizeof cmd, 0);
      bool drop = n <= 0;
      for (ssize_t i = 0; i < n && !drop; ++i) {
        if (cmd[i] == kStart) {
          if (!streaming) due = Clock::now();
          streaming = true;
        } else if (cmd[i] == kStop) {
          streaming = false;
        } else {
          drop = true;
        }
      }
      if (drop) {
        client.reset();
        streaming = false;
      }
    }
    if (streaming && client && Clock::now() >= due) {
      FrameMessage m;
      m.stream_id = s.config.stream_id;
      m.frame_index = next_index;
      const double elapsed_us = std::chrono::duration<double, std::micro>(Clock::now() - s.boot).count();
      m.device_ts_us = s.config.device_start_us + static_cast<std::uint64_t>(std::llround(elapsed_us / s.config.skew));
      m.width = s.config.width;
      m.height = s.config.height;
      m.payload = mock_payload(s.config, next_index);
      const auto bytes = encode_frame(m);
      if (!send_all(client.get(), bytes.data(), bytes.size())) {
        client.reset();
        streaming = false;
        continue;
      }
      ++next_index;
      ++s.sent;
      due += period;
      // After a long stall resume on schedule instead of bursting.
      if (Clock::now() - due > 5 * period) due = Clock::now() + period;
    }
  }
}

// --- recorder ---------------------------------------------------------------------

namespace {

struct Item {
  int stream;
  FrameMessage msg;
  std::int64_t host_ts_us;
};

class Handoff {
 public:
  void push(Item item) {
    {
      std::lock_guard lock(mu_);
      q_.push_back(std::move(item));
    }
    cv_.notify_one();
  }
  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }
  std::optional<Item> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || !q_.empty(); });
    if (q_.empty()) return std::nullopt;
    Item it = std::move(q_.front());
    q_.pop_front();
    return it;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Item> q_;
  bool closed_ = false;
};

struct Reader {
  const Endpoint* endpoint = nullptr;
  Fd fd;
  std::thread thread;
  std::string degraded;  // written only by the reader thread, read after join
  std::uint64_t corrupt = 0;
  std::uint64_t foreign = 0;
};

}  // namespace

RecordResult record_session(const std::vector<Endpoint>& endpoints, const RecordOptions& options,
                            const fs::path& out_dir) {
  if (endpoints.empty()) throw InputError("no endpoints to record");
  std::vector<Reader> readers(endpoints.size());
  std::size_t reachable = 0;
  for (std::size_t i = 0; i < endpoints.size(); ++i) {
    readers[i].endpoint = &endpoints[i];
    readers[i].fd = connect_to(endpoints[i].host, endpoints[i].port);
    if (readers[i].fd) {
      ++reachable;
    } else {
      readers[i].degraded = "unreachable";
    }
  }
  if (reachable == 0) throw IoError("none of " + std::to_string(endpoints.size()) + " endpoints is reachable");

  fs::create_directories(out_dir);
  // Every START goes out before any frame is read.
  for (Reader& r : readers) {
    const std::uint8_t start = kStart;
    if (r.fd && !send_all(r.fd.get(), &start, 1)) {
      r.degraded = "start failed";
      r.fd.reset();
    }
  }
  const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                           std::chrono::duration<double>(options.duration_s));
  const auto stall = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(options.stall_timeout_s));

  Handoff handoff;
  std::map<int, std::vector<session::IndexRow>> index;
  std::map<int, StreamStats> stats;
  std::map<int, std::pair<int, int>> sizes;
  for (const Endpoint& e : endpoints) {
    index[e.stream_id];
    stats[e.stream_id];
  }

  std::thread writer([&] {
    while (auto item = handoff.pop()) {
      auto& rows = index[item->stream];
      StreamStats& st = stats[item->stream];
      if (!rows.empty() && item->msg.frame_index <= rows.back().frame_index) {
        ++st.duplicates;
        continue;
      }
      const bool raw = item->msg.payload_format == PayloadFormat::raw_gray8;
      const std::string rel = session::frame_file_name(item->msg.frame_index, raw);
      const fs::path sdir = session::stream_dir(out_dir, item->stream);
      fs::create_directories(sdir / "frames");
      if (raw) {
        session::write_pgm(sdir / rel, {item->msg.width, item->msg.height, std::move(item->msg.payload)});
      } else {
        std::ofstream out(sdir / rel, std::ios::binary);
        out.write(reinterpret_cast<const char*>(item->msg.payload.data()),
                  static_cast<std::streamsize>(item->msg.payload.size()));
      }
      sizes.try_emplace(item->stream, item->msg.width, item->msg.height);
      rows.push_back({item->msg.frame_index, item->msg.device_ts_us, item->host_ts_us, rel});
      ++st.frames;
    }
  });

  for (Reader& r : readers) {
    if (!r.fd) continue;
    r.thread = std::thread([&r, &handoff, deadline, stall] {
      FrameDecoder dec;
      std::vector<std::uint8_t> buf(1 << 16);
      auto last = Clock::now();
      bool stalled = false;
      while (Clock::now() < deadline) {
        pollfd p{r.fd.get(), POLLIN, 0};
        ::poll(&p, 1, 50);
        if (p.revents & (POLLIN | POLLHUP | POLLERR)) {
          const ssize_t n = ::recv(r.fd.get(), buf.data(), buf.size(), 0);
          if (n <= 0) {
            r.degraded = "connection closed";
            break;
          }
          dec.feed(std::span(buf.data(), static_cast<std::size_t>(n)));
          for (;;) {
            std::optional<FrameMessage> m;
            try {
              m = dec.next();
            } catch (const ProtocolError&) {
              ++r.corrupt;
              continue;
            }
            if (!m) break;
            if (m->stream_id != r.endpoint->stream_id) {
              ++r.foreign;
              continue;
            }
            last = Clock::now();
            handoff.push({r.endpoint->stream_id, std::move(*m), wall_us()});
          }
        }
        if (!stalled && Clock::now() - last > stall) {
          stalled = true;
          r.degraded = "stalled";
        }
      }
    });
  }
  for (Reader& r : readers) {
    if (r.thread.joinable()) r.thread.join();
  }
  for (Reader& r : readers) {
    const std::uint8_t stop = kStop;
    if (r.fd) send_all(r.fd.get(), &stop, 1);
    r.fd.reset();
  }
  handoff.close();
  writer.join();

  RecordResult result;
  session::SessionManifest& m = result.manifest;
  m.session_id = options.session_id.empty() ? out_dir.filename().string() : options.session_id;
  m.created_utc = options.created_utc.empty() ? utc_now() : options.created_utc;
  std::map<sync::StreamId, std::vector<sync::FrameMeta>> metas;
  std::map<sync::StreamId, sync::ClockModel> models;
  for (const Reader& r : readers) {
    const Endpoint& e = *r.endpoint;
    session::StreamInfo info;
    info.id = e.stream_id;
    info.role = e.role;
    auto sz = sizes.find(e.stream_id);
    info.width = sz != sizes.end() ? sz->second.first : e.width;
    info.height = sz != sizes.end() ? sz->second.second : e.height;
    info.fps_nominal = options.fps_nominal;
    info.degraded = !r.degraded.empty();
    info.degraded_reason = r.degraded;
    stats[e.stream_id].corrupt = r.corrupt + r.foreign;

    const fs::path sdir = session::stream_dir(out_dir, e.stream_id);
    fs::create_directories(sdir);
    std::string csv = session::index_header() + "\n";
    for (const auto& row : index[e.stream_id]) {
      csv += session::index_row(row) + "\n";
      metas[e.stream_id].push_back({e.stream_id, row.frame_index, row.device_ts_us, row.host_ts_us});
    }
    session::write_atomic(sdir / "index.csv", csv);
    try {
      info.clock_model = sync::fit_clock_model(metas[e.stream_id]);
      models[e.stream_id] = *info.clock_model;
    } catch (const InputError&) {
    } catch (const SyncError&) {
    }
    m.streams.push_back(std::move(info));
  }
  if (models.size() >= 2) {
    std::map<sync::StreamId, std::vector<sync::FrameMeta>> aligned;
    for (const auto& [id, model] : models) aligned[id] = metas[id];
    const auto period = static_cast<std::int64_t>(std::llround(1e6 / options.fps_nominal));
    m.drop_report = sync::align_streams(aligned, models, period, period / 2).drops;
  }
  m.validate();
  session::write_atomic(out_dir / session::kLabelsFile, session::labels_to_json({}));
  session::write_atomic(out_dir / session::kManifestFile, session::manifest_to_json(m));
  result.stats = std::move(stats);
  return result;
}

}  // namespace ocular::wire
