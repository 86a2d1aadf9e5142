// SPDX-License-Identifier: Apache-2.0
//
// Loopback acquisition: a mock multi-camera server speaking the frame
// protocol, and the recorder that ingests several streams into a session.
#pragma once

#include "ocular/session.hpp"
#include "ocular/wire.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>
#include <vector>

namespace ocular::wire {

struct MockStreamConfig {
  std::uint8_t stream_id = 0;
  std::uint16_t width = 240;
  std::uint16_t height = 240;
  double fps = 45.0;
  // Simulated device clock: device_ts = device_start_us + elapsed_host_us / skew.
  std::uint64_t device_start_us = 1'000'000;
  double skew = 1.0;
  // Raw payloads cycled by frame index; empty selects a moving test pattern.
  std::vector<std::vector<std::uint8_t>> frames;
};

struct MockServerConfig {
  std::string host = "127.0.0.1";
  std::uint16_t base_port = 0;  // stream i listens on base_port + i; 0 picks free ports
  std::vector<MockStreamConfig> streams;
};

/// Payload the server emits for `frame_index` of a stream.
std::vector<std::uint8_t> mock_payload(const MockStreamConfig& stream, std::uint32_t frame_index);

/// One listener per stream, each served by its own thread. A client starts
/// the stream with kStart and halts it with kStop; any other byte closes the
/// connection. Only one client per stream: a second one receives kRefuse.
class MockServer {
 public:
  explicit MockServer(MockServerConfig config);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  /// Binds every listener. Throws IoError when a port cannot be bound.
  void start();
  void stop();
  std::vector<std::uint16_t> ports() const;
  std::uint64_t frames_sent(std::size_t stream) const;

 private:
  struct Stream;
  void run(Stream& s);

  MockServerConfig config_;
  std::vector<std::unique_ptr<Stream>> streams_;
  std::atomic<bool> stopping_{false};
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  int stream_id = 0;
  std::string role;
  int width = 240;   // used when the stream delivers nothing
  int height = 240;
};

struct RecordOptions {
  double duration_s = 10.0;
  double stall_timeout_s = 2.0;
  double fps_nominal = 45.0;
  std::string session_id;   // default: output directory name
  std::string created_utc;  // default: now
};

struct StreamStats {
  std::uint64_t frames = 0;
  std::uint64_t corrupt = 0;  // rejected by the decoder, never written
  std::uint64_t duplicates = 0;
};

struct RecordResult {
  session::SessionManifest manifest;
  std::map<int, StreamStats> stats;
};

/// Sends START to every reachable endpoint before reading any frame, then
/// ingests all streams concurrently (one reader per stream, one writer).
/// Unreachable or stalled streams are marked degraded in the manifest.
/// Throws IoError when no endpoint is reachable.
RecordResult record_session(const std::vector<Endpoint>& endpoints, const RecordOptions& options,
                            const std::filesystem::path& out_dir);

}  // namespace ocular::wire
