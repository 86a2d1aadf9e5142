// SPDX-License-Identifier: Apache-2.0
//
// Local HTTP service behind the labeling UI. It serves the sessions found
// under one root directory, persists labels, and runs calibration stages
// through the same code as the command line tool.
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace ocular::calibsvc {

struct ServiceOptions {
  std::filesystem::path root;  // directory holding session directories
  std::string host = "127.0.0.1";
  int port = 8750;             // 0 picks a free port
  std::optional<std::filesystem::path> ui_dir;  // built UI bundle served at /
};

class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  /// Throws IoError when the port cannot be bound.
  int start();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ocular::calibsvc
