// SPDX-License-Identifier: Apache-2.0
// Small helpers shared by the test binaries.
#pragma once

#include "ocular/geom.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

namespace ocular::testing {

namespace fs = std::filesystem;

inline constexpr double kDeg = 3.14159265358979323846 / 180.0;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("ocular-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

inline geom::Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  geom::Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline geom::RigidTransform random_transform(std::mt19937_64& rng, const std::string& from, const std::string& to,
                                             double max_t = 100.0) {
  std::uniform_real_distribution<double> angle(0.0, 3.1);
  std::uniform_real_distribution<double> u(-max_t, max_t);
  const geom::Mat3 r = geom::exp_so3(angle(rng) * random_unit(rng));
  return geom::RigidTransform(r, geom::Vec3(u(rng), u(rng), u(rng)), from, to);
}

// Angle between two rotations and distance between translations.
inline double rot_err_deg(const geom::RigidTransform& a, const geom::RigidTransform& b) {
  return geom::rotation_angle_between(a, b) / kDeg;
}
inline double trans_err(const geom::RigidTransform& a, const geom::RigidTransform& b) {
  return (a.translation() - b.translation()).norm();
}

// The ocular executable, passed in by CMake.
inline std::string ocular_exe() { return OCULAR_EXE; }

// Runs the CLI; returns its exit code.
inline int run_cli(const std::string& args, const std::string& redirect = "> /dev/null 2>&1") {
  const int status = std::system((ocular_exe() + " " + args + " " + redirect).c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace ocular::testing
