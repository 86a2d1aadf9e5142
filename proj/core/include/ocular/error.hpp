// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ocular {

/// Base of every error raised by the toolkit. `kind()` is the stable error
/// name ("SolveError", "InputError", ...) surfaced by the CLI and service.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define OCULAR_DEFINE_ERROR(Name)                                         \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  };

OCULAR_DEFINE_ERROR(FrameError)
OCULAR_DEFINE_ERROR(ProjectionError)
OCULAR_DEFINE_ERROR(GeometryError)
OCULAR_DEFINE_ERROR(SolveError)
OCULAR_DEFINE_ERROR(DegenerateError)
OCULAR_DEFINE_ERROR(InputError)
OCULAR_DEFINE_ERROR(GraphError)
OCULAR_DEFINE_ERROR(SyncError)
OCULAR_DEFINE_ERROR(GenerationError)
OCULAR_DEFINE_ERROR(IoError)
OCULAR_DEFINE_ERROR(FormatError)
OCULAR_DEFINE_ERROR(UsageError)

#undef OCULAR_DEFINE_ERROR

/// Raised when distortion inversion fails; carries the final residual in
/// normalized image coordinates.
class UndistortError : public Error {
 public:
  UndistortError(const std::string& message, double residual)
      : Error("UndistortError", message), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

enum class ProtocolFault { bad_magic, bad_version, bad_crc, truncated, bad_length, bad_format };

inline const char* to_string(ProtocolFault f) {
  switch (f) {
    case ProtocolFault::bad_magic: return "bad_magic";
    case ProtocolFault::bad_version: return "bad_version";
    case ProtocolFault::bad_crc: return "bad_crc";
    case ProtocolFault::truncated: return "truncated";
    case ProtocolFault::bad_length: return "bad_length";
    case ProtocolFault::bad_format: return "bad_format";
  }
  return "unknown";
}

/// Malformed wire data. `fault()` says which check failed.
class ProtocolError : public Error {
 public:
  ProtocolError(ProtocolFault fault, const std::string& message)
      : Error("ProtocolError", std::string(to_string(fault)) + ": " + message), fault_(fault) {}
  ProtocolFault fault() const noexcept { return fault_; }

 private:
  ProtocolFault fault_;
};

}  // namespace ocular
