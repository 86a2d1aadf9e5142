// SPDX-License-Identifier: Apache-2.0
//
// Framed camera stream protocol. Every message is self-delimiting and
// carries the device timestamp of its frame; all integers are big-endian.
//
//   u32 magic 0xEE7C0DE5 | u8 version | u8 stream_id | u32 frame_index |
//   u64 device_ts_us | u8 payload_format | u16 width | u16 height |
//   u32 payload_len | payload | u32 crc32 (of every preceding byte)
//
// This layout is defined by this project; it is not a vendor firmware format.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ocular::wire {

inline constexpr std::uint32_t kMagic = 0xEE7C0DE5u;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 27;
inline constexpr std::size_t kCrcSize = 4;
// Larger lengths are rejected before any allocation.
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

// Control bytes sent by the client on a stream connection; the server answers
// a second concurrent client with kRefuse and closes.
inline constexpr std::uint8_t kStart = 0x01;
inline constexpr std::uint8_t kStop = 0x02;
inline constexpr std::uint8_t kRefuse = 0xFF;

enum class PayloadFormat : std::uint8_t { raw_gray8 = 0, opaque = 1 };

struct FrameMessage {
  std::uint8_t stream_id = 0;
  std::uint32_t frame_index = 0;
  std::uint64_t device_ts_us = 0;
  PayloadFormat payload_format = PayloadFormat::raw_gray8;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<std::uint8_t> payload;

  bool operator==(const FrameMessage&) const = default;

  /// Throws ProtocolError(bad_format) when a raw payload is not width*height
  /// bytes or the payload exceeds kMaxPayload.
  void validate() const;
};

std::size_t encoded_size(const FrameMessage& msg);
std::vector<std::uint8_t> encode_frame(const FrameMessage& msg);
/// Decodes exactly one message. Throws ProtocolError with the failing check.
FrameMessage decode_frame(std::span<const std::uint8_t> bytes);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Incremental decoder for a byte stream. After a corrupt message it throws
/// once and skips ahead to the next magic, so later frames still decode.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  /// Next complete message, nullopt when more bytes are needed.
  std::optional<FrameMessage> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  void resync();
  void compact();

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace ocular::wire
