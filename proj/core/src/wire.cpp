// SPDX-License-Identifier: Apache-2.0
#include "ocular/wire.hpp"

#include "ocular/error.hpp"

#include <zlib.h>

#include <algorithm>
#include <string>

namespace ocular::wire {

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  for (int shift = static_cast<int>(sizeof(T)) * 8 - 8; shift >= 0; shift -= 8) {
    out.push_back(static_cast<std::uint8_t>(v >> shift));
  }
}

template <typename T>
T get(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v = static_cast<T>((v << 8) | p[i]);
  return v;
}

struct Header {
  std::uint32_t magic;
  std::uint8_t version;
  std::uint8_t stream_id;
  std::uint32_t frame_index;
  std::uint64_t device_ts_us;
  std::uint8_t format;
  std::uint16_t width;
  std::uint16_t height;
  std::uint32_t payload_len;
};

Header parse_header(const std::uint8_t* p) {
  Header h;
  h.magic = get<std::uint32_t>(p);
  h.version = p[4];
  h.stream_id = p[5];
  h.frame_index = get<std::uint32_t>(p + 6);
  h.device_ts_us = get<std::uint64_t>(p + 10);
  h.format = p[18];
  h.width = get<std::uint16_t>(p + 19);
  h.height = get<std::uint16_t>(p + 21);
  h.payload_len = get<std::uint32_t>(p + 23);
  return h;
}

// Checks that need only the header.
void check_header(const Header& h) {
  if (h.magic != kMagic) throw ProtocolError(ProtocolFault::bad_magic, "magic mismatch");
  if (h.version != kVersion) {
    throw ProtocolError(ProtocolFault::bad_version, "unsupported version " + std::to_string(h.version));
  }
  if (h.payload_len > kMaxPayload) {
    throw ProtocolError(ProtocolFault::bad_length, "payload length " + std::to_string(h.payload_len) + " too large");
  }
}

FrameMessage finish(const Header& h, const std::uint8_t* frame) {
  const std::size_t body = kHeaderSize + h.payload_len;
  const std::uint32_t want = get<std::uint32_t>(frame + body);
  if (crc32(std::span(frame, body)) != want) throw ProtocolError(ProtocolFault::bad_crc, "crc mismatch");
  FrameMessage m;
  m.stream_id = h.stream_id;
  m.frame_index = h.frame_index;
  m.device_ts_us = h.device_ts_us;
  if (h.format > 1) throw ProtocolError(ProtocolFault::bad_format, "unknown payload format " + std::to_string(h.format));
  m.payload_format = static_cast<PayloadFormat>(h.format);
  m.width = h.width;
  m.height = h.height;
  m.payload.assign(frame + kHeaderSize, frame + body);
  m.validate();
  return m;
}

}  // namespace

void FrameMessage::validate() const {
  if (payload.size() > kMaxPayload) throw ProtocolError(ProtocolFault::bad_format, "payload too large");
  if (payload_format == PayloadFormat::raw_gray8 &&
      payload.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw ProtocolError(ProtocolFault::bad_format, "raw payload of " + std::to_string(payload.size()) +
                                                       " bytes for " + std::to_string(width) + "x" +
                                                       std::to_string(height));
  }
  if (payload_format != PayloadFormat::raw_gray8 && payload_format != PayloadFormat::opaque) {
    throw ProtocolError(ProtocolFault::bad_format, "unknown payload format");
  }
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; chunk to stay portable for large buffers.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = ::crc32(c, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

std::size_t encoded_size(const FrameMessage& msg) { return kHeaderSize + msg.payload.size() + kCrcSize; }

std::vector<std::uint8_t> encode_frame(const FrameMessage& msg) {
  msg.validate();
  std::vector<std::uint8_t> out;
  out.reserve(encoded_size(msg));
  put(out, kMagic);
  put(out, kVersion);
  put(out, msg.stream_id);
  put(out, msg.frame_index);
  put(out, msg.device_ts_us);
  put(out, static_cast<std::uint8_t>(msg.payload_format));
  put(out, msg.width);
  put(out, msg.height);
  put(out, static_cast<std::uint32_t>(msg.payload.size()));
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
  put(out, crc32(out));
  return out;
}

FrameMessage decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) throw ProtocolError(ProtocolFault::truncated, "short header");
  const Header h = parse_header(bytes.data());
  check_header(h);
  const std::size_t total = kHeaderSize + h.payload_len + kCrcSize;
  if (bytes.size() < total) {
    throw ProtocolError(ProtocolFault::truncated,
                        "have " + std::to_string(bytes.size()) + " of " + std::to_string(total) + " bytes");
  }
  if (bytes.size() > total) {
    throw ProtocolError(ProtocolFault::bad_length, std::to_string(bytes.size() - total) + " trailing bytes");
  }
  return finish(h, bytes.data());
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
  compact();
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<FrameMessage> FrameDecoder::next() {
  if (buffered() < kHeaderSize) return std::nullopt;
  const std::uint8_t* p = buf_.data() + pos_;
  const Header h = parse_header(p);
  try {
    check_header(h);
  } catch (const ProtocolError&) {
    resync();
    throw;
  }
  const std::size_t total = kHeaderSize + h.payload_len + kCrcSize;
  if (buffered() < total) return std::nullopt;
  try {
    FrameMessage m = finish(h, p);
    pos_ += total;
    return m;
  } catch (const ProtocolError&) {
    resync();
    throw;
  }
}

void FrameDecoder::resync() {
  // Skip the current magic and look for the next one.
  const std::uint8_t m[4] = {0xEE, 0x7C, 0x0D, 0xE5};
  auto it = std::search(buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + 1), buf_.end(), std::begin(m), std::end(m));
  // A partial magic may sit at the very end; keep up to 3 bytes.
  if (it == buf_.end()) {
    const std::size_t keep = std::min<std::size_t>(3, buffered() - 1);
    pos_ = buf_.size() - keep;
  } else {
    pos_ = static_cast<std::size_t>(it - buf_.begin());
  }
}

void FrameDecoder::compact() {
  if (pos_ > 0 && pos_ * 2 >= buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
}

}  // namespace ocular::wire
