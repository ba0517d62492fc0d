// Framed wire format for external inference processes:
//
//   u32le header_len | header (UTF-8 JSON) | u32le payload_len | payload
//
// The payload is little-endian float32 data; its length is always
// 4 * (num_samples + dim).

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autoprep/core.h"

namespace autoprep {

struct FrameHeader {
  std::string role;
  std::string op;
  int sample_rate = 0;
  uint32_t num_samples = 0;
  std::optional<uint32_t> dim;
  std::optional<nlohmann::json> aux;

  uint64_t element_count() const { return uint64_t(num_samples) + dim.value_or(0); }
  bool operator==(const FrameHeader &) const = default;
};

struct Frame {
  FrameHeader header;
  std::vector<float> payload;
};

enum class FrameErrorKind { kTruncated, kMalformedHeader, kLengthMismatch };

class FrameError : public Error {
 public:
  FrameError(FrameErrorKind kind, const std::string &message) : Error(message), kind_(kind) {}
  FrameErrorKind kind() const { return kind_; }

 private:
  FrameErrorKind kind_;
};

std::string header_to_json(const FrameHeader &header);
FrameHeader header_from_json(std::string_view text);

// Throws FrameError(kLengthMismatch) if the payload does not match the header.
std::vector<uint8_t> encode_frame(const FrameHeader &header, std::span<const float> payload);
// Decodes exactly one frame occupying all of bytes.
Frame decode_frame(std::span<const uint8_t> bytes);

// Blocking frame I/O on a file descriptor. read_frame returns nullopt on a
// clean end of stream before the first byte.
void write_frame(int fd, const FrameHeader &header, std::span<const float> payload);
std::optional<Frame> read_frame(int fd);

}  // namespace autoprep
