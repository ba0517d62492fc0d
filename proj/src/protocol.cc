#include "autoprep/protocol.h"

#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>

namespace autoprep {

namespace {

constexpr uint32_t kMaxHeaderBytes = 64u << 20;
constexpr uint64_t kMaxPayloadBytes = 4ull << 30;

void put_u32(std::vector<uint8_t> &out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

uint32_t get_u32(const uint8_t *p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

void append_payload(std::vector<uint8_t> &out, std::span<const float> payload) {
  for (float f : payload) put_u32(out, std::bit_cast<uint32_t>(f));
}

std::vector<float> parse_payload(const uint8_t *p, size_t bytes) {
  std::vector<float> out(bytes / 4);
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  return out;
}

void check_payload(const FrameHeader &header, uint64_t payload_bytes) {
  if (payload_bytes != 4 * header.element_count()) {
    throw FrameError(FrameErrorKind::kLengthMismatch,
                     "payload is " + std::to_string(payload_bytes) + " bytes, header declares " +
                         std::to_string(header.element_count()) + " elements");
  }
}

void write_all(int fd, const uint8_t *data, size_t n) {
  while (n > 0) {
    const ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("frame write failed: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<size_t>(w);
  }
}

// Returns bytes read; short only at end of stream.
size_t read_all(int fd, uint8_t *data, size_t n) {
  size_t got = 0;
  while (got < n) {
    const ssize_t r = ::read(fd, data + got, n - got);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("frame read failed: ") + std::strerror(errno));
    }
    if (r == 0) break;
    got += static_cast<size_t>(r);
  }
  return got;
}

}  // namespace

std::string header_to_json(const FrameHeader &h) {
  nlohmann::ordered_json j;
  j["role"] = h.role;
  j["op"] = h.op;
  j["sample_rate"] = h.sample_rate;
  j["num_samples"] = h.num_samples;
  if (h.dim) j["dim"] = *h.dim;
  if (h.aux) j["aux"] = *h.aux;
  return j.dump();
}

FrameHeader header_from_json(std::string_view text) {
  auto bad = [](const std::string &why) {
    return FrameError(FrameErrorKind::kMalformedHeader, "malformed frame header: " + why);
  };
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw bad("not valid JSON");
  if (!j.is_object()) throw bad("not a JSON object");
  FrameHeader h;
  auto it = j.find("role");
  if (it == j.end() || !it->is_string()) throw bad("missing string 'role'");
  h.role = it->get<std::string>();
  it = j.find("op");
  if (it == j.end() || !it->is_string()) throw bad("missing string 'op'");
  h.op = it->get<std::string>();
  it = j.find("sample_rate");
  if (it == j.end() || !it->is_number_integer() || it->get<int64_t>() < 0 ||
      it->get<int64_t>() > INT32_MAX) {
    throw bad("missing non-negative integer 'sample_rate'");
  }
  h.sample_rate = it->get<int>();
  it = j.find("num_samples");
  if (it == j.end() || !it->is_number_unsigned() || it->get<uint64_t>() > UINT32_MAX) {
    throw bad("missing unsigned integer 'num_samples'");
  }
  h.num_samples = it->get<uint32_t>();
  if (it = j.find("dim"); it != j.end()) {
    if (!it->is_number_unsigned() || it->get<uint64_t>() > UINT32_MAX) throw bad("invalid 'dim'");
    h.dim = it->get<uint32_t>();
  }
  if (it = j.find("aux"); it != j.end()) h.aux = *it;
  return h;
}

std::vector<uint8_t> encode_frame(const FrameHeader &header, std::span<const float> payload) {
  check_payload(header, uint64_t(payload.size()) * 4);
  const std::string json = header_to_json(header);
  std::vector<uint8_t> out;
  out.reserve(8 + json.size() + payload.size() * 4);
  put_u32(out, static_cast<uint32_t>(json.size()));
  out.insert(out.end(), json.begin(), json.end());
  put_u32(out, static_cast<uint32_t>(payload.size() * 4));
  append_payload(out, payload);
  return out;
}

Frame decode_frame(std::span<const uint8_t> bytes) {
  auto truncated = [&](const std::string &where) {
    return FrameError(FrameErrorKind::kTruncated,
                      "truncated frame (" + std::to_string(bytes.size()) + " bytes) in " + where);
  };
  if (bytes.size() < 4) throw truncated("header length");
  const uint64_t header_len = get_u32(bytes.data());
  if (bytes.size() < 4 + header_len) throw truncated("header");
  const std::string_view text(reinterpret_cast<const char *>(bytes.data() + 4), header_len);
  Frame frame{header_from_json(text), {}};
  const size_t payload_at = 4 + header_len + 4;
  if (bytes.size() < payload_at) throw truncated("payload length");
  const uint64_t payload_len = get_u32(bytes.data() + 4 + header_len);
  if (bytes.size() - payload_at < payload_len) throw truncated("payload");
  if (bytes.size() - payload_at > payload_len) {
    throw FrameError(FrameErrorKind::kLengthMismatch, "trailing bytes after frame payload");
  }
  check_payload(frame.header, payload_len);
  frame.payload = parse_payload(bytes.data() + payload_at, payload_len);
  return frame;
}

void write_frame(int fd, const FrameHeader &header, std::span<const float> payload) {
  const auto bytes = encode_frame(header, payload);
  write_all(fd, bytes.data(), bytes.size());
}

std::optional<Frame> read_frame(int fd) {
  uint8_t len[4];
  const size_t got = read_all(fd, len, 4);
  if (got == 0) return std::nullopt;
  if (got < 4) throw FrameError(FrameErrorKind::kTruncated, "stream ended inside header length");
  const uint32_t header_len = get_u32(len);
  if (header_len > kMaxHeaderBytes) {
    throw FrameError(FrameErrorKind::kMalformedHeader, "header length exceeds limit");
  }
  std::string text(header_len, '\0');
  if (read_all(fd, reinterpret_cast<uint8_t *>(text.data()), header_len) < header_len) {
    throw FrameError(FrameErrorKind::kTruncated, "stream ended inside header");
  }
  Frame frame{header_from_json(text), {}};
  if (read_all(fd, len, 4) < 4) {
    throw FrameError(FrameErrorKind::kTruncated, "stream ended inside payload length");
  }
  const uint64_t payload_len = get_u32(len);
  if (payload_len > kMaxPayloadBytes) {
    throw FrameError(FrameErrorKind::kLengthMismatch, "payload length exceeds limit");
  }
  check_payload(frame.header, payload_len);
  std::vector<uint8_t> payload(payload_len);
  if (read_all(fd, payload.data(), payload_len) < payload_len) {
    throw FrameError(FrameErrorKind::kTruncated, "stream ended inside payload");
  }
  frame.payload = parse_payload(payload.data(), payload_len);
  return frame;
}

}  // namespace autoprep
