#include "autoprep/wav.h"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace autoprep {

namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

uint32_t le32(const uint8_t *p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
uint16_t le16(const uint8_t *p) { return uint16_t(p[0] | p[1] << 8); }

void put32(std::string &out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
void put16(std::string &out, uint16_t v) {
  out.push_back(char(v & 0xFF));
  out.push_back(char(v >> 8));
}

struct Parsed {
  WavInfo info;
  std::streamoff data_offset = 0;
};

Parsed parse_header(std::ifstream &in, const std::filesystem::path &path) {
  auto fail = [&](const std::string &why) -> Error {
    return Error("invalid WAV file " + path.string() + ": " + why);
  };
  std::array<uint8_t, 12> riff{};
  if (!in.read(reinterpret_cast<char *>(riff.data()), riff.size())) throw fail("too short");
  if (std::memcmp(riff.data(), "RIFF", 4) != 0 || std::memcmp(riff.data() + 8, "WAVE", 4) != 0) {
    throw fail("missing RIFF/WAVE tag");
  }

  Parsed parsed;
  bool have_fmt = false;
  uint16_t format = 0;
  uint16_t block_align = 0;
  while (true) {
    std::array<uint8_t, 8> chunk{};
    if (!in.read(reinterpret_cast<char *>(chunk.data()), chunk.size())) throw fail("no data chunk");
    const uint32_t size = le32(chunk.data() + 4);
    if (std::memcmp(chunk.data(), "fmt ", 4) == 0) {
      if (size < 16) throw fail("fmt chunk too small");
      std::string fmt(size, '\0');
      if (!in.read(fmt.data(), size)) throw fail("truncated fmt chunk");
      const auto *p = reinterpret_cast<const uint8_t *>(fmt.data());
      format = le16(p);
      parsed.info.channels = le16(p + 2);
      parsed.info.sample_rate = static_cast<int>(le32(p + 4));
      block_align = le16(p + 12);
      parsed.info.bits_per_sample = le16(p + 14);
      if (format == kFormatExtensible) {
        if (size < 26) throw fail("extensible fmt chunk too small");
        format = le16(p + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(chunk.data(), "data", 4) == 0) {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      parsed.data_offset = in.tellg();
      if (block_align == 0) throw fail("zero block alignment");
      parsed.info.num_frames = size / block_align;
      break;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
    if (size & 1 && std::memcmp(chunk.data(), "fmt ", 4) == 0) in.seekg(1, std::ios::cur);
  }

  auto &info = parsed.info;
  if (info.channels <= 0) throw fail("no channels");
  if (info.sample_rate <= 0) throw fail("non-positive sample rate");
  if (format == kFormatFloat) {
    if (info.bits_per_sample != 32 && info.bits_per_sample != 64) throw fail("unsupported float width");
    info.is_float = true;
  } else if (format == kFormatPcm) {
    const int b = info.bits_per_sample;
    if (b != 8 && b != 16 && b != 24 && b != 32) throw fail("unsupported PCM width");
  } else {
    throw fail("unsupported format tag " + std::to_string(format));
  }
  if (block_align != info.channels * info.bits_per_sample / 8) throw fail("inconsistent block alignment");
  return parsed;
}

float decode_sample(const uint8_t *p, int bits, bool is_float) {
  if (is_float) {
    if (bits == 32) return std::bit_cast<float>(le32(p));
    uint64_t v = uint64_t(le32(p)) | uint64_t(le32(p + 4)) << 32;
    return static_cast<float>(std::bit_cast<double>(v));
  }
  switch (bits) {
    case 8:
      return (int(p[0]) - 128) / 128.0f;
    case 16:
      return static_cast<int16_t>(le16(p)) / 32768.0f;
    case 24: {
      int32_t v = int32_t(uint32_t(p[0]) << 8 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 24) >> 8;
      return static_cast<float>(v / 8388608.0);
    }
    default:
      return static_cast<float>(static_cast<int32_t>(le32(p)) / 2147483648.0);
  }
}

}  // namespace

WavInfo read_wav_info(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return parse_header(in, path).info;
}

AudioBuffer read_wav(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const Parsed parsed = parse_header(in, path);
  const WavInfo &info = parsed.info;
  const size_t bytes_per_sample = info.bits_per_sample / 8;
  const size_t total = static_cast<size_t>(info.num_frames) * info.channels;
  std::vector<uint8_t> raw(total * bytes_per_sample);
  in.seekg(parsed.data_offset);
  if (!in.read(reinterpret_cast<char *>(raw.data()), raw.size())) {
    throw Error("invalid WAV file " + path.string() + ": truncated data chunk");
  }
  std::vector<float> interleaved(total);
  for (size_t i = 0; i < total; ++i) {
    interleaved[i] = decode_sample(raw.data() + i * bytes_per_sample, info.bits_per_sample, info.is_float);
  }
  return AudioBuffer::downmix(interleaved, info.channels, info.sample_rate);
}

void write_wav(const std::filesystem::path &path, const AudioBuffer &audio) {
  const uint32_t data_bytes = static_cast<uint32_t>(audio.size() * 4);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, kFormatFloat);
  put16(out, 1);
  put32(out, static_cast<uint32_t>(audio.sample_rate()));
  put32(out, static_cast<uint32_t>(audio.sample_rate()) * 4);
  put16(out, 4);
  put16(out, 32);
  out += "data";
  put32(out, data_bytes);
  for (float s : audio.samples()) put32(out, std::bit_cast<uint32_t>(s));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f.write(out.data(), out.size())) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace autoprep
