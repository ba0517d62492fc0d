// RIFF/WAVE reading and writing. Reads integer PCM (8/16/24/32-bit) and IEEE
// float (32/64-bit), including WAVE_FORMAT_EXTENSIBLE; multichannel input is
// downmixed. Writes mono 32-bit float.

#pragma once

#include <filesystem>

#include "autoprep/core.h"

namespace autoprep {

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  bool is_float = false;
  int64_t num_frames = 0;

  double duration_s() const { return sample_rate > 0 ? double(num_frames) / sample_rate : 0.0; }
};

WavInfo read_wav_info(const std::filesystem::path &path);
AudioBuffer read_wav(const std::filesystem::path &path);
// Writes via a temporary file and rename so a partial file is never visible.
void write_wav(const std::filesystem::path &path, const AudioBuffer &audio);

}  // namespace autoprep
