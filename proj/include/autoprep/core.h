// Domain types shared by every stage of the preprocessing pipeline.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace autoprep {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by validate_config; key() names the offending config key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string &message)
      : Error("config key '" + key + "': " + message), key_(std::move(key)) {}
  const std::string &key() const { return key_; }

 private:
  std::string key_;
};

// Seconds to a sample (or frame) index, rounding half up.
int64_t to_samples(double seconds, double rate);

struct TimeRange {
  double start_s = 0.0;
  double end_s = 0.0;

  double duration() const { return end_s - start_s; }
  bool operator==(const TimeRange &) const = default;
};

// Mono audio at its native sample rate. Copies and slices share immutable
// sample storage.
class AudioBuffer {
 public:
  AudioBuffer() = default;
  // Throws Error on non-positive rate or non-finite samples.
  AudioBuffer(std::vector<float> samples, int sample_rate);

  static AudioBuffer silence(size_t num_samples, int sample_rate);

  // Averages interleaved channels into one.
  static AudioBuffer downmix(const std::vector<float> &interleaved,
                             int channels, int sample_rate);

  std::span<const float> samples() const {
    return storage_ ? std::span<const float>(storage_->data() + offset_, size_) : std::span<const float>();
  }
  std::vector<float> to_vector() const;
  int sample_rate() const { return sample_rate_; }
  size_t size() const { return size_; }
  double duration_s() const {
    return sample_rate_ > 0 ? double(size_) / sample_rate_ : 0.0;
  }

  // Samples covering the range, with boundaries rounded half up and clamped.
  AudioBuffer slice(const TimeRange &range) const;
  // Samples [begin, end) followed by zeros up to `length` samples.
  AudioBuffer padded_slice(int64_t begin, int64_t end, int64_t length) const;
  // Copies `count` samples of src, from src_begin, to position `offset`.
  void overwrite(int64_t offset, const AudioBuffer &src, int64_t src_begin, int64_t count);

 private:
  // Unvalidated; for samples derived from existing buffers.
  static AudioBuffer adopt(std::vector<float> samples, int sample_rate);

  std::shared_ptr<std::vector<float>> storage_;
  size_t offset_ = 0;
  size_t size_ = 0;
  int sample_rate_ = 0;
};

struct SpeakerEmbedding {
  std::vector<float> vector;
  TimeRange source_chunk;

  // L2-normalizes raw backend output. Throws Error on an empty or zero vector.
  static SpeakerEmbedding from_raw(std::vector<float> raw, TimeRange chunk);
};

struct Segment {
  std::string recording_id;
  std::string segment_id;
  TimeRange range;
  std::vector<TimeRange> chunk_ranges;
  std::optional<std::string> speaker_label;
  std::optional<double> cluster_similarity;
  std::optional<double> ovrl_score;
  std::optional<double> pdnsmos_score;
  std::optional<std::string> transcript;
};

struct StageToggles {
  bool enhance = true;
  bool segment = true;
  bool cluster = true;
  bool tse = true;
  bool filter = true;
  bool asr = true;
};

struct PipelineConfig {
  double enhance_window_s = 12.0;
  double enhance_shift_s = 4.0;
  double vad_threshold = 0.76;
  double silence_split_s = 1.0;
  double pad_s = 0.4;
  double min_segment_s = 1.5;
  double soft_max_segment_s = 30.0;
  double hard_max_segment_s = 40.0;
  double embed_window_s = 1.5;
  double embed_shift_s = 0.75;
  double cluster_merge_threshold = 0.75;
  double batch_max_hours = 2.0;
  double seg_sim_threshold = 0.5;
  double cluster_avg_threshold = 0.55;
  double cluster_max_threshold = 0.6;
  double ovrl_threshold = 2.4;
  int k_max = 20;
  uint64_t rng_seed = 0;
  // Cluster each recording on its own instead of packing recordings into
  // shared batches.
  bool batch_per_recording = false;
  StageToggles stages;
  // Backend selection; validated by make_backend_set, carried opaquely here.
  nlohmann::ordered_json backends = nlohmann::ordered_json::object();
};

// Fills defaults and checks every invariant. Unknown keys are errors.
PipelineConfig validate_config(const nlohmann::json &raw);
nlohmann::ordered_json config_to_json(const PipelineConfig &config);
PipelineConfig load_config(const std::filesystem::path &path);

}  // namespace autoprep
