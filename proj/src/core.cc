#include "autoprep/core.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>

namespace autoprep {

int64_t to_samples(double seconds, double rate) {
  return static_cast<int64_t>(std::floor(seconds * rate + 0.5));
}

AudioBuffer::AudioBuffer(std::vector<float> samples, int sample_rate) : sample_rate_(sample_rate) {
  if (sample_rate_ <= 0) {
    throw Error("sample rate must be positive, got " +
                std::to_string(sample_rate_));
  }
  // Exponent bits all set means inf or NaN; this form vectorizes.
  uint32_t bad = 0;
  for (float s : samples) {
    bad |= static_cast<uint32_t>((std::bit_cast<uint32_t>(s) & 0x7F800000u) == 0x7F800000u);
  }
  if (bad) {
    const auto it = std::find_if(samples.begin(), samples.end(), [](float s) { return !std::isfinite(s); });
    throw Error("non-finite sample at index " + std::to_string(it - samples.begin()));
  }
  size_ = samples.size();
  storage_ = std::make_shared<std::vector<float>>(std::move(samples));
}

AudioBuffer AudioBuffer::adopt(std::vector<float> samples, int sample_rate) {
  AudioBuffer out;
  out.size_ = samples.size();
  out.storage_ = std::make_shared<std::vector<float>>(std::move(samples));
  out.sample_rate_ = sample_rate;
  return out;
}

AudioBuffer AudioBuffer::silence(size_t num_samples, int sample_rate) {
  if (sample_rate <= 0) throw Error("sample rate must be positive, got " + std::to_string(sample_rate));
  return adopt(std::vector<float>(num_samples, 0.0f), sample_rate);
}

std::vector<float> AudioBuffer::to_vector() const {
  const auto s = samples();
  return {s.begin(), s.end()};
}

void AudioBuffer::overwrite(int64_t offset, const AudioBuffer &src, int64_t src_begin, int64_t count) {
  if (src.sample_rate_ != sample_rate_) throw Error("overwrite across sample rates");
  if (offset < 0 || src_begin < 0 || count < 0 || offset + count > static_cast<int64_t>(size_) ||
      src_begin + count > static_cast<int64_t>(src.size_)) {
    throw Error("overwrite out of range");
  }
  if (count == 0) return;
  if (storage_.use_count() > 1 || offset_ != 0 || size_ != storage_->size()) {
    storage_ = std::make_shared<std::vector<float>>(to_vector());
    offset_ = 0;
  }
  const auto from = src.samples().subspan(static_cast<size_t>(src_begin), static_cast<size_t>(count));
  std::copy(from.begin(), from.end(), storage_->begin() + offset);
}

AudioBuffer AudioBuffer::padded_slice(int64_t begin, int64_t end, int64_t length) const {
  if (begin < 0 || end < begin || end > static_cast<int64_t>(size_) || length < end - begin) {
    throw Error("padded_slice out of range");
  }
  if (length == end - begin) {
    AudioBuffer view = *this;
    view.offset_ = offset_ + static_cast<size_t>(begin);
    view.size_ = static_cast<size_t>(length);
    return view;
  }
  const auto s = samples();
  std::vector<float> out;
  out.reserve(static_cast<size_t>(length));
  out.assign(s.begin() + begin, s.begin() + end);
  out.resize(static_cast<size_t>(length), 0.0f);
  return adopt(std::move(out), sample_rate_);
}

AudioBuffer AudioBuffer::downmix(const std::vector<float> &interleaved,
                                 int channels, int sample_rate) {
  if (channels <= 0) throw Error("channel count must be positive");
  if (channels == 1) return AudioBuffer(interleaved, sample_rate);
  const size_t frames = interleaved.size() / channels;
  std::vector<float> mono(frames);
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) acc += interleaved[i * channels + c];
    mono[i] = static_cast<float>(acc / channels);
  }
  return AudioBuffer(std::move(mono), sample_rate);
}

AudioBuffer AudioBuffer::slice(const TimeRange &range) const {
  const int64_t n = static_cast<int64_t>(size_);
  const int64_t begin = std::clamp<int64_t>(to_samples(range.start_s, sample_rate_), 0, n);
  const int64_t end = std::clamp<int64_t>(to_samples(range.end_s, sample_rate_), begin, n);
  return padded_slice(begin, end, end - begin);
}

SpeakerEmbedding SpeakerEmbedding::from_raw(std::vector<float> raw, TimeRange chunk) {
  if (raw.empty()) throw Error("empty speaker embedding");
  double norm = 0.0;
  for (float v : raw) {
    if (!std::isfinite(v)) throw Error("non-finite speaker embedding component");
    norm += double(v) * v;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) throw Error("zero-norm speaker embedding");
  for (float &v : raw) v = static_cast<float>(v / norm);
  return {std::move(raw), chunk};
}

namespace {

using Json = nlohmann::json;

double get_real(const Json &value, const std::string &key) {
  if (!value.is_number()) throw ConfigError(key, "expected a number");
  const double x = value.get<double>();
  if (!std::isfinite(x)) throw ConfigError(key, "must be finite");
  return x;
}

void require(bool ok, const std::string &key, const std::string &message) {
  if (!ok) throw ConfigError(key, message);
}

struct StageField {
  const char *name;
  bool StageToggles::*member;
};

constexpr StageField kStageFields[] = {
    {"enhance", &StageToggles::enhance}, {"segment", &StageToggles::segment},
    {"cluster", &StageToggles::cluster}, {"tse", &StageToggles::tse},
    {"filter", &StageToggles::filter},   {"asr", &StageToggles::asr},
};

}  // namespace

PipelineConfig validate_config(const nlohmann::json &raw) {
  PipelineConfig c;
  if (raw.is_null()) return c;
  if (!raw.is_object()) throw ConfigError("<root>", "config must be a JSON object");

  const std::map<std::string, double PipelineConfig::*> reals = {
      {"enhance_window_s", &PipelineConfig::enhance_window_s},
      {"enhance_shift_s", &PipelineConfig::enhance_shift_s},
      {"vad_threshold", &PipelineConfig::vad_threshold},
      {"silence_split_s", &PipelineConfig::silence_split_s},
      {"pad_s", &PipelineConfig::pad_s},
      {"min_segment_s", &PipelineConfig::min_segment_s},
      {"soft_max_segment_s", &PipelineConfig::soft_max_segment_s},
      {"hard_max_segment_s", &PipelineConfig::hard_max_segment_s},
      {"embed_window_s", &PipelineConfig::embed_window_s},
      {"embed_shift_s", &PipelineConfig::embed_shift_s},
      {"cluster_merge_threshold", &PipelineConfig::cluster_merge_threshold},
      {"batch_max_hours", &PipelineConfig::batch_max_hours},
      {"seg_sim_threshold", &PipelineConfig::seg_sim_threshold},
      {"cluster_avg_threshold", &PipelineConfig::cluster_avg_threshold},
      {"cluster_max_threshold", &PipelineConfig::cluster_max_threshold},
      {"ovrl_threshold", &PipelineConfig::ovrl_threshold},
  };

  for (const auto &[key, value] : raw.items()) {
    if (auto it = reals.find(key); it != reals.end()) {
      c.*(it->second) = get_real(value, key);
    } else if (key == "k_max") {
      require(value.is_number_integer(), key, "expected an integer");
      require(value.get<int64_t>() >= 1 && value.get<int64_t>() <= 1000, key,
              "must be in [1, 1000]");
      c.k_max = value.get<int>();
    } else if (key == "rng_seed") {
      require(value.is_number_unsigned(), key, "expected a non-negative integer");
      c.rng_seed = value.get<uint64_t>();
    } else if (key == "batch_per_recording") {
      require(value.is_boolean(), key, "expected a boolean");
      c.batch_per_recording = value.get<bool>();
    } else if (key == "stages") {
      require(value.is_object(), key, "expected an object of stage toggles");
      for (const auto &[stage, flag] : value.items()) {
        const std::string full = "stages." + stage;
        auto field = std::find_if(std::begin(kStageFields), std::end(kStageFields),
                                  [&](const StageField &f) { return stage == f.name; });
        require(field != std::end(kStageFields), full, "unknown stage");
        require(flag.is_boolean(), full, "expected a boolean");
        c.stages.*(field->member) = flag.get<bool>();
      }
    } else if (key == "backends") {
      require(value.is_object(), key, "expected an object");
      c.backends = nlohmann::ordered_json::parse(value.dump());
    } else {
      throw ConfigError(key, "unknown key");
    }
  }

  for (const auto &[key, member] : reals) {
    if (key.ends_with("_s") || key == "batch_max_hours") {
      require(c.*member > 0.0, key, "must be positive");
    }
  }
  require(c.enhance_window_s > c.enhance_shift_s, "enhance_window_s",
          "window must exceed shift");
  require(c.embed_window_s >= c.embed_shift_s, "embed_window_s",
          "window must not be shorter than shift");
  require(c.min_segment_s <= c.soft_max_segment_s, "min_segment_s",
          "must not exceed soft_max_segment_s");
  require(c.soft_max_segment_s < c.hard_max_segment_s, "soft_max_segment_s",
          "must be below hard_max_segment_s");
  require(c.embed_window_s <= c.min_segment_s, "embed_window_s",
          "must not exceed min_segment_s");
  require(c.vad_threshold >= 0.0 && c.vad_threshold <= 1.0, "vad_threshold",
          "threshold outside [0, 1]");
  for (const char *key : {"cluster_merge_threshold", "seg_sim_threshold",
                          "cluster_avg_threshold", "cluster_max_threshold"}) {
    const double v = c.*(reals.at(key));
    require(v >= -1.0 && v <= 1.0, key, "cosine threshold outside [-1, 1]");
  }
  require(c.ovrl_threshold >= 0.0 && c.ovrl_threshold <= 5.0, "ovrl_threshold",
          "threshold outside [0, 5]");
  return c;
}

nlohmann::ordered_json config_to_json(const PipelineConfig &c) {
  nlohmann::ordered_json j;
  j["enhance_window_s"] = c.enhance_window_s;
  j["enhance_shift_s"] = c.enhance_shift_s;
  j["vad_threshold"] = c.vad_threshold;
  j["silence_split_s"] = c.silence_split_s;
  j["pad_s"] = c.pad_s;
  j["min_segment_s"] = c.min_segment_s;
  j["soft_max_segment_s"] = c.soft_max_segment_s;
  j["hard_max_segment_s"] = c.hard_max_segment_s;
  j["embed_window_s"] = c.embed_window_s;
  j["embed_shift_s"] = c.embed_shift_s;
  j["cluster_merge_threshold"] = c.cluster_merge_threshold;
  j["batch_max_hours"] = c.batch_max_hours;
  j["seg_sim_threshold"] = c.seg_sim_threshold;
  j["cluster_avg_threshold"] = c.cluster_avg_threshold;
  j["cluster_max_threshold"] = c.cluster_max_threshold;
  j["ovrl_threshold"] = c.ovrl_threshold;
  j["k_max"] = c.k_max;
  j["rng_seed"] = c.rng_seed;
  j["batch_per_recording"] = c.batch_per_recording;
  auto &stages = j["stages"];
  stages = nlohmann::ordered_json::object();
  for (const auto &field : kStageFields) stages[field.name] = c.stages.*(field.member);
  j["backends"] = c.backends;
  return j;
}

PipelineConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  nlohmann::json raw;
  try {
    raw = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error &e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return validate_config(raw);
}

}  // namespace autoprep
