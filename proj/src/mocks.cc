#include "autoprep/mocks.h"

#include <bit>
#include <cmath>
#include <fstream>

namespace autoprep {

namespace {

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw BackendError("cannot open fixture " + path.string());
  std::vector<nlohmann::json> records;
  std::string line;
  for (size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception &e) {
      throw BackendError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

template <typename T, typename Parse>
ScriptTable<T> load_table(const std::filesystem::path &path, Parse parse) {
  ScriptTable<T> table;
  for (const auto &r : read_jsonl(path)) {
    typename ScriptTable<T>::Entry entry;
    if (r.contains("error")) {
      entry.error = r.at("error").get<std::string>();
    } else {
      entry.value = parse(r);
    }
    if (r.contains("segment_id")) {
      table.add_segment(r.at("segment_id").get<std::string>(), std::move(entry));
    } else {
      table.add_time(fixture_key(r.at("recording_id").get<std::string>(), r.at("start_s").get<double>()),
                     std::move(entry));
    }
  }
  return table;
}

uint64_t splitmix64(uint64_t &state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

AudioBuffer GainEnhancer::enhance(AudioBuffer audio) {
  std::vector<float> out = audio.to_vector();
  for (float &s : out) s *= gain_;
  return AudioBuffer(std::move(out), audio.sample_rate());
}

EnergyVad::EnergyVad(double hop_s, double rms_threshold) : hop_s_(hop_s), rms_threshold_(rms_threshold) {
  if (!(hop_s > 0.0) || !(rms_threshold > 0.0)) {
    throw BackendError("energy VAD needs positive hop and threshold");
  }
}

Capabilities EnergyVad::capabilities() const {
  Capabilities caps;
  caps.frame_hop_s = hop_s_;
  return caps;
}

FrameTrack EnergyVad::detect(const AudioContext &, const AudioBuffer &audio) {
  const auto &x = audio.samples();
  const auto n = static_cast<int64_t>(x.size());
  const auto frames = static_cast<int64_t>(std::ceil(audio.duration_s() / hop_s_ - 1e-9));
  FrameTrack track{std::vector<double>(static_cast<size_t>(std::max<int64_t>(frames, 0))), hop_s_};
  for (int64_t f = 0; f < frames; ++f) {
    const int64_t begin = std::min(n, to_samples(double(f) * hop_s_, audio.sample_rate()));
    const int64_t end = std::min(n, to_samples(double(f + 1) * hop_s_, audio.sample_rate()));
    double energy = 0.0;
    for (int64_t i = begin; i < end; ++i) energy += double(x[i]) * x[i];
    const double rms = end > begin ? std::sqrt(energy / double(end - begin)) : 0.0;
    track.probs[f] = std::min(1.0, rms / rms_threshold_);
  }
  return track;
}

FixtureKey fixture_key(const std::string &recording_id, double start_s) {
  return {recording_id, to_samples(start_s, 1000.0)};
}

FixtureEmbedder::FixtureEmbedder(std::map<FixtureKey, std::vector<float>> table)
    : table_(std::move(table)) {
  for (const auto &[key, v] : table_) {
    if (dim_ == 0) dim_ = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != dim_) throw BackendError("fixture embeddings differ in dimension");
  }
}

FixtureEmbedder FixtureEmbedder::from_jsonl(const std::filesystem::path &path) {
  std::map<FixtureKey, std::vector<float>> table;
  for (const auto &r : read_jsonl(path)) {
    table[fixture_key(r.at("recording_id").get<std::string>(), r.at("start_s").get<double>())] =
        r.at("vector").get<std::vector<float>>();
  }
  return FixtureEmbedder(std::move(table));
}

Capabilities FixtureEmbedder::capabilities() const {
  Capabilities caps;
  caps.embedding_dim = dim_;
  return caps;
}

std::vector<float> FixtureEmbedder::embed(const AudioContext &chunk, const AudioBuffer &) {
  auto it = table_.find(fixture_key(chunk.recording_id, chunk.range.start_s));
  if (it == table_.end()) {
    throw BackendError("no fixture embedding for '" + chunk.recording_id + "' at " +
                       std::to_string(chunk.range.start_s) + " s");
  }
  return it->second;
}

Capabilities HashEmbedder::capabilities() const {
  Capabilities caps;
  caps.embedding_dim = dim_;
  return caps;
}

std::vector<float> HashEmbedder::embed(const AudioContext &, const AudioBuffer &audio) {
  uint64_t digest = 0xCBF29CE484222325ull;  // FNV-1a over the sample bits
  for (float s : audio.samples()) {
    uint32_t bits = std::bit_cast<uint32_t>(s);
    for (int b = 0; b < 4; ++b) {
      digest ^= (bits >> (8 * b)) & 0xFF;
      digest *= 0x100000001B3ull;
    }
  }
  std::vector<float> v(static_cast<size_t>(dim_));
  for (float &x : v) x = static_cast<float>(double(splitmix64(digest) >> 11) * 0x1.0p-52 - 1.0);
  return SpeakerEmbedding::from_raw(std::move(v), {}).vector;
}

AudioBuffer GainExtractor::extract(const AudioContext &, const AudioBuffer &audio,
                                   std::span<const float>) {
  std::vector<float> out = audio.to_vector();
  for (float &s : out) s *= gain_;
  return AudioBuffer(std::move(out), audio.sample_rate());
}

ScriptedScorer ScriptedScorer::from_jsonl(const std::filesystem::path &path) {
  return ScriptedScorer(load_table<QualityScore>(path, [](const nlohmann::json &r) {
    QualityScore s;
    s.ovrl = r.at("ovrl").get<double>();
    if (r.contains("pdnsmos") && !r.at("pdnsmos").is_null()) s.pdnsmos = r.at("pdnsmos").get<double>();
    return s;
  }));
}

QualityScore ScriptedScorer::score(const AudioContext &ctx, const AudioBuffer &) {
  return table_.lookup(ctx);
}

ScriptedTranscriber ScriptedTranscriber::from_jsonl(const std::filesystem::path &path) {
  return ScriptedTranscriber(load_table<std::string>(
      path, [](const nlohmann::json &r) { return r.at("text").get<std::string>(); }));
}

std::string ScriptedTranscriber::transcribe(const AudioContext &ctx, const AudioBuffer &) {
  return table_.lookup(ctx);
}

}  // namespace autoprep
