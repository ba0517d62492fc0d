// Deterministic in-process backends for tests and fixture-driven runs.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "autoprep/backends.h"

namespace autoprep {

class IdentityEnhancer : public Enhancer {
 public:
  Capabilities capabilities() const override { return {}; }
  AudioBuffer enhance(AudioBuffer audio) override { return audio; }
};

class GainEnhancer : public Enhancer {
 public:
  explicit GainEnhancer(float gain) : gain_(gain) {}
  Capabilities capabilities() const override { return {}; }
  AudioBuffer enhance(AudioBuffer audio) override;

 private:
  float gain_;
};

// Test-only VAD: per-frame probability = min(1, frame RMS / rms_threshold).
class EnergyVad : public VoiceActivityDetector {
 public:
  EnergyVad(double hop_s, double rms_threshold);
  Capabilities capabilities() const override;
  FrameTrack detect(const AudioContext &ctx, const AudioBuffer &audio) override;

 private:
  double hop_s_;
  double rms_threshold_;
};

// Fixture lookup key: (recording_id, start time in integer milliseconds).
using FixtureKey = std::pair<std::string, int64_t>;
FixtureKey fixture_key(const std::string &recording_id, double start_s);

// Replays embeddings from JSONL records
//   {"recording_id": str, "start_s": real, "vector": [real, ...]}
class FixtureEmbedder : public SpeakerEmbedder {
 public:
  explicit FixtureEmbedder(std::map<FixtureKey, std::vector<float>> table);
  static FixtureEmbedder from_jsonl(const std::filesystem::path &path);

  Capabilities capabilities() const override;
  std::vector<float> embed(const AudioContext &chunk, const AudioBuffer &audio) override;

 private:
  std::map<FixtureKey, std::vector<float>> table_;
  int dim_ = 0;
};

// Pseudo-embedding seeded by a digest of the chunk samples.
class HashEmbedder : public SpeakerEmbedder {
 public:
  explicit HashEmbedder(int dim) : dim_(dim) {}
  Capabilities capabilities() const override;
  std::vector<float> embed(const AudioContext &chunk, const AudioBuffer &audio) override;

 private:
  int dim_;
};

class PassthroughExtractor : public TargetExtractor {
 public:
  Capabilities capabilities() const override { return {}; }
  AudioBuffer extract(const AudioContext &, const AudioBuffer &audio,
                      std::span<const float>) override {
    return audio;
  }
};

class GainExtractor : public TargetExtractor {
 public:
  explicit GainExtractor(float gain) : gain_(gain) {}
  Capabilities capabilities() const override { return {}; }
  AudioBuffer extract(const AudioContext &ctx, const AudioBuffer &audio,
                      std::span<const float> enrollment) override;

 private:
  float gain_;
};

// Replay tables for per-segment backends. A record is keyed by "segment_id"
// when present, otherwise by ("recording_id", "start_s"). A record carrying
// "error" makes the call fail with that message.
template <typename T>
class ScriptTable {
 public:
  struct Entry {
    std::optional<T> value;
    std::string error;
  };

  void add_segment(std::string segment_id, Entry entry) {
    by_segment_[std::move(segment_id)] = std::move(entry);
  }
  void add_time(FixtureKey key, Entry entry) { by_time_[std::move(key)] = std::move(entry); }
  const T &lookup(const AudioContext &ctx) const;

 private:
  std::map<std::string, Entry> by_segment_;
  std::map<FixtureKey, Entry> by_time_;
};

// JSONL records with "ovrl" and optional "pdnsmos".
class ScriptedScorer : public QualityScorer {
 public:
  explicit ScriptedScorer(ScriptTable<QualityScore> table) : table_(std::move(table)) {}
  static ScriptedScorer from_jsonl(const std::filesystem::path &path);
  Capabilities capabilities() const override { return {}; }
  QualityScore score(const AudioContext &ctx, const AudioBuffer &audio) override;

 private:
  ScriptTable<QualityScore> table_;
};

// JSONL records with "text".
class ScriptedTranscriber : public Transcriber {
 public:
  explicit ScriptedTranscriber(ScriptTable<std::string> table) : table_(std::move(table)) {}
  static ScriptedTranscriber from_jsonl(const std::filesystem::path &path);
  Capabilities capabilities() const override { return {}; }
  std::string transcribe(const AudioContext &ctx, const AudioBuffer &audio) override;

 private:
  ScriptTable<std::string> table_;
};

template <typename T>
const T &ScriptTable<T>::lookup(const AudioContext &ctx) const {
  const Entry *entry = nullptr;
  if (auto it = by_segment_.find(ctx.segment_id); it != by_segment_.end()) {
    entry = &it->second;
  } else if (auto jt = by_time_.find(fixture_key(ctx.recording_id, ctx.range.start_s));
             jt != by_time_.end()) {
    entry = &jt->second;
  }
  if (!entry) {
    throw BackendError("no scripted entry for segment '" + ctx.segment_id + "' of '" +
                       ctx.recording_id + "'");
  }
  if (!entry->value) throw BackendError(entry->error);
  return *entry->value;
}

}  // namespace autoprep
