// Adapter interfaces for the six model roles. Neural models live behind these;
// the pipeline never implements them.

#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "autoprep/core.h"
#include "autoprep/segmenter.h"

namespace autoprep {

enum class BackendRole {
  kEnhancer,
  kVoiceActivityDetector,
  kSpeakerEmbedder,
  kTargetExtractor,
  kQualityScorer,
  kTranscriber,
};

std::string_view role_name(BackendRole role);
std::optional<BackendRole> role_from_name(std::string_view name);

class BackendError : public Error {
 public:
  using Error::Error;
};

// Fixed for the lifetime of a backend session.
struct Capabilities {
  std::vector<int> sample_rates;  // empty: any rate
  int embedding_dim = 0;          // embedder only
  double frame_hop_s = 0.0;       // VAD only

  bool supports(int sample_rate) const;
};

// Identifies the audio a per-segment or per-chunk request refers to.
struct AudioContext {
  std::string recording_id;
  std::string segment_id;
  TimeRange range;
};

struct QualityScore {
  double ovrl = 0.0;
  std::optional<double> pdnsmos;
};

// Implementations must be safe to call from several threads at once.
class Enhancer {
 public:
  virtual ~Enhancer() = default;
  virtual Capabilities capabilities() const = 0;
  // Takes its input by value so pass-through implementations can move it.
  virtual AudioBuffer enhance(AudioBuffer audio) = 0;
};

class VoiceActivityDetector {
 public:
  virtual ~VoiceActivityDetector() = default;
  virtual Capabilities capabilities() const = 0;
  virtual FrameTrack detect(const AudioContext &ctx, const AudioBuffer &audio) = 0;
};

class SpeakerEmbedder {
 public:
  virtual ~SpeakerEmbedder() = default;
  virtual Capabilities capabilities() const = 0;
  // Raw (not necessarily unit-norm) embedding for one chunk.
  virtual std::vector<float> embed(const AudioContext &chunk, const AudioBuffer &audio) = 0;
};

class TargetExtractor {
 public:
  virtual ~TargetExtractor() = default;
  virtual Capabilities capabilities() const = 0;
  virtual AudioBuffer extract(const AudioContext &ctx, const AudioBuffer &audio,
                              std::span<const float> enrollment) = 0;
};

class QualityScorer {
 public:
  virtual ~QualityScorer() = default;
  virtual Capabilities capabilities() const = 0;
  virtual QualityScore score(const AudioContext &ctx, const AudioBuffer &audio) = 0;
};

class Transcriber {
 public:
  virtual ~Transcriber() = default;
  virtual Capabilities capabilities() const = 0;
  virtual std::string transcribe(const AudioContext &ctx, const AudioBuffer &audio) = 0;
};

struct BackendSet {
  std::shared_ptr<Enhancer> enhancer;
  std::shared_ptr<VoiceActivityDetector> vad;
  std::shared_ptr<SpeakerEmbedder> embedder;
  std::shared_ptr<TargetExtractor> extractor;
  std::shared_ptr<QualityScorer> scorer;
  std::shared_ptr<Transcriber> transcriber;
};

// Builds backends from the config "backends" object, one entry per role:
//   {"enhancer": {"type": "identity"}, "vad": {"type": "energy", ...}, ...}
// Types: identity, gain, energy, fixture, hash, passthrough, scripted, process,
// socket. Relative fixture paths resolve against base_dir.
BackendSet make_backend_set(const nlohmann::ordered_json &spec,
                            const std::filesystem::path &base_dir);

}  // namespace autoprep
