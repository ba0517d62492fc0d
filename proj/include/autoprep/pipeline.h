// End-to-end orchestration: enhance -> segment -> cluster -> TSE -> filter ->
// transcribe -> persist, with per-recording checkpoints under
// <out>/.checkpoints so an interrupted run can resume without recomputation.
//
// Output layout:
//   <out>/<recording_id>/<segment_id>.wav   float32, native rate
//   <out>/manifest.jsonl                    speaker-labeled corpus
//   <out>/manifest.unlabeled.jsonl          unlabeled segments that passed quality
//   <out>/filter_report.json
//   <out>/stats.json
//   <out>/run_summary.json                  skipped recordings, TSE failures

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autoprep/backends.h"
#include "autoprep/core.h"
#include "autoprep/filter.h"
#include "autoprep/manifest.h"

namespace autoprep {

// A backend is missing for an enabled stage or cannot take a recording's
// sample rate. Raised before any recording is processed.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Raised by the checkpoint-write limit in RunOptions.
class Interrupted : public Error {
 public:
  using Error::Error;
};

// Runs the target speech extractor with the cluster center as enrollment.
// Throws Error if the segment is unlabeled and BackendError if the backend fails
// or changes the duration or rate.
AudioBuffer extract_target(const Segment &segment, const AudioBuffer &audio,
                           std::span<const double> center, TargetExtractor &extractor);

struct TranscriptResult {
  std::optional<std::string> transcript;
  std::optional<std::string> note;  // "asr_error" or "transcript_empty"
};

using SegmentAudioFn = std::function<AudioBuffer(const Segment &)>;

// Transcript per segment, in input order. Backend failures never throw.
std::vector<TranscriptResult> transcribe_segments(std::span<const Segment> segments,
                                                  const SegmentAudioFn &audio,
                                                  Transcriber &transcriber, int workers = 1);

// Checks that every enabled stage has a backend accepting each sample rate.
void check_capabilities(const PipelineConfig &config, const BackendSet &backends,
                        const std::map<std::string, int> &rate_by_recording);

struct RunOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  int workers = 1;
  bool quiet = false;
  // Stop with Interrupted once this many checkpoint shards have been written.
  std::optional<size_t> max_checkpoint_writes;
};

struct SkippedRecording {
  std::string recording_id;
  std::string reason;
};

struct RunResult {
  std::vector<ManifestRecord> manifest;
  std::vector<ManifestRecord> unlabeled;
  FilterReport report;
  CorpusStats stats;
  std::vector<SkippedRecording> skipped;
  size_t tse_errors = 0;
  size_t checkpoint_writes = 0;
};

RunResult run_pipeline(std::span<const InputRecord> inputs, const PipelineConfig &config,
                       const BackendSet &backends, const RunOptions &options);

// Writes <out>/embeddings/batch-NNNN.tsv from the clustering checkpoints and
// returns the written paths.
std::vector<std::filesystem::path> export_embeddings(const std::filesystem::path &out_dir);

}  // namespace autoprep
