// Input and output manifests, corpus statistics.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autoprep/core.h"

namespace autoprep {

// One line of the input manifest:
//   {"recording_id": str, "path": str, "segments": optional [[start_s, end_s], ...]}
struct InputRecord {
  std::string recording_id;
  std::filesystem::path path;
  std::optional<std::vector<TimeRange>> segments;
};

// Relative audio paths resolve against the manifest's directory. Throws Error
// on malformed lines, duplicate or unsafe recording ids.
std::vector<InputRecord> read_input_manifest(const std::filesystem::path &path);

struct ManifestRecord {
  std::string recording_id;
  std::string segment_id;
  double start_s = 0.0;
  double end_s = 0.0;
  std::optional<std::string> speaker_label;  // "<batch>.<cluster>"
  std::optional<double> cluster_similarity;
  std::optional<double> ovrl_score;
  std::optional<double> pdnsmos_score;
  std::optional<std::string> transcript;
  std::string audio_path;  // relative to the output directory
  std::vector<std::string> stage_flags;
  std::vector<std::string> notes;  // e.g. "asr_error", "transcript_empty"

  nlohmann::ordered_json to_json() const;
  static ManifestRecord from_json(const nlohmann::json &j);
};

std::vector<ManifestRecord> read_manifest(const std::filesystem::path &path);
// Sorted by (recording_id, start_s); written atomically.
void write_manifest(const std::filesystem::path &path, std::vector<ManifestRecord> records);

struct StageRetention {
  std::string stage;
  size_t segments = 0;
  double duration_h = 0.0;
};

struct ScoreSummary {
  size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // population
};

struct CorpusStats {
  double total_duration_h = 0.0;
  size_t num_segments = 0;
  size_t num_speakers = 0;
  ScoreSummary ovrl;
  ScoreSummary pdnsmos;
  std::vector<StageRetention> retention;

  nlohmann::ordered_json to_json() const;
  static CorpusStats from_json(const nlohmann::json &j);
  // "Dur  nSpk  DNSMOS  PDNSMOS" row, e.g. "0.01h  1  3.00±0.50  NA".
  std::string table_row() const;
};

CorpusStats compute_stats(std::span<const ManifestRecord> manifest,
                          std::span<const StageRetention> retention = {});

ScoreSummary summarize(std::span<const double> values);

}  // namespace autoprep
