// Quality filtering of clustered segments. Thresholds are inclusive on the
// keep side: a value equal to the threshold is retained.

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "autoprep/backends.h"
#include "autoprep/core.h"
#include "autoprep/diarize.h"

namespace autoprep {

namespace drop_reason {
inline constexpr const char *kSegmentSimilarity = "segment_similarity";
inline constexpr const char *kClusterReliability = "cluster_reliability";
inline constexpr const char *kQualityScore = "quality_score";
inline constexpr const char *kUnlabeled = "unlabeled";
inline constexpr const char *kScorerError = "scorer_error";
}  // namespace drop_reason

struct ClusterStats {
  std::string label;
  double avg_similarity = 0.0;
  double max_similarity = 0.0;
  size_t size = 0;
  bool retained = true;
};

struct FilterReport {
  size_t input_count = 0;
  size_t retained_count = 0;
  std::map<std::string, size_t> dropped_by_rule{
      {drop_reason::kSegmentSimilarity, 0}, {drop_reason::kClusterReliability, 0},
      {drop_reason::kQualityScore, 0},      {drop_reason::kUnlabeled, 0},
      {drop_reason::kScorerError, 0},
  };
  // Computed after segment-similarity filtering, ordered by label.
  std::vector<ClusterStats> clusters;

  size_t dropped_count() const;
  bool reconciles() const { return input_count == retained_count + dropped_count(); }
  nlohmann::ordered_json to_json() const;
  static FilterReport from_json(const nlohmann::json &j);
};

struct FilterThresholds {
  double segment_similarity = 0.5;
  double cluster_avg = 0.55;
  double cluster_max = 0.6;
  double ovrl = 2.4;

  static FilterThresholds from_config(const PipelineConfig &config);
};

// Cosine between the normalized mean of a segment's chunk embeddings and its
// cluster center.
double segment_similarity(std::span<const SpeakerEmbedding> chunk_embeddings,
                          std::span<const double> center);

// Keeps labeled segments with similarity >= threshold. Unlabeled segments are
// dropped and counted under `unlabeled`.
std::vector<Segment> filter_by_segment_similarity(std::span<const Segment> segments,
                                                  double threshold, FilterReport &report);

// Drops every segment of a cluster whose average similarity is below avg_threshold
// and whose maximum similarity is below max_threshold. Returns per-cluster stats.
std::vector<Segment> filter_by_cluster_reliability(std::span<const Segment> segments,
                                                   double avg_threshold, double max_threshold,
                                                   FilterReport &report,
                                                   std::vector<ClusterStats> *stats = nullptr);

// Scores each segment once. The scorer may throw; such segments are dropped
// as `scorer_error`. Retained segments carry their scores.
using ScoreFn = std::function<QualityScore(const Segment &)>;
std::vector<Segment> filter_by_quality(std::span<const Segment> segments, const ScoreFn &scorer,
                                       double ovrl_threshold, FilterReport &report);

// segment similarity -> cluster reliability -> quality, followed by one more
// cluster-reliability check on the survivors so that the chain is idempotent.
std::vector<Segment> run_filter_chain(std::span<const Segment> segments,
                                      const FilterThresholds &thresholds, const ScoreFn &scorer,
                                      FilterReport &report);

}  // namespace autoprep
