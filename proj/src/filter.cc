#include "autoprep/filter.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace autoprep {

size_t FilterReport::dropped_count() const {
  size_t total = 0;
  for (const auto &[rule, count] : dropped_by_rule) total += count;
  return total;
}

nlohmann::ordered_json FilterReport::to_json() const {
  nlohmann::ordered_json j;
  j["input_count"] = input_count;
  j["retained_count"] = retained_count;
  auto &dropped = j["dropped_by_rule"];
  dropped = nlohmann::ordered_json::object();
  for (const auto &[rule, count] : dropped_by_rule) dropped[rule] = count;
  auto &list = j["clusters"];
  list = nlohmann::ordered_json::array();
  for (const auto &c : clusters) {
    list.push_back({{"label", c.label},
                    {"avg_similarity", c.avg_similarity},
                    {"max_similarity", c.max_similarity},
                    {"size", c.size},
                    {"retained", c.retained}});
  }
  return j;
}

FilterReport FilterReport::from_json(const nlohmann::json &j) {
  FilterReport r;
  r.input_count = j.at("input_count").get<size_t>();
  r.retained_count = j.at("retained_count").get<size_t>();
  for (const auto &[rule, count] : j.at("dropped_by_rule").items()) {
    r.dropped_by_rule[rule] = count.get<size_t>();
  }
  for (const auto &c : j.at("clusters")) {
    r.clusters.push_back({c.at("label").get<std::string>(), c.at("avg_similarity").get<double>(),
                          c.at("max_similarity").get<double>(), c.at("size").get<size_t>(),
                          c.at("retained").get<bool>()});
  }
  return r;
}

FilterThresholds FilterThresholds::from_config(const PipelineConfig &config) {
  return {config.seg_sim_threshold, config.cluster_avg_threshold, config.cluster_max_threshold,
          config.ovrl_threshold};
}

double segment_similarity(std::span<const SpeakerEmbedding> chunk_embeddings,
                          std::span<const double> center) {
  if (chunk_embeddings.empty()) throw Error("segment has no chunk embeddings");
  Vector mean(center.size(), 0.0);
  for (const auto &e : chunk_embeddings) {
    if (e.vector.size() != center.size()) throw Error("embedding/center dimension mismatch");
    for (size_t j = 0; j < mean.size(); ++j) mean[j] += e.vector[j];
  }
  return cosine(std::span<const double>(mean), center);
}

std::vector<Segment> filter_by_segment_similarity(std::span<const Segment> segments,
                                                  double threshold, FilterReport &report) {
  std::vector<Segment> kept;
  for (const auto &s : segments) {
    if (!s.speaker_label) {
      ++report.dropped_by_rule[drop_reason::kUnlabeled];
    } else if (!s.cluster_similarity) {
      throw Error("labeled segment " + s.segment_id + " has no cluster similarity");
    } else if (*s.cluster_similarity >= threshold) {
      kept.push_back(s);
    } else {
      ++report.dropped_by_rule[drop_reason::kSegmentSimilarity];
    }
  }
  return kept;
}

std::vector<Segment> filter_by_cluster_reliability(std::span<const Segment> segments,
                                                   double avg_threshold, double max_threshold,
                                                   FilterReport &report,
                                                   std::vector<ClusterStats> *stats) {
  std::map<std::string, ClusterStats> clusters;
  std::map<std::string, double> sums;
  for (const auto &s : segments) {
    if (!s.speaker_label || !s.cluster_similarity) {
      throw Error("cluster reliability needs labeled segments with similarities");
    }
    auto &c = clusters[*s.speaker_label];
    const double sim = *s.cluster_similarity;
    c.max_similarity = c.size == 0 ? sim : std::max(c.max_similarity, sim);
    sums[*s.speaker_label] += sim;
    ++c.size;
  }
  for (auto &[label, c] : clusters) {
    c.label = label;
    c.avg_similarity = sums[label] / double(c.size);
    c.retained = !(c.avg_similarity < avg_threshold && c.max_similarity < max_threshold);
  }

  std::vector<Segment> kept;
  for (const auto &s : segments) {
    if (clusters[*s.speaker_label].retained) {
      kept.push_back(s);
    } else {
      ++report.dropped_by_rule[drop_reason::kClusterReliability];
    }
  }
  if (stats) {
    stats->clear();
    for (auto &[label, c] : clusters) stats->push_back(c);
  }
  return kept;
}

std::vector<Segment> filter_by_quality(std::span<const Segment> segments, const ScoreFn &scorer,
                                       double ovrl_threshold, FilterReport &report) {
  std::vector<Segment> kept;
  for (const auto &s : segments) {
    QualityScore score;
    try {
      score = scorer(s);
    } catch (const std::exception &) {
      ++report.dropped_by_rule[drop_reason::kScorerError];
      continue;
    }
    if (!std::isfinite(score.ovrl)) {
      ++report.dropped_by_rule[drop_reason::kScorerError];
      continue;
    }
    if (score.ovrl < ovrl_threshold) {
      ++report.dropped_by_rule[drop_reason::kQualityScore];
      continue;
    }
    Segment out = s;
    out.ovrl_score = score.ovrl;
    out.pdnsmos_score = score.pdnsmos;
    kept.push_back(std::move(out));
  }
  return kept;
}

std::vector<Segment> run_filter_chain(std::span<const Segment> segments,
                                      const FilterThresholds &thresholds, const ScoreFn &scorer,
                                      FilterReport &report) {
  report.input_count += segments.size();
  auto kept = filter_by_segment_similarity(segments, thresholds.segment_similarity, report);
  std::vector<ClusterStats> stats;
  kept = filter_by_cluster_reliability(kept, thresholds.cluster_avg, thresholds.cluster_max, report,
                                       &stats);
  kept = filter_by_quality(kept, scorer, thresholds.ovrl, report);
  std::vector<ClusterStats> recheck;
  kept = filter_by_cluster_reliability(kept, thresholds.cluster_avg, thresholds.cluster_max, report,
                                       &recheck);
  for (auto &c : stats) {
    auto it = std::find_if(recheck.begin(), recheck.end(),
                           [&](const ClusterStats &r) { return r.label == c.label; });
    c.retained = it != recheck.end() && it->retained;
  }
  report.clusters.insert(report.clusters.end(), stats.begin(), stats.end());
  std::sort(report.clusters.begin(), report.clusters.end(),
            [](const ClusterStats &a, const ClusterStats &b) { return a.label < b.label; });
  report.retained_count += kept.size();
  return kept;
}

}  // namespace autoprep
