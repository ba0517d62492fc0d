#include "autoprep/manifest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <tuple>

namespace autoprep {

namespace {

using Json = nlohmann::ordered_json;

template <typename T>
Json nullable(const std::optional<T> &v) {
  return v ? Json(*v) : Json(nullptr);
}

template <typename T>
std::optional<T> optional_of(const nlohmann::json &j, const char *key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

bool safe_id(const std::string &id) {
  if (id.empty() || id == "." || id == ".." || id.front() == '.') return false;
  return std::none_of(id.begin(), id.end(), [](char c) {
    return c == '/' || c == '\\' || c == '\0' || c == '\n' || c == '\t';
  });
}

std::string format_summary(const ScoreSummary &s) {
  if (s.count == 0) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", s.mean, s.std);
  return buf;
}

}  // namespace

std::vector<InputRecord> read_input_manifest(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open input manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<InputRecord> records;
  std::set<std::string> seen;
  std::string line;
  for (size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(where + "not a JSON object");
    InputRecord r;
    if (!j.contains("recording_id") || !j["recording_id"].is_string() ||
        !j.contains("path") || !j["path"].is_string()) {
      throw Error(where + "needs string 'recording_id' and 'path'");
    }
    r.recording_id = j["recording_id"].get<std::string>();
    if (!safe_id(r.recording_id)) throw Error(where + "unsafe recording_id '" + r.recording_id + "'");
    if (!seen.insert(r.recording_id).second) {
      throw Error(where + "duplicate recording_id '" + r.recording_id + "'");
    }
    r.path = j["path"].get<std::string>();
    if (r.path.is_relative()) r.path = base / r.path;
    if (j.contains("segments") && !j["segments"].is_null()) {
      std::vector<TimeRange> segments;
      for (const auto &pair : j["segments"]) {
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number()) {
          throw Error(where + "segments must be [start_s, end_s] pairs");
        }
        TimeRange t{pair[0].get<double>(), pair[1].get<double>()};
        if (!(t.start_s >= 0.0) || !(t.end_s > t.start_s)) {
          throw Error(where + "segment needs 0 <= start_s < end_s");
        }
        segments.push_back(t);
      }
      std::sort(segments.begin(), segments.end(),
                [](const TimeRange &a, const TimeRange &b) { return a.start_s < b.start_s; });
      r.segments = std::move(segments);
    }
    records.push_back(std::move(r));
  }
  return records;
}

Json ManifestRecord::to_json() const {
  Json j;
  j["recording_id"] = recording_id;
  j["segment_id"] = segment_id;
  j["start_s"] = start_s;
  j["end_s"] = end_s;
  j["speaker_label"] = nullable(speaker_label);
  j["cluster_similarity"] = nullable(cluster_similarity);
  j["ovrl_score"] = nullable(ovrl_score);
  j["pdnsmos_score"] = nullable(pdnsmos_score);
  j["transcript"] = nullable(transcript);
  j["audio_path"] = audio_path;
  j["stage_flags"] = stage_flags;
  if (!notes.empty()) j["notes"] = notes;
  return j;
}

ManifestRecord ManifestRecord::from_json(const nlohmann::json &j) {
  ManifestRecord r;
  r.recording_id = j.at("recording_id").get<std::string>();
  r.segment_id = j.at("segment_id").get<std::string>();
  r.start_s = j.at("start_s").get<double>();
  r.end_s = j.at("end_s").get<double>();
  r.speaker_label = optional_of<std::string>(j, "speaker_label");
  r.cluster_similarity = optional_of<double>(j, "cluster_similarity");
  r.ovrl_score = optional_of<double>(j, "ovrl_score");
  r.pdnsmos_score = optional_of<double>(j, "pdnsmos_score");
  r.transcript = optional_of<std::string>(j, "transcript");
  r.audio_path = j.value("audio_path", "");
  r.stage_flags = j.value("stage_flags", std::vector<std::string>{});
  r.notes = j.value("notes", std::vector<std::string>{});
  return r;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  std::vector<ManifestRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(ManifestRecord::from_json(nlohmann::json::parse(line)));
  }
  return records;
}

void write_manifest(const std::filesystem::path &path, std::vector<ManifestRecord> records) {
  std::sort(records.begin(), records.end(), [](const ManifestRecord &a, const ManifestRecord &b) {
    return std::tie(a.recording_id, a.start_s, a.segment_id) <
           std::tie(b.recording_id, b.start_s, b.segment_id);
  });
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (const auto &r : records) out << r.to_json().dump() << '\n';
    if (!out) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ScoreSummary summarize(std::span<const double> values) {
  ScoreSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / double(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / double(values.size()));
  return s;
}

CorpusStats compute_stats(std::span<const ManifestRecord> manifest,
                          std::span<const StageRetention> retention) {
  CorpusStats stats;
  std::set<std::string> speakers;
  std::vector<double> ovrl, pdnsmos;
  double seconds = 0.0;
  for (const auto &r : manifest) {
    seconds += r.end_s - r.start_s;
    if (r.speaker_label) speakers.insert(*r.speaker_label);
    if (r.ovrl_score) ovrl.push_back(*r.ovrl_score);
    if (r.pdnsmos_score) pdnsmos.push_back(*r.pdnsmos_score);
  }
  stats.total_duration_h = seconds / 3600.0;
  stats.num_segments = manifest.size();
  stats.num_speakers = speakers.size();
  stats.ovrl = summarize(ovrl);
  stats.pdnsmos = summarize(pdnsmos);
  stats.retention.assign(retention.begin(), retention.end());
  return stats;
}

Json CorpusStats::to_json() const {
  auto summary = [](const ScoreSummary &s) {
    return Json{{"count", s.count}, {"mean", s.mean}, {"std", s.std}};
  };
  Json j;
  j["total_duration_h"] = total_duration_h;
  j["num_segments"] = num_segments;
  j["num_speakers"] = num_speakers;
  j["ovrl"] = summary(ovrl);
  j["pdnsmos"] = summary(pdnsmos);
  auto &list = j["retention"];
  list = Json::array();
  for (const auto &r : retention) {
    list.push_back({{"stage", r.stage}, {"segments", r.segments}, {"duration_h", r.duration_h}});
  }
  return j;
}

CorpusStats CorpusStats::from_json(const nlohmann::json &j) {
  auto summary = [](const nlohmann::json &s) {
    return ScoreSummary{s.at("count").get<size_t>(), s.at("mean").get<double>(), s.at("std").get<double>()};
  };
  CorpusStats c;
  c.total_duration_h = j.at("total_duration_h").get<double>();
  c.num_segments = j.at("num_segments").get<size_t>();
  c.num_speakers = j.at("num_speakers").get<size_t>();
  c.ovrl = summary(j.at("ovrl"));
  c.pdnsmos = summary(j.at("pdnsmos"));
  for (const auto &r : j.value("retention", nlohmann::json::array())) {
    c.retention.push_back({r.at("stage").get<std::string>(), r.at("segments").get<size_t>(),
                           r.at("duration_h").get<double>()});
  }
  return c;
}

std::string CorpusStats::table_row() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2fh", total_duration_h);
  return std::string(buf) + "  " + std::to_string(num_speakers) + "  " + format_summary(ovrl) +
         "  " + format_summary(pdnsmos);
}

}  // namespace autoprep
