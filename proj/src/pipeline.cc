#include "autoprep/pipeline.h"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <mutex>
#include <set>
#include <tuple>

#include "autoprep/diarize.h"
#include "autoprep/parallel.h"
#include "autoprep/segmenter.h"
#include "autoprep/wav.h"
#include "autoprep/windowed_enhance.h"

namespace autoprep {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

AudioBuffer extract_target(const Segment &segment, const AudioBuffer &audio,
                           std::span<const double> center, TargetExtractor &extractor) {
  if (!segment.speaker_label) throw Error("segment " + segment.segment_id + " is unlabeled");
  std::vector<float> enrollment(center.begin(), center.end());
  AudioContext ctx{segment.recording_id, segment.segment_id, segment.range};
  AudioBuffer out = extractor.extract(ctx, audio, enrollment);
  if (out.sample_rate() != audio.sample_rate() || out.size() != audio.size()) {
    throw BackendError("extractor changed the length or rate of " + segment.segment_id);
  }
  return out;
}

std::vector<TranscriptResult> transcribe_segments(std::span<const Segment> segments,
                                                  const SegmentAudioFn &audio,
                                                  Transcriber &transcriber, int workers) {
  std::vector<TranscriptResult> results(segments.size());
  parallel_for(segments.size(), workers, [&](size_t i) {
    const Segment &s = segments[i];
    try {
      std::string text = transcriber.transcribe({s.recording_id, s.segment_id, s.range}, audio(s));
      if (text.empty()) results[i].note = "transcript_empty";
      results[i].transcript = std::move(text);
    } catch (const BackendError &) {
      results[i] = {std::nullopt, "asr_error"};
    }
  });
  return results;
}

void check_capabilities(const PipelineConfig &config, const BackendSet &backends,
                        const std::map<std::string, int> &rate_by_recording) {
  struct Need {
    bool enabled;
    const char *stage;
    BackendRole role;
    const void *backend;
    std::function<Capabilities()> caps;
  };
  const StageToggles &st = config.stages;
  const Need needs[] = {
      {st.enhance, "enhance", BackendRole::kEnhancer, backends.enhancer.get(),
       [&] { return backends.enhancer->capabilities(); }},
      {st.segment, "segment", BackendRole::kVoiceActivityDetector, backends.vad.get(),
       [&] { return backends.vad->capabilities(); }},
      {st.cluster, "cluster", BackendRole::kSpeakerEmbedder, backends.embedder.get(),
       [&] { return backends.embedder->capabilities(); }},
      {st.tse && st.cluster, "tse", BackendRole::kTargetExtractor, backends.extractor.get(),
       [&] { return backends.extractor->capabilities(); }},
      {st.filter, "filter", BackendRole::kQualityScorer, backends.scorer.get(),
       [&] { return backends.scorer->capabilities(); }},
      {st.asr, "asr", BackendRole::kTranscriber, backends.transcriber.get(),
       [&] { return backends.transcriber->capabilities(); }},
  };
  for (const Need &n : needs) {
    if (!n.enabled) continue;
    const std::string role(role_name(n.role));
    if (!n.backend) {
      throw CapabilityError("stage '" + std::string(n.stage) + "' is enabled but no " + role +
                            " backend is configured");
    }
    const Capabilities caps = n.caps();
    for (const auto &[rec, rate] : rate_by_recording) {
      if (!caps.supports(rate)) {
        throw CapabilityError(role + " backend does not support " + std::to_string(rate) +
                              " Hz (recording " + rec + ")");
      }
    }
  }
}

namespace {

class Logger {
 public:
  explicit Logger(bool quiet) : quiet_(quiet) {}
  void operator()(const std::string &message) {
    if (quiet_) return;
    std::lock_guard lock(mu_);
    std::fprintf(stderr, "[autoprep] %s\n", message.c_str());
  }

 private:
  bool quiet_;
  std::mutex mu_;
};

// Stage shards are JSONL files replaced atomically, so a shard is either
// absent or complete.
class CheckpointStore {
 public:
  CheckpointStore(fs::path dir, std::optional<size_t> limit) : dir_(std::move(dir)), limit_(limit) {
    fs::create_directories(dir_);
  }

  const fs::path &dir() const { return dir_; }
  fs::path path(const std::string &name) const { return dir_ / name; }

  std::optional<std::vector<nlohmann::json>> load(const std::string &name) const {
    std::ifstream in(path(name + ".jsonl"));
    if (!in) return std::nullopt;
    std::vector<nlohmann::json> lines;
    std::string line;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) return std::nullopt;
      lines.push_back(std::move(j));
    }
    return lines;
  }

  void save(const std::string &name, const std::vector<Json> &lines) {
    const fs::path target = path(name + ".jsonl");
    fs::path tmp = target;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      for (const auto &j : lines) out << j.dump() << '\n';
      if (!out) throw Error("cannot write checkpoint " + tmp.string());
    }
    fs::rename(tmp, target);
    std::lock_guard lock(mu_);
    ++writes_;
    if (limit_ && writes_ >= *limit_) throw Interrupted("checkpoint write limit reached");
  }

  size_t writes() const { return writes_; }

 private:
  fs::path dir_;
  std::optional<size_t> limit_;
  std::mutex mu_;
  size_t writes_ = 0;
};

struct Recording {
  const InputRecord *input = nullptr;
  WavInfo info;
  bool ok = true;
  fs::path audio;  // enhanced audio when enhancement ran, else the original
  std::vector<size_t> segments;
};

struct SegmentState {
  Segment seg;
  size_t rec = 0;
  bool clustered = false;
  std::optional<int> cluster;
  const Vector *center = nullptr;
  bool tse_ok = false;
  bool tse_error = false;
  fs::path tse_audio;
  std::optional<QualityScore> score;
  std::optional<std::string> score_error;
  TranscriptResult asr;
  bool asr_done = false;
};

std::vector<std::string> ids_of(const std::vector<SegmentState> &all, std::span<const size_t> idx) {
  std::vector<std::string> ids;
  for (size_t i : idx) ids.push_back(all[i].seg.segment_id);
  return ids;
}

Json context_json(const std::vector<InputRecord> &inputs, const PipelineConfig &config) {
  Json j;
  j["config"] = config_to_json(config);
  auto &list = j["inputs"];
  list = Json::array();
  for (const auto &r : inputs) {
    Json row{{"recording_id", r.recording_id}, {"path", r.path.string()}};
    if (r.segments) {
      Json segs = Json::array();
      for (const auto &t : *r.segments) segs.push_back({t.start_s, t.end_s});
      row["segments"] = segs;
    }
    list.push_back(row);
  }
  return j;
}

void write_json_file(const fs::path &path, const Json &j) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string batch_name(size_t b) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "batch-%04zu", b);
  return buf;
}

std::vector<TimeRange> chunks_for(const TimeRange &range, const PipelineConfig &config) {
  if (range.duration() + 1e-9 < config.embed_window_s) return {range};
  return window_chunks(range, config.embed_window_s, config.embed_shift_s);
}

class Pipeline {
 public:
  Pipeline(std::span<const InputRecord> inputs, const PipelineConfig &config,
           const BackendSet &backends, const RunOptions &options)
      : inputs_(inputs.begin(), inputs.end()),
        config_(config),
        backends_(backends),
        options_(options),
        log_(options.quiet) {
    std::sort(inputs_.begin(), inputs_.end(), [](const InputRecord &a, const InputRecord &b) {
      return a.recording_id < b.recording_id;
    });
  }

  RunResult run() {
    prepare_output();
    probe();
    front_stages();
    collect_segments();
    if (config_.stages.cluster) cluster();
    if (config_.stages.cluster && config_.stages.tse) extract();
    if (config_.stages.filter) score();
    filter();
    if (config_.stages.asr) transcribe();
    persist();
    result_.checkpoint_writes = store_->writes();
    return std::move(result_);
  }

 private:
  const StageToggles &stages() const { return config_.stages; }

  void prepare_output() {
    const fs::path &out = options_.out_dir;
    const fs::path ckpt = out / ".checkpoints";
    const Json context = context_json(inputs_, config_);
    if (options_.resume && fs::exists(ckpt / "context.json")) {
      std::ifstream in(ckpt / "context.json");
      const auto saved = nlohmann::json::parse(in, nullptr, false);
      if (saved != nlohmann::json(context)) {
        throw Error("checkpoints in " + ckpt.string() +
                    " come from a different config or input; rerun without --resume");
      }
    } else if (!options_.resume) {
      fs::remove_all(ckpt);
      for (const char *name : {"manifest.jsonl", "manifest.unlabeled.jsonl", "filter_report.json",
                               "stats.json", "run_summary.json"}) {
        fs::remove(out / name);
      }
      for (const auto &r : inputs_) fs::remove_all(out / r.recording_id);
    }
    store_ = std::make_unique<CheckpointStore>(ckpt, options_.max_checkpoint_writes);
    write_json_file(ckpt / "context.json", context);
  }

  void skip(Recording &rec, const std::string &reason) {
    rec.ok = false;
    log_("skipping recording " + rec.input->recording_id + ": " + reason);
    std::lock_guard lock(mu_);
    result_.skipped.push_back({rec.input->recording_id, reason});
  }

  void probe() {
    recs_.resize(inputs_.size());
    std::map<std::string, int> rates;
    for (size_t i = 0; i < inputs_.size(); ++i) {
      Recording &rec = recs_[i];
      rec.input = &inputs_[i];
      rec.audio = inputs_[i].path;
      try {
        rec.info = read_wav_info(inputs_[i].path);
        if (rec.info.num_frames == 0) throw Error("no audio samples");
        rates[inputs_[i].recording_id] = rec.info.sample_rate;
      } catch (const std::exception &e) {
        skip(rec, e.what());
      }
    }
    check_capabilities(config_, backends_, rates);
  }

  // Enhancement and segmentation, one recording at a time.
  void front_stages() {
    parallel_for(recs_.size(), options_.workers, [&](size_t i) {
      Recording &rec = recs_[i];
      if (!rec.ok) return;
      try {
        if (stages().enhance) enhance(rec);
        segment(rec);
      } catch (const Interrupted &) {
        throw;
      } catch (const std::exception &e) {
        skip(rec, e.what());
      }
    });
  }

  void enhance(Recording &rec) {
    const std::string &id = rec.input->recording_id;
    const fs::path wav = store_->path(id + ".enhanced.wav");
    const std::string shard = id + ".enhance";
    if (auto lines = store_->load(shard); lines && fs::exists(wav)) {
      rec.audio = wav;
      return;
    }
    AudioBuffer audio = read_wav(rec.input->path);
    const ChunkPlan plan = plan_chunks(int64_t(audio.size()), audio.sample_rate(),
                                       config_.enhance_window_s, config_.enhance_shift_s);
    AudioBuffer enhanced = enhance_recording(audio, plan, *backends_.enhancer);
    write_wav(wav, enhanced);
    store_->save(shard, {Json{{"recording_id", id},
                              {"audio", wav.filename().string()},
                              {"sample_rate", enhanced.sample_rate()},
                              {"num_samples", enhanced.size()},
                              {"chunks", plan.entries.size()}}});
    rec.audio = wav;
  }

  void segment(Recording &rec) {
    const std::string &id = rec.input->recording_id;
    const std::string shard = id + ".segment";
    std::vector<Segment> segments;
    if (auto lines = store_->load(shard)) {
      for (const auto &j : *lines) {
        Segment s;
        s.recording_id = id;
        s.segment_id = j.at("segment_id").get<std::string>();
        s.range = {j.at("start_s").get<double>(), j.at("end_s").get<double>()};
        segments.push_back(std::move(s));
      }
    } else {
      const double total = rec.info.duration_s();
      if (stages().segment) {
        AudioBuffer audio = read_wav(rec.audio);
        FrameTrack track = backends_.vad->detect({id, "", {0.0, total}}, audio);
        track.validate();
        segments = segment_recording(track, config_, id, total);
      } else {
        std::vector<TimeRange> ranges;
        if (rec.input->segments) {
          for (TimeRange t : *rec.input->segments) {
            t.end_s = std::min(t.end_s, total);
            if (t.end_s > t.start_s) ranges.push_back(t);
          }
        } else {
          ranges.push_back({0.0, total});
        }
        for (size_t k = 0; k < ranges.size(); ++k) {
          segments.push_back({id, make_segment_id(id, k), ranges[k], {}, {}, {}, {}, {}, {}});
        }
      }
      std::vector<Json> rows;
      for (const auto &s : segments) {
        rows.push_back(
            {{"segment_id", s.segment_id}, {"start_s", s.range.start_s}, {"end_s", s.range.end_s}});
      }
      store_->save(shard, rows);
    }
    rec.segments.clear();
    std::lock_guard lock(mu_);
    pending_[&rec - recs_.data()] = std::move(segments);
  }

  void collect_segments() {
    for (auto &[r, segments] : pending_) {
      for (auto &s : segments) {
        recs_[r].segments.push_back(segs_.size());
        segs_.push_back({});
        segs_.back().seg = std::move(s);
        segs_.back().rec = r;
      }
    }
    pending_.clear();
  }

  void cluster() {
    std::vector<Segment> ordered;
    for (const auto &s : segs_) ordered.push_back(s.seg);
    const auto batches =
        batch_segments(ordered, config_.batch_max_hours, config_.batch_per_recording);
    centers_.resize(batches.size());
    for (size_t b = 0; b < batches.size(); ++b) cluster_batch_at(b, batches[b]);
  }

  bool load_batch(size_t b, std::span<const size_t> members) {
    auto lines = store_->load(batch_name(b) + ".cluster");
    if (!lines || lines->empty()) return false;
    const auto &head = (*lines)[0];
    if (head.value("kind", "") != "batch" ||
        head.value("segment_ids", std::vector<std::string>{}) != ids_of(segs_, members)) {
      return false;
    }
    std::vector<Vector> centers;
    std::map<std::string, std::pair<std::optional<int>, std::optional<double>>> labels;
    for (const auto &j : *lines) {
      const std::string kind = j.value("kind", "");
      if (kind == "center") {
        centers.push_back(j.at("vector").get<Vector>());
      } else if (kind == "segment") {
        std::optional<int> c;
        std::optional<double> sim;
        if (!j.at("cluster").is_null()) c = j.at("cluster").get<int>();
        if (!j.at("similarity").is_null()) sim = j.at("similarity").get<double>();
        labels[j.at("segment_id").get<std::string>()] = {c, sim};
      }
    }
    centers_[b] = std::move(centers);
    for (size_t i : members) {
      auto it = labels.find(segs_[i].seg.segment_id);
      if (it == labels.end()) return false;
      apply_label(b, i, it->second.first, it->second.second);
    }
    return true;
  }

  void apply_label(size_t b, size_t i, std::optional<int> cluster, std::optional<double> sim) {
    SegmentState &s = segs_[i];
    s.clustered = true;
    s.cluster = cluster;
    if (cluster) {
      s.center = &centers_[b].at(size_t(*cluster));
      s.seg.speaker_label = std::to_string(b) + "." + std::to_string(*cluster);
      s.seg.cluster_similarity = sim;
    }
  }

  void cluster_batch_at(size_t b, std::span<const size_t> members) {
    if (load_batch(b, members)) return;
    std::map<size_t, std::shared_ptr<const AudioBuffer>> audio;
    for (size_t i : members) {
      const size_t r = segs_[i].rec;
      if (!audio.count(r)) audio[r] = std::make_shared<const AudioBuffer>(read_wav(recs_[r].audio));
    }
    std::vector<std::vector<SpeakerEmbedding>> per_segment(members.size());
    parallel_for(members.size(), options_.workers, [&](size_t m) {
      const Segment &seg = segs_[members[m]].seg;
      const AudioBuffer &rec_audio = *audio.at(segs_[members[m]].rec);
      for (const TimeRange &chunk : chunks_for(seg.range, config_)) {
        auto raw = backends_.embedder->embed({seg.recording_id, seg.segment_id, chunk},
                                             rec_audio.slice(chunk));
        per_segment[m].push_back(SpeakerEmbedding::from_raw(std::move(raw), chunk));
      }
    });
    std::vector<SpeakerEmbedding> embeddings;
    std::vector<size_t> counts;
    for (auto &list : per_segment) {
      counts.push_back(list.size());
      embeddings.insert(embeddings.end(), list.begin(), list.end());
    }
    ClusterOptions opts;
    opts.k_max = config_.k_max;
    opts.merge_threshold = config_.cluster_merge_threshold;
    opts.seed = config_.rng_seed + b;
    const ClusterModel model = cluster_batch(embeddings, counts, opts, std::to_string(b));
    log_(batch_name(b) + ": " + std::to_string(members.size()) + " segments, " +
         std::to_string(embeddings.size()) + " chunks, k=" + std::to_string(model.k));
    centers_[b] = model.centers;

    std::vector<Json> lines;
    lines.push_back({{"kind", "batch"},
                     {"batch_id", b},
                     {"k", model.k},
                     {"estimated_k", model.estimated_k},
                     {"segment_ids", ids_of(segs_, members)}});
    for (size_t c = 0; c < model.centers.size(); ++c) {
      lines.push_back({{"kind", "center"}, {"cluster", c}, {"vector", model.centers[c]}});
    }
    size_t offset = 0;
    for (size_t m = 0; m < members.size(); ++m) {
      const Segment &seg = segs_[members[m]].seg;
      const auto label = model.segment_labels[m];
      std::optional<double> sim;
      if (label) sim = segment_similarity(per_segment[m], model.centers[size_t(*label)]);
      lines.push_back({{"kind", "segment"},
                       {"segment_id", seg.segment_id},
                       {"cluster", label ? Json(*label) : Json(nullptr)},
                       {"similarity", sim ? Json(*sim) : Json(nullptr)}});
      for (size_t c = 0; c < per_segment[m].size(); ++c) {
        const auto &e = per_segment[m][c];
        lines.push_back({{"kind", "chunk"},
                         {"chunk_id", seg.segment_id + "#" + std::to_string(c)},
                         {"segment_id", seg.segment_id},
                         {"start_s", e.source_chunk.start_s},
                         {"end_s", e.source_chunk.end_s},
                         {"cluster", model.chunk_assignments[offset + c]},
                         {"vector", e.vector}});
      }
      offset += per_segment[m].size();
      apply_label(b, members[m], label, sim);
    }
    store_->save(batch_name(b) + ".cluster", lines);
  }

  AudioBuffer segment_audio(const SegmentState &s, const AudioBuffer *rec_audio) const {
    if (s.tse_ok) return read_wav(store_->path(s.tse_audio));
    return rec_audio ? rec_audio->slice(s.seg.range) : read_wav(recs_[s.rec].audio).slice(s.seg.range);
  }

  // Runs fn over recordings that have at least one selected segment.
  template <typename Fn>
  void per_recording(const std::function<bool(const SegmentState &)> &select, Fn fn) {
    parallel_for(recs_.size(), options_.workers, [&](size_t r) {
      if (!recs_[r].ok) return;
      std::vector<size_t> chosen;
      for (size_t i : recs_[r].segments) {
        if (select(segs_[i])) chosen.push_back(i);
      }
      if (!chosen.empty()) fn(recs_[r], chosen);
    });
  }

  void extract() {
    per_recording([](const SegmentState &) { return true; }, [&](Recording &rec, std::span<const size_t> idx) {
      const std::string &id = rec.input->recording_id;
      const std::string shard = id + ".tse";
      if (auto lines = store_->load(shard); lines && lines->size() == idx.size()) {
        bool valid = true;
        for (size_t k = 0; k < idx.size() && valid; ++k) {
          const auto &j = (*lines)[k];
          valid = j.at("segment_id") == segs_[idx[k]].seg.segment_id;
          if (valid && j.at("status") == "ok") valid = fs::exists(store_->path(j.at("audio").get<std::string>()));
        }
        if (valid) {
          for (size_t k = 0; k < idx.size(); ++k) apply_tse(segs_[idx[k]], (*lines)[k]);
          return;
        }
      }
      const AudioBuffer audio = read_wav(rec.audio);
      std::vector<Json> lines;
      for (size_t i : idx) {
        SegmentState &s = segs_[i];
        Json j{{"segment_id", s.seg.segment_id}};
        if (!s.seg.speaker_label) {
          j["status"] = "skipped";
        } else {
          try {
            AudioBuffer out = extract_target(s.seg, audio.slice(s.seg.range), *s.center,
                                             *backends_.extractor);
            const std::string rel = "tse/" + id + "/" + s.seg.segment_id + ".wav";
            write_wav(store_->path(rel), out);
            j["status"] = "ok";
            j["audio"] = rel;
          } catch (const BackendError &e) {
            j["status"] = "error";
            j["message"] = e.what();
          }
        }
        lines.push_back(j);
      }
      for (size_t k = 0; k < idx.size(); ++k) apply_tse(segs_[idx[k]], lines[k]);
      store_->save(shard, lines);
    });
  }

  void apply_tse(SegmentState &s, const nlohmann::json &j) {
    const std::string status = j.at("status").get<std::string>();
    if (status == "ok") {
      s.tse_ok = true;
      s.tse_audio = j.at("audio").get<std::string>();
    } else if (status == "error") {
      s.tse_error = true;
      log_("tse failed for " + s.seg.segment_id + ": " + j.value("message", ""));
    }
  }

  void score() {
    per_recording([](const SegmentState &s) { return !s.tse_error; },
                  [&](Recording &rec, std::span<const size_t> idx) {
      const std::string shard = rec.input->recording_id + ".score";
      if (auto lines = store_->load(shard); lines && lines->size() == idx.size()) {
        bool valid = true;
        for (size_t k = 0; k < idx.size() && valid; ++k) {
          valid = (*lines)[k].at("segment_id") == segs_[idx[k]].seg.segment_id;
        }
        if (valid) {
          for (size_t k = 0; k < idx.size(); ++k) apply_score(segs_[idx[k]], (*lines)[k]);
          return;
        }
      }
      const AudioBuffer audio = read_wav(rec.audio);
      std::vector<Json> lines;
      for (size_t i : idx) {
        const SegmentState &s = segs_[i];
        Json j{{"segment_id", s.seg.segment_id}};
        try {
          const QualityScore q = backends_.scorer->score({s.seg.recording_id, s.seg.segment_id, s.seg.range},
                                                         segment_audio(s, &audio));
          if (!std::isfinite(q.ovrl)) throw BackendError("non-finite OVRL score");
          j["ovrl"] = q.ovrl;
          j["pdnsmos"] = q.pdnsmos ? Json(*q.pdnsmos) : Json(nullptr);
        } catch (const BackendError &e) {
          j["error"] = e.what();
        }
        lines.push_back(j);
      }
      for (size_t k = 0; k < idx.size(); ++k) apply_score(segs_[idx[k]], lines[k]);
      store_->save(shard, lines);
    });
  }

  static void apply_score(SegmentState &s, const nlohmann::json &j) {
    if (j.contains("error")) {
      s.score_error = j.at("error").get<std::string>();
      return;
    }
    QualityScore q;
    q.ovrl = j.at("ovrl").get<double>();
    if (!j.at("pdnsmos").is_null()) q.pdnsmos = j.at("pdnsmos").get<double>();
    s.score = q;
  }

  void filter() {
    std::vector<Segment> candidates;
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < segs_.size(); ++i) {
      if (!recs_[segs_[i].rec].ok || segs_[i].tse_error) continue;
      index[segs_[i].seg.segment_id] = i;
      candidates.push_back(segs_[i].seg);
    }
    result_.tse_errors = 0;
    for (const auto &s : segs_) result_.tse_errors += s.tse_error ? 1 : 0;

    FilterReport &report = result_.report;
    auto lookup = [&](const Segment &s) -> QualityScore {
      const SegmentState &st = segs_[index.at(s.segment_id)];
      if (!st.score) throw BackendError(st.score_error.value_or("no score"));
      return *st.score;
    };
    if (!stages().filter) {
      report.input_count = report.retained_count = candidates.size();
      kept_ = candidates;
    } else if (stages().cluster) {
      kept_ = run_filter_chain(candidates, FilterThresholds::from_config(config_), lookup, report);
      for (const auto &s : candidates) {
        if (s.speaker_label) continue;
        const SegmentState &st = segs_[index.at(s.segment_id)];
        if (st.score && st.score->ovrl >= config_.ovrl_threshold) {
          Segment u = s;
          u.ovrl_score = st.score->ovrl;
          u.pdnsmos_score = st.score->pdnsmos;
          unlabeled_.push_back(std::move(u));
        }
      }
    } else {
      report.input_count = candidates.size();
      kept_ = filter_by_quality(candidates, lookup, config_.ovrl_threshold, report);
      report.retained_count = kept_.size();
    }
    for (auto *list : {&kept_, &unlabeled_}) {
      for (auto &s : *list) segs_[index.at(s.segment_id)].seg = s;
    }
  }

  std::vector<size_t> final_indices() const {
    std::set<std::string> ids;
    for (const auto *list : {&kept_, &unlabeled_}) {
      for (const auto &s : *list) ids.insert(s.segment_id);
    }
    std::vector<size_t> out;
    for (size_t i = 0; i < segs_.size(); ++i) {
      if (ids.count(segs_[i].seg.segment_id)) out.push_back(i);
    }
    return out;
  }

  void transcribe() {
    const auto finals = final_indices();
    const std::set<size_t> chosen(finals.begin(), finals.end());
    std::vector<char> selected(segs_.size(), 0);
    for (size_t i : chosen) selected[i] = 1;
    per_recording([&](const SegmentState &s) { return selected[size_t(&s - segs_.data())] != 0; },
                  [&](Recording &rec, std::span<const size_t> idx) {
      const std::string shard = rec.input->recording_id + ".asr";
      if (auto lines = store_->load(shard); lines && lines->size() == idx.size()) {
        bool valid = true;
        for (size_t k = 0; k < idx.size() && valid; ++k) {
          valid = (*lines)[k].at("segment_id") == segs_[idx[k]].seg.segment_id;
        }
        if (valid) {
          for (size_t k = 0; k < idx.size(); ++k) apply_asr(segs_[idx[k]], (*lines)[k]);
          return;
        }
      }
      const AudioBuffer audio = read_wav(rec.audio);
      std::vector<Segment> segments;
      for (size_t i : idx) segments.push_back(segs_[i].seg);
      std::map<std::string, size_t> pos;
      for (size_t k = 0; k < idx.size(); ++k) pos[segs_[idx[k]].seg.segment_id] = idx[k];
      const auto results = transcribe_segments(
          segments, [&](const Segment &s) { return segment_audio(segs_[pos.at(s.segment_id)], &audio); },
          *backends_.transcriber);
      std::vector<Json> lines;
      for (size_t k = 0; k < idx.size(); ++k) {
        Json j{{"segment_id", segments[k].segment_id}};
        if (results[k].transcript) {
          j["text"] = *results[k].transcript;
        } else {
          j["error"] = results[k].note.value_or("asr_error");
        }
        lines.push_back(j);
      }
      for (size_t k = 0; k < idx.size(); ++k) apply_asr(segs_[idx[k]], lines[k]);
      store_->save(shard, lines);
    });
  }

  static void apply_asr(SegmentState &s, const nlohmann::json &j) {
    s.asr_done = true;
    if (j.contains("text")) {
      s.asr.transcript = j.at("text").get<std::string>();
      if (s.asr.transcript->empty()) s.asr.note = "transcript_empty";
    } else {
      s.asr = {std::nullopt, "asr_error"};
    }
    s.seg.transcript = s.asr.transcript;
  }

  ManifestRecord record_for(const SegmentState &s) const {
    ManifestRecord r;
    r.recording_id = s.seg.recording_id;
    r.segment_id = s.seg.segment_id;
    r.start_s = s.seg.range.start_s;
    r.end_s = s.seg.range.end_s;
    r.speaker_label = s.seg.speaker_label;
    r.cluster_similarity = s.seg.speaker_label ? s.seg.cluster_similarity : std::nullopt;
    r.ovrl_score = s.seg.ovrl_score;
    r.pdnsmos_score = s.seg.pdnsmos_score;
    r.transcript = s.seg.transcript;
    r.audio_path = s.seg.recording_id + "/" + s.seg.segment_id + ".wav";
    if (stages().enhance) r.stage_flags.push_back("enhance");
    if (stages().segment) r.stage_flags.push_back("segment");
    if (s.clustered) r.stage_flags.push_back("cluster");
    if (s.tse_ok) r.stage_flags.push_back("tse");
    if (stages().filter) r.stage_flags.push_back("filter");
    if (s.asr_done && s.asr.transcript) r.stage_flags.push_back("asr");
    r.stage_flags.push_back("persist");
    if (s.asr.note) r.notes.push_back(*s.asr.note);
    return r;
  }

  void persist() {
    const auto finals = final_indices();
    std::vector<char> selected(segs_.size(), 0);
    for (size_t i : finals) selected[i] = 1;
    per_recording([&](const SegmentState &s) { return selected[size_t(&s - segs_.data())] != 0; },
                  [&](Recording &rec, std::span<const size_t> idx) {
      const AudioBuffer audio = read_wav(rec.audio);
      for (size_t i : idx) {
        write_wav(options_.out_dir / rec.input->recording_id / (segs_[i].seg.segment_id + ".wav"),
                  segment_audio(segs_[i], &audio));
      }
    });

    std::set<std::string> unlabeled_ids;
    for (const auto &s : unlabeled_) unlabeled_ids.insert(s.segment_id);
    for (size_t i : finals) {
      auto r = record_for(segs_[i]);
      (unlabeled_ids.count(r.segment_id) ? result_.unlabeled : result_.manifest).push_back(std::move(r));
    }
    auto by_key = [](const ManifestRecord &a, const ManifestRecord &b) {
      return std::tie(a.recording_id, a.start_s, a.segment_id) <
             std::tie(b.recording_id, b.start_s, b.segment_id);
    };
    std::sort(result_.manifest.begin(), result_.manifest.end(), by_key);
    std::sort(result_.unlabeled.begin(), result_.unlabeled.end(), by_key);
    std::sort(result_.skipped.begin(), result_.skipped.end(),
              [](const SkippedRecording &a, const SkippedRecording &b) { return a.recording_id < b.recording_id; });

    const fs::path &out = options_.out_dir;
    write_manifest(out / "manifest.jsonl", result_.manifest);
    if (stages().filter && stages().cluster) write_manifest(out / "manifest.unlabeled.jsonl", result_.unlabeled);
    result_.stats = compute_stats(result_.manifest, retention());
    write_json_file(out / "filter_report.json", result_.report.to_json());
    write_json_file(out / "stats.json", result_.stats.to_json());
    Json summary;
    summary["skipped_recordings"] = Json::array();
    for (const auto &s : result_.skipped) {
      summary["skipped_recordings"].push_back({{"recording_id", s.recording_id}, {"reason", s.reason}});
    }
    summary["tse_errors"] = result_.tse_errors;
    write_json_file(out / "run_summary.json", summary);
    log_("wrote " + std::to_string(result_.manifest.size()) + " labeled and " +
         std::to_string(result_.unlabeled.size()) + " unlabeled segments to " + out.string());
  }

  // Recordings count as single items before segmentation.
  std::vector<StageRetention> retention() const {
    std::vector<StageRetention> rows;
    size_t recordings = 0;
    double input_s = 0.0;
    for (const auto &r : recs_) {
      if (!r.ok) continue;
      ++recordings;
      input_s += r.info.duration_s();
    }
    rows.push_back({"input", recordings, input_s / 3600.0});
    if (stages().enhance) rows.push_back({"enhance", recordings, input_s / 3600.0});
    size_t n = 0;
    double seg_s = 0.0, tse_s = 0.0;
    size_t tse_n = 0;
    for (const auto &s : segs_) {
      if (!recs_[s.rec].ok) continue;
      ++n;
      seg_s += s.seg.range.duration();
      if (!s.tse_error) {
        ++tse_n;
        tse_s += s.seg.range.duration();
      }
    }
    rows.push_back({"segment", n, seg_s / 3600.0});
    if (stages().cluster) rows.push_back({"cluster", n, seg_s / 3600.0});
    if (stages().cluster && stages().tse) rows.push_back({"tse", tse_n, tse_s / 3600.0});
    double kept_s = 0.0;
    for (const auto &r : result_.manifest) kept_s += r.end_s - r.start_s;
    const StageRetention final_row{"", result_.manifest.size(), kept_s / 3600.0};
    for (const char *stage : {"filter", "asr"}) {
      const bool on = std::string(stage) == "filter" ? stages().filter : stages().asr;
      if (on) rows.push_back({stage, final_row.segments, final_row.duration_h});
    }
    rows.push_back({"persist", final_row.segments, final_row.duration_h});
    return rows;
  }

  std::vector<InputRecord> inputs_;
  const PipelineConfig &config_;
  const BackendSet &backends_;
  const RunOptions &options_;
  Logger log_;
  std::unique_ptr<CheckpointStore> store_;
  std::mutex mu_;
  std::vector<Recording> recs_;
  std::map<size_t, std::vector<Segment>> pending_;
  std::vector<SegmentState> segs_;
  std::vector<std::vector<Vector>> centers_;
  std::vector<Segment> kept_;
  std::vector<Segment> unlabeled_;
  RunResult result_;
};

}  // namespace

RunResult run_pipeline(std::span<const InputRecord> inputs, const PipelineConfig &config,
                       const BackendSet &backends, const RunOptions &options) {
  if (options.out_dir.empty()) throw Error("output directory is required");
  fs::create_directories(options.out_dir);
  Pipeline pipeline(inputs, config, backends, options);
  return pipeline.run();
}

std::vector<fs::path> export_embeddings(const fs::path &out_dir) {
  const fs::path ckpt = out_dir / ".checkpoints";
  if (!fs::is_directory(ckpt)) throw Error("no checkpoints in " + out_dir.string());
  std::vector<fs::path> shards;
  for (const auto &entry : fs::directory_iterator(ckpt)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("batch-") && name.ends_with(".cluster.jsonl")) shards.push_back(entry.path());
  }
  std::sort(shards.begin(), shards.end());
  const fs::path dir = out_dir / "embeddings";
  fs::create_directories(dir);
  std::vector<fs::path> written;
  for (const auto &shard : shards) {
    std::ifstream in(shard);
    std::vector<EmbeddingExportRow> rows;
    std::string line;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      if (j.value("kind", "") != "chunk") continue;
      rows.push_back({j.at("chunk_id").get<std::string>(), j.at("cluster").get<int>(),
                      j.at("vector").get<std::vector<float>>()});
    }
    std::string stem = shard.filename().string();
    stem = stem.substr(0, stem.size() - std::string(".cluster.jsonl").size());
    const fs::path target = dir / (stem + ".tsv");
    std::ofstream out(target, std::ios::trunc);
    write_embedding_export(out, rows);
    if (!out) throw Error("cannot write " + target.string());
    written.push_back(target);
  }
  return written;
}

}  // namespace autoprep
