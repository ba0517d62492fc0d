#include "autoprep/segmenter.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace autoprep {

namespace {
constexpr double kEps = 1e-9;
}

void FrameTrack::validate() const {
  if (!(frame_hop_s > 0.0)) throw Error("frame hop must be positive");
  for (size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) {
      throw Error("frame probability outside [0, 1] at frame " + std::to_string(i));
    }
  }
}

SpeechMask binarize(const FrameTrack &track, double threshold) {
  SpeechMask mask{std::vector<bool>(track.probs.size()), track.frame_hop_s};
  for (size_t i = 0; i < track.probs.size(); ++i) mask.flags[i] = track.probs[i] >= threshold;
  return mask;
}

std::vector<TimeRange> raw_regions(const SpeechMask &mask, double silence_split_s) {
  const double hop = mask.frame_hop_s;
  const size_t n = mask.flags.size();
  std::vector<TimeRange> out;
  size_t i = 0;
  while (i < n) {
    if (!mask.flags[i]) {
      ++i;
      continue;
    }
    size_t run_end = i;
    while (run_end < n && mask.flags[run_end]) ++run_end;
    if (!out.empty()) {
      const double gap = (double(i) * hop) - out.back().end_s;
      if (gap <= silence_split_s + kEps) {
        out.back().end_s = double(run_end) * hop;
        i = run_end;
        continue;
      }
    }
    out.push_back({double(i) * hop, double(run_end) * hop});
    i = run_end;
  }
  return out;
}

std::vector<TimeRange> pad_regions(std::span<const TimeRange> regions, double pad_s,
                                   double total_duration_s) {
  std::vector<TimeRange> out;
  for (const auto &r : regions) {
    TimeRange p{std::max(0.0, r.start_s - pad_s), std::min(total_duration_s, r.end_s + pad_s)};
    if (p.end_s <= p.start_s) continue;
    if (!out.empty() && p.start_s <= out.back().end_s + kEps) {
      out.back().end_s = std::max(out.back().end_s, p.end_s);
    } else {
      out.push_back(p);
    }
  }
  return out;
}

std::vector<TimeRange> enforce_min_length(std::span<const TimeRange> regions, double min_s,
                                          std::optional<double> max_span_s) {
  auto is_short = [&](const TimeRange &r) { return r.duration() < min_s - kEps; };
  auto fits = [&](double start, double end) {
    return !max_span_s || end - start <= *max_span_s + kEps;
  };

  std::vector<TimeRange> out;
  std::optional<TimeRange> pending;
  for (const auto &r : regions) {
    if (!pending) {
      pending = r;
    } else if (fits(pending->start_s, r.end_s)) {
      pending->end_s = r.end_s;
    } else {
      pending = r;  // the short accumulation cannot grow within the cap
    }
    if (!is_short(*pending)) {
      out.push_back(*pending);
      pending.reset();
    }
  }
  if (pending && !out.empty() && fits(out.back().start_s, pending->end_s)) {
    out.back().end_s = pending->end_s;
  }
  return out;
}

std::vector<TimeRange> enforce_max_length(std::span<const TimeRange> regions,
                                          const SpeechMask &mask, double soft_max_s,
                                          double hard_max_s) {
  const double hop = mask.frame_hop_s;
  const int64_t n = static_cast<int64_t>(mask.flags.size());
  std::vector<TimeRange> out;
  for (TimeRange r : regions) {
    while (r.duration() > soft_max_s + kEps) {
      const double soft_at = r.start_s + soft_max_s;
      const double hard_at = r.start_s + hard_max_s;
      std::optional<double> cut;
      int64_t f = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(soft_at / hop - kEps)));
      for (; f < n; ++f) {
        const double t = double(f) * hop;
        if (t >= hard_at - kEps || t >= r.end_s - kEps) break;
        if (!mask.flags[f]) {
          cut = t;
          break;
        }
      }
      if (!cut) {
        if (r.duration() <= hard_max_s + kEps) break;
        cut = hard_at;
      }
      out.push_back({r.start_s, *cut});
      r.start_s = *cut;
    }
    out.push_back(r);
  }
  return out;
}

std::vector<Segment> segment_recording(const FrameTrack &track, const PipelineConfig &config,
                                       const std::string &recording_id,
                                       std::optional<double> total_duration_s) {
  const double total = total_duration_s.value_or(track.duration_s());
  const SpeechMask mask = binarize(track, config.vad_threshold);
  auto regions = raw_regions(mask, config.silence_split_s);
  regions = pad_regions(regions, config.pad_s, total);
  regions = enforce_min_length(regions, config.min_segment_s);
  regions = enforce_max_length(regions, mask, config.soft_max_segment_s, config.hard_max_segment_s);
  regions = enforce_min_length(regions, config.min_segment_s, config.hard_max_segment_s);

  std::vector<Segment> segments;
  segments.reserve(regions.size());
  for (const auto &r : regions) {
    Segment s;
    s.recording_id = recording_id;
    s.segment_id = make_segment_id(recording_id, segments.size());
    s.range = r;
    segments.push_back(std::move(s));
  }
  return segments;
}

std::string make_segment_id(const std::string &recording_id, size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return recording_id + "_" + buf;
}

}  // namespace autoprep
