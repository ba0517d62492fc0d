// VAD post-processing: frame probabilities to bounded-length speech segments.
//
// Time comparisons use a 1e-9 s tolerance so that boundaries computed from
// frame indices compare as they would in exact arithmetic.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autoprep/core.h"

namespace autoprep {

struct FrameTrack {
  std::vector<double> probs;
  double frame_hop_s = 0.0;

  // Throws Error if the hop is non-positive or a probability leaves [0, 1].
  void validate() const;
  double duration_s() const { return double(probs.size()) * frame_hop_s; }
};

struct SpeechMask {
  std::vector<bool> flags;
  double frame_hop_s = 0.0;
};

// Speech iff prob >= threshold.
SpeechMask binarize(const FrameTrack &track, double threshold);

// Maximal speech runs; silence runs no longer than silence_split_s are bridged.
std::vector<TimeRange> raw_regions(const SpeechMask &mask, double silence_split_s);

// Expands each region by pad_s, clamps to [0, total), merges overlapping or
// touching regions.
std::vector<TimeRange> pad_regions(std::span<const TimeRange> regions, double pad_s,
                                   double total_duration_s);

// Merges regions shorter than min_s forward into their successors (spanning the
// gap) until they reach min_s; a short tail merges backward. When max_span_s is
// set, a merge that would produce a region longer than it is not performed and
// the short region is dropped instead.
std::vector<TimeRange> enforce_min_length(std::span<const TimeRange> regions, double min_s,
                                          std::optional<double> max_span_s = std::nullopt);

// Splits regions longer than soft_max_s at the first silent frame starting at
// or after start + soft_max_s, or hard at start + hard_max_s when no such
// frame precedes it. Remainders are processed the same way.
std::vector<TimeRange> enforce_max_length(std::span<const TimeRange> regions,
                                          const SpeechMask &mask, double soft_max_s,
                                          double hard_max_s);

// Full composition. total_duration_s defaults to the track duration.
std::vector<Segment> segment_recording(const FrameTrack &track, const PipelineConfig &config,
                                       const std::string &recording_id = {},
                                       std::optional<double> total_duration_s = std::nullopt);

std::string make_segment_id(const std::string &recording_id, size_t index);

}  // namespace autoprep
