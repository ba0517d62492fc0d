// Chunk-wise enhancement of long recordings with a fixed-context backend.
//
// Inference windows start every shift; each chunk contributes only the middle
// shift-length part of its output, except that the first chunk also emits its
// leading margin and the last chunk emits through the end of the recording.
// All boundaries are integer sample offsets so emit ranges tile the signal
// exactly.

#pragma once

#include <vector>

#include "autoprep/backends.h"
#include "autoprep/core.h"

namespace autoprep {

struct ChunkEntry {
  int64_t infer_begin = 0;
  int64_t infer_end = 0;
  int64_t emit_begin = 0;
  int64_t emit_end = 0;
};

struct ChunkPlan {
  std::vector<ChunkEntry> entries;
  int64_t total_samples = 0;
  int sample_rate = 0;
  // Length every inference chunk is zero-padded to.
  int64_t window_samples = 0;

  double total_duration_s() const { return double(total_samples) / sample_rate; }
  TimeRange infer_range(size_t i) const;
  TimeRange emit_range(size_t i) const;
};

ChunkPlan plan_chunks(int64_t num_samples, int sample_rate, double window_s, double shift_s);
ChunkPlan plan_chunks(double duration_s, double window_s, double shift_s, int sample_rate);

// Output has the input's length and rate. Backend failures are rethrown as
// BackendError naming the chunk index.
AudioBuffer enhance_recording(const AudioBuffer &audio, const ChunkPlan &plan, Enhancer &enhancer,
                              int workers = 1);

}  // namespace autoprep
