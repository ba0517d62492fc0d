#include "autoprep/windowed_enhance.h"

#include <algorithm>

#include "autoprep/parallel.h"

namespace autoprep {

TimeRange ChunkPlan::infer_range(size_t i) const {
  return {double(entries.at(i).infer_begin) / sample_rate,
          double(entries.at(i).infer_end) / sample_rate};
}

TimeRange ChunkPlan::emit_range(size_t i) const {
  return {double(entries.at(i).emit_begin) / sample_rate,
          double(entries.at(i).emit_end) / sample_rate};
}

ChunkPlan plan_chunks(int64_t num_samples, int sample_rate, double window_s, double shift_s) {
  if (sample_rate <= 0) throw Error("sample rate must be positive");
  if (num_samples <= 0) throw Error("cannot plan chunks for an empty recording");
  if (!(shift_s > 0.0) || !(window_s > shift_s)) {
    throw Error("chunk window must exceed a positive shift");
  }
  const int64_t window = to_samples(window_s, sample_rate);
  const int64_t shift = to_samples(shift_s, sample_rate);
  if (shift <= 0 || window <= shift) throw Error("window/shift vanish at this sample rate");
  const int64_t margin = to_samples((window_s - shift_s) / 2.0, sample_rate);

  ChunkPlan plan;
  plan.total_samples = num_samples;
  plan.sample_rate = sample_rate;
  plan.window_samples = window;
  if (num_samples <= window) {
    plan.entries.push_back({0, num_samples, 0, num_samples});
    return plan;
  }
  for (int64_t start = 0;; start += shift) {
    const bool last = start + window >= num_samples;
    ChunkEntry e;
    e.infer_begin = start;
    e.infer_end = std::min(start + window, num_samples);
    e.emit_begin = start == 0 ? 0 : start + margin;
    e.emit_end = last ? num_samples : start + margin + shift;
    plan.entries.push_back(e);
    if (last) break;
  }
  return plan;
}

ChunkPlan plan_chunks(double duration_s, double window_s, double shift_s, int sample_rate) {
  if (!(duration_s > 0.0)) throw Error("duration must be positive");
  return plan_chunks(to_samples(duration_s, sample_rate), sample_rate, window_s, shift_s);
}

AudioBuffer enhance_recording(const AudioBuffer &audio, const ChunkPlan &plan, Enhancer &enhancer,
                              int workers) {
  if (plan.total_samples != static_cast<int64_t>(audio.size()) ||
      plan.sample_rate != audio.sample_rate()) {
    throw Error("chunk plan does not match the audio length or sample rate");
  }
  AudioBuffer out = AudioBuffer::silence(audio.size(), audio.sample_rate());
  parallel_for(plan.entries.size(), workers, [&](size_t i) {
    const ChunkEntry &e = plan.entries[i];
    const int64_t padded = std::max(plan.window_samples, e.infer_end - e.infer_begin);
    AudioBuffer result;
    try {
      result = enhancer.enhance(audio.padded_slice(e.infer_begin, e.infer_end, padded));
    } catch (const std::exception &ex) {
      throw BackendError("enhancer failed on chunk " + std::to_string(i) + ": " + ex.what());
    }
    if (static_cast<int64_t>(result.size()) != padded || result.sample_rate() != audio.sample_rate()) {
      throw BackendError("enhancer returned " + std::to_string(result.size()) + " samples at " +
                         std::to_string(result.sample_rate()) + " Hz for chunk " + std::to_string(i) +
                         ", expected " + std::to_string(padded) + " at " +
                         std::to_string(audio.sample_rate()) + " Hz");
    }
    out.overwrite(e.emit_begin, result, e.emit_begin - e.infer_begin, e.emit_end - e.emit_begin);
  });
  return out;
}

}  // namespace autoprep
