#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstring>

#include "autoprep/mocks.h"
#include "autoprep/windowed_enhance.h"
#include "support/support.h"

using namespace autoprep;

namespace {

// Exact cover oracle: walk the emit ranges in order and require each to start
// where the previous ended, ending at the total.
void expect_exact_cover(const ChunkPlan &plan) {
  int64_t cursor = 0;
  for (const auto &e : plan.entries) {
    ASSERT_EQ(e.emit_begin, cursor);
    ASSERT_GT(e.emit_end, e.emit_begin);
    ASSERT_LE(e.infer_begin, e.emit_begin);
    ASSERT_GE(e.infer_end, e.emit_end);
    ASSERT_LE(e.infer_end - e.infer_begin, plan.window_samples);
    cursor = e.emit_end;
  }
  ASSERT_EQ(cursor, plan.total_samples);
}

AudioBuffer random_audio(std::mt19937_64 &rng, size_t n, int rate) {
  std::vector<float> s(n);
  for (auto &x : s) x = float(testsupport::uniform(rng) * 2 - 1);
  return AudioBuffer(std::move(s), rate);
}

class ShortOutputEnhancer : public Enhancer {
 public:
  Capabilities capabilities() const override { return {}; }
  AudioBuffer enhance(AudioBuffer audio) override {
    if (calls_++ == 1) return AudioBuffer(std::vector<float>(audio.size() - 1), audio.sample_rate());
    return audio;
  }

 private:
  std::atomic<int> calls_{0};
};

// Per-sample nonlinearity; must be reproduced exactly by stitching.
class SquashEnhancer : public Enhancer {
 public:
  Capabilities capabilities() const override { return {}; }
  AudioBuffer enhance(AudioBuffer audio) override {
    std::vector<float> out = audio.to_vector();
    for (auto &x : out) x = std::tanh(3.0f * x) * 0.7f;
    return AudioBuffer(std::move(out), audio.sample_rate());
  }
};

}  // namespace

TEST(PlanChunks, TwentySecondsTwelveByFour) {
  const ChunkPlan p = plan_chunks(20.0, 12.0, 4.0, 1000);
  ASSERT_EQ(p.entries.size(), 3u);
  const TimeRange infer[] = {{0, 12}, {4, 16}, {8, 20}};
  const TimeRange emit[] = {{0, 8}, {8, 12}, {12, 20}};
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(p.infer_range(i), infer[i]) << i;
    EXPECT_EQ(p.emit_range(i), emit[i]) << i;
  }
  expect_exact_cover(p);
}

TEST(PlanChunks, ShorterThanOrEqualToWindowIsSingleChunk) {
  for (double d : {10.0, 12.0}) {
    const ChunkPlan p = plan_chunks(d, 12.0, 4.0, 16000);
    ASSERT_EQ(p.entries.size(), 1u);
    EXPECT_EQ(p.infer_range(0), (TimeRange{0, d}));
    EXPECT_EQ(p.emit_range(0), (TimeRange{0, d}));
  }
}

TEST(PlanChunks, RejectsBadArguments) {
  EXPECT_THROW(plan_chunks(0.0, 12.0, 4.0, 16000), Error);
  EXPECT_THROW(plan_chunks(-1.0, 12.0, 4.0, 16000), Error);
  EXPECT_THROW(plan_chunks(10.0, 4.0, 4.0, 16000), Error);
}

TEST(PlanChunks, ExactCoverOnRandomDurations) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 400; ++trial) {
    const int rates[] = {8000, 16000, 44100, 48000};
    const int rate = rates[trial % 4];
    const int64_t n = 1 + int64_t(testsupport::uniform(rng) * 120.0 * rate);
    expect_exact_cover(plan_chunks(n, rate, 12.0, 4.0));
  }
  // Odd window/shift combinations that do not divide evenly into samples.
  for (double w : {1.0, 3.3, 7.77}) {
    for (int64_t n : {1, 999, 12345, 480000}) expect_exact_cover(plan_chunks(n, 44100, w, w / 3.1));
  }
}

TEST(EnhanceRecording, IdentityIsBitExact) {
  std::mt19937_64 rng(5);
  IdentityEnhancer id;
  for (int rate : {8000, 16000, 44100, 48000}) {
    const AudioBuffer a = random_audio(rng, size_t(rate * 27.3), rate);
    const AudioBuffer out = enhance_recording(a, plan_chunks(int64_t(a.size()), rate, 12.0, 4.0), id);
    ASSERT_EQ(out.size(), a.size());
    EXPECT_EQ(out.sample_rate(), rate);
    EXPECT_EQ(std::memcmp(out.to_vector().data(), a.to_vector().data(), a.size() * 4), 0);
  }
}

TEST(EnhanceRecording, MemorylessBackendsMatchWholeSignal) {
  std::mt19937_64 rng(6);
  const AudioBuffer a = random_audio(rng, 20 * 16000, 16000);
  const ChunkPlan plan = plan_chunks(int64_t(a.size()), 16000, 12.0, 4.0);

  GainEnhancer half(0.5f);
  const AudioBuffer halved = enhance_recording(a, plan, half);
  for (size_t i = 0; i < a.size(); ++i) ASSERT_EQ(halved.samples()[i], 0.5f * a.samples()[i]) << i;

  SquashEnhancer squash;
  const AudioBuffer whole = squash.enhance(a);
  const AudioBuffer stitched = enhance_recording(a, plan, squash, 3);
  EXPECT_EQ(std::memcmp(whole.to_vector().data(), stitched.to_vector().data(), a.size() * 4), 0);
}

TEST(EnhanceRecording, ParallelMatchesSerial) {
  std::mt19937_64 rng(8);
  const AudioBuffer a = random_audio(rng, 61 * 8000 + 17, 8000);
  const ChunkPlan plan = plan_chunks(int64_t(a.size()), 8000, 12.0, 4.0);
  GainEnhancer g(1.25f);
  const AudioBuffer serial = enhance_recording(a, plan, g, 1);
  const AudioBuffer parallel = enhance_recording(a, plan, g, 4);
  EXPECT_EQ(serial.to_vector(), parallel.to_vector());
}

TEST(EnhanceRecording, WrongLengthNamesTheChunk) {
  std::mt19937_64 rng(9);
  const AudioBuffer a = random_audio(rng, 30 * 1000, 1000);
  ShortOutputEnhancer bad;
  try {
    enhance_recording(a, plan_chunks(int64_t(a.size()), 1000, 12.0, 4.0), bad);
    FAIL() << "expected BackendError";
  } catch (const BackendError &e) {
    EXPECT_NE(std::string(e.what()).find("chunk 1"), std::string::npos) << e.what();
  }
}
