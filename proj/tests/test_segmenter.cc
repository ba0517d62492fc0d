#include <gtest/gtest.h>

#include <cmath>

#include "autoprep/segmenter.h"
#include "support/support.h"

using namespace autoprep;

namespace {

SpeechMask mask_from(const std::string &pattern, double hop) {
  SpeechMask m{{}, hop};
  for (char c : pattern) m.flags.push_back(c == '1');
  return m;
}

// Mask of `seconds` duration at hop 0.1 with speech over the given ranges.
SpeechMask mask_with_speech(double seconds, std::vector<TimeRange> speech) {
  SpeechMask m{std::vector<bool>(size_t(std::llround(seconds * 10)), false), 0.1};
  for (const auto &r : speech) {
    for (size_t f = size_t(std::llround(r.start_s * 10)); f < size_t(std::llround(r.end_s * 10)); ++f) {
      m.flags[f] = true;
    }
  }
  return m;
}

void expect_ranges(const std::vector<TimeRange> &got, const std::vector<TimeRange> &want) {
  ASSERT_EQ(got.size(), want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    EXPECT_NEAR(got[i].start_s, want[i].start_s, 1e-9) << i;
    EXPECT_NEAR(got[i].end_s, want[i].end_s, 1e-9) << i;
  }
}

}  // namespace

TEST(Binarize, InclusiveThreshold) {
  const SpeechMask m = binarize({{0.8, 0.76, 0.5}, 0.01}, 0.76);
  EXPECT_EQ(m.flags, (std::vector<bool>{true, true, false}));
  EXPECT_EQ(binarize({{0, 0, 0}, 0.01}, 0.76).flags, std::vector<bool>(3, false));
  EXPECT_EQ(binarize({{1, 1}, 0.01}, 0.76).flags, std::vector<bool>(2, true));
}

TEST(FrameTrack, Validates) {
  EXPECT_THROW((FrameTrack{{0.5}, 0.0}).validate(), Error);
  EXPECT_THROW((FrameTrack{{1.2}, 0.01}).validate(), Error);
  EXPECT_THROW((FrameTrack{{std::nan("")}, 0.01}).validate(), Error);
  EXPECT_NO_THROW((FrameTrack{{0.0, 1.0}, 0.01}).validate());
}

TEST(RawRegions, BridgesShortSilence) {
  expect_ranges(raw_regions(mask_with_speech(4, {{0, 2}, {2.5, 4}}), 1.0), {{0, 4}});
  expect_ranges(raw_regions(mask_with_speech(5, {{0, 2}, {3.5, 5}}), 1.0), {{0, 2}, {3.5, 5}});
  // Exactly the split duration is bridged.
  expect_ranges(raw_regions(mask_with_speech(5, {{0, 2}, {3, 5}}), 1.0), {{0, 5}});
  EXPECT_TRUE(raw_regions(mask_from("0000", 0.1), 1.0).empty());
}

TEST(PadRegions, ExpandsClampsAndMerges) {
  expect_ranges(pad_regions(std::vector<TimeRange>{{1.0, 2.0}}, 0.4, 10), {{0.6, 2.4}});
  expect_ranges(pad_regions(std::vector<TimeRange>{{0.2, 1.0}}, 0.4, 10), {{0.0, 1.4}});
  expect_ranges(pad_regions(std::vector<TimeRange>{{1.0, 2.0}, {2.5, 3.0}}, 0.4, 10), {{0.6, 3.4}});
  expect_ranges(pad_regions(std::vector<TimeRange>{{9.0, 9.9}}, 0.4, 10), {{8.6, 10.0}});
  // Touching after padding merges.
  expect_ranges(pad_regions(std::vector<TimeRange>{{1.0, 2.0}, {2.8, 3.0}}, 0.4, 10), {{0.6, 3.4}});
}

TEST(EnforceMinLength, Examples) {
  expect_ranges(enforce_min_length(std::vector<TimeRange>{{0, 1}, {2, 4}}, 1.5), {{0, 4}});
  expect_ranges(enforce_min_length(std::vector<TimeRange>{{0, 2}, {3, 5}}, 1.5), {{0, 2}, {3, 5}});
  EXPECT_TRUE(enforce_min_length(std::vector<TimeRange>{{0, 0.5}}, 1.5).empty());
  // Short tail merges backward.
  expect_ranges(enforce_min_length(std::vector<TimeRange>{{0, 2}, {3, 3.5}}, 1.5), {{0, 3.5}});
  // Several short regions accumulate until the minimum is reached.
  expect_ranges(enforce_min_length(std::vector<TimeRange>{{0, 0.3}, {0.6, 0.9}, {1.2, 1.6}, {5, 7}}, 1.5),
                {{0, 1.6}, {5, 7}});
  // With a cap, an over-long merge drops the short region instead.
  expect_ranges(enforce_min_length(std::vector<TimeRange>{{0, 1}, {1.2, 40.5}}, 1.5, 40.0), {{1.2, 40.5}});
}

TEST(EnforceMaxLength, Examples) {
  const SpeechMask all_speech = mask_with_speech(50, {{0, 50}});
  expect_ranges(enforce_max_length(std::vector<TimeRange>{{0, 25}}, all_speech, 30, 40), {{0, 25}});
  const SpeechMask gap_at_32 = mask_with_speech(35, {{0, 32}, {32.1, 35}});
  expect_ranges(enforce_max_length(std::vector<TimeRange>{{0, 35}}, gap_at_32, 30, 40), {{0, 32}, {32, 35}});
  expect_ranges(enforce_max_length(std::vector<TimeRange>{{0, 45}}, all_speech, 30, 40), {{0, 40}, {40, 45}});
  // Remainders are split again.
  expect_ranges(enforce_max_length(std::vector<TimeRange>{{0, 50}}, all_speech, 30, 40) ,
                {{0, 40}, {40, 50}});
  const SpeechMask long_speech = mask_with_speech(100, {{0, 100}});
  expect_ranges(enforce_max_length(std::vector<TimeRange>{{0, 95}}, long_speech, 30, 40),
                {{0, 40}, {40, 80}, {80, 95}});
}

TEST(SegmentRecording, Examples) {
  PipelineConfig config;
  EXPECT_TRUE(segment_recording({std::vector<double>(2000, 0.0), 0.01}, config, "r").empty());

  std::vector<double> probs(2000, 0.1);
  for (size_t i = 500; i < 1500; ++i) probs[i] = 0.9;
  const auto segs = segment_recording({probs, 0.01}, config, "rec");
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_NEAR(segs[0].range.duration(), 10.8, 1e-9);
  EXPECT_NEAR(segs[0].range.start_s, 4.6, 1e-9);
  EXPECT_EQ(segs[0].segment_id, "rec_00000");
  EXPECT_EQ(segs[0].recording_id, "rec");
}

TEST(SegmentRecording, AlternatingRunsMatchReference) {
  // 50 alternating runs of varied length, hop 20 ms.
  std::vector<double> probs;
  const int lengths[] = {30, 80, 10, 45, 200, 20, 5, 60, 1200, 15};
  for (int r = 0; r < 50; ++r) {
    const bool speech = r % 2 == 0;
    for (int i = 0; i < lengths[r % 10]; ++i) probs.push_back(speech ? 0.9 : 0.2);
  }
  PipelineConfig config;
  const auto got = segment_recording({probs, 0.02}, config);
  const auto want = testsupport::reference_segments(probs, 20, config);
  ASSERT_EQ(got.size(), want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    EXPECT_NEAR(got[i].range.start_s * 1000, double(want[i].first), 1e-6);
    EXPECT_NEAR(got[i].range.end_s * 1000, double(want[i].second), 1e-6);
  }
}

TEST(SegmentRecording, RandomTracksMatchReferenceAndInvariants) {
  std::mt19937_64 rng(2024);
  PipelineConfig config;
  for (int trial = 0; trial < 150; ++trial) {
    const auto t = testsupport::random_track(rng);
    const auto got = segment_recording(t.track, config);
    const auto want = testsupport::reference_segments(t.track.probs, t.hop_ms, config);
    ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
    double prev_end = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
      const TimeRange r = got[i].range;
      ASSERT_NEAR(r.start_s * 1000, double(want[i].first), 1e-6) << trial << "/" << i;
      ASSERT_NEAR(r.end_s * 1000, double(want[i].second), 1e-6) << trial << "/" << i;
      EXPECT_GE(r.duration(), 1.5 - 1e-9);
      EXPECT_LE(r.duration(), 40.0 + 1e-9);
      EXPECT_GE(r.start_s, prev_end - 1e-9);
      EXPECT_LE(r.end_s, t.track.duration_s() + 1e-9);
      prev_end = r.end_s;
    }
  }
}

TEST(SegmentRecording, DeterministicAndPure) {
  std::mt19937_64 rng(77);
  const auto t = testsupport::random_track(rng);
  PipelineConfig config;
  const auto a = segment_recording(t.track, config, "x");
  const auto b = segment_recording(t.track, config, "x");
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].range, b[i].range);
}
