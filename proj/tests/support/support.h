// Independent oracles, generators and fixtures shared by the unit tests and
// the acceptance suite.

#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "autoprep/core.h"
#include "autoprep/segmenter.h"

namespace testsupport {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;
  const fs::path &path() const { return path_; }
  fs::path operator/(const std::string &name) const { return path_ / name; }

 private:
  fs::path path_;
};

// Uniform double in [0, 1) with identical output on every platform.
double uniform(std::mt19937_64 &rng);
int uniform_int(std::mt19937_64 &rng, int lo, int hi);  // inclusive

// --- segmentation --------------------------------------------------------

struct RandomTrack {
  autoprep::FrameTrack track;
  int hop_ms = 0;
};

// Alternating speech/silence runs with occasional long speech and threshold ties.
RandomTrack random_track(std::mt19937_64 &rng);

// Integer-millisecond reimplementation of the segmentation rules. Works on a
// per-millisecond occupancy grid; returns [start_ms, end_ms) pairs.
std::vector<std::pair<int64_t, int64_t>> reference_segments(const std::vector<double> &probs,
                                                            int hop_ms,
                                                            const autoprep::PipelineConfig &config);

// --- clustering ----------------------------------------------------------

struct ConeBatch {
  std::vector<autoprep::SpeakerEmbedding> embeddings;
  std::vector<int> truth;
  int k = 0;
  double min_intra_cos = 1.0;
  double max_inter_cos = -1.0;
};

// k cones of half-angle max_angle_deg around orthonormal axes in dim dimensions.
ConeBatch cone_batch(std::mt19937_64 &rng, int k, int n, int dim = 64, double max_angle_deg = 8.0);

double adjusted_rand_index(const std::vector<int> &a, const std::vector<int> &b);

// Greedy pair merging on explicit member sets, recomputing mean directions.
// Returns member index sets, ordered by smallest member.
std::vector<std::vector<size_t>> reference_merge(
    const std::vector<autoprep::SpeakerEmbedding> &embeddings, const std::vector<int> &assignments,
    int k, double threshold);

// --- synthetic corpus ----------------------------------------------------

struct PlantedUtterance {
  std::string recording_id;
  double start_s = 0.0;  // speech onset; the segment starts pad earlier
  double end_s = 0.0;
  int speaker = 0;       // -1: chunks alternate speakers (unlabeled)
  double ovrl = 3.0;
  std::optional<double> pdnsmos;
  bool scorer_error = false;
  std::string text;      // "" => empty transcript
  bool asr_error = false;
};

struct SyntheticCorpus {
  fs::path dir;
  fs::path input_manifest;
  fs::path config;
  std::vector<PlantedUtterance> utterances;
  int sample_rate = 16000;
};

// Three recordings of noise bursts separated by silence, with fixture
// embeddings for two speakers, scripted scores and transcripts, and a config
// whose backends point at the fixtures.
SyntheticCorpus make_synthetic_corpus(const fs::path &dir, uint64_t seed = 7);

std::string read_file(const fs::path &path);

// --- fake external backend -----------------------------------------------

struct FakeBackendOptions {
  std::vector<int> sample_rates{16000};
  int embedding_dim = 4;
  double frame_hop_s = 0.02;
  float gain = 1.0f;
};

// Serves requests until EOF. Returns false if the stream broke mid-frame.
bool serve_stream(int in_fd, int out_fd, const FakeBackendOptions &options);

// Accepts connections on a Unix socket and serves each on its own thread.
class SocketServer {
 public:
  SocketServer(fs::path path, FakeBackendOptions options);
  ~SocketServer();
  const fs::path &path() const { return path_; }
  int accepted() const;

 private:
  fs::path path_;
  FakeBackendOptions options_;
  int listen_fd_ = -1;
  std::thread thread_;
  std::vector<std::thread> workers_;
  std::atomic<int> accepted_{0};
  std::atomic<bool> stop_{false};
};

}  // namespace testsupport
