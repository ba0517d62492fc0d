// Speaker clustering over sub-chunk embeddings within one clustering batch:
// cosine affinity, normalized-Laplacian eigengap model selection, spectral
// K-Means, center merging and per-segment label abstention.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autoprep/core.h"

namespace autoprep {

using Vector = std::vector<double>;

// Symmetric, unit diagonal, entries in [0, 1].
struct AffinityMatrix {
  Eigen::MatrixXd values;
  Eigen::Index size() const { return values.rows(); }
};

// Chunk windows (in recording time) covering a segment: offsets 0, shift,
// 2*shift, ... plus one end-aligned window if the last does not reach the end.
std::vector<TimeRange> window_chunks(const TimeRange &segment, double window_s, double shift_s);

// A[i][j] = max(0, cos(e_i, e_j)), A[i][i] = 1.
AffinityMatrix build_affinity(std::span<const SpeakerEmbedding> embeddings);

// L = I - D^-1/2 A D^-1/2.
Eigen::MatrixXd normalized_laplacian(const AffinityMatrix &affinity);

struct Spectrum {
  Eigen::VectorXd eigenvalues;   // ascending
  Eigen::MatrixXd eigenvectors;  // one column per eigenvalue
};

// The `count` smallest eigenpairs of the normalized Laplacian.
Spectrum laplacian_spectrum(const AffinityMatrix &affinity, int count);

// argmax over i in [1, min(k_max, n-1)] of lambda_{i+1} - lambda_i (1-based),
// ties toward smaller i. Needs at least min(k_max, n-1) + 1 eigenvalues.
int eigengap_k(const Eigen::VectorXd &ascending_eigenvalues, int k_max);
int estimate_k(const AffinityMatrix &affinity, int k_max);

struct KMeansOptions {
  int restarts = 10;
  int max_iterations = 300;
  double tolerance = 1e-6;
};

// k-means++ seeded Lloyd iterations; the best-inertia restart wins. Labels are
// renumbered in order of first appearance.
std::vector<int> kmeans(const Eigen::MatrixXd &points, int k, uint64_t seed,
                        const KMeansOptions &options = {});

// K-Means on the row-normalized k smallest Laplacian eigenvectors.
std::vector<int> spectral_assign(const AffinityMatrix &affinity, int k, uint64_t seed);
std::vector<int> spectral_assign(const Spectrum &spectrum, int k, uint64_t seed);

// Normalized member mean per cluster. A zero mean falls back to the member
// closest to the unnormalized mean. Throws Error on an empty cluster.
std::vector<Vector> compute_centers(std::span<const SpeakerEmbedding> embeddings,
                                    std::span<const int> assignments, int k);

double cosine(std::span<const double> a, std::span<const double> b);
double cosine(std::span<const float> a, std::span<const double> b);

struct Clustering {
  std::vector<Vector> centers;
  std::vector<int> assignments;
};

// Repeatedly merges the most similar pair of centers with cosine strictly
// above threshold, recomputing the merged center from all members.
Clustering merge_clusters(std::span<const SpeakerEmbedding> embeddings, Clustering clustering,
                          double threshold);

// Unanimous cluster per segment, nullopt when its chunks disagree. Throws on a
// segment without chunks.
std::vector<std::optional<int>> label_segments(std::span<const std::vector<int>> chunk_assignments);

// Greedy in-order packing of segments (sorted by recording, start) into
// batches whose total duration stays strictly below max_hours. A recording is
// split only when it alone reaches the cap; the cuts fall on the segment
// boundaries nearest an even split. Returns indices into `segments`.
std::vector<std::vector<size_t>> batch_segments(std::span<const Segment> segments, double max_hours,
                                                bool per_recording = false);

struct ClusterOptions {
  int k_max = 20;
  double merge_threshold = 0.75;
  uint64_t seed = 0;
  // Larger batches are uniformly subsampled for the eigendecomposition.
  size_t max_spectral_chunks = 12000;
};

struct ClusterModel {
  std::string batch_id;
  int k = 0;
  int estimated_k = 0;  // before merging
  std::vector<Vector> centers;
  std::vector<int> chunk_assignments;
  std::vector<std::optional<int>> segment_labels;
};

// Full clustering of one batch. chunks_per_segment[s] counts the embeddings of
// segment s, which appear contiguously and in segment order in `embeddings`.
ClusterModel cluster_batch(std::span<const SpeakerEmbedding> embeddings,
                           std::span<const size_t> chunks_per_segment, const ClusterOptions &options,
                           std::string batch_id = {});

struct EmbeddingExportRow {
  std::string chunk_id;
  int cluster = 0;
  std::vector<float> vector;
};

// One row per chunk: chunk_id<TAB>cluster<TAB>v1,v2,...,vd
void write_embedding_export(std::ostream &out, std::span<const EmbeddingExportRow> rows);

}  // namespace autoprep
