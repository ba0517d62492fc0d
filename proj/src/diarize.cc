#include "autoprep/diarize.h"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

namespace autoprep {

namespace {

constexpr double kEps = 1e-9;

double uniform01(std::mt19937_64 &rng) { return double(rng() >> 11) * 0x1.0p-53; }

// Picks index i with probability weights[i] / sum(weights).
size_t weighted_pick(std::span<const double> weights, std::mt19937_64 &rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) return static_cast<size_t>(rng() % weights.size());
  const double target = uniform01(rng) * total;
  double acc = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (target < acc) return i;
  }
  for (size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

std::vector<int> canonical_labels(std::span<const int> labels) {
  std::map<int, int> remap;
  std::vector<int> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = remap.emplace(labels[i], static_cast<int>(remap.size()));
    out[i] = it->second;
  }
  return out;
}

struct KMeansRun {
  std::vector<int> labels;
  double inertia = std::numeric_limits<double>::infinity();
};

KMeansRun kmeans_once(const Eigen::MatrixXd &x, int k, std::mt19937_64 &rng,
                      const KMeansOptions &options) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd centers(k, x.cols());

  // k-means++ seeding.
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  centers.row(0) = x.row(static_cast<Eigen::Index>(rng() % n));
  for (int c = 1; c < k; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      dist2[i] = std::min(dist2[i], (x.row(i) - centers.row(c - 1)).squaredNorm());
    }
    centers.row(c) = x.row(static_cast<Eigen::Index>(weighted_pick(dist2, rng)));
  }

  KMeansRun run;
  run.labels.assign(n, 0);
  std::vector<double> nearest(n);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < best) {
          best = d;
          run.labels[i] = c;
        }
      }
      nearest[i] = best;
    }
    Eigen::MatrixXd updated = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<Eigen::Index> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      updated.row(run.labels[i]) += x.row(i);
      ++counts[run.labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        updated.row(c) /= double(counts[c]);
      } else {
        // Re-seed an empty cluster at the point farthest from its center.
        const auto far = std::max_element(nearest.begin(), nearest.end()) - nearest.begin();
        updated.row(c) = x.row(far);
        nearest[far] = 0.0;
      }
    }
    double movement = 0.0;
    for (int c = 0; c < k; ++c) {
      movement = std::max(movement, (updated.row(c) - centers.row(c)).norm());
    }
    centers = std::move(updated);
    if (movement < options.tolerance) break;
  }

  run.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      const double d = (x.row(i) - centers.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        run.labels[i] = c;
      }
    }
    run.inertia += best;
  }
  return run;
}

Vector normalized_mean(std::span<const SpeakerEmbedding> embeddings, std::span<const size_t> members) {
  const size_t d = embeddings[members.front()].vector.size();
  Vector mean(d, 0.0);
  for (size_t m : members) {
    for (size_t j = 0; j < d; ++j) mean[j] += embeddings[m].vector[j];
  }
  for (double &v : mean) v /= double(members.size());
  double norm = std::sqrt(std::inner_product(mean.begin(), mean.end(), mean.begin(), 0.0));
  if (norm > 1e-12) {
    for (double &v : mean) v /= norm;
    return mean;
  }
  // Degenerate mean: take the member nearest to it.
  size_t best = members.front();
  double best_dist = std::numeric_limits<double>::infinity();
  for (size_t m : members) {
    double dist = 0.0;
    for (size_t j = 0; j < d; ++j) dist += std::pow(embeddings[m].vector[j] - mean[j], 2);
    if (dist < best_dist) {
      best_dist = dist;
      best = m;
    }
  }
  Vector fallback(embeddings[best].vector.begin(), embeddings[best].vector.end());
  norm = std::sqrt(std::inner_product(fallback.begin(), fallback.end(), fallback.begin(), 0.0));
  for (double &v : fallback) v /= norm;
  return fallback;
}

Spectrum spectrum_of(AffinityMatrix affinity, int count) {
  Eigen::MatrixXd &m = affinity.values;
  const Eigen::Index n = m.rows();
  const auto lapack_n = static_cast<lapack_int>(n);
  count = std::clamp<int>(count, 1, static_cast<int>(n));

  // Build L = I - D^-1/2 A D^-1/2 in place.
  const Eigen::VectorXd inv_sqrt_degree = m.rowwise().sum().cwiseSqrt().cwiseInverse();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      m(i, j) = -inv_sqrt_degree(i) * m(i, j) * inv_sqrt_degree(j);
    }
    m(j, j) += 1.0;
  }

  Eigen::VectorXd w(n);
  Eigen::MatrixXd z(n, count);
  std::vector<lapack_int> support(2 * static_cast<size_t>(n));
  lapack_int found = 0;
  const lapack_int info =
      LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', lapack_n, m.data(), lapack_n, 0.0, 0.0, 1,
                     count, 0.0, &found, w.data(), z.data(), lapack_n, support.data());
  if (info != 0 || found != count) {
    throw Error("Laplacian eigendecomposition failed (info " + std::to_string(info) + ")");
  }

  // Fix eigenvector signs: largest-magnitude component positive.
  for (int c = 0; c < count; ++c) {
    Eigen::Index arg = 0;
    z.col(c).cwiseAbs().maxCoeff(&arg);
    if (z(arg, c) < 0.0) z.col(c) = -z.col(c);
  }
  return {w.head(count), std::move(z)};
}

}  // namespace

std::vector<TimeRange> window_chunks(const TimeRange &segment, double window_s, double shift_s) {
  const double duration = segment.duration();
  if (duration < window_s - kEps) {
    throw Error("segment of " + std::to_string(duration) + " s is shorter than the " +
                std::to_string(window_s) + " s embedding window");
  }
  std::vector<TimeRange> out;
  double offset = 0.0;
  for (int i = 0; (offset = i * shift_s) + window_s <= duration + kEps; ++i) {
    out.push_back({segment.start_s + offset, segment.start_s + offset + window_s});
  }
  if (out.back().end_s < segment.end_s - kEps) {
    out.push_back({segment.end_s - window_s, segment.end_s});
  }
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

double cosine(std::span<const float> a, std::span<const double> b) {
  Vector wide(a.begin(), a.end());
  return cosine(std::span<const double>(wide), b);
}

AffinityMatrix build_affinity(std::span<const SpeakerEmbedding> embeddings) {
  if (embeddings.empty()) throw Error("cannot build an affinity matrix without embeddings");
  const size_t d = embeddings.front().vector.size();
  const auto n = static_cast<Eigen::Index>(embeddings.size());
  Eigen::MatrixXd rows(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto &v = embeddings[i].vector;
    if (v.size() != d) {
      throw Error("embedding " + std::to_string(i) + " has dimension " + std::to_string(v.size()) +
                  ", expected " + std::to_string(d));
    }
    for (size_t j = 0; j < d; ++j) rows(i, static_cast<Eigen::Index>(j)) = v[j];
    const double norm = rows.row(i).norm();
    if (norm > 0.0) rows.row(i) /= norm;
  }
  AffinityMatrix a;
  a.values.noalias() = rows * rows.transpose();
  for (Eigen::Index j = 0; j < n; ++j) {
    a.values(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = std::clamp(a.values(i, j), 0.0, 1.0);
      a.values(i, j) = v;
      a.values(j, i) = v;
    }
  }
  return a;
}

Eigen::MatrixXd normalized_laplacian(const AffinityMatrix &affinity) {
  const Eigen::VectorXd inv_sqrt_degree =
      affinity.values.rowwise().sum().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd l = -(inv_sqrt_degree.asDiagonal() * affinity.values * inv_sqrt_degree.asDiagonal());
  l.diagonal().array() += 1.0;
  return l;
}

Spectrum laplacian_spectrum(const AffinityMatrix &affinity, int count) {
  return spectrum_of(affinity, count);
}

int eigengap_k(const Eigen::VectorXd &eigenvalues, int k_max) {
  const int n_gaps = std::min<int>(k_max, static_cast<int>(eigenvalues.size()) - 1);
  int best_k = 1;
  double best_gap = -std::numeric_limits<double>::infinity();
  for (int i = 1; i <= n_gaps; ++i) {
    const double gap = eigenvalues(i) - eigenvalues(i - 1);
    if (gap > best_gap + 1e-12) {
      best_gap = gap;
      best_k = i;
    }
  }
  return best_k;
}

int estimate_k(const AffinityMatrix &affinity, int k_max) {
  const auto n = static_cast<int>(affinity.size());
  if (n < 2) return 1;
  const int count = std::min(k_max, n - 1) + 1;
  return eigengap_k(spectrum_of(affinity, count).eigenvalues, k_max);
}

std::vector<int> kmeans(const Eigen::MatrixXd &points, int k, uint64_t seed,
                        const KMeansOptions &options) {
  const Eigen::Index n = points.rows();
  if (n == 0) return {};
  if (k <= 1) return std::vector<int>(n, 0);
  if (k > n) throw Error("K-Means needs at least k points");
  std::mt19937_64 rng(seed);
  KMeansRun best;
  for (int r = 0; r < std::max(1, options.restarts); ++r) {
    KMeansRun run = kmeans_once(points, k, rng, options);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return canonical_labels(best.labels);
}

std::vector<int> spectral_assign(const Spectrum &spectrum, int k, uint64_t seed) {
  const Eigen::Index n = spectrum.eigenvectors.rows();
  if (k < 1 || k > n || k > spectrum.eigenvectors.cols()) {
    throw Error("spectral_assign needs 1 <= k <= n with k eigenvectors available");
  }
  if (k == 1) return std::vector<int>(n, 0);
  Eigen::MatrixXd u = spectrum.eigenvectors.leftCols(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = u.row(i).norm();
    if (norm > 1e-12) u.row(i) /= norm;
  }
  return kmeans(u, k, seed);
}

std::vector<int> spectral_assign(const AffinityMatrix &affinity, int k, uint64_t seed) {
  if (k < 1 || k > affinity.size()) throw Error("spectral_assign needs 1 <= k <= n");
  if (k == 1) return std::vector<int>(affinity.size(), 0);
  return spectral_assign(spectrum_of(affinity, k), k, seed);
}

std::vector<Vector> compute_centers(std::span<const SpeakerEmbedding> embeddings,
                                    std::span<const int> assignments, int k) {
  if (embeddings.size() != assignments.size()) {
    throw Error("embedding and assignment counts differ");
  }
  std::vector<std::vector<size_t>> members(k);
  for (size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] < 0 || assignments[i] >= k) throw Error("assignment out of range");
    members[assignments[i]].push_back(i);
  }
  std::vector<Vector> centers;
  centers.reserve(k);
  for (int c = 0; c < k; ++c) {
    if (members[c].empty()) throw Error("cluster " + std::to_string(c) + " is empty");
    centers.push_back(normalized_mean(embeddings, members[c]));
  }
  return centers;
}

Clustering merge_clusters(std::span<const SpeakerEmbedding> embeddings, Clustering clustering,
                          double threshold) {
  auto &centers = clustering.centers;
  auto &assignments = clustering.assignments;
  while (centers.size() > 1) {
    int best_a = -1, best_b = -1;
    double best = threshold;
    for (size_t a = 0; a < centers.size(); ++a) {
      for (size_t b = a + 1; b < centers.size(); ++b) {
        const double sim = cosine(centers[a], centers[b]);
        if (sim > best) {
          best = sim;
          best_a = static_cast<int>(a);
          best_b = static_cast<int>(b);
        }
      }
    }
    if (best_a < 0) break;

    std::vector<size_t> members;
    for (size_t i = 0; i < assignments.size(); ++i) {
      int &label = assignments[i];
      if (label == best_b) label = best_a;
      if (label > best_b) --label;
      if (label == best_a) members.push_back(i);
    }
    centers.erase(centers.begin() + best_b);
    centers[best_a] = normalized_mean(embeddings, members);
  }
  return clustering;
}

std::vector<std::optional<int>> label_segments(std::span<const std::vector<int>> chunk_assignments) {
  std::vector<std::optional<int>> labels;
  labels.reserve(chunk_assignments.size());
  for (size_t s = 0; s < chunk_assignments.size(); ++s) {
    const auto &chunks = chunk_assignments[s];
    if (chunks.empty()) throw Error("segment " + std::to_string(s) + " has no chunks");
    const bool unanimous = std::all_of(chunks.begin(), chunks.end(),
                                       [&](int c) { return c == chunks.front(); });
    labels.push_back(unanimous ? std::optional<int>(chunks.front()) : std::nullopt);
  }
  return labels;
}

namespace {

// Splits one recording's segments [begin, end) into parts each below cap.
std::vector<std::vector<size_t>> split_recording(std::span<const Segment> segments, size_t begin,
                                                 size_t end, double cap_s) {
  std::vector<double> cumulative{0.0};  // cumulative[j] = duration of segments [begin, begin + j)
  for (size_t i = begin; i < end; ++i) {
    cumulative.push_back(cumulative.back() + segments[i].range.duration());
  }
  const double total = cumulative.back();
  const size_t count = end - begin;
  for (size_t parts = static_cast<size_t>(total / cap_s) + 1; parts <= count; ++parts) {
    std::vector<size_t> cuts{0};
    for (size_t j = 1; j < parts; ++j) {
      const double target = total * double(j) / double(parts);
      size_t best = cuts.back() + 1;
      for (size_t c = best; c + (parts - j) <= count; ++c) {
        if (std::abs(cumulative[c] - target) < std::abs(cumulative[best] - target)) best = c;
      }
      cuts.push_back(best);
    }
    cuts.push_back(count);
    bool fits = true;
    for (size_t j = 0; j + 1 < cuts.size(); ++j) {
      fits = fits && cumulative[cuts[j + 1]] - cumulative[cuts[j]] < cap_s;
    }
    if (!fits) continue;
    std::vector<std::vector<size_t>> out;
    for (size_t j = 0; j + 1 < cuts.size(); ++j) {
      std::vector<size_t> part(cuts[j + 1] - cuts[j]);
      std::iota(part.begin(), part.end(), begin + cuts[j]);
      out.push_back(std::move(part));
    }
    return out;
  }
  // Only reachable if a single segment alone reaches the cap.
  std::vector<std::vector<size_t>> out;
  for (size_t i = begin; i < end; ++i) out.push_back({i});
  return out;
}

}  // namespace

std::vector<std::vector<size_t>> batch_segments(std::span<const Segment> segments, double max_hours,
                                                bool per_recording) {
  const double cap_s = max_hours * 3600.0;
  std::vector<std::vector<size_t>> batches;
  std::vector<size_t> open;
  double open_s = 0.0;
  auto close = [&] {
    if (!open.empty()) batches.push_back(std::move(open));
    open.clear();
    open_s = 0.0;
  };

  for (size_t begin = 0; begin < segments.size();) {
    size_t end = begin;
    double rec_s = 0.0;
    while (end < segments.size() && segments[end].recording_id == segments[begin].recording_id) {
      rec_s += segments[end].range.duration();
      ++end;
    }
    if (rec_s >= cap_s) {
      close();
      for (auto &part : split_recording(segments, begin, end, cap_s)) batches.push_back(std::move(part));
    } else {
      if (per_recording || open_s + rec_s >= cap_s) close();
      for (size_t i = begin; i < end; ++i) open.push_back(i);
      open_s += rec_s;
    }
    begin = end;
  }
  close();
  return batches;
}

ClusterModel cluster_batch(std::span<const SpeakerEmbedding> embeddings,
                           std::span<const size_t> chunks_per_segment, const ClusterOptions &options,
                           std::string batch_id) {
  if (std::accumulate(chunks_per_segment.begin(), chunks_per_segment.end(), size_t{0}) !=
      embeddings.size()) {
    throw Error("chunk counts do not add up to the number of embeddings");
  }
  ClusterModel model;
  model.batch_id = std::move(batch_id);
  const size_t n = embeddings.size();
  if (n == 0) {
    model.segment_labels.assign(chunks_per_segment.size(), std::nullopt);
    return model;
  }

  std::vector<size_t> sample(n);
  std::iota(sample.begin(), sample.end(), size_t{0});
  if (n > options.max_spectral_chunks) {
    sample.resize(options.max_spectral_chunks);
    for (size_t i = 0; i < sample.size(); ++i) sample[i] = i * n / options.max_spectral_chunks;
  }
  std::vector<SpeakerEmbedding> sampled;
  sampled.reserve(sample.size());
  for (size_t i : sample) sampled.push_back(embeddings[i]);

  std::vector<int> sampled_labels(sampled.size(), 0);
  if (sampled.size() >= 2) {
    AffinityMatrix affinity = build_affinity(sampled);
    const int count = std::min<int>(options.k_max, static_cast<int>(sampled.size()) - 1) + 1;
    const Spectrum spectrum = spectrum_of(std::move(affinity), count);
    model.estimated_k = eigengap_k(spectrum.eigenvalues, options.k_max);
    sampled_labels = spectral_assign(spectrum, model.estimated_k, options.seed);
  } else {
    build_affinity(sampled);  // dimension checks only
    model.estimated_k = 1;
  }
  int k = *std::max_element(sampled_labels.begin(), sampled_labels.end()) + 1;

  Clustering clustering;
  clustering.centers = compute_centers(sampled, sampled_labels, k);
  if (sample.size() == n) {
    clustering.assignments = std::move(sampled_labels);
  } else {
    clustering.assignments.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const auto &v = embeddings[i].vector;
      if (v.size() != clustering.centers.front().size()) throw Error("embedding dimension mismatch");
      int best = 0;
      double best_sim = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double sim = cosine(std::span<const float>(v), clustering.centers[c]);
        if (sim > best_sim) {
          best_sim = sim;
          best = c;
        }
      }
      clustering.assignments[i] = best;
    }
    clustering.assignments = canonical_labels(clustering.assignments);
    k = *std::max_element(clustering.assignments.begin(), clustering.assignments.end()) + 1;
    clustering.centers = compute_centers(embeddings, clustering.assignments, k);
  }

  clustering = merge_clusters(embeddings, std::move(clustering), options.merge_threshold);
  model.k = static_cast<int>(clustering.centers.size());
  model.centers = std::move(clustering.centers);
  model.chunk_assignments = std::move(clustering.assignments);

  std::vector<std::vector<int>> per_segment;
  size_t offset = 0;
  for (size_t count : chunks_per_segment) {
    per_segment.emplace_back(model.chunk_assignments.begin() + offset,
                             model.chunk_assignments.begin() + offset + count);
    offset += count;
  }
  model.segment_labels = label_segments(per_segment);
  return model;
}

void write_embedding_export(std::ostream &out, std::span<const EmbeddingExportRow> rows) {
  char buf[32];
  for (const auto &row : rows) {
    out << row.chunk_id << '\t' << row.cluster << '\t';
    for (size_t j = 0; j < row.vector.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", row.vector[j]);
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

}  // namespace autoprep
