#include "support.h"

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "autoprep/diarize.h"
#include "autoprep/protocol.h"
#include "autoprep/wav.h"

namespace testsupport {

using autoprep::SpeakerEmbedding;
using autoprep::TimeRange;

TempDir::TempDir() {
  std::string tmpl = (fs::temp_directory_path() / "autoprep-test-XXXXXX").string();
  if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

double uniform(std::mt19937_64 &rng) { return double(rng() >> 11) * 0x1.0p-53; }

int uniform_int(std::mt19937_64 &rng, int lo, int hi) {
  return lo + int(rng() % uint64_t(hi - lo + 1));
}

std::string read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- segmentation --------------------------------------------------------

RandomTrack random_track(std::mt19937_64 &rng) {
  static const int kHops[] = {10, 16, 20, 25};
  RandomTrack t;
  t.hop_ms = kHops[rng() % 4];
  const double theta = 0.76;
  const int64_t total_ms = 500 + int64_t(uniform(rng) * 240000);
  const int64_t frames = total_ms / t.hop_ms;
  bool speech = uniform(rng) < 0.5;
  std::vector<double> &p = t.track.probs;
  while (int64_t(p.size()) < frames) {
    double run_s;
    if (speech) {
      const double u = uniform(rng);
      run_s = u < 0.1 ? 30.0 + 60.0 * uniform(rng) : u < 0.4 ? 0.02 + 1.5 * uniform(rng)
                                                            : 0.5 + 12.0 * uniform(rng);
    } else {
      run_s = uniform(rng) < 0.6 ? 0.01 + 1.2 * uniform(rng) : 0.5 + 4.0 * uniform(rng);
    }
    const int64_t run = std::max<int64_t>(1, int64_t(run_s * 1000.0) / t.hop_ms);
    for (int64_t i = 0; i < run && int64_t(p.size()) < frames; ++i) {
      const double u = uniform(rng);
      if (speech) {
        p.push_back(u < 0.05 ? theta : theta + (1.0 - theta) * uniform(rng));
      } else {
        p.push_back(u < 0.05 ? std::nextafter(theta, 0.0) : theta * uniform(rng));
      }
    }
    speech = !speech;
  }
  t.track.frame_hop_s = t.hop_ms / 1000.0;
  return t;
}

namespace {

using Runs = std::vector<std::pair<int64_t, int64_t>>;

Runs runs_of(const std::vector<char> &grid) {
  Runs out;
  const int64_t n = int64_t(grid.size());
  for (int64_t t = 0; t < n;) {
    if (!grid[t]) {
      ++t;
      continue;
    }
    int64_t e = t;
    while (e < n && grid[e]) ++e;
    out.push_back({t, e});
    t = e;
  }
  return out;
}

Runs merge_short(const Runs &in, int64_t min_ms, std::optional<int64_t> cap) {
  Runs out;
  std::optional<std::pair<int64_t, int64_t>> acc;
  for (const auto &r : in) {
    if (acc && (!cap || r.second - acc->first <= *cap)) {
      acc->second = r.second;
    } else {
      acc = r;
    }
    if (acc->second - acc->first >= min_ms) {
      out.push_back(*acc);
      acc.reset();
    }
  }
  if (acc && !out.empty() && (!cap || acc->second - out.back().first <= *cap)) {
    out.back().second = acc->second;
  }
  return out;
}

int64_t ms(double seconds) { return std::llround(seconds * 1000.0); }

}  // namespace

std::vector<std::pair<int64_t, int64_t>> reference_segments(const std::vector<double> &probs,
                                                            int hop_ms,
                                                            const autoprep::PipelineConfig &c) {
  const int64_t total = int64_t(probs.size()) * hop_ms;
  auto speech_frame = [&](int64_t t) { return probs[size_t(t / hop_ms)] >= c.vad_threshold; };

  std::vector<char> raw(size_t(total), 0);
  for (int64_t t = 0; t < total; ++t) raw[t] = speech_frame(t);

  // Fill interior silences no longer than the split threshold.
  const int64_t split = ms(c.silence_split_s);
  for (int64_t t = 0; t < total;) {
    if (raw[t]) {
      ++t;
      continue;
    }
    int64_t e = t;
    while (e < total && !raw[e]) ++e;
    if (t > 0 && e < total && e - t <= split) std::fill(raw.begin() + t, raw.begin() + e, 1);
    t = e;
  }

  // Dilate by the pad on both sides.
  const int64_t pad = ms(c.pad_s);
  std::vector<char> padded(size_t(total), 0);
  for (int64_t t = 0; t < total; ++t) {
    for (int64_t u = std::max<int64_t>(0, t - pad); u <= std::min(total - 1, t + pad); ++u) {
      if (raw[u]) {
        padded[t] = 1;
        break;
      }
    }
  }

  const int64_t min_ms = ms(c.min_segment_s), soft = ms(c.soft_max_segment_s),
                hard = ms(c.hard_max_segment_s);
  Runs regions = merge_short(runs_of(padded), min_ms, std::nullopt);

  Runs split_regions;
  for (auto [s, e] : regions) {
    while (e - s > soft) {
      std::optional<int64_t> cut;
      for (int64_t t = s + soft; t < std::min(s + hard, e); ++t) {
        if (t % hop_ms == 0 && !speech_frame(t)) {
          cut = t;
          break;
        }
      }
      if (!cut) {
        if (e - s <= hard) break;
        cut = s + hard;
      }
      split_regions.push_back({s, *cut});
      s = *cut;
    }
    split_regions.push_back({s, e});
  }
  return merge_short(split_regions, min_ms, hard);
}

// --- clustering ----------------------------------------------------------

ConeBatch cone_batch(std::mt19937_64 &rng, int k, int n, int dim, double max_angle_deg) {
  std::normal_distribution<double> gauss;
  Eigen::MatrixXd g(dim, k);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < k; ++j) g(i, j) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd axes = qr.householderQ() * Eigen::MatrixXd::Identity(dim, k);

  // Sizes: at least 5 per cone, remainder spread at random.
  std::vector<int> truth;
  for (int c = 0; c < k; ++c)
    for (int i = 0; i < 5; ++i) truth.push_back(c);
  while (int(truth.size()) < n) truth.push_back(int(rng() % uint64_t(k)));
  std::shuffle(truth.begin(), truth.end(), rng);

  ConeBatch batch;
  batch.k = k;
  const double max_angle = max_angle_deg * M_PI / 180.0;
  std::vector<Eigen::VectorXd> points;
  for (int label : truth) {
    const Eigen::VectorXd a = axes.col(label);
    Eigen::VectorXd u(dim);
    for (int i = 0; i < dim; ++i) u(i) = gauss(rng);
    u -= u.dot(a) * a;
    u.normalize();
    const double phi = max_angle * uniform(rng);
    Eigen::VectorXd v = std::cos(phi) * a + std::sin(phi) * u;
    v.normalize();
    points.push_back(v);
    std::vector<float> raw(v.data(), v.data() + dim);
    batch.embeddings.push_back(SpeakerEmbedding::from_raw(raw, {}));
  }
  batch.truth = truth;
  for (size_t i = 0; i < points.size(); ++i) {
    for (size_t j = i + 1; j < points.size(); ++j) {
      const double c = points[i].dot(points[j]);
      if (truth[i] == truth[j]) {
        batch.min_intra_cos = std::min(batch.min_intra_cos, c);
      } else {
        batch.max_inter_cos = std::max(batch.max_inter_cos, c);
      }
    }
  }
  return batch;
}

double adjusted_rand_index(const std::vector<int> &a, const std::vector<int> &b) {
  std::map<std::pair<int, int>, int64_t> joint;
  std::map<int, int64_t> ca, cb;
  for (size_t i = 0; i < a.size(); ++i) {
    ++joint[{a[i], b[i]}];
    ++ca[a[i]];
    ++cb[b[i]];
  }
  auto pairs = [](int64_t x) { return double(x) * double(x - 1) / 2.0; };
  double sum_joint = 0, sum_a = 0, sum_b = 0;
  for (auto &[_, v] : joint) sum_joint += pairs(v);
  for (auto &[_, v] : ca) sum_a += pairs(v);
  for (auto &[_, v] : cb) sum_b += pairs(v);
  const double total = pairs(int64_t(a.size()));
  const double expected = sum_a * sum_b / total;
  const double max_index = (sum_a + sum_b) / 2.0;
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

std::vector<std::vector<size_t>> reference_merge(const std::vector<SpeakerEmbedding> &embeddings,
                                                 const std::vector<int> &assignments, int k,
                                                 double threshold) {
  std::vector<std::vector<size_t>> groups(static_cast<size_t>(k));
  for (size_t i = 0; i < assignments.size(); ++i) groups[size_t(assignments[i])].push_back(i);
  std::erase_if(groups, [](const auto &g) { return g.empty(); });

  auto direction = [&](const std::vector<size_t> &g) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(Eigen::Index(embeddings[0].vector.size()));
    for (size_t i : g)
      for (size_t d = 0; d < embeddings[i].vector.size(); ++d) m(Eigen::Index(d)) += embeddings[i].vector[d];
    return Eigen::VectorXd(m.normalized());
  };
  for (;;) {
    double best = -2.0;
    size_t bi = 0, bj = 0;
    for (size_t i = 0; i < groups.size(); ++i) {
      for (size_t j = i + 1; j < groups.size(); ++j) {
        const double c = direction(groups[i]).dot(direction(groups[j]));
        if (c > best) {
          best = c;
          bi = i;
          bj = j;
        }
      }
    }
    if (groups.size() < 2 || !(best > threshold)) break;
    groups[bi].insert(groups[bi].end(), groups[bj].begin(), groups[bj].end());
    std::sort(groups[bi].begin(), groups[bi].end());
    groups.erase(groups.begin() + std::ptrdiff_t(bj));
  }
  std::sort(groups.begin(), groups.end());
  return groups;
}

// --- synthetic corpus ----------------------------------------------------

namespace {

void write_jsonl(const fs::path &path, const std::vector<nlohmann::ordered_json> &rows) {
  std::ofstream out(path);
  for (const auto &r : rows) out << r.dump() << '\n';
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const fs::path &dir, uint64_t seed) {
  SyntheticCorpus corpus;
  corpus.dir = dir;
  fs::create_directories(dir);
  std::mt19937_64 rng(seed);
  const int rate = corpus.sample_rate;
  const double pad = 0.4;

  // Utterance durations per recording (seconds, multiples of 0.5).
  const std::vector<std::pair<std::string, std::vector<double>>> plan = {
      {"rec_a", {4.0, 6.5, 3.0, 8.0, 5.0}},
      {"rec_b", {7.0, 3.5, 10.0, 4.5}},
      {"rec_c", {5.5, 6.0, 3.0, 9.0, 4.0, 3.5}},
  };
  const double lead = 1.0, gap = 2.5;
  int index = 0;
  std::vector<nlohmann::ordered_json> manifest_rows;
  for (const auto &[rec, durations] : plan) {
    double t = lead;
    std::vector<float> samples(size_t(lead * rate), 0.0f);
    for (size_t i = 0; i < durations.size(); ++i) {
      PlantedUtterance u;
      u.recording_id = rec;
      u.start_s = t;
      u.end_s = t + durations[i];
      u.speaker = (index % 2);
      u.ovrl = 2.6 + 0.1 * (index % 7);
      u.pdnsmos = 3.0 + 0.05 * (index % 5);
      u.text = "utterance " + std::to_string(index);
      corpus.utterances.push_back(u);
      for (int64_t s = 0; s < int64_t(durations[i] * rate); ++s) {
        samples.push_back(float(uniform(rng) - 0.5));
      }
      samples.insert(samples.end(), size_t(gap * rate), 0.0f);
      t = u.end_s + gap;
      ++index;
    }
    autoprep::write_wav(dir / (rec + ".wav"), autoprep::AudioBuffer(std::move(samples), rate));
    manifest_rows.push_back({{"recording_id", rec}, {"path", rec + ".wav"}});
  }

  // Special cases.
  auto &u = corpus.utterances;
  u[2].speaker = -1;            // chunks alternate speakers -> unlabeled
  u[2].ovrl = 3.1;
  u[4].ovrl = 2.0;              // below the quality threshold
  u[6].ovrl = 2.4;              // exactly at the threshold: kept
  u[8].scorer_error = true;
  u[9].text = "";               // empty transcript
  u[11].asr_error = true;
  u[12].pdnsmos.reset();

  std::vector<nlohmann::ordered_json> embeddings, scores, transcripts;
  std::normal_distribution<double> gauss;
  const int dim = 16;
  for (const auto &utt : u) {
    const TimeRange segment{utt.start_s - pad, utt.end_s + pad};
    const auto chunks = autoprep::window_chunks(segment, 1.5, 0.75);
    for (size_t c = 0; c < chunks.size(); ++c) {
      const int speaker = utt.speaker >= 0 ? utt.speaker : int(c % 2);
      std::vector<double> v(dim);
      for (auto &x : v) x = 0.08 * gauss(rng);
      v[size_t(speaker)] += 1.0;
      embeddings.push_back({{"recording_id", utt.recording_id}, {"start_s", chunks[c].start_s}, {"vector", v}});
    }
    nlohmann::ordered_json score{{"recording_id", utt.recording_id}, {"start_s", segment.start_s}};
    if (utt.scorer_error) {
      score["error"] = "scorer unavailable";
    } else {
      score["ovrl"] = utt.ovrl;
      score["pdnsmos"] = utt.pdnsmos ? nlohmann::ordered_json(*utt.pdnsmos) : nlohmann::ordered_json(nullptr);
    }
    scores.push_back(score);
    nlohmann::ordered_json tr{{"recording_id", utt.recording_id}, {"start_s", segment.start_s}};
    if (utt.asr_error) {
      tr["error"] = "decoder failure";
    } else {
      tr["text"] = utt.text;
    }
    transcripts.push_back(tr);
  }
  write_jsonl(dir / "embeddings.jsonl", embeddings);
  write_jsonl(dir / "scores.jsonl", scores);
  write_jsonl(dir / "transcripts.jsonl", transcripts);
  write_jsonl(dir / "input.jsonl", manifest_rows);

  nlohmann::ordered_json config;
  config["rng_seed"] = 3;
  config["backends"] = {
      {"enhancer", {{"type", "identity"}}},
      {"vad", {{"type", "energy"}, {"hop_s", 0.02}, {"rms_threshold", 0.05}}},
      {"embedder", {{"type", "fixture"}, {"path", "embeddings.jsonl"}}},
      {"extractor", {{"type", "gain"}, {"gain", 0.5}}},
      {"scorer", {{"type", "scripted"}, {"path", "scores.jsonl"}}},
      {"transcriber", {{"type", "scripted"}, {"path", "transcripts.jsonl"}}},
  };
  std::ofstream(dir / "config.json") << config.dump(2) << '\n';
  corpus.input_manifest = dir / "input.jsonl";
  corpus.config = dir / "config.json";
  return corpus;
}

// --- fake external backend -----------------------------------------------

bool serve_stream(int in_fd, int out_fd, const FakeBackendOptions &options) {
  using autoprep::FrameHeader;
  for (;;) {
    std::optional<autoprep::Frame> request;
    try {
      request = autoprep::read_frame(in_fd);
    } catch (const std::exception &) {
      return false;
    }
    if (!request) return true;
    const FrameHeader &h = request->header;
    FrameHeader reply;
    reply.role = h.role;
    reply.op = h.op;
    reply.sample_rate = h.sample_rate;
    std::vector<float> payload;
    const auto aux = h.aux.value_or(nlohmann::json::object());
    std::span<const float> samples(request->payload.data(), h.num_samples);
    if (h.op == "capabilities") {
      reply.aux = nlohmann::json{{"sample_rates", options.sample_rates},
                                 {"embedding_dim", options.embedding_dim},
                                 {"frame_hop_s", options.frame_hop_s}};
    } else if (aux.value("segment_id", "").find("fail") != std::string::npos) {
      reply.op = "error";
      reply.aux = nlohmann::json{{"message", "requested failure"}};
    } else if (h.op == "crash") {
      _exit(3);
    } else if (h.op == "enhance" || h.op == "extract") {
      const float g = h.op == "enhance" ? options.gain : 0.5f;
      for (float x : samples) payload.push_back(x * g);
    } else if (h.op == "detect") {
      const size_t hop = size_t(std::llround(options.frame_hop_s * h.sample_rate));
      for (size_t f = 0; f * hop < samples.size(); ++f) {
        double sq = 0.0;
        const size_t end = std::min(samples.size(), (f + 1) * hop);
        for (size_t i = f * hop; i < end; ++i) sq += double(samples[i]) * samples[i];
        payload.push_back(float(std::min(1.0, std::sqrt(sq / double(end - f * hop)) / 0.05)));
      }
      reply.aux = nlohmann::json{{"frame_hop_s", options.frame_hop_s}};
    } else if (h.op == "embed") {
      double sum = 0.0;
      for (float x : samples) sum += x;
      for (int d = 0; d < options.embedding_dim; ++d) payload.push_back(float(1.0 + d + sum));
    } else if (h.op == "score") {
      reply.aux = nlohmann::json{{"ovrl", 3.25}, {"pdnsmos", 3.5}};
    } else if (h.op == "transcribe") {
      reply.aux = nlohmann::json{{"text", "n=" + std::to_string(h.num_samples)}};
    } else {
      reply.op = "error";
      reply.aux = nlohmann::json{{"message", "unknown op " + h.op}};
    }
    reply.num_samples = uint32_t(payload.size());
    try {
      autoprep::write_frame(out_fd, reply, payload);
    } catch (const std::exception &) {
      return false;
    }
  }
}

SocketServer::SocketServer(fs::path path, FakeBackendOptions options)
    : path_(std::move(path)), options_(std::move(options)) {
  listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  std::snprintf(addr.sun_path, sizeof addr.sun_path, "%s", path_.c_str());
  fs::remove(path_);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr *>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 16) != 0) {
    throw std::runtime_error("cannot listen on " + path_.string());
  }
  thread_ = std::thread([this] {
    for (;;) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0 || stop_) {
        if (fd >= 0) ::close(fd);
        return;
      }
      ++accepted_;
      workers_.emplace_back([this, fd] {
        serve_stream(fd, fd, options_);
        ::close(fd);
      });
    }
  });
}

SocketServer::~SocketServer() {
  stop_ = true;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  thread_.join();
  for (auto &w : workers_) w.join();
  std::error_code ec;
  fs::remove(path_, ec);
}

int SocketServer::accepted() const { return accepted_.load(); }

}  // namespace testsupport
