#include "autoprep/external.h"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

extern char **environ;

namespace autoprep {

namespace {

class FdConnection : public Connection {
 public:
  FdConnection(int read_fd, int write_fd, pid_t pid) : read_fd_(read_fd), write_fd_(write_fd), pid_(pid) {}
  ~FdConnection() override {
    if (write_fd_ != read_fd_) ::close(write_fd_);
    ::close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
      }
    }
  }

  Frame call(const FrameHeader &header, std::span<const float> payload) override {
    write_frame(write_fd_, header, payload);
    auto reply = read_frame(read_fd_);
    if (!reply) throw BackendError("backend closed the stream");
    return std::move(*reply);
  }

 private:
  int read_fd_;
  int write_fd_;
  pid_t pid_;
};

void ignore_sigpipe() {
  static const bool once = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)once;
}

nlohmann::json context_json(const AudioContext &ctx) {
  return {{"recording_id", ctx.recording_id},
          {"segment_id", ctx.segment_id},
          {"start_s", ctx.range.start_s},
          {"end_s", ctx.range.end_s}};
}

AudioBuffer samples_of(const Frame &reply, const AudioBuffer &request) {
  if (reply.payload.size() != request.size()) {
    throw BackendError("backend returned " + std::to_string(reply.payload.size()) +
                       " samples, expected " + std::to_string(request.size()));
  }
  return AudioBuffer(reply.payload, request.sample_rate());
}

class ExternalEnhancer : public Enhancer {
 public:
  explicit ExternalEnhancer(std::shared_ptr<ExternalClient> c) : client_(std::move(c)) {}
  Capabilities capabilities() const override { return client_->capabilities(); }
  AudioBuffer enhance(AudioBuffer audio) override {
    return samples_of(client_->request("enhance", nullptr, audio), audio);
  }

 private:
  std::shared_ptr<ExternalClient> client_;
};

class ExternalVad : public VoiceActivityDetector {
 public:
  explicit ExternalVad(std::shared_ptr<ExternalClient> c) : client_(std::move(c)) {}
  Capabilities capabilities() const override { return client_->capabilities(); }
  FrameTrack detect(const AudioContext &ctx, const AudioBuffer &audio) override {
    Frame reply = client_->request("detect", &ctx, audio);
    FrameTrack track{std::vector<double>(reply.payload.begin(), reply.payload.end()),
                     client_->capabilities().frame_hop_s};
    if (reply.header.aux && reply.header.aux->contains("frame_hop_s")) {
      track.frame_hop_s = reply.header.aux->at("frame_hop_s").get<double>();
    }
    track.validate();
    return track;
  }

 private:
  std::shared_ptr<ExternalClient> client_;
};

class ExternalEmbedder : public SpeakerEmbedder {
 public:
  explicit ExternalEmbedder(std::shared_ptr<ExternalClient> c) : client_(std::move(c)) {}
  Capabilities capabilities() const override { return client_->capabilities(); }
  std::vector<float> embed(const AudioContext &chunk, const AudioBuffer &audio) override {
    Frame reply = client_->request("embed", &chunk, audio);
    const auto dim = static_cast<size_t>(client_->capabilities().embedding_dim);
    if (dim != 0 && reply.payload.size() != dim) {
      throw BackendError("embedder returned dimension " + std::to_string(reply.payload.size()) +
                         ", declared " + std::to_string(dim));
    }
    return std::move(reply.payload);
  }

 private:
  std::shared_ptr<ExternalClient> client_;
};

class ExternalExtractor : public TargetExtractor {
 public:
  explicit ExternalExtractor(std::shared_ptr<ExternalClient> c) : client_(std::move(c)) {}
  Capabilities capabilities() const override { return client_->capabilities(); }
  AudioBuffer extract(const AudioContext &ctx, const AudioBuffer &audio,
                      std::span<const float> enrollment) override {
    return samples_of(client_->request("extract", &ctx, audio, enrollment), audio);
  }

 private:
  std::shared_ptr<ExternalClient> client_;
};

class ExternalScorer : public QualityScorer {
 public:
  explicit ExternalScorer(std::shared_ptr<ExternalClient> c) : client_(std::move(c)) {}
  Capabilities capabilities() const override { return client_->capabilities(); }
  QualityScore score(const AudioContext &ctx, const AudioBuffer &audio) override {
    Frame reply = client_->request("score", &ctx, audio);
    if (!reply.header.aux || !reply.header.aux->contains("ovrl")) {
      throw BackendError("scorer reply lacks 'ovrl'");
    }
    QualityScore s;
    s.ovrl = reply.header.aux->at("ovrl").get<double>();
    if (auto it = reply.header.aux->find("pdnsmos"); it != reply.header.aux->end() && !it->is_null()) {
      s.pdnsmos = it->get<double>();
    }
    return s;
  }

 private:
  std::shared_ptr<ExternalClient> client_;
};

class ExternalTranscriber : public Transcriber {
 public:
  explicit ExternalTranscriber(std::shared_ptr<ExternalClient> c) : client_(std::move(c)) {}
  Capabilities capabilities() const override { return client_->capabilities(); }
  std::string transcribe(const AudioContext &ctx, const AudioBuffer &audio) override {
    Frame reply = client_->request("transcribe", &ctx, audio);
    if (!reply.header.aux || !reply.header.aux->contains("text")) {
      throw BackendError("transcriber reply lacks 'text'");
    }
    return reply.header.aux->at("text").get<std::string>();
  }

 private:
  std::shared_ptr<ExternalClient> client_;
};

}  // namespace

std::unique_ptr<Connection> spawn_process(const std::vector<std::string> &argv) {
  if (argv.empty()) throw BackendError("empty backend command");
  ignore_sigpipe();
  int to_child[2], from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw BackendError("pipe failed");
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw BackendError("pipe failed");
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);

  std::vector<char *> args;
  for (const auto &a : argv) args.push_back(const_cast<char *>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = 0;
  const int rc = ::posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(to_child[0]);
  ::close(from_child[1]);
  if (rc != 0) {
    ::close(to_child[1]);
    ::close(from_child[0]);
    throw BackendError("cannot spawn '" + argv[0] + "': " + std::strerror(rc));
  }
  return std::make_unique<FdConnection>(from_child[0], to_child[1], pid);
}

std::unique_ptr<Connection> connect_socket(const std::string &path) {
  ignore_sigpipe();
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) throw BackendError("socket path too long: " + path);
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw BackendError(std::string("socket failed: ") + std::strerror(errno));
  if (::connect(fd, reinterpret_cast<const sockaddr *>(&addr), sizeof addr) != 0) {
    const int err = errno;
    ::close(fd);
    throw BackendError("cannot connect to " + path + ": " + std::strerror(err));
  }
  return std::make_unique<FdConnection>(fd, fd, -1);
}

ConnectionPool::ConnectionPool(Factory factory, size_t max_size)
    : factory_(std::move(factory)), max_size_(std::max<size_t>(1, max_size)) {}

ConnectionPool::Lease::~Lease() {
  if (pool_) pool_->release(std::move(conn_));
}

ConnectionPool::Lease ConnectionPool::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return !idle_.empty() || live_ < max_size_; });
  if (!idle_.empty()) {
    auto conn = std::move(idle_.back());
    idle_.pop_back();
    return Lease(this, std::move(conn));
  }
  ++live_;
  lock.unlock();
  try {
    return Lease(this, factory_());
  } catch (...) {
    lock.lock();
    --live_;
    cv_.notify_one();
    throw;
  }
}

void ConnectionPool::release(std::unique_ptr<Connection> conn) {
  std::lock_guard lock(mu_);
  if (conn) {
    idle_.push_back(std::move(conn));
  } else {
    --live_;
  }
  cv_.notify_one();
}

ExternalClient::ExternalClient(BackendRole role, ConnectionPool::Factory factory, size_t pool_size)
    : role_(role), pool_(std::move(factory), pool_size) {
  auto lease = pool_.acquire();
  FrameHeader header;
  header.role = std::string(role_name(role_));
  header.op = "capabilities";
  Frame reply = lease->call(header, {});
  if (reply.header.op == "error") {
    throw BackendError("capability negotiation failed: " +
                       reply.header.aux.value_or(nlohmann::json::object()).value("message", ""));
  }
  const auto aux = reply.header.aux.value_or(nlohmann::json::object());
  if (aux.contains("sample_rates")) caps_.sample_rates = aux.at("sample_rates").get<std::vector<int>>();
  caps_.embedding_dim = aux.value("embedding_dim", 0);
  caps_.frame_hop_s = aux.value("frame_hop_s", 0.0);
}

Frame ExternalClient::request(const std::string &op, const AudioContext *ctx, const AudioBuffer &audio,
                              std::span<const float> extra) {
  if (!caps_.supports(audio.sample_rate())) {
    throw BackendError(std::string(role_name(role_)) + " backend does not support " +
                       std::to_string(audio.sample_rate()) + " Hz");
  }
  FrameHeader header;
  header.role = std::string(role_name(role_));
  header.op = op;
  header.sample_rate = audio.sample_rate();
  header.num_samples = static_cast<uint32_t>(audio.size());
  if (!extra.empty()) header.dim = static_cast<uint32_t>(extra.size());
  if (ctx) header.aux = context_json(*ctx);
  std::vector<float> payload = audio.to_vector();
  payload.insert(payload.end(), extra.begin(), extra.end());

  auto lease = pool_.acquire();
  Frame reply;
  try {
    reply = lease->call(header, payload);
  } catch (...) {
    lease.discard();
    throw;
  }
  if (reply.header.op == "error") {
    throw BackendError(std::string(role_name(role_)) + " backend error: " +
                       reply.header.aux.value_or(nlohmann::json::object()).value("message", "unknown"));
  }
  return reply;
}

std::shared_ptr<Enhancer> make_external_enhancer(std::shared_ptr<ExternalClient> c) {
  return std::make_shared<ExternalEnhancer>(std::move(c));
}
std::shared_ptr<VoiceActivityDetector> make_external_vad(std::shared_ptr<ExternalClient> c) {
  return std::make_shared<ExternalVad>(std::move(c));
}
std::shared_ptr<SpeakerEmbedder> make_external_embedder(std::shared_ptr<ExternalClient> c) {
  return std::make_shared<ExternalEmbedder>(std::move(c));
}
std::shared_ptr<TargetExtractor> make_external_extractor(std::shared_ptr<ExternalClient> c) {
  return std::make_shared<ExternalExtractor>(std::move(c));
}
std::shared_ptr<QualityScorer> make_external_scorer(std::shared_ptr<ExternalClient> c) {
  return std::make_shared<ExternalScorer>(std::move(c));
}
std::shared_ptr<Transcriber> make_external_transcriber(std::shared_ptr<ExternalClient> c) {
  return std::make_shared<ExternalTranscriber>(std::move(c));
}

}  // namespace autoprep
