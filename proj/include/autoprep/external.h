// Backends served by external processes over the framed protocol, either on a
// spawned child's stdin/stdout or on a Unix stream socket.
//
// Requests carry header {role, op, sample_rate, num_samples, dim?, aux?}, with
// aux holding the audio context {recording_id, segment_id, start_s, end_s}.
//
//   op            request payload          response
//   capabilities  -                        aux {sample_rates, embedding_dim, frame_hop_s}
//   enhance       samples                  samples
//   detect        samples                  frame probabilities, aux {frame_hop_s}
//   embed         samples                  dim floats
//   extract       samples + enrollment     samples
//   score         samples                  aux {ovrl, pdnsmos?}
//   transcribe    samples                  aux {text}
//
// A backend signals failure with op "error" and aux {message}.

#pragma once

#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "autoprep/backends.h"
#include "autoprep/protocol.h"

namespace autoprep {

// One request in flight at a time.
class Connection {
 public:
  virtual ~Connection() = default;
  virtual Frame call(const FrameHeader &header, std::span<const float> payload) = 0;
};

std::unique_ptr<Connection> spawn_process(const std::vector<std::string> &argv);
std::unique_ptr<Connection> connect_socket(const std::string &path);

class ConnectionPool {
 public:
  using Factory = std::function<std::unique_ptr<Connection>()>;
  ConnectionPool(Factory factory, size_t max_size);

  // Returns the connection to the pool when destroyed.
  class Lease {
   public:
    Lease(ConnectionPool *pool, std::unique_ptr<Connection> conn)
        : pool_(pool), conn_(std::move(conn)) {}
    Lease(Lease &&other) noexcept
        : pool_(std::exchange(other.pool_, nullptr)), conn_(std::move(other.conn_)) {}
    ~Lease();
    Connection &operator*() { return *conn_; }
    Connection *operator->() { return conn_.get(); }
    // Drops a connection whose stream state is unknown after a failure.
    void discard() { conn_.reset(); }

   private:
    ConnectionPool *pool_;
    std::unique_ptr<Connection> conn_;
  };

  Lease acquire();

 private:
  void release(std::unique_ptr<Connection> conn);

  Factory factory_;
  size_t max_size_;
  size_t live_ = 0;
  std::vector<std::unique_ptr<Connection>> idle_;
  std::mutex mu_;
  std::condition_variable cv_;
};

// Role-agnostic client: negotiates capabilities once, then issues requests,
// rejecting sample rates the backend did not declare.
class ExternalClient {
 public:
  ExternalClient(BackendRole role, ConnectionPool::Factory factory, size_t pool_size);

  const Capabilities &capabilities() const { return caps_; }
  Frame request(const std::string &op, const AudioContext *ctx, const AudioBuffer &audio,
                std::span<const float> extra = {});

 private:
  BackendRole role_;
  ConnectionPool pool_;
  Capabilities caps_;
};

std::shared_ptr<Enhancer> make_external_enhancer(std::shared_ptr<ExternalClient> client);
std::shared_ptr<VoiceActivityDetector> make_external_vad(std::shared_ptr<ExternalClient> client);
std::shared_ptr<SpeakerEmbedder> make_external_embedder(std::shared_ptr<ExternalClient> client);
std::shared_ptr<TargetExtractor> make_external_extractor(std::shared_ptr<ExternalClient> client);
std::shared_ptr<QualityScorer> make_external_scorer(std::shared_ptr<ExternalClient> client);
std::shared_ptr<Transcriber> make_external_transcriber(std::shared_ptr<ExternalClient> client);

}  // namespace autoprep
