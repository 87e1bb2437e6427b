#pragma once

/// @file transport.hpp
/// Length-prefixed binary protocol between the master and its workers.
///
/// Frame: u32 payload length (little-endian), u8 kind, payload. All reals are
/// 32-bit floats. See docs/wire_format.md for every payload layout.

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "aesrl/environment.hpp"
#include "aesrl/mlp.hpp"
#include "aesrl/td3.hpp"
#include "aesrl/wire.hpp"

namespace aesrl {

enum class MessageKind : std::uint8_t {
  SetActorWeights = 1,
  SetCriticWeights = 2,
  EvaluateRequest = 3,
  EvaluateResult = 4,
  TrainActorRequest = 5,
  Shutdown = 6,
  Heartbeat = 7,
};

std::string_view to_string(MessageKind kind);

struct SetActorWeights {
  Vec params;
  friend bool operator==(const SetActorWeights&, const SetActorWeights&) = default;
};

struct SetCriticWeights {
  Vec params;
  friend bool operator==(const SetCriticWeights&, const SetCriticWeights&) = default;
};

struct EvaluateRequest {
  std::uint64_t request_id = 0;
  std::uint64_t seed = 0;
  float a_noise = 0.0f;
  bool record_transitions = false;
  friend bool operator==(const EvaluateRequest&, const EvaluateRequest&) = default;
};

struct EvaluateResult {
  float fitness = 0.0f;
  std::uint32_t steps = 0;
  std::uint32_t state_dim = 0;   // only on the wire when transitions are present
  std::uint32_t action_dim = 0;
  std::vector<Transition> transitions;
  friend bool operator==(const EvaluateResult& a, const EvaluateResult& b);
};

struct TrainActorRequest {
  std::uint64_t request_id = 0;
  float lr = 0.0f;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  std::vector<Mat> state_batches;  // each state_dim x batch_size
  friend bool operator==(const TrainActorRequest&, const TrainActorRequest&) = default;
};

struct Shutdown {
  friend bool operator==(const Shutdown&, const Shutdown&) = default;
};

struct Heartbeat {
  std::uint64_t nonce = 0;
  friend bool operator==(const Heartbeat&, const Heartbeat&) = default;
};

using Message = std::variant<SetActorWeights, SetCriticWeights, EvaluateRequest, EvaluateResult,
                             TrainActorRequest, Shutdown, Heartbeat>;

MessageKind kind_of(const Message& msg);

/// Unknown kind tag or a payload that contradicts its own header.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

inline constexpr std::size_t kFrameHeaderBytes = 5;
inline constexpr std::uint32_t kMaxPayloadBytes = 1u << 30;

std::vector<std::uint8_t> encode(const Message& msg);
/// Decodes exactly one frame occupying all of `frame`. Throws wire::FramingError
/// when bytes are missing or left over, ProtocolError on an unknown kind.
Message decode(std::span<const std::uint8_t> frame);

/// Reassembles frames from an arbitrarily split byte stream.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  /// Next complete message, if any.
  std::optional<Message> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

/// What a worker evaluates.
struct WorkerSpec {
  enum class Task { Synthetic, Pendulum, PointMass } task = Task::Synthetic;
  SyntheticObjective objective = SyntheticObjective::Sphere;
  std::uint64_t synthetic_steps = 1;  // steps charged per synthetic evaluation
  PendulumConfig pendulum;
  PointMassConfig point_mass;
  MlpSpec actor;   // the parameter vector layout for episodic tasks
  MlpSpec critic;  // unused for synthetic tasks
  std::size_t synthetic_dim = 0;
};

/// Worker-side message handler shared by every transport.
class WorkerService {
 public:
  explicit WorkerService(WorkerSpec spec);

  /// Returns the reply for request kinds and nothing for one-way kinds.
  std::optional<Message> handle(const Message& msg);
  bool stopped() const { return stopped_; }

 private:
  EvaluateResult evaluate_current(const EvaluateRequest& req);

  WorkerSpec spec_;
  std::unique_ptr<EpisodicEnv> env_;
  Vec actor_;
  std::optional<FlatParams> critic_;
  bool stopped_ = false;
  std::uint64_t last_request_id_ = 0;
  std::optional<Message> last_reply_;
};

/// Master-side view of one worker. Serially ordered: one request at a time.
class Channel {
 public:
  virtual ~Channel() = default;
  /// Sends `msg`; for request kinds waits up to `timeout` for the reply.
  /// EvaluateRequest and TrainActorRequest get their request id stamped here.
  virtual std::optional<Message> request_reply(Message msg, std::chrono::milliseconds timeout) = 0;
  virtual void close() = 0;

 protected:
  std::uint64_t stamp(Message& msg);
  std::uint64_t next_request_id_ = 1;
};

/// Runs the service on the caller's thread. Every message still goes through
/// encode/decode so both transports see identical bytes.
class InProcessChannel final : public Channel {
 public:
  explicit InProcessChannel(WorkerSpec spec);
  std::optional<Message> request_reply(Message msg, std::chrono::milliseconds timeout) override;
  void close() override;

 private:
  WorkerService service_;
  bool closed_ = false;
};

/// TCP client to a WorkerServer.
class SocketChannel final : public Channel {
 public:
  SocketChannel(const std::string& host, std::uint16_t port,
                std::chrono::milliseconds connect_timeout);
  ~SocketChannel() override;
  SocketChannel(const SocketChannel&) = delete;
  SocketChannel& operator=(const SocketChannel&) = delete;

  std::optional<Message> request_reply(Message msg, std::chrono::milliseconds timeout) override;
  void close() override;

 private:
  int fd_ = -1;
  FrameDecoder decoder_;
};

/// Listens on a TCP port and serves WorkerService connections, one at a time,
/// until a Shutdown message arrives.
class WorkerServer {
 public:
  /// Port 0 picks an ephemeral port; see port().
  WorkerServer(WorkerSpec spec, const std::string& bind_host, std::uint16_t port);
  ~WorkerServer();
  WorkerServer(const WorkerServer&) = delete;
  WorkerServer& operator=(const WorkerServer&) = delete;

  std::uint16_t port() const { return port_; }
  /// Blocks until Shutdown. A dropped connection goes back to accept().
  void serve();

 private:
  /// Returns true when the worker was told to shut down.
  bool serve_connection(int fd);

  WorkerSpec spec_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace aesrl
