#include "aesrl/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace aesrl {

std::string_view to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::SetActorWeights:
      return "SetActorWeights";
    case MessageKind::SetCriticWeights:
      return "SetCriticWeights";
    case MessageKind::EvaluateRequest:
      return "EvaluateRequest";
    case MessageKind::EvaluateResult:
      return "EvaluateResult";
    case MessageKind::TrainActorRequest:
      return "TrainActorRequest";
    case MessageKind::Shutdown:
      return "Shutdown";
    case MessageKind::Heartbeat:
      return "Heartbeat";
  }
  return "?";
}

bool operator==(const EvaluateResult& a, const EvaluateResult& b) {
  if (a.fitness != b.fitness || a.steps != b.steps || a.transitions.size() != b.transitions.size())
    return false;
  if (!a.transitions.empty() && (a.state_dim != b.state_dim || a.action_dim != b.action_dim))
    return false;
  for (std::size_t i = 0; i < a.transitions.size(); ++i) {
    const auto& x = a.transitions[i];
    const auto& y = b.transitions[i];
    if (x.state != y.state || x.action != y.action || x.next_state != y.next_state ||
        x.reward != y.reward || x.done != y.done)
      return false;
  }
  return true;
}

MessageKind kind_of(const Message& msg) {
  return static_cast<MessageKind>(msg.index() + 1);
}

namespace {

void put_vec(wire::Writer& w, const Vec& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  w.f32_run(v);
}

Vec get_floats(wire::Reader& r, std::size_t n) {
  if (r.remaining() / 4 < n) throw wire::FramingError("truncated float run");
  Vec v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = r.f32();
  return v;
}

Vec get_vec(wire::Reader& r) { return get_floats(r, r.u32()); }

void encode_payload(wire::Writer& w, const SetActorWeights& m) { put_vec(w, m.params); }
void encode_payload(wire::Writer& w, const SetCriticWeights& m) { put_vec(w, m.params); }

void encode_payload(wire::Writer& w, const EvaluateRequest& m) {
  w.u64(m.request_id);
  w.u64(m.seed);
  w.f32(m.a_noise);
  w.u8(m.record_transitions ? 1 : 0);
}

void encode_payload(wire::Writer& w, const EvaluateResult& m) {
  w.f32(m.fitness);
  w.u32(m.steps);
  w.u32(static_cast<std::uint32_t>(m.transitions.size()));
  if (m.transitions.empty()) return;
  w.u32(m.state_dim);
  w.u32(m.action_dim);
  for (const auto& t : m.transitions) {
    if (t.state.size() != m.state_dim || t.next_state.size() != m.state_dim ||
        t.action.size() != m.action_dim)
      throw ProtocolError("transition dimensions disagree with the EvaluateResult header");
    w.f32_run(t.state);
    w.f32_run(t.action);
    w.f32(static_cast<float>(t.reward));
    w.f32_run(t.next_state);
    w.f32(t.done ? 1.0f : 0.0f);
  }
}

void encode_payload(wire::Writer& w, const TrainActorRequest& m) {
  w.u64(m.request_id);
  w.f32(m.lr);
  w.u8(m.optimizer == OptimizerKind::Adam ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(m.state_batches.size()));
  const auto rows = m.state_batches.empty() ? 0 : m.state_batches.front().rows();
  const auto cols = m.state_batches.empty() ? 0 : m.state_batches.front().cols();
  w.u32(static_cast<std::uint32_t>(rows));
  w.u32(static_cast<std::uint32_t>(cols));
  for (const Mat& b : m.state_batches) {
    if (b.rows() != rows || b.cols() != cols)
      throw ProtocolError("state batches must share one shape");
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index i = 0; i < b.rows(); ++i) w.f32(static_cast<float>(b(i, j)));
  }
}

void encode_payload(wire::Writer&, const Shutdown&) {}
void encode_payload(wire::Writer& w, const Heartbeat& m) { w.u64(m.nonce); }

Message decode_payload(MessageKind kind, wire::Reader& r) {
  switch (kind) {
    case MessageKind::SetActorWeights:
      return SetActorWeights{get_vec(r)};
    case MessageKind::SetCriticWeights:
      return SetCriticWeights{get_vec(r)};
    case MessageKind::EvaluateRequest: {
      EvaluateRequest m;
      m.request_id = r.u64();
      m.seed = r.u64();
      m.a_noise = r.f32();
      const auto flag = r.u8();
      if (flag > 1) throw ProtocolError("EvaluateRequest record flag must be 0 or 1");
      m.record_transitions = flag == 1;
      return m;
    }
    case MessageKind::EvaluateResult: {
      EvaluateResult m;
      m.fitness = r.f32();
      m.steps = r.u32();
      const auto n = r.u32();
      if (n == 0) return m;
      m.state_dim = r.u32();
      m.action_dim = r.u32();
      const std::size_t per = 2 * std::size_t{m.state_dim} + m.action_dim + 2;
      if (r.remaining() / 4 / per < n) throw wire::FramingError("truncated transition block");
      m.transitions.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        Transition t;
        t.state = get_floats(r, m.state_dim);
        t.action = get_floats(r, m.action_dim);
        t.reward = r.f32();
        t.next_state = get_floats(r, m.state_dim);
        t.done = r.f32() != 0.0f;
        m.transitions.push_back(std::move(t));
      }
      return m;
    }
    case MessageKind::TrainActorRequest: {
      TrainActorRequest m;
      m.request_id = r.u64();
      m.lr = r.f32();
      const auto opt = r.u8();
      if (opt > 1) throw ProtocolError("unknown optimizer tag");
      m.optimizer = opt == 1 ? OptimizerKind::Adam : OptimizerKind::Sgd;
      const auto n = r.u32();
      const auto rows = r.u32();
      const auto cols = r.u32();
      const std::size_t per = std::size_t{rows} * cols;
      if (per > 0 && r.remaining() / 4 / per < n)
        throw wire::FramingError("truncated state batches");
      m.state_batches.reserve(n);
      for (std::uint32_t k = 0; k < n; ++k) {
        Mat b(rows, cols);
        for (std::uint32_t j = 0; j < cols; ++j)
          for (std::uint32_t i = 0; i < rows; ++i) b(i, j) = r.f32();
        m.state_batches.push_back(std::move(b));
      }
      return m;
    }
    case MessageKind::Shutdown:
      return Shutdown{};
    case MessageKind::Heartbeat:
      return Heartbeat{r.u64()};
  }
  throw ProtocolError("unknown message kind");
}

bool valid_kind(std::uint8_t tag) { return tag >= 1 && tag <= 7; }

}  // namespace

std::vector<std::uint8_t> encode(const Message& msg) {
  wire::Writer w;
  w.u32(0);
  w.u8(static_cast<std::uint8_t>(kind_of(msg)));
  std::visit([&](const auto& m) { encode_payload(w, m); }, msg);
  auto bytes = w.take();
  const auto len = static_cast<std::uint32_t>(bytes.size() - kFrameHeaderBytes);
  std::memcpy(bytes.data(), &len, sizeof len);
  return bytes;
}

Message decode(std::span<const std::uint8_t> frame) {
  wire::Reader header(frame);
  const auto len = header.u32();
  const auto tag = header.u8();
  if (frame.size() - kFrameHeaderBytes < len) throw wire::FramingError("frame shorter than declared");
  if (frame.size() - kFrameHeaderBytes > len) throw wire::FramingError("bytes after frame end");
  if (!valid_kind(tag)) throw ProtocolError("unknown message kind " + std::to_string(tag));
  wire::Reader r(frame.subspan(kFrameHeaderBytes));
  Message m = decode_payload(static_cast<MessageKind>(tag), r);
  if (r.remaining() != 0) throw wire::FramingError("payload longer than its contents");
  return m;
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> FrameDecoder::next() {
  if (buffered() < kFrameHeaderBytes) return std::nullopt;
  std::uint32_t len;
  std::memcpy(&len, buf_.data() + pos_, sizeof len);
  if (len > kMaxPayloadBytes) throw ProtocolError("declared payload length too large");
  if (buffered() < kFrameHeaderBytes + len) return std::nullopt;
  const std::span<const std::uint8_t> frame(buf_.data() + pos_, kFrameHeaderBytes + len);
  pos_ += frame.size();
  Message m = decode(frame);
  if (pos_ > (1u << 20) && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  return m;
}

// ---------------------------------------------------------------------------

WorkerService::WorkerService(WorkerSpec spec) : spec_(std::move(spec)) {
  switch (spec_.task) {
    case WorkerSpec::Task::Synthetic:
      if (spec_.synthetic_dim == 0) throw ConfigError("synthetic worker needs a dimension");
      break;
    case WorkerSpec::Task::Pendulum:
      env_ = std::make_unique<PendulumEnv>(spec_.pendulum);
      break;
    case WorkerSpec::Task::PointMass:
      env_ = std::make_unique<PointMassEnv>(spec_.point_mass);
      break;
  }
}

EvaluateResult WorkerService::evaluate_current(const EvaluateRequest& req) {
  EvaluateResult out;
  if (!env_) {
    if (static_cast<std::size_t>(actor_.size()) != spec_.synthetic_dim)
      throw ProtocolError("EvaluateRequest before SetActorWeights");
    out.fitness = static_cast<float>(synthetic_fitness(spec_.objective, actor_));
    out.steps = static_cast<std::uint32_t>(spec_.synthetic_steps);
    return out;
  }
  if (static_cast<std::size_t>(actor_.size()) != spec_.actor.param_count())
    throw ProtocolError("EvaluateRequest before SetActorWeights");
  Rng rng(req.seed);
  const FlatParams actor{actor_, spec_.actor};
  EvalResult res = evaluate(actor, *env_, static_cast<double>(req.a_noise), rng, {},
                            req.record_transitions);
  out.fitness = static_cast<float>(res.total_reward);
  out.steps = static_cast<std::uint32_t>(res.steps);
  if (req.record_transitions) {
    out.state_dim = static_cast<std::uint32_t>(env_->state_dim());
    out.action_dim = static_cast<std::uint32_t>(env_->action_dim());
    out.transitions = std::move(res.transitions);
  }
  return out;
}

std::optional<Message> WorkerService::handle(const Message& msg) {
  if (stopped_) throw ProtocolError("worker already shut down");
  return std::visit(
      [&](const auto& m) -> std::optional<Message> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, SetActorWeights>) {
          actor_ = m.params;
          return std::nullopt;
        } else if constexpr (std::is_same_v<T, SetCriticWeights>) {
          if (static_cast<std::size_t>(m.params.size()) != spec_.critic.param_count())
            throw ProtocolError("critic weights do not match the critic layout");
          critic_ = FlatParams{m.params, spec_.critic};
          return std::nullopt;
        } else if constexpr (std::is_same_v<T, EvaluateRequest>) {
          // A repeated id gets the stored reply instead of a second evaluation.
          if (last_reply_ && m.request_id == last_request_id_) return last_reply_;
          Message reply = evaluate_current(m);
          last_request_id_ = m.request_id;
          last_reply_ = reply;
          return reply;
        } else if constexpr (std::is_same_v<T, TrainActorRequest>) {
          if (last_reply_ && m.request_id == last_request_id_) return last_reply_;
          if (!critic_) throw ProtocolError("TrainActorRequest before SetCriticWeights");
          if (static_cast<std::size_t>(actor_.size()) != spec_.actor.param_count())
            throw ProtocolError("TrainActorRequest before SetActorWeights");
          FlatParams trained = train_actor_on_states(FlatParams{actor_, spec_.actor}, *critic_,
                                                     m.state_batches, m.lr, m.optimizer);
          quantize_f32(trained.data);
          actor_ = trained.data;
          Message reply = SetActorWeights{std::move(trained.data)};
          last_request_id_ = m.request_id;
          last_reply_ = reply;
          return reply;
        } else if constexpr (std::is_same_v<T, Shutdown>) {
          stopped_ = true;
          return std::nullopt;
        } else if constexpr (std::is_same_v<T, Heartbeat>) {
          return m;
        } else {
          throw ProtocolError("workers do not accept EvaluateResult");
        }
      },
      msg);
}

// ---------------------------------------------------------------------------

std::uint64_t Channel::stamp(Message& msg) {
  if (auto* e = std::get_if<EvaluateRequest>(&msg)) return e->request_id = next_request_id_++;
  if (auto* t = std::get_if<TrainActorRequest>(&msg)) return t->request_id = next_request_id_++;
  return 0;
}

namespace {

bool expects_reply(MessageKind k) {
  return k == MessageKind::EvaluateRequest || k == MessageKind::TrainActorRequest ||
         k == MessageKind::Heartbeat;
}

}  // namespace

InProcessChannel::InProcessChannel(WorkerSpec spec) : service_(std::move(spec)) {}

std::optional<Message> InProcessChannel::request_reply(Message msg, std::chrono::milliseconds) {
  if (closed_) throw TransportError("channel closed");
  stamp(msg);
  const Message delivered = decode(encode(msg));
  auto reply = service_.handle(delivered);
  if (service_.stopped()) closed_ = true;
  if (!reply) return std::nullopt;
  return decode(encode(*reply));
}

void InProcessChannel::close() { closed_ = true; }

// ---------------------------------------------------------------------------

namespace {

void send_all(int fd, std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

/// Reads whatever is available into the decoder. False on orderly close.
bool recv_some(int fd, FrameDecoder& decoder, int timeout_ms) {
  pollfd p{fd, POLLIN, 0};
  int rc;
  do {
    rc = ::poll(&p, 1, timeout_ms);
  } while (rc < 0 && errno == EINTR);
  if (rc < 0) throw TransportError(std::string("poll failed: ") + std::strerror(errno));
  if (rc == 0) throw TimeoutError("timed out waiting for the peer");
  std::uint8_t buf[65536];
  ssize_t n;
  do {
    n = ::recv(fd, buf, sizeof buf, 0);
  } while (n < 0 && errno == EINTR);
  if (n < 0) throw TransportError(std::string("recv failed: ") + std::strerror(errno));
  if (n == 0) return false;
  decoder.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
  return true;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

SocketChannel::SocketChannel(const std::string& host, std::uint16_t port,
                             std::chrono::milliseconds connect_timeout) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || !res)
    throw TransportError("cannot resolve " + host);
  const auto deadline = std::chrono::steady_clock::now() + connect_timeout;
  // The worker may still be starting; retry until the deadline.
  while (true) {
    fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd_ < 0) break;
    if (::connect(fd_, res->ai_addr, res->ai_addrlen) == 0) break;
    ::close(fd_);
    fd_ = -1;
    if (std::chrono::steady_clock::now() >= deadline) break;
    ::usleep(20000);
  }
  ::freeaddrinfo(res);
  if (fd_ < 0) throw TransportError("cannot connect to " + host + ":" + service);
  set_nodelay(fd_);
}

SocketChannel::~SocketChannel() { close(); }

std::optional<Message> SocketChannel::request_reply(Message msg,
                                                    std::chrono::milliseconds timeout) {
  if (fd_ < 0) throw TransportError("channel closed");
  stamp(msg);
  const auto kind = kind_of(msg);
  send_all(fd_, encode(msg));
  if (kind == MessageKind::Shutdown) {
    close();
    return std::nullopt;
  }
  if (!expects_reply(kind)) return std::nullopt;
  while (true) {
    if (auto m = decoder_.next()) return m;
    if (!recv_some(fd_, decoder_, static_cast<int>(timeout.count())))
      throw TransportError("worker closed the connection");
  }
}

void SocketChannel::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

WorkerServer::WorkerServer(WorkerSpec spec, const std::string& bind_host, std::uint16_t port)
    : spec_(std::move(spec)) {
  // Fail on a bad spec before accepting anything.
  WorkerService probe(spec_);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw TransportError("socket failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) != 1)
    throw TransportError("bad bind address " + bind_host);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 4) != 0) {
    ::close(listen_fd_);
    throw TransportError(std::string("cannot listen: ") + std::strerror(errno));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

WorkerServer::~WorkerServer() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void WorkerServer::serve() {
  while (true) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("accept failed: ") + std::strerror(errno));
    }
    set_nodelay(fd);
    bool shutdown = false;
    try {
      shutdown = serve_connection(fd);
    } catch (const TransportError&) {
      // Connection lost; wait for the next master.
    }
    ::close(fd);
    if (shutdown) return;
  }
}

bool WorkerServer::serve_connection(int fd) {
  WorkerService service(spec_);
  FrameDecoder decoder;
  while (true) {
    while (auto m = decoder.next()) {
      auto reply = service.handle(*m);
      if (service.stopped()) return true;
      if (reply) send_all(fd, encode(*reply));
    }
    if (!recv_some(fd, decoder, -1)) return false;
  }
}

}  // namespace aesrl
