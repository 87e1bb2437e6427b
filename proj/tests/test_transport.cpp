#include <doctest.h>

#include <thread>

#include "aesrl/transport.hpp"
#include "transport_fuzz.hpp"

using namespace aesrl;
using namespace std::chrono_literals;

namespace {

WorkerSpec pendulum_spec() {
  WorkerSpec s;
  s.task = WorkerSpec::Task::Pendulum;
  s.actor = MlpSpec::actor(3, 1, {16, 16});
  s.critic = MlpSpec::critic(3, 1, {16, 16});
  return s;
}

}  // namespace

TEST_SUITE("transport") {

TEST_CASE("round trip of randomized messages of every kind") {
  Rng rng(1);
  for (int t = 0; t < 300; ++t) {
    for (int kind = 1; kind <= 7; ++kind) {
      const Message m = testing::random_message(static_cast<MessageKind>(kind), rng);
      const auto bytes = encode(m);
      CHECK(decode(bytes) == m);
      CHECK(encode(decode(bytes)) == bytes);
      CHECK(kind_of(m) == static_cast<MessageKind>(kind));
    }
  }
}

TEST_CASE("empty EvaluateResult frame is 17 bytes") {
  EvaluateResult r;
  r.fitness = -3.5f;
  r.steps = 200;
  const auto bytes = encode(r);
  CHECK(bytes.size() == 4 + 1 + 4 + 4 + 4);
  CHECK(bytes[0] == 12);
  CHECK(bytes[4] == static_cast<std::uint8_t>(MessageKind::EvaluateResult));
}

TEST_CASE("malformed frames") {
  const auto bytes = encode(SetActorWeights{Vec::Ones(4)});
  CHECK_THROWS_AS(decode(std::span(bytes).first(bytes.size() - 1)), wire::FramingError);
  CHECK_THROWS_AS(decode(std::span(bytes).first(3)), wire::FramingError);
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(decode(longer), wire::FramingError);

  auto bad_tag = bytes;
  bad_tag[4] = 42;
  CHECK_THROWS_AS(decode(bad_tag), ProtocolError);

  // Payload declares a longer float run than the frame holds.
  auto lying = bytes;
  lying[5] = 9;
  CHECK_THROWS_AS(decode(lying), wire::FramingError);

  FrameDecoder d;
  d.feed(std::span(bytes).first(bytes.size() - 2));
  CHECK_FALSE(d.next().has_value());
  d.feed(std::span(bytes).last(2));
  CHECK(d.next().has_value());
  CHECK(d.buffered() == 0);
}

TEST_CASE("fuzzed frame splits preserve boundaries") {
  Rng rng(2);
  for (int t = 0; t < 2000; ++t) CHECK(testing::fuzz_split_case(rng));
}

TEST_CASE("worker service semantics") {
  InProcessChannel ch(pendulum_spec());
  auto hb = ch.request_reply(Heartbeat{99}, 1s);
  REQUIRE(hb);
  CHECK(std::get<Heartbeat>(*hb).nonce == 99);

  CHECK_THROWS_AS(ch.request_reply(EvaluateRequest{0, 1, 0.0f, false}, 1s), ProtocolError);

  Rng rng(3);
  const FlatParams actor = FlatParams::init(pendulum_spec().actor, rng);
  CHECK_FALSE(ch.request_reply(SetActorWeights{actor.data}, 1s).has_value());
  auto r = ch.request_reply(EvaluateRequest{0, 5, 0.1f, true}, 1s);
  REQUIRE(r);
  const auto& res = std::get<EvaluateResult>(*r);
  CHECK(res.steps == res.transitions.size());
  CHECK(res.state_dim == 3);

  CHECK(!ch.request_reply(Shutdown{}, 1s).has_value());
  CHECK_THROWS_AS(ch.request_reply(Heartbeat{1}, 1s), TransportError);
}

TEST_CASE("repeated request ids are answered once") {
  WorkerService svc(pendulum_spec());
  Rng rng(4);
  svc.handle(SetActorWeights{FlatParams::init(pendulum_spec().actor, rng).data});
  const auto a = svc.handle(EvaluateRequest{7, 11, 0.1f, false});
  svc.handle(SetActorWeights{FlatParams::init(pendulum_spec().actor, rng).data});
  const auto b = svc.handle(EvaluateRequest{7, 11, 0.1f, false});
  CHECK(*a == *b);
}

TEST_CASE("loopback sockets match in-process bit for bit") {
  WorkerServer server(pendulum_spec(), "127.0.0.1", 0);
  std::thread worker([&] { server.serve(); });
  {
    SocketChannel sock("127.0.0.1", server.port(), 2s);
    InProcessChannel local(pendulum_spec());
    Rng rng(5);
    const FlatParams actor = FlatParams::init(pendulum_spec().actor, rng);
    const FlatParams critic = FlatParams::init(pendulum_spec().critic, rng);
    TrainActorRequest train;
    train.lr = 1e-3f;
    train.optimizer = OptimizerKind::Adam;
    for (int k = 0; k < 5; ++k) train.state_batches.push_back(Mat::Random(3, 8));
    for (Channel* ch : {static_cast<Channel*>(&sock), static_cast<Channel*>(&local)}) {
      ch->request_reply(SetActorWeights{actor.data}, 1s);
      ch->request_reply(SetCriticWeights{critic.data}, 1s);
    }
    const auto ts = sock.request_reply(train, 5s);
    const auto tl = local.request_reply(train, 5s);
    CHECK(*ts == *tl);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto es = sock.request_reply(EvaluateRequest{0, seed, 0.1f, true}, 5s);
      const auto el = local.request_reply(EvaluateRequest{0, seed, 0.1f, true}, 5s);
      CHECK(*es == *el);
    }
    CHECK(std::get<Heartbeat>(*sock.request_reply(Heartbeat{3}, 1s)).nonce == 3);
    sock.request_reply(Shutdown{}, 1s);
    CHECK_THROWS_AS(sock.request_reply(Heartbeat{1}, 1s), TransportError);
  }
  worker.join();
}

TEST_CASE("a silent worker raises a typed timeout") {
  WorkerServer server(pendulum_spec(), "127.0.0.1", 0);
  std::thread worker([&] { server.serve(); });
  {
    SocketChannel sock("127.0.0.1", server.port(), 2s);
    Rng rng(6);
    sock.request_reply(SetActorWeights{FlatParams::init(pendulum_spec().actor, rng).data}, 1s);
    // A long episode on a 0 ms budget cannot be answered in time.
    CHECK_THROWS_AS(sock.request_reply(EvaluateRequest{0, 1, 0.0f, true}, 0ms), TimeoutError);
  }
  // Reconnect to stop the server.
  SocketChannel stop("127.0.0.1", server.port(), 2s);
  stop.request_reply(Shutdown{}, 1s);
  worker.join();
}

}
