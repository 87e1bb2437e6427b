#pragma once

#include <algorithm>
#include <vector>

#include "aesrl/transport.hpp"

namespace aesrl::testing {

/// Random payload values that survive the float32 wire exactly.
inline Vec random_floats(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<float> u(-10.0f, 10.0f);
  Vec v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = u(rng);
  return v;
}

inline Message random_message(MessageKind kind, Rng& rng) {
  std::uniform_int_distribution<int> small(0, 6);
  std::uniform_int_distribution<std::uint64_t> any;
  switch (kind) {
    case MessageKind::SetActorWeights:
      return SetActorWeights{random_floats(small(rng) * 5, rng)};
    case MessageKind::SetCriticWeights:
      return SetCriticWeights{random_floats(small(rng) * 3, rng)};
    case MessageKind::EvaluateRequest:
      return EvaluateRequest{any(rng), any(rng), static_cast<float>(random_floats(1, rng)[0]),
                             small(rng) % 2 == 0};
    case MessageKind::EvaluateResult: {
      EvaluateResult r;
      r.fitness = static_cast<float>(random_floats(1, rng)[0]);
      r.steps = static_cast<std::uint32_t>(any(rng));
      const int n = small(rng);
      if (n > 0) {
        r.state_dim = static_cast<std::uint32_t>(1 + small(rng));
        r.action_dim = static_cast<std::uint32_t>(1 + small(rng) % 3);
        for (int i = 0; i < n; ++i)
          r.transitions.push_back({random_floats(r.state_dim, rng),
                                   random_floats(r.action_dim, rng),
                                   random_floats(r.state_dim, rng),
                                   random_floats(1, rng)[0], small(rng) % 2 == 0});
      }
      return r;
    }
    case MessageKind::TrainActorRequest: {
      TrainActorRequest t;
      t.request_id = any(rng);
      t.lr = static_cast<float>(random_floats(1, rng)[0]);
      t.optimizer = small(rng) % 2 ? OptimizerKind::Adam : OptimizerKind::Sgd;
      const int n = small(rng), rows = 1 + small(rng), cols = 1 + small(rng);
      for (int k = 0; k < n; ++k) {
        Vec flat = random_floats(static_cast<std::size_t>(rows * cols), rng);
        t.state_batches.push_back(Eigen::Map<Mat>(flat.data(), rows, cols));
      }
      return t;
    }
    case MessageKind::Shutdown:
      return Shutdown{};
    case MessageKind::Heartbeat:
      return Heartbeat{any(rng)};
  }
  return Shutdown{};
}

/// Concatenates a few random frames, splits the stream at random points and
/// checks the decoder yields exactly the original messages in order.
inline bool fuzz_split_case(Rng& rng) {
  std::uniform_int_distribution<int> kind(1, 7), count(1, 4);
  std::vector<Message> sent;
  std::vector<std::uint8_t> stream;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    sent.push_back(random_message(static_cast<MessageKind>(kind(rng)), rng));
    const auto f = encode(sent.back());
    stream.insert(stream.end(), f.begin(), f.end());
  }
  std::uniform_int_distribution<std::size_t> cut(0, stream.size());
  std::vector<std::size_t> cuts(static_cast<std::size_t>(count(rng) * 2));
  for (auto& c : cuts) c = cut(rng);
  cuts.push_back(0);
  cuts.push_back(stream.size());
  std::sort(cuts.begin(), cuts.end());

  FrameDecoder d;
  std::vector<Message> got;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    d.feed(std::span(stream).subspan(cuts[i], cuts[i + 1] - cuts[i]));
    while (auto m = d.next()) got.push_back(std::move(*m));
  }
  return got == sent && d.buffered() == 0;
}

}  // namespace aesrl::testing
