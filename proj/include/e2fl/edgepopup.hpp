#pragma once

#include <numeric>

#include "e2fl/ranking.hpp"

namespace e2fl {

struct EPConfig {
  int epochs = 2;
  double k_percent = 50.0;
  double lr = 0.1;
  int batch_size = 8;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t shuffle_seed = 0;  // callers derive this from (run seed, client, round)
};

// Mask induced by the current scores at density k.
inline BinaryMask score_mask(const SuperNetwork& net, double k_percent) {
  return ranking_to_mask(ranking_from_scores(net.scores()), k_percent);
}

struct EpForward {
  Matrix probs;
  BinaryMask mask;
};

inline EpForward ep_forward(const SuperNetwork& net, double k_percent, const Batch& batch) {
  EpForward out;
  out.mask = score_mask(net, k_percent);
  out.probs = forward(net, out.mask, batch);
  return out;
}

// Minibatch SGD on the scores only; the mask is recomputed from the live
// scores before every batch, and straight-through score gradients let
// masked-out edges climb back into the top k%. Weights stay frozen
// (checksum-enforced). Returns the last minibatch loss.
inline double ep_train(SuperNetwork& net, const Batch& data, const EPConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("ep_train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("ep_train: batch_size must be >= 1");
  data.validate(net.spec().input_dim(), net.spec().output_dim());
  const std::uint64_t frozen = net.weight_checksum();
  LayerVec velocity;
  double last_loss = 0.0;
  std::vector<int> order(static_cast<std::size_t>(data.rows));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(cfg.shuffle_seed, static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    for (int start = 0; start < data.rows; start += cfg.batch_size) {
      const int stop = std::min(start + cfg.batch_size, data.rows);
      const Batch mb = data.select(std::vector<int>(order.begin() + start, order.begin() + stop));
      const BinaryMask mask = score_mask(net, cfg.k_percent);
      const BackwardResult bwd = backward(net, mask, mb);
      if (!std::isfinite(bwd.loss)) throw DivergenceError("ep_train: non-finite loss");
      sgd_step(net.scores(), bwd.score_grads.layers, velocity, cfg.lr, cfg.momentum, cfg.weight_decay);
      last_loss = bwd.loss;
    }
  }
  if (net.weight_checksum() != frozen) throw std::logic_error("ep_train: frozen weights were mutated");
  return last_loss;
}

// One client contribution: restart from the seeded initial scores, impose the
// shared ranking on them, train, and rank what came out.
inline Ranking local_ranking(SuperNetwork& net, const Ranking& shared, const Batch& data, const EPConfig& cfg) {
  net.reset_scores();
  net.scores() = reorder_scores(net.scores(), shared);
  ep_train(net, data, cfg);
  return ranking_from_scores(net.scores());
}

}  // namespace e2fl
