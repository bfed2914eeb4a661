#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "e2fl/datagen.hpp"
#include "e2fl/edgepopup.hpp"
#include "e2fl/groupinfer.hpp"
#include "e2fl/metrics.hpp"

namespace e2fl {

constexpr std::uint64_t kSaltSample = 0x73616D706CULL;
constexpr std::uint64_t kSaltShuffle = 0x73687566ULL;
constexpr std::uint64_t kSaltCluster = 0x636C7573ULL;
constexpr std::uint64_t kSaltLocalShuffle = 0x6C6F636CULL;
constexpr std::uint64_t kSaltModel = 0x6D6F64656CULL;

enum class InferenceMode { known, lowest_loss, oneshot, binary, rank_cluster };
enum class Algorithm { e2fl, fedavg, ifca, local };

struct FederationConfig {
  NetSpec net;
  int rounds = 1;             // T
  int local_epochs = 2;       // E
  int clients_per_round = 1;  // n
  int groups = 1;             // Q; 0 means dynamic (start from a warm registry or one group)
  double k_percent = 50.0;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 8;
  std::uint64_t seed = 1;
  InferenceMode inference = InferenceMode::known;
  Algorithm algorithm = Algorithm::e2fl;
  double tau = 0.0;  // 0 -> 0.7 * ln(n_classes)
  double eps = 0.1;
  int cluster_iters = 5;
  bool aware = false;      // per-attribute submissions (tabular bias runs)
  int round_offset = 0;    // shifts the sampling/shuffle streams for continuation runs
  WireSizeModel wire;

  bool dynamic_groups() const { return groups == 0; }

  double resolved_tau() const { return tau > 0.0 ? tau : 0.7 * std::log(static_cast<double>(net.output_dim())); }

  void validate(int total_clients) const {
    net.validate();
    if (rounds < 1 || local_epochs < 1) throw std::invalid_argument("FederationConfig: T and E must be >= 1");
    if (clients_per_round < 1 || clients_per_round > total_clients)
      throw std::invalid_argument("FederationConfig: need 1 <= n <= N");
    if (!(k_percent > 0.0) || k_percent > 100.0)
      throw std::invalid_argument("FederationConfig: k_percent must be in (0, 100]");
    if (batch_size < 1) throw std::invalid_argument("FederationConfig: batch_size must be >= 1");
    if (groups < 0) throw std::invalid_argument("FederationConfig: groups must be >= 0");
    if (dynamic_groups() && inference != InferenceMode::lowest_loss && inference != InferenceMode::oneshot)
      throw std::invalid_argument("FederationConfig: dynamic groups need lowest_loss or oneshot inference");
    if (aware && (algorithm != Algorithm::e2fl || inference != InferenceMode::known))
      throw std::invalid_argument("FederationConfig: aware mode is an e2fl variant with known attribute slices");
    if (eps < 0.0) throw std::invalid_argument("FederationConfig: eps must be nonnegative");
  }
};

// Shared sampling policy so reference implementations can reproduce a run's
// client schedule exactly.
inline std::vector<int> round_sample(std::uint64_t seed, int round, int n, int total) {
  Rng rng(seed, mix64(kSaltSample, static_cast<std::uint64_t>(round)));
  return rng.sample_without_replacement(n, total);
}

inline std::uint64_t client_shuffle_seed(std::uint64_t seed, int client, int round) {
  return mix64(seed, mix64(kSaltShuffle, mix64(static_cast<std::uint64_t>(client), static_cast<std::uint64_t>(round))));
}

struct CreationEvent {
  int round = 0;
  int group = 0;
  Ranking initial_ranking;
};

struct RoundRecord {
  int round = 0;
  std::vector<Ranking> group_rankings;  // state after this round's votes
  Ranking global_ranking;
  std::vector<int> selected;
  std::vector<int> client_group;          // group used to evaluate each client (-1: per-sample attribute)
  std::vector<double> client_loss;        // under the group mask
  std::vector<double> client_acc;         // under the group mask
  std::vector<double> client_acc_global;  // under the global mask
  std::vector<std::vector<int>> client_pred;  // test-set predictions, kept only when attributes exist
  std::uint64_t up_bytes = 0;
  std::uint64_t down_bytes = 0;
  std::optional<CreationEvent> creation;  // applied after the votes, before the next round
};

struct E2flState {
  SuperNetwork net;
  GroupRegistry registry;
  Ranking global;
  std::vector<int> sticky_group;  // creation requesters stay bound to the group they asked for
  ClusterAssignment clusters;
  bool clustered = false;
  int creations = 0;
  std::uint64_t warmup_up_bytes = 0;
  std::uint64_t warmup_down_bytes = 0;
};

struct E2flResult {
  GroupRegistry registry;
  Ranking global;
  std::vector<RoundRecord> records;
  int creations = 0;
  std::uint64_t warmup_up_bytes = 0;
  std::uint64_t warmup_down_bytes = 0;
  ClusterAssignment clusters;
  bool clustered = false;
};

namespace detail {

inline std::vector<int> predictions(const Matrix& probs) {
  std::vector<int> pred(static_cast<std::size_t>(probs.rows));
  for (int r = 0; r < probs.rows; ++r) {
    int best = 0;
    for (int c = 1; c < probs.cols; ++c)
      if (probs.at(r, c) > probs.at(r, best)) best = c;
    pred[static_cast<std::size_t>(r)] = best;
  }
  return pred;
}

inline std::pair<double, double> eval_with_mask(const SuperNetwork& net, const BinaryMask& mask, const Batch& batch,
                                                std::vector<int>* pred_out = nullptr) {
  const Matrix probs = forward(net, mask, batch);
  if (pred_out) *pred_out = predictions(probs);
  return {mean_cross_entropy(probs, batch.y), accuracy(probs, batch.y)};
}

// Attribute-sliced evaluation: every sample is scored under its attribute
// value's group mask.
inline std::pair<double, double> eval_aware(const SuperNetwork& net, const std::vector<BinaryMask>& masks,
                                            const Batch& batch, const std::vector<int>& attr,
                                            std::vector<int>* pred_out = nullptr) {
  double loss_sum = 0.0;
  double correct = 0.0;
  if (pred_out) pred_out->assign(static_cast<std::size_t>(batch.rows), 0);
  for (std::size_t a = 0; a < masks.size(); ++a) {
    std::vector<int> rows;
    for (int r = 0; r < batch.rows; ++r)
      if (attr[static_cast<std::size_t>(r)] == static_cast<int>(a)) rows.push_back(r);
    if (rows.empty()) continue;
    const Batch slice = batch.select(rows);
    const Matrix probs = forward(net, masks[a], slice);
    for (int r = 0; r < slice.rows; ++r) {
      const int label = slice.y[static_cast<std::size_t>(r)];
      loss_sum -= std::log(probs.at(r, label) + 1e-12);
      int best = 0;
      for (int c = 1; c < probs.cols; ++c)
        if (probs.at(r, c) > probs.at(r, best)) best = c;
      if (best == label) correct += 1.0;
      if (pred_out) (*pred_out)[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])] = best;
    }
  }
  return {loss_sum / batch.rows, correct / batch.rows};
}

inline std::uint64_t message_bytes(long long bits) { return static_cast<std::uint64_t>((bits + 7) / 8); }

}  // namespace detail

// Group resolution for one client against the current masks. Creation
// checks apply only in dynamic mode.
struct GroupDecision {
  int group = 0;
  bool request_creation = false;
};

inline GroupDecision resolve_group(const SuperNetwork& net, const std::vector<BinaryMask>& masks, const Batch& data,
                                   const FederationConfig& cfg, PassCounts* passes = nullptr) {
  GroupDecision d;
  switch (cfg.inference) {
    case InferenceMode::lowest_loss: {
      std::vector<double> losses;
      d.group = lowest_loss_group(net, masks, data, passes, &losses);
      if (cfg.dynamic_groups() && should_create_group_lowest_loss(losses, cfg.resolved_tau()))
        d.request_creation = true;
      break;
    }
    case InferenceMode::oneshot: {
      std::vector<double> grad;
      d.group = oneshot_group(net, masks, data, passes, &grad);
      if (cfg.dynamic_groups() && should_create_group_oneshot(grad, cfg.eps)) d.request_creation = true;
      break;
    }
    case InferenceMode::binary:
      d.group = binary_search_group(net, masks, data, passes);
      break;
    default:
      throw std::logic_error("resolve_group: mode resolves without inference");
  }
  return d;
}

// Per-attribute contributions of one client: restrict the local data to each
// attribute value and rank that slice. Values with no local samples are absent.
inline std::map<int, Ranking> aware_local_ranking(SuperNetwork& net, const Ranking& global, const ClientData& client,
                                                  const EPConfig& ep, int n_attr_values) {
  std::map<int, Ranking> out;
  for (int a = 0; a < n_attr_values; ++a) {
    std::vector<int> rows;
    for (int r = 0; r < client.train.rows; ++r)
      if (client.train_attr[static_cast<std::size_t>(r)] == a) rows.push_back(r);
    if (rows.empty()) continue;
    const Batch slice = client.train.select(rows);
    out.emplace(a, local_ranking(net, global, slice, ep));
  }
  if (out.empty()) throw std::invalid_argument("aware_local_ranking: all attribute slices empty");
  return out;
}

inline E2flState e2fl_init(const std::vector<ClientData>& clients, const FederationConfig& cfg,
                           const GroupRegistry* warm_registry = nullptr, const Ranking* warm_global = nullptr) {
  cfg.validate(static_cast<int>(clients.size()));
  if (clients.empty()) throw std::invalid_argument("e2fl_init: no clients");
  E2flState st;
  st.net = init_supernetwork(cfg.net, cfg.seed);
  st.global = warm_global ? *warm_global : ranking_from_scores(st.net.scores());
  st.sticky_group.assign(clients.size(), -1);

  int needed_groups = cfg.groups;
  if (cfg.aware) {
    int max_attr = -1;
    for (const auto& c : clients) {
      if (c.train_attr.size() != static_cast<std::size_t>(c.train.rows) ||
          c.test_attr.size() != static_cast<std::size_t>(c.test.rows))
        throw std::invalid_argument("e2fl_init: aware mode needs per-sample attributes");
      for (int a : c.train_attr) max_attr = std::max(max_attr, a);
      for (int a : c.test_attr) max_attr = std::max(max_attr, a);
    }
    needed_groups = max_attr + 1;
  } else if (cfg.inference == InferenceMode::known) {
    int max_group = 0;
    for (const auto& c : clients) max_group = std::max(max_group, c.group);
    if (cfg.groups < max_group + 1) throw std::invalid_argument("e2fl_init: fewer groups than true group ids");
  }

  if (warm_registry) {
    st.registry = *warm_registry;
  } else {
    st.registry = GroupRegistry(cfg.k_percent);
    const int q0 = cfg.dynamic_groups() ? 1 : needed_groups;
    for (int q = 0; q < q0; ++q) st.registry.add_group(st.global);
  }

  // One-time identity estimation: cluster every client's warmup ranking.
  if (cfg.inference == InferenceMode::rank_cluster) {
    if (cfg.dynamic_groups()) throw std::invalid_argument("e2fl_init: rank_cluster needs a fixed group count");
    std::vector<Ranking> warmups;
    warmups.reserve(clients.size());
    SuperNetwork scratch = st.net;
    for (const auto& c : clients) {
      EPConfig ep{cfg.local_epochs, cfg.k_percent,   cfg.lr,
                  cfg.batch_size,   cfg.momentum,    cfg.weight_decay,
                  client_shuffle_seed(cfg.seed, c.id, -1)};
      warmups.push_back(local_ranking(scratch, st.global, c.train, ep));
    }
    st.clusters = rank_clustering(warmups, cfg.groups, cfg.cluster_iters, mix64(cfg.seed, kSaltCluster));
    st.clustered = true;
    const WireSizes w = wire_sizes(cfg.net, cfg.wire, st.registry.size());
    st.warmup_up_bytes = clients.size() * detail::message_bytes(w.upload_bits);
    st.warmup_down_bytes = clients.size() * detail::message_bytes(w.download_bits);
  }
  return st;
}

inline RoundRecord e2fl_round(E2flState& st, const std::vector<ClientData>& clients, const FederationConfig& cfg,
                              int round_index) {
  const int N = static_cast<int>(clients.size());
  const int stream_round = round_index + cfg.round_offset;
  RoundRecord rec;
  rec.round = round_index;
  rec.selected = round_sample(cfg.seed, stream_round, cfg.clients_per_round, N);

  const int Q = st.registry.size();
  std::vector<std::vector<Ranking>> submissions(static_cast<std::size_t>(Q));
  std::vector<int> creation_requests;
  int n_submitters = 0;

  for (int u : rec.selected) {
    const ClientData& client = clients[static_cast<std::size_t>(u)];
    EPConfig ep{cfg.local_epochs, cfg.k_percent,   cfg.lr,
                cfg.batch_size,   cfg.momentum,    cfg.weight_decay,
                client_shuffle_seed(cfg.seed, u, stream_round)};
    if (cfg.aware) {
      for (auto& [attr_value, ranking] : aware_local_ranking(st.net, st.global, client, ep, Q))
        submissions[static_cast<std::size_t>(attr_value)].push_back(std::move(ranking));
      ++n_submitters;
      continue;
    }
    int group;
    if (cfg.inference == InferenceMode::known) {
      group = client.group;
    } else if (st.sticky_group[static_cast<std::size_t>(u)] >= 0) {
      group = st.sticky_group[static_cast<std::size_t>(u)];
    } else if (cfg.inference == InferenceMode::rank_cluster) {
      group = st.clusters.group_of[static_cast<std::size_t>(u)];
    } else {
      const GroupDecision d = resolve_group(st.net, st.registry.masks(), client.train, cfg);
      if (d.request_creation) {
        // The server opens at most one group per round; requesters sit this
        // round out and join the group once it exists.
        creation_requests.push_back(u);
        continue;
      }
      group = d.group;
    }
    submissions[static_cast<std::size_t>(group)].push_back(local_ranking(st.net, st.global, client.train, ep));
    ++n_submitters;
  }

  // Vote inside each group; absent groups carry their ranking forward.
  for (int q = 0; q < Q; ++q)
    if (!submissions[static_cast<std::size_t>(q)].empty())
      st.registry.set_ranking(q, vote(submissions[static_cast<std::size_t>(q)]));
  // Vote across groups: one ballot per group regardless of its population.
  st.global = vote(st.registry.rankings());

  rec.group_rankings = st.registry.rankings();
  rec.global_ranking = st.global;

  const WireSizes w = wire_sizes(cfg.net, cfg.wire, Q);
  rec.up_bytes = static_cast<std::uint64_t>(n_submitters) * detail::message_bytes(w.upload_bits);
  rec.down_bytes = static_cast<std::uint64_t>(rec.selected.size()) * detail::message_bytes(w.download_bits);

  // Evaluate every client under its group's mask and under the global mask.
  const BinaryMask global_mask = ranking_to_mask(st.global, cfg.k_percent);
  const bool keep_pred = !clients.front().test_attr.empty();
  rec.client_group.resize(clients.size());
  rec.client_loss.resize(clients.size());
  rec.client_acc.resize(clients.size());
  rec.client_acc_global.resize(clients.size());
  if (keep_pred) rec.client_pred.resize(clients.size());
  for (int i = 0; i < N; ++i) {
    const ClientData& client = clients[static_cast<std::size_t>(i)];
    std::vector<int>* pred = keep_pred ? &rec.client_pred[static_cast<std::size_t>(i)] : nullptr;
    if (cfg.aware) {
      rec.client_group[static_cast<std::size_t>(i)] = -1;
      const auto [loss, acc] = detail::eval_aware(st.net, st.registry.masks(), client.test, client.test_attr, pred);
      rec.client_loss[static_cast<std::size_t>(i)] = loss;
      rec.client_acc[static_cast<std::size_t>(i)] = acc;
    } else {
      int group;
      if (cfg.inference == InferenceMode::known) {
        group = client.group;
      } else if (st.sticky_group[static_cast<std::size_t>(i)] >= 0) {
        group = st.sticky_group[static_cast<std::size_t>(i)];
      } else if (cfg.inference == InferenceMode::rank_cluster) {
        group = st.clusters.group_of[static_cast<std::size_t>(i)];
      } else {
        group = resolve_group(st.net, st.registry.masks(), client.train, cfg).group;
      }
      rec.client_group[static_cast<std::size_t>(i)] = group;
      const auto [loss, acc] = detail::eval_with_mask(st.net, st.registry.mask(group), client.test, pred);
      rec.client_loss[static_cast<std::size_t>(i)] = loss;
      rec.client_acc[static_cast<std::size_t>(i)] = acc;
    }
    rec.client_acc_global[static_cast<std::size_t>(i)] =
        detail::eval_with_mask(st.net, global_mask, client.test).second;
  }

  // Group creation is serialized at the server between rounds: one new group
  // absorbs all of this round's requests.
  if (!creation_requests.empty()) {
    const int g = st.registry.create_group();
    for (int u : creation_requests) st.sticky_group[static_cast<std::size_t>(u)] = g;
    rec.creation = CreationEvent{round_index, g, st.registry.ranking(g)};
    ++st.creations;
  }
  return rec;
}

inline E2flResult e2fl_train(const std::vector<ClientData>& clients, const FederationConfig& cfg,
                             const GroupRegistry* warm_registry = nullptr, const Ranking* warm_global = nullptr) {
  E2flState st = e2fl_init(clients, cfg, warm_registry, warm_global);
  E2flResult out;
  out.records.reserve(static_cast<std::size_t>(cfg.rounds));
  for (int t = 0; t < cfg.rounds; ++t) out.records.push_back(e2fl_round(st, clients, cfg, t));
  out.registry = std::move(st.registry);
  out.global = std::move(st.global);
  out.creations = st.creations;
  out.warmup_up_bytes = st.warmup_up_bytes;
  out.warmup_down_bytes = st.warmup_down_bytes;
  out.clusters = std::move(st.clusters);
  out.clustered = st.clustered;
  return out;
}

// ---------------------------------------------------------------------------
// Dense baselines.

struct DenseRoundRecord {
  int round = 0;
  std::vector<int> client_cluster;  // ifca only
  std::vector<double> client_loss;
  std::vector<double> client_acc;
  std::vector<std::vector<int>> client_pred;  // kept only when attributes exist
  std::uint64_t up_bytes = 0;
  std::uint64_t down_bytes = 0;
};

struct DenseResult {
  std::vector<LayerVec> models;
  std::vector<DenseRoundRecord> records;
};

namespace detail {

inline void dense_train_epochs(const NetSpec& spec, LayerVec& weights, const Batch& data, int epochs, int batch_size,
                               double lr, double momentum, double weight_decay, std::uint64_t shuffle_seed,
                               LayerVec& velocity) {
  std::vector<int> order(static_cast<std::size_t>(data.rows));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(shuffle_seed, static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    for (int start = 0; start < data.rows; start += batch_size) {
      const int stop = std::min(start + batch_size, data.rows);
      const Batch mb = data.select(std::vector<int>(order.begin() + start, order.begin() + stop));
      const DenseBackward bwd = backward_dense(spec, weights, mb);
      if (!std::isfinite(bwd.loss)) throw DivergenceError("dense training: non-finite loss");
      sgd_step(weights, bwd.grads, velocity, lr, momentum, weight_decay);
    }
  }
}

// Shared by fedavg and per-cluster ifca aggregation so the Q=1 paths are
// arithmetic-identical. Sample-weighted model averaging rather than the
// equivalent delta form: 1.0 * w reproduces a lone client's weights bitwise,
// where w_old + (w - w_old) would not.
inline void weighted_model_average(LayerVec& global, const std::vector<LayerVec>& locals,
                                   const std::vector<double>& coef) {
  for (std::size_t l = 0; l < global.size(); ++l)
    for (std::size_t e = 0; e < global[l].size(); ++e) {
      double acc = 0.0;
      for (std::size_t d = 0; d < locals.size(); ++d) acc += coef[d] * locals[d][l][e];
      global[l][e] = acc;
    }
}

inline std::pair<double, double> eval_dense(const NetSpec& spec, const LayerVec& weights, const Batch& batch,
                                            std::vector<int>* pred_out = nullptr) {
  const Matrix probs = forward_dense(spec, weights, batch);
  if (pred_out) *pred_out = predictions(probs);
  return {mean_cross_entropy(probs, batch.y), accuracy(probs, batch.y)};
}

}  // namespace detail

inline DenseResult fedavg_train(const std::vector<ClientData>& clients, const FederationConfig& cfg) {
  cfg.validate(static_cast<int>(clients.size()));
  const int N = static_cast<int>(clients.size());
  DenseResult out;
  out.models.push_back(initial_weights(cfg.net, cfg.seed));
  LayerVec& global = out.models.front();
  const std::uint64_t dense_msg = detail::message_bytes(wire_sizes(cfg.net, cfg.wire, 1).dense_bits);
  for (int t = 0; t < cfg.rounds; ++t) {
    const int stream_round = t + cfg.round_offset;
    DenseRoundRecord rec;
    rec.round = t;
    const std::vector<int> selected = round_sample(cfg.seed, stream_round, cfg.clients_per_round, N);
    std::vector<LayerVec> locals;
    std::vector<double> coef;
    double total_samples = 0.0;
    for (int u : selected) total_samples += clients[static_cast<std::size_t>(u)].train.rows;
    for (int u : selected) {
      const ClientData& client = clients[static_cast<std::size_t>(u)];
      LayerVec local = global;
      LayerVec velocity;
      detail::dense_train_epochs(cfg.net, local, client.train, cfg.local_epochs, cfg.batch_size, cfg.lr, cfg.momentum,
                                 cfg.weight_decay, client_shuffle_seed(cfg.seed, u, stream_round), velocity);
      locals.push_back(std::move(local));
      coef.push_back(client.train.rows / total_samples);
    }
    detail::weighted_model_average(global, locals, coef);
    rec.up_bytes = selected.size() * dense_msg;
    rec.down_bytes = selected.size() * dense_msg;
    rec.client_loss.resize(clients.size());
    rec.client_acc.resize(clients.size());
    const bool keep_pred = !clients.front().test_attr.empty();
    if (keep_pred) rec.client_pred.resize(clients.size());
    for (int i = 0; i < N; ++i) {
      std::vector<int>* pred = keep_pred ? &rec.client_pred[static_cast<std::size_t>(i)] : nullptr;
      const auto [loss, acc] = detail::eval_dense(cfg.net, global, clients[static_cast<std::size_t>(i)].test, pred);
      rec.client_loss[static_cast<std::size_t>(i)] = loss;
      rec.client_acc[static_cast<std::size_t>(i)] = acc;
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

inline DenseResult ifca_train(const std::vector<ClientData>& clients, const FederationConfig& cfg) {
  cfg.validate(static_cast<int>(clients.size()));
  if (cfg.groups < 1) throw std::invalid_argument("ifca_train: need a fixed positive group count");
  const int N = static_cast<int>(clients.size());
  const int Q = cfg.groups;
  DenseResult out;
  out.models.reserve(static_cast<std::size_t>(Q));
  for (int q = 0; q < Q; ++q)
    out.models.push_back(initial_weights(cfg.net, q == 0 ? cfg.seed : mix64(cfg.seed, kSaltModel + static_cast<std::uint64_t>(q))));
  const std::uint64_t dense_msg = detail::message_bytes(wire_sizes(cfg.net, cfg.wire, 1).dense_bits);

  auto best_model = [&](const Batch& data) {
    int best = 0;
    double best_loss = detail::eval_dense(cfg.net, out.models[0], data).first;
    for (int q = 1; q < Q; ++q) {
      const double loss = detail::eval_dense(cfg.net, out.models[static_cast<std::size_t>(q)], data).first;
      if (loss < best_loss) {
        best = q;
        best_loss = loss;
      }
    }
    return best;
  };

  for (int t = 0; t < cfg.rounds; ++t) {
    const int stream_round = t + cfg.round_offset;
    DenseRoundRecord rec;
    rec.round = t;
    const std::vector<int> selected = round_sample(cfg.seed, stream_round, cfg.clients_per_round, N);
    std::vector<std::vector<LayerVec>> locals(static_cast<std::size_t>(Q));
    std::vector<std::vector<double>> weights_of(static_cast<std::size_t>(Q));
    for (int u : selected) {
      const ClientData& client = clients[static_cast<std::size_t>(u)];
      const int q = best_model(client.train);
      LayerVec local = out.models[static_cast<std::size_t>(q)];
      LayerVec velocity;
      detail::dense_train_epochs(cfg.net, local, client.train, cfg.local_epochs, cfg.batch_size, cfg.lr, cfg.momentum,
                                 cfg.weight_decay, client_shuffle_seed(cfg.seed, u, stream_round), velocity);
      locals[static_cast<std::size_t>(q)].push_back(std::move(local));
      weights_of[static_cast<std::size_t>(q)].push_back(static_cast<double>(client.train.rows));
    }
    for (int q = 0; q < Q; ++q) {
      auto& coef = weights_of[static_cast<std::size_t>(q)];
      if (coef.empty()) continue;
      double total = 0.0;
      for (double c : coef) total += c;
      for (double& c : coef) c /= total;
      detail::weighted_model_average(out.models[static_cast<std::size_t>(q)], locals[static_cast<std::size_t>(q)],
                                     coef);
    }
    rec.up_bytes = selected.size() * dense_msg;
    rec.down_bytes = selected.size() * dense_msg * static_cast<std::uint64_t>(Q);
    rec.client_cluster.resize(clients.size());
    rec.client_loss.resize(clients.size());
    rec.client_acc.resize(clients.size());
    const bool keep_pred = !clients.front().test_attr.empty();
    if (keep_pred) rec.client_pred.resize(clients.size());
    for (int i = 0; i < N; ++i) {
      const ClientData& client = clients[static_cast<std::size_t>(i)];
      const int q = best_model(client.train);
      rec.client_cluster[static_cast<std::size_t>(i)] = q;
      std::vector<int>* pred = keep_pred ? &rec.client_pred[static_cast<std::size_t>(i)] : nullptr;
      const auto [loss, acc] = detail::eval_dense(cfg.net, out.models[static_cast<std::size_t>(q)], client.test, pred);
      rec.client_loss[static_cast<std::size_t>(i)] = loss;
      rec.client_acc[static_cast<std::size_t>(i)] = acc;
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

// Standalone baseline: one continuous training run per client, measured every
// E epochs; no communication at all.
inline DenseResult local_train(const std::vector<ClientData>& clients, const FederationConfig& cfg) {
  cfg.validate(static_cast<int>(clients.size()));
  const int N = static_cast<int>(clients.size());
  DenseResult out;
  const LayerVec init = initial_weights(cfg.net, cfg.seed);
  out.models.assign(static_cast<std::size_t>(N), init);
  std::vector<LayerVec> velocity(static_cast<std::size_t>(N));
  for (int t = 0; t < cfg.rounds; ++t) {
    DenseRoundRecord rec;
    rec.round = t;
    for (int i = 0; i < N; ++i)
      detail::dense_train_epochs(cfg.net, out.models[static_cast<std::size_t>(i)],
                                 clients[static_cast<std::size_t>(i)].train, cfg.local_epochs, cfg.batch_size, cfg.lr,
                                 cfg.momentum, cfg.weight_decay,
                                 mix64(cfg.seed, kSaltLocalShuffle, static_cast<std::uint64_t>(t + cfg.round_offset)),
                                 velocity[static_cast<std::size_t>(i)]);
    rec.client_loss.resize(clients.size());
    rec.client_acc.resize(clients.size());
    const bool keep_pred = !clients.front().test_attr.empty();
    if (keep_pred) rec.client_pred.resize(clients.size());
    for (int i = 0; i < N; ++i) {
      std::vector<int>* pred = keep_pred ? &rec.client_pred[static_cast<std::size_t>(i)] : nullptr;
      const auto [loss, acc] = detail::eval_dense(cfg.net, out.models[static_cast<std::size_t>(i)],
                                                  clients[static_cast<std::size_t>(i)].test, pred);
      rec.client_loss[static_cast<std::size_t>(i)] = loss;
      rec.client_acc[static_cast<std::size_t>(i)] = acc;
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

}  // namespace e2fl
