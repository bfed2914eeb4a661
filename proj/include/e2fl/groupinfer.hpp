#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "e2fl/ranking.hpp"

namespace e2fl {

// Forward/backward passes spent by a group-inference call; tests pin these.
struct PassCounts {
  int forwards = 0;
  int backwards = 0;
};

namespace detail {

inline void check_group_masks(const SuperNetwork& net, const std::vector<BinaryMask>& masks) {
  if (masks.empty()) throw std::invalid_argument("group inference: no masks");
  for (const auto& m : masks) check_mask_shape(net.spec(), m);
}

}  // namespace detail

// Try every group mask; lowest mean cross entropy wins, ties to the lowest
// group index. Costs one forward pass per group.
inline int lowest_loss_group(const SuperNetwork& net, const std::vector<BinaryMask>& masks, const Batch& batch,
                             PassCounts* passes = nullptr, std::vector<double>* losses_out = nullptr) {
  detail::check_group_masks(net, masks);
  int best = 0;
  std::vector<double> losses(masks.size());
  for (std::size_t q = 0; q < masks.size(); ++q) {
    const Matrix probs = forward(net, masks[q], batch);
    if (passes) ++passes->forwards;
    losses[q] = mean_cross_entropy(probs, batch.y);
    if (losses[q] < losses[static_cast<std::size_t>(best)]) best = static_cast<int>(q);
  }
  if (losses_out) *losses_out = std::move(losses);
  return best;
}

// Gradient of the mean output entropy with respect to the mask mixture
// coefficients, evaluated at the given alpha. One forward and one backward
// pass regardless of the number of groups.
inline std::vector<double> alpha_gradient(const SuperNetwork& net, const std::vector<BinaryMask>& masks,
                                          const std::vector<double>& alpha, const Batch& batch,
                                          PassCounts* passes = nullptr, double* entropy_out = nullptr) {
  detail::check_group_masks(net, masks);
  if (alpha.size() != masks.size()) throw std::invalid_argument("alpha_gradient: alpha size mismatch");
  batch.validate(net.spec().input_dim(), net.spec().output_dim());
  const NetSpec& spec = net.spec();
  const LayerVec eff = superposed_weights(net.weights(), masks, alpha);
  const detail::Trace t = detail::forward_trace(spec, eff, batch);
  const Matrix probs =
      detail::softmax_rows(t.pre[static_cast<std::size_t>(spec.num_layers()) - 1], batch.rows, spec.output_dim());
  if (passes) ++passes->forwards;
  if (entropy_out) *entropy_out = mean_entropy(probs);
  const LayerVec geff = detail::backprop_eff(spec, eff, t, detail::entropy_output_delta(probs), batch.rows);
  if (passes) ++passes->backwards;
  std::vector<double> grad(masks.size(), 0.0);
  for (std::size_t l = 0; l < geff.size(); ++l) {
    const auto& w = net.weights()[l];
    for (std::size_t e = 0; e < geff[l].size(); ++e) {
      const double gw = geff[l][e] * w[e];
      if (gw == 0.0) continue;
      for (std::size_t q = 0; q < masks.size(); ++q)
        if (masks[q].layers[l][e]) grad[q] += gw;
    }
  }
  return grad;
}

// Superpose all group masks uniformly and pick the group whose coefficient
// would most steeply reduce the output entropy. Exactly one forward plus one
// backward pass.
inline int oneshot_group(const SuperNetwork& net, const std::vector<BinaryMask>& masks, const Batch& batch,
                         PassCounts* passes = nullptr, std::vector<double>* grad_out = nullptr) {
  detail::check_group_masks(net, masks);
  const std::vector<double> alpha(masks.size(), 1.0 / static_cast<double>(masks.size()));
  const std::vector<double> grad = alpha_gradient(net, masks, alpha, batch, passes);
  int best = 0;
  for (std::size_t q = 1; q < grad.size(); ++q)
    if (-grad[q] > -grad[static_cast<std::size_t>(best)]) best = static_cast<int>(q);
  if (grad_out) *grad_out = grad;
  return best;
}

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// Halving variant: keep the groups on the entropy-reducing side of the median
// gradient, renormalize the survivors' coefficients, repeat. At most
// ceil(log2 Q) + 1 gradient evaluations.
inline int binary_search_group(const SuperNetwork& net, const std::vector<BinaryMask>& masks, const Batch& batch,
                               PassCounts* passes = nullptr) {
  detail::check_group_masks(net, masks);
  const int Q = static_cast<int>(masks.size());
  if (Q == 1) return 0;
  std::vector<std::uint8_t> alive(static_cast<std::size_t>(Q), 1);
  int count = Q;
  while (count > 1) {
    std::vector<double> alpha(static_cast<std::size_t>(Q), 0.0);
    for (int q = 0; q < Q; ++q)
      if (alive[static_cast<std::size_t>(q)]) alpha[static_cast<std::size_t>(q)] = 1.0 / count;
    const std::vector<double> grad = alpha_gradient(net, masks, alpha, batch, passes);
    std::vector<double> alive_grads;
    for (int q = 0; q < Q; ++q)
      if (alive[static_cast<std::size_t>(q)]) alive_grads.push_back(grad[static_cast<std::size_t>(q)]);
    const double med = detail::median(alive_grads);
    const std::vector<std::uint8_t> before = alive;
    int survivors = 0;
    for (int q = 0; q < Q; ++q) {
      if (!alive[static_cast<std::size_t>(q)]) continue;
      if (grad[static_cast<std::size_t>(q)] >= med) {
        alive[static_cast<std::size_t>(q)] = 0;
      } else {
        ++survivors;
      }
    }
    if (survivors == 0) {
      // Flat gradient across the candidates; keep the steepest-descent one.
      int keep = -1;
      for (int q = 0; q < Q; ++q)
        if (before[static_cast<std::size_t>(q)] &&
            (keep < 0 || grad[static_cast<std::size_t>(q)] < grad[static_cast<std::size_t>(keep)]))
          keep = q;
      for (int q = 0; q < Q; ++q) alive[static_cast<std::size_t>(q)] = (q == keep) ? 1 : 0;
      survivors = 1;
    }
    count = survivors;
  }
  for (int q = 0; q < Q; ++q)
    if (alive[static_cast<std::size_t>(q)]) return q;
  throw std::logic_error("binary_search_group: no survivor");
}

// ---------------------------------------------------------------------------
// Dynamic group creation.

inline bool should_create_group_lowest_loss(const std::vector<double>& losses, double tau) {
  if (losses.empty()) throw std::invalid_argument("should_create_group_lowest_loss: no losses");
  return *std::min_element(losses.begin(), losses.end()) >= tau;
}

// No group stands out when the softmax over negated coefficients is nearly
// uniform: max propensity below (1 + eps) / Q.
inline bool should_create_group_oneshot(const std::vector<double>& grad, double eps) {
  if (grad.empty()) throw std::invalid_argument("should_create_group_oneshot: no gradient");
  if (eps < 0.0) throw std::invalid_argument("should_create_group_oneshot: eps must be nonnegative");
  const std::size_t Q = grad.size();
  double zmax = -grad[0];
  for (std::size_t q = 1; q < Q; ++q) zmax = std::max(zmax, -grad[q]);
  double sum = 0.0;
  double best = 0.0;
  for (std::size_t q = 0; q < Q; ++q) {
    const double e = std::exp(-grad[q] - zmax);
    sum += e;
    best = std::max(best, e);
  }
  return best / sum < (1.0 + eps) / static_cast<double>(Q);
}

// A new group inherits the vote over all existing group rankings.
inline Ranking knowledge_transfer_init(const std::vector<Ranking>& existing) { return vote(existing); }

// Server-side group state: one ranking and its mask per group. Mutations are
// serialized at the server between rounds.
class GroupRegistry {
 public:
  GroupRegistry() = default;
  explicit GroupRegistry(double k_percent) : k_percent_(k_percent) {}

  int size() const { return static_cast<int>(rankings_.size()); }
  double k_percent() const { return k_percent_; }

  int add_group(Ranking ranking) {
    masks_.push_back(ranking_to_mask(ranking, k_percent_));
    rankings_.push_back(std::move(ranking));
    return size() - 1;
  }

  // Knowledge transfer: the new group starts from the vote over every
  // existing group's ranking.
  int create_group() {
    if (rankings_.empty()) throw std::logic_error("GroupRegistry::create_group: no existing groups");
    return add_group(knowledge_transfer_init(rankings_));
  }

  void set_ranking(int q, Ranking ranking) {
    masks_.at(static_cast<std::size_t>(q)) = ranking_to_mask(ranking, k_percent_);
    rankings_.at(static_cast<std::size_t>(q)) = std::move(ranking);
  }

  const Ranking& ranking(int q) const { return rankings_.at(static_cast<std::size_t>(q)); }
  const BinaryMask& mask(int q) const { return masks_.at(static_cast<std::size_t>(q)); }
  const std::vector<Ranking>& rankings() const { return rankings_; }
  const std::vector<BinaryMask>& masks() const { return masks_; }

 private:
  double k_percent_ = 50.0;
  std::vector<Ranking> rankings_;
  std::vector<BinaryMask> masks_;
};

// ---------------------------------------------------------------------------
// Server-side clustering of submitted rankings (k-means under the footrule
// distance, centroids recomputed by vote).

struct ClusterAssignment {
  std::vector<int> group_of;
  std::vector<Ranking> centroids;
};

inline ClusterAssignment rank_clustering(const std::vector<Ranking>& rankings, int n_clusters, int iters,
                                         std::uint64_t seed) {
  const int N = static_cast<int>(rankings.size());
  if (n_clusters < 1 || n_clusters > N)
    throw std::invalid_argument("rank_clustering: need 1 <= n_clusters <= number of rankings");
  if (iters < 1) throw std::invalid_argument("rank_clustering: iters must be >= 1");
  for (const auto& r : rankings)
    if (!same_shape(r, rankings.front())) throw std::invalid_argument("rank_clustering: shape mismatch");

  ClusterAssignment out;
  Rng rng(seed, 0x6B6D65616E73ULL);
  const std::vector<int> first = rng.sample_without_replacement(n_clusters, N);
  out.centroids.reserve(static_cast<std::size_t>(n_clusters));
  for (int idx : first) out.centroids.push_back(rankings[static_cast<std::size_t>(idx)]);
  out.group_of.assign(static_cast<std::size_t>(N), 0);

  auto assign_all = [&]() {
    for (int i = 0; i < N; ++i) {
      int best = 0;
      long long best_d = spearman_distance(rankings[static_cast<std::size_t>(i)], out.centroids[0]);
      for (int q = 1; q < n_clusters; ++q) {
        const long long d = spearman_distance(rankings[static_cast<std::size_t>(i)],
                                              out.centroids[static_cast<std::size_t>(q)]);
        if (d < best_d) {
          best = q;
          best_d = d;
        }
      }
      out.group_of[static_cast<std::size_t>(i)] = best;
    }
  };

  for (int it = 0; it < iters; ++it) {
    assign_all();
    // Re-seed empty clusters with the member farthest from its centroid.
    std::vector<std::uint8_t> moved(static_cast<std::size_t>(N), 0);
    for (int q = 0; q < n_clusters; ++q) {
      bool empty = true;
      for (int i = 0; i < N && empty; ++i)
        if (out.group_of[static_cast<std::size_t>(i)] == q) empty = false;
      if (!empty) continue;
      int far = -1;
      long long far_d = -1;
      for (int i = 0; i < N; ++i) {
        if (moved[static_cast<std::size_t>(i)]) continue;
        const long long d = spearman_distance(
            rankings[static_cast<std::size_t>(i)],
            out.centroids[static_cast<std::size_t>(out.group_of[static_cast<std::size_t>(i)])]);
        if (d > far_d) {
          far = i;
          far_d = d;
        }
      }
      if (far >= 0) {
        out.group_of[static_cast<std::size_t>(far)] = q;
        moved[static_cast<std::size_t>(far)] = 1;
      }
    }
    for (int q = 0; q < n_clusters; ++q) {
      std::vector<Ranking> members;
      for (int i = 0; i < N; ++i)
        if (out.group_of[static_cast<std::size_t>(i)] == q) members.push_back(rankings[static_cast<std::size_t>(i)]);
      if (!members.empty()) out.centroids[static_cast<std::size_t>(q)] = vote(members);
    }
  }
  assign_all();
  return out;
}

}  // namespace e2fl
