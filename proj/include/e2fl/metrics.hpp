#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "e2fl/ranking.hpp"

namespace e2fl {

struct LevelStats {
  double avg = 0.0;
  double worst10 = 0.0;  // mean of the bottom ceil(n/10) values
  double best10 = 0.0;   // mean of the top ceil(n/10) values
  double stddev = 0.0;   // population
  double variance = 0.0;
};

// Spread statistics shared by the user and group levels. Unit-agnostic: feed
// fractions or percentage points, the variance comes back in squared units.
inline LevelStats spread_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("spread_stats: empty input");
  LevelStats s;
  const std::size_t n = values.size();
  for (double v : values) s.avg += v;
  s.avg /= static_cast<double>(n);
  for (double v : values) s.variance += (v - s.avg) * (v - s.avg);
  s.variance /= static_cast<double>(n);
  s.stddev = std::sqrt(s.variance);
  std::sort(values.begin(), values.end());
  const std::size_t k = (n + 9) / 10;  // ceil(n/10); single extreme below 10 entries
  for (std::size_t i = 0; i < k; ++i) {
    s.worst10 += values[i];
    s.best10 += values[n - 1 - i];
  }
  s.worst10 /= static_cast<double>(k);
  s.best10 /= static_cast<double>(k);
  return s;
}

// Uniformity across individual clients.
inline LevelStats equality_stats(const std::vector<double>& per_client_acc) { return spread_stats(per_client_acc); }

// Unweighted mean per group; every group must own at least one client.
inline std::vector<double> group_mean_accuracies(const std::vector<double>& per_client_acc,
                                                 const std::vector<int>& group_of_client, int n_groups) {
  if (per_client_acc.size() != group_of_client.size())
    throw std::invalid_argument("group_mean_accuracies: size mismatch");
  if (n_groups < 1) throw std::invalid_argument("group_mean_accuracies: need at least one group");
  std::vector<double> sum(static_cast<std::size_t>(n_groups), 0.0);
  std::vector<int> count(static_cast<std::size_t>(n_groups), 0);
  for (std::size_t i = 0; i < per_client_acc.size(); ++i) {
    const int g = group_of_client[i];
    if (g < 0 || g >= n_groups) throw std::invalid_argument("group_mean_accuracies: group index out of range");
    sum[static_cast<std::size_t>(g)] += per_client_acc[i];
    ++count[static_cast<std::size_t>(g)];
  }
  std::vector<double> means(static_cast<std::size_t>(n_groups));
  for (int g = 0; g < n_groups; ++g) {
    if (count[static_cast<std::size_t>(g)] == 0) throw std::invalid_argument("group_mean_accuracies: empty group");
    means[static_cast<std::size_t>(g)] = sum[static_cast<std::size_t>(g)] / count[static_cast<std::size_t>(g)];
  }
  return means;
}

// Uniformity across groups: statistics over the unweighted group means, each
// group counted once regardless of its size.
inline LevelStats equity_stats(const std::vector<double>& per_client_acc, const std::vector<int>& group_of_client,
                               int n_groups) {
  return spread_stats(group_mean_accuracies(per_client_acc, group_of_client, n_groups));
}

namespace detail {

inline void check_binary_triplet(const std::vector<int>& pred, const std::vector<int>& labels,
                                 const std::vector<int>& attr) {
  if (pred.size() != labels.size() || pred.size() != attr.size())
    throw std::invalid_argument("fairness metric: size mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if ((pred[i] & ~1) || (labels[i] & ~1) || (attr[i] & ~1))
      throw std::invalid_argument("fairness metric: inputs must be binary");
}

}  // namespace detail

// Equal opportunity difference: TPR(A=0) - TPR(A=1). Absent (not zero) when a
// (A=a, Y=1) stratum is empty.
inline std::optional<double> eod(const std::vector<int>& pred, const std::vector<int>& labels,
                                 const std::vector<int>& attr) {
  detail::check_binary_triplet(pred, labels, attr);
  double tp[2] = {0, 0};
  double pos[2] = {0, 0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (labels[i] != 1) continue;
    pos[attr[i]] += 1;
    if (pred[i] == 1) tp[attr[i]] += 1;
  }
  if (pos[0] == 0 || pos[1] == 0) return std::nullopt;
  return tp[0] / pos[0] - tp[1] / pos[1];
}

// Discrimination index: F1(A=0) - F1(A=1) with positive class 1 and the
// convention F1 = 0 when precision + recall = 0. Absent when a stratum is empty.
inline std::optional<double> di(const std::vector<int>& pred, const std::vector<int>& labels,
                                const std::vector<int>& attr) {
  detail::check_binary_triplet(pred, labels, attr);
  double tp[2] = {0, 0}, fp[2] = {0, 0}, fn[2] = {0, 0};
  int count[2] = {0, 0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int a = attr[i];
    ++count[a];
    if (pred[i] == 1 && labels[i] == 1) tp[a] += 1;
    if (pred[i] == 1 && labels[i] == 0) fp[a] += 1;
    if (pred[i] == 0 && labels[i] == 1) fn[a] += 1;
  }
  if (count[0] == 0 || count[1] == 0) return std::nullopt;
  auto f1 = [](double tp_, double fp_, double fn_) {
    const double precision = tp_ + fp_ > 0 ? tp_ / (tp_ + fp_) : 0.0;
    const double recall = tp_ + fn_ > 0 ? tp_ / (tp_ + fn_) : 0.0;
    return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  };
  return f1(tp[0], fp[0], fn[0]) - f1(tp[1], fp[1], fn[1]);
}

struct CommTotals {
  std::uint64_t up_bytes = 0;
  std::uint64_t down_bytes = 0;
  double mask_float_ratio = 0.0;
};

inline CommTotals comm_totals(const std::vector<std::pair<std::uint64_t, std::uint64_t>>& round_bytes,
                              const WireSizes& wire) {
  CommTotals t;
  for (const auto& [up, down] : round_bytes) {
    t.up_bytes += up;
    t.down_bytes += down;
  }
  t.mask_float_ratio = wire.mask_float_ratio;
  return t;
}

// One measured round of one algorithm, ready for CSV emission. Accuracies in
// percentage points, so variances land in (pp)^2.
struct FairnessReport {
  std::vector<double> client_acc;
  std::vector<double> group_mean_acc;
  LevelStats user;
  LevelStats group;
  std::optional<double> eod_value;
  std::optional<double> di_value;
  std::uint64_t up_bytes = 0;
  std::uint64_t down_bytes = 0;
};

inline FairnessReport make_fairness_report(const std::vector<double>& client_acc_percent,
                                           const std::vector<int>& group_of_client, int n_groups,
                                           std::uint64_t up_bytes, std::uint64_t down_bytes) {
  FairnessReport r;
  r.client_acc = client_acc_percent;
  r.group_mean_acc = group_mean_accuracies(client_acc_percent, group_of_client, n_groups);
  r.user = equality_stats(client_acc_percent);
  r.group = spread_stats(r.group_mean_acc);
  r.up_bytes = up_bytes;
  r.down_bytes = down_bytes;
  return r;
}

}  // namespace e2fl
