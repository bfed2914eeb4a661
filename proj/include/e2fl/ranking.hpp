#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "e2fl/neural.hpp"

namespace e2fl {

// Per-layer permutation of edge indices, worst edge first. layers[l][i] is
// the edge holding rank i, so the top-k% live at the tail.
struct Ranking {
  std::vector<std::vector<int>> layers;

  bool empty() const { return layers.empty(); }
  bool operator==(const Ranking&) const = default;
};

// Indices that sort `values` ascending; equal values keep ascending index
// order. Rejects non-finite input so rank comparisons stay total.
inline std::vector<int> argsort(const std::vector<double>& values) {
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("argsort: non-finite value");
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return values[static_cast<std::size_t>(a)] < values[static_cast<std::size_t>(b)]; });
  return idx;
}

inline bool is_permutation_vector(const std::vector<int>& perm) {
  std::vector<std::uint8_t> seen(perm.size(), 0);
  for (int p : perm) {
    if (p < 0 || p >= static_cast<int>(perm.size()) || seen[static_cast<std::size_t>(p)]) return false;
    seen[static_cast<std::size_t>(p)] = 1;
  }
  return true;
}

// pos[edge] = rank of that edge; the reputation of an edge under one voter.
inline std::vector<int> inverse_permutation(const std::vector<int>& perm) {
  if (!is_permutation_vector(perm)) throw std::invalid_argument("inverse_permutation: not a permutation");
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

inline bool is_valid_ranking(const Ranking& r) {
  if (r.layers.empty()) return false;
  for (const auto& layer : r.layers)
    if (layer.empty() || !is_permutation_vector(layer)) return false;
  return true;
}

inline bool same_shape(const Ranking& a, const Ranking& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    if (a.layers[l].size() != b.layers[l].size()) return false;
  return true;
}

inline Ranking ranking_from_scores(const LayerVec& scores) {
  Ranking r;
  r.layers.reserve(scores.size());
  for (const auto& layer : scores) r.layers.push_back(argsort(layer));
  return r;
}

// Reassign the multiset of scores so edge ranking[i] gets the i-th smallest
// score. With distinct scores, argsort(result) == ranking.
inline LayerVec reorder_scores(const LayerVec& scores, const Ranking& ranking) {
  if (scores.size() != ranking.layers.size()) throw std::invalid_argument("reorder_scores: layer count mismatch");
  LayerVec out(scores.size());
  for (std::size_t l = 0; l < scores.size(); ++l) {
    const auto& perm = ranking.layers[l];
    if (perm.size() != scores[l].size()) throw std::invalid_argument("reorder_scores: layer size mismatch");
    if (!is_permutation_vector(perm)) throw std::invalid_argument("reorder_scores: invalid ranking");
    std::vector<double> sorted = scores[l];
    std::sort(sorted.begin(), sorted.end());
    out[l].resize(sorted.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out[l][static_cast<std::size_t>(perm[i])] = sorted[i];
  }
  return out;
}

namespace detail {

inline std::vector<int> argsort_ll(const std::vector<long long>& values) {
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return values[static_cast<std::size_t>(a)] < values[static_cast<std::size_t>(b)]; });
  return idx;
}

}  // namespace detail

// Majority vote over rankings: each voter grants edge e a reputation equal to
// e's position in that voter's ranking; edges are re-ranked by total
// reputation, ties broken toward the lower edge index. Order of voters never
// matters and every voter counts once.
inline Ranking vote(const std::vector<Ranking>& rankings) {
  if (rankings.empty()) throw std::invalid_argument("vote: empty collection");
  for (const auto& r : rankings) {
    if (!same_shape(r, rankings.front())) throw std::invalid_argument("vote: shape mismatch");
    if (!is_valid_ranking(r)) throw std::invalid_argument("vote: invalid ranking");
  }
  Ranking out;
  out.layers.resize(rankings.front().layers.size());
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    const std::size_t d = rankings.front().layers[l].size();
    std::vector<long long> reputation(d, 0);
    for (const auto& r : rankings) {
      const auto inv = inverse_permutation(r.layers[l]);
      for (std::size_t e = 0; e < d; ++e) reputation[e] += inv[e];
    }
    out.layers[l] = detail::argsort_ll(reputation);
  }
  return out;
}

// Banker's rounding for nonnegative v.
inline long long round_half_even(double v) {
  const double f = std::floor(v);
  const double frac = v - f;
  const long long base = static_cast<long long>(f);
  if (frac > 0.5) return base + 1;
  if (frac < 0.5) return base;
  return (base % 2 == 0) ? base : base + 1;
}

// Select the top k% of each layer by rank. Per layer, exactly
// max(1, round_half_even(k/100 * d)) bits are set.
inline BinaryMask ranking_to_mask(const Ranking& ranking, double k_percent) {
  if (!(k_percent > 0.0) || k_percent > 100.0)
    throw std::invalid_argument("ranking_to_mask: k_percent must be in (0, 100]");
  if (!is_valid_ranking(ranking)) throw std::invalid_argument("ranking_to_mask: invalid ranking");
  BinaryMask mask;
  mask.k_percent = k_percent;
  mask.layers.resize(ranking.layers.size());
  for (std::size_t l = 0; l < ranking.layers.size(); ++l) {
    const auto& perm = ranking.layers[l];
    const long long d = static_cast<long long>(perm.size());
    const long long keep = std::max<long long>(1, round_half_even(k_percent / 100.0 * static_cast<double>(d)));
    auto& bits = mask.layers[l];
    bits.assign(perm.size(), 0);
    for (long long i = d - keep; i < d; ++i) bits[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = 1;
  }
  return mask;
}

// Footrule distance between two rankings: sum over edges of |rank_a - rank_b|.
inline long long spearman_distance(const Ranking& a, const Ranking& b) {
  if (!same_shape(a, b)) throw std::invalid_argument("spearman_distance: shape mismatch");
  long long total = 0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto pa = inverse_permutation(a.layers[l]);
    const auto pb = inverse_permutation(b.layers[l]);
    for (std::size_t e = 0; e < pa.size(); ++e) total += std::llabs(static_cast<long long>(pa[e]) - pb[e]);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Wire size accounting.

enum class RankCoding { index, factorial };

struct WireSizeModel {
  RankCoding coding = RankCoding::factorial;
  int float_bits = 32;
};

inline long long ceil_log2(long long d) {
  if (d <= 1) return 0;
  return static_cast<long long>(std::bit_width(static_cast<std::uint64_t>(d - 1)));
}

// Bits to address one of d! permutations. lgamma carries ~1e-15 relative
// error, so nudge before ceil to keep exact powers exact.
inline long long ceil_log2_factorial(long long d) {
  if (d <= 1) return 0;
  const double bits = std::lgamma(static_cast<double>(d) + 1.0) / 0.6931471805599453;
  return static_cast<long long>(std::ceil(bits - 1e-6));
}

// Bits to transmit one layer's ranking of d edges; at least one bit so every
// layer occupies the wire.
inline long long ranking_bits(long long d, RankCoding coding) {
  if (d <= 0) throw std::invalid_argument("ranking_bits: d must be positive");
  if (coding == RankCoding::index) return d * std::max<long long>(1, ceil_log2(d));
  return std::max<long long>(1, ceil_log2_factorial(d));
}

struct WireSizes {
  long long ranking_bits_total = 0;  // one full ranking, all layers
  long long mask_bits_total = 0;     // one full mask, all layers
  long long upload_bits = 0;         // rank method, per client per round
  long long download_bits = 0;       // global ranking + one mask per group
  long long dense_bits = 0;          // float weights, per direction
  double mask_float_ratio = 0.0;
};

// Core accounting over explicit per-layer edge counts, so non-FC topologies
// (conv stacks etc.) can be costed without a NetSpec.
inline WireSizes wire_sizes(const std::vector<long long>& layer_edge_counts, const WireSizeModel& model,
                            int n_groups) {
  if (layer_edge_counts.empty()) throw std::invalid_argument("wire_sizes: no layers");
  if (n_groups < 0) throw std::invalid_argument("wire_sizes: n_groups must be nonnegative");
  WireSizes w;
  for (long long d : layer_edge_counts) {
    if (d <= 0) throw std::invalid_argument("wire_sizes: edge counts must be positive");
    w.ranking_bits_total += ranking_bits(d, model.coding);
    w.mask_bits_total += d;
  }
  w.upload_bits = w.ranking_bits_total;
  w.download_bits = w.ranking_bits_total + static_cast<long long>(n_groups) * w.mask_bits_total;
  w.dense_bits = model.float_bits * w.mask_bits_total;
  w.mask_float_ratio = static_cast<double>(w.dense_bits) / static_cast<double>(w.mask_bits_total);
  return w;
}

inline WireSizes wire_sizes(const NetSpec& spec, const WireSizeModel& model, int n_groups) {
  spec.validate();
  std::vector<long long> counts;
  counts.reserve(static_cast<std::size_t>(spec.num_layers()));
  for (int l = 0; l < spec.num_layers(); ++l) counts.push_back(spec.edge_count(l));
  return wire_sizes(counts, model, n_groups);
}

// ---------------------------------------------------------------------------
// Byte formats. Layout (both kinds): u32 big-endian layer count, then per
// layer a u32 big-endian element count followed by an MSB-first bitstream,
// zero-padded to a byte boundary per layer. Rankings pack each index with
// max(1, ceil_log2(d)) bits; masks pack one bit per edge.

namespace detail {

class BitWriter {
 public:
  void u32(std::uint32_t v) {
    align();
    for (int s = 24; s >= 0; s -= 8) bytes_.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
  }

  void bits(std::uint64_t value, int width) {
    for (int s = width - 1; s >= 0; --s) {
      if (fill_ == 0) bytes_.push_back(0);
      bytes_.back() = static_cast<std::uint8_t>(bytes_.back() | (((value >> s) & 1) << (7 - fill_)));
      fill_ = (fill_ + 1) % 8;
    }
  }

  void align() { fill_ = 0; }

  std::vector<std::uint8_t> take() {
    align();
    return std::move(bytes_);
  }

 private:
  std::vector<std::uint8_t> bytes_;
  int fill_ = 0;
};

class BitReader {
 public:
  explicit BitReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    align_checked();
    if (pos_ + 4 > bytes_.size()) throw std::invalid_argument("byte format: truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
    return v;
  }

  std::uint64_t bits(int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      if (pos_ >= bytes_.size()) throw std::invalid_argument("byte format: truncated bitstream");
      v = (v << 1) | ((bytes_[pos_] >> (7 - fill_)) & 1);
      fill_ = (fill_ + 1) % 8;
      if (fill_ == 0) ++pos_;
    }
    return v;
  }

  // Consume padding to the next byte boundary, requiring zero bits.
  void align_checked() {
    while (fill_ != 0) {
      if ((bytes_[pos_] >> (7 - fill_)) & 1) throw std::invalid_argument("byte format: nonzero padding");
      fill_ = (fill_ + 1) % 8;
      if (fill_ == 0) ++pos_;
    }
  }

  void expect_end() {
    align_checked();
    if (pos_ != bytes_.size()) throw std::invalid_argument("byte format: trailing bytes");
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
  int fill_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_ranking(const Ranking& ranking) {
  if (!is_valid_ranking(ranking)) throw std::invalid_argument("serialize_ranking: invalid ranking");
  detail::BitWriter w;
  w.u32(static_cast<std::uint32_t>(ranking.layers.size()));
  for (const auto& layer : ranking.layers) {
    w.u32(static_cast<std::uint32_t>(layer.size()));
    const int width = static_cast<int>(std::max<long long>(1, ceil_log2(static_cast<long long>(layer.size()))));
    for (int index : layer) w.bits(static_cast<std::uint64_t>(index), width);
    w.align();
  }
  return w.take();
}

inline Ranking deserialize_ranking(const std::vector<std::uint8_t>& bytes) {
  detail::BitReader r(bytes);
  const std::uint32_t n_layers = r.u32();
  Ranking out;
  out.layers.resize(n_layers);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const std::uint32_t d = r.u32();
    const int width = static_cast<int>(std::max<long long>(1, ceil_log2(static_cast<long long>(d))));
    auto& layer = out.layers[l];
    layer.resize(d);
    for (std::uint32_t i = 0; i < d; ++i) layer[i] = static_cast<int>(r.bits(width));
    if (!is_permutation_vector(layer)) throw std::invalid_argument("deserialize_ranking: not a permutation");
  }
  r.expect_end();
  if (!is_valid_ranking(out)) throw std::invalid_argument("deserialize_ranking: invalid ranking");
  return out;
}

inline std::vector<std::uint8_t> serialize_mask(const MaskLayers& layers) {
  if (layers.empty()) throw std::invalid_argument("serialize_mask: empty mask");
  detail::BitWriter w;
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto& bits : layers) {
    w.u32(static_cast<std::uint32_t>(bits.size()));
    for (std::uint8_t b : bits) w.bits(b ? 1 : 0, 1);
    w.align();
  }
  return w.take();
}

inline MaskLayers deserialize_mask(const std::vector<std::uint8_t>& bytes) {
  detail::BitReader r(bytes);
  const std::uint32_t n_layers = r.u32();
  if (n_layers == 0) throw std::invalid_argument("deserialize_mask: empty mask");
  MaskLayers out(n_layers);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const std::uint32_t d = r.u32();
    out[l].resize(d);
    for (std::uint32_t i = 0; i < d; ++i) out[l][i] = static_cast<std::uint8_t>(r.bits(1));
  }
  r.expect_end();
  return out;
}

}  // namespace e2fl
