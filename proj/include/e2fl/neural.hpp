#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "e2fl/rng.hpp"

namespace e2fl {

// Thrown when training produces non-finite numbers; callers map this to a
// nonzero process exit instead of writing garbage output.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One vector<double> per weight layer. Edge (i -> j) of layer l lives at
// flat index i * fan_out(l) + j.
using LayerVec = std::vector<std::vector<double>>;
using MaskLayers = std::vector<std::vector<std::uint8_t>>;

enum class HiddenActivation { relu };

struct NetSpec {
  std::vector<int> layer_sizes;
  HiddenActivation activation = HiddenActivation::relu;

  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int fan_in(int layer) const { return layer_sizes[static_cast<std::size_t>(layer)]; }
  int fan_out(int layer) const { return layer_sizes[static_cast<std::size_t>(layer) + 1]; }
  int edge_count(int layer) const { return fan_in(layer) * fan_out(layer); }

  long long total_edges() const {
    long long total = 0;
    for (int l = 0; l < num_layers(); ++l) total += edge_count(l);
    return total;
  }

  void validate() const {
    if (layer_sizes.size() < 2) throw std::invalid_argument("NetSpec: need at least two layer sizes");
    for (int s : layer_sizes)
      if (s <= 0) throw std::invalid_argument("NetSpec: layer sizes must be positive");
  }
};

// Row-major sample matrix plus integer labels.
struct Batch {
  int rows = 0;
  int cols = 0;
  std::vector<double> x;
  std::vector<int> y;

  double at(int r, int c) const { return x[static_cast<std::size_t>(r) * cols + c]; }

  void validate(int input_dim, int n_classes) const {
    if (rows <= 0) throw std::invalid_argument("Batch: empty batch");
    if (cols != input_dim) throw std::invalid_argument("Batch: feature width does not match net input");
    if (x.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
      throw std::invalid_argument("Batch: feature buffer size mismatch");
    if (y.size() != static_cast<std::size_t>(rows)) throw std::invalid_argument("Batch: label count mismatch");
    for (int label : y)
      if (label < 0 || label >= n_classes) throw std::invalid_argument("Batch: label out of range");
  }

  // Row subset, in the given order.
  Batch select(const std::vector<int>& idx) const {
    Batch out;
    out.rows = static_cast<int>(idx.size());
    out.cols = cols;
    out.x.resize(static_cast<std::size_t>(out.rows) * cols);
    out.y.resize(static_cast<std::size_t>(out.rows));
    for (int r = 0; r < out.rows; ++r) {
      const int src = idx[static_cast<std::size_t>(r)];
      std::memcpy(&out.x[static_cast<std::size_t>(r) * cols], &x[static_cast<std::size_t>(src) * cols],
                  sizeof(double) * static_cast<std::size_t>(cols));
      out.y[static_cast<std::size_t>(r)] = y[static_cast<std::size_t>(src)];
    }
    return out;
  }
};

// Per-layer 0/1 edge selection. k_percent records the density it was built
// with; the bits are authoritative.
struct BinaryMask {
  MaskLayers layers;
  double k_percent = 100.0;

  bool empty() const { return layers.empty(); }
};

enum class GradKind { weights, scores };

struct GradientSet {
  GradKind kind = GradKind::weights;
  LayerVec layers;
};

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

inline std::uint64_t checksum(const LayerVec& layers) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (const auto& layer : layers)
    for (double value : layer) {
      std::uint64_t bits;
      std::memcpy(&bits, &value, sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFF;
        h *= 0x100000001B3ULL;
      }
    }
  return h;
}

inline LayerVec initial_weights(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  LayerVec weights(static_cast<std::size_t>(spec.num_layers()));
  for (int l = 0; l < spec.num_layers(); ++l) {
    Rng rng(seed, 2 * static_cast<std::uint64_t>(l));
    const double bound = std::sqrt(6.0 / spec.fan_in(l));
    auto& layer = weights[static_cast<std::size_t>(l)];
    layer.resize(static_cast<std::size_t>(spec.edge_count(l)));
    for (double& w : layer) w = rng.uniform(-bound, bound);
  }
  return weights;
}

inline LayerVec initial_scores(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  LayerVec scores(static_cast<std::size_t>(spec.num_layers()));
  for (int l = 0; l < spec.num_layers(); ++l) {
    Rng rng(seed, 2 * static_cast<std::uint64_t>(l) + 1);
    auto& layer = scores[static_cast<std::size_t>(l)];
    layer.resize(static_cast<std::size_t>(spec.edge_count(l)));
    for (double& s : layer) s = rng.uniform_open();
  }
  return scores;
}

// Frozen random weights plus trainable scores, both reconstructible from
// (spec, seed). Weights are const-only after construction.
class SuperNetwork {
 public:
  SuperNetwork() = default;

  SuperNetwork(NetSpec spec, std::uint64_t seed)
      : spec_(std::move(spec)),
        seed_(seed),
        weights_(initial_weights(spec_, seed)),
        scores_(initial_scores(spec_, seed)) {}

  const NetSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const LayerVec& weights() const { return weights_; }
  LayerVec& scores() { return scores_; }
  const LayerVec& scores() const { return scores_; }

  void reset_scores() { scores_ = initial_scores(spec_, seed_); }

  std::uint64_t weight_checksum() const { return checksum(weights_); }

 private:
  NetSpec spec_;
  std::uint64_t seed_ = 0;
  LayerVec weights_;
  LayerVec scores_;
};

inline SuperNetwork init_supernetwork(const NetSpec& spec, std::uint64_t seed) {
  return SuperNetwork(spec, seed);
}

namespace detail {

inline void check_mask_shape(const NetSpec& spec, const BinaryMask& mask) {
  if (mask.layers.size() != static_cast<std::size_t>(spec.num_layers()))
    throw std::invalid_argument("mask layer count does not match net");
  for (int l = 0; l < spec.num_layers(); ++l)
    if (mask.layers[static_cast<std::size_t>(l)].size() != static_cast<std::size_t>(spec.edge_count(l)))
      throw std::invalid_argument("mask layer size does not match net");
}

struct Trace {
  // acts[l]: input to layer l after activation (acts[0] = batch features).
  std::vector<std::vector<double>> acts;
  // pre[l]: pre-activation output of layer l.
  std::vector<std::vector<double>> pre;
};

inline Trace forward_trace(const NetSpec& spec, const LayerVec& eff, const Batch& batch) {
  const int L = spec.num_layers();
  Trace t;
  t.acts.resize(static_cast<std::size_t>(L));
  t.pre.resize(static_cast<std::size_t>(L));
  t.acts[0] = batch.x;
  for (int l = 0; l < L; ++l) {
    const int in = spec.fan_in(l);
    const int out = spec.fan_out(l);
    const auto& w = eff[static_cast<std::size_t>(l)];
    const auto& a = t.acts[static_cast<std::size_t>(l)];
    auto& z = t.pre[static_cast<std::size_t>(l)];
    z.assign(static_cast<std::size_t>(batch.rows) * out, 0.0);
    for (int r = 0; r < batch.rows; ++r) {
      const double* arow = &a[static_cast<std::size_t>(r) * in];
      double* zrow = &z[static_cast<std::size_t>(r) * out];
      for (int i = 0; i < in; ++i) {
        const double ai = arow[i];
        if (ai == 0.0) continue;
        const double* wrow = &w[static_cast<std::size_t>(i) * out];
        for (int j = 0; j < out; ++j) zrow[j] += ai * wrow[j];
      }
    }
    if (l + 1 < L) {
      auto& next = t.acts[static_cast<std::size_t>(l) + 1];
      next.resize(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) next[i] = z[i] > 0.0 ? z[i] : 0.0;
    }
  }
  return t;
}

inline Matrix softmax_rows(const std::vector<double>& logits, int rows, int cols) {
  Matrix p(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const double* zrow = &logits[static_cast<std::size_t>(r) * cols];
    double zmax = zrow[0];
    for (int c = 1; c < cols; ++c) zmax = std::max(zmax, zrow[c]);
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double e = std::exp(zrow[c] - zmax);
      p.at(r, c) = e;
      sum += e;
    }
    for (int c = 0; c < cols; ++c) p.at(r, c) /= sum;
  }
  return p;
}

// Backpropagate an output delta (d objective / d logits, rows x out) down the
// trace. Returns per-layer gradients w.r.t. the effective weight of each edge,
// with no mask gating applied.
inline LayerVec backprop_eff(const NetSpec& spec, const LayerVec& eff, const Trace& t, std::vector<double> dz,
                             int rows) {
  const int L = spec.num_layers();
  LayerVec geff(static_cast<std::size_t>(L));
  for (int l = L - 1; l >= 0; --l) {
    const int in = spec.fan_in(l);
    const int out = spec.fan_out(l);
    const auto& a = t.acts[static_cast<std::size_t>(l)];
    auto& g = geff[static_cast<std::size_t>(l)];
    g.assign(static_cast<std::size_t>(spec.edge_count(l)), 0.0);
    for (int r = 0; r < rows; ++r) {
      const double* arow = &a[static_cast<std::size_t>(r) * in];
      const double* drow = &dz[static_cast<std::size_t>(r) * out];
      for (int i = 0; i < in; ++i) {
        const double ai = arow[i];
        if (ai == 0.0) continue;
        double* grow = &g[static_cast<std::size_t>(i) * out];
        for (int j = 0; j < out; ++j) grow[j] += ai * drow[j];
      }
    }
    if (l == 0) break;
    const auto& w = eff[static_cast<std::size_t>(l)];
    const auto& zprev = t.pre[static_cast<std::size_t>(l) - 1];
    std::vector<double> dprev(static_cast<std::size_t>(rows) * in, 0.0);
    for (int r = 0; r < rows; ++r) {
      const double* drow = &dz[static_cast<std::size_t>(r) * out];
      double* prow = &dprev[static_cast<std::size_t>(r) * in];
      const double* zrow = &zprev[static_cast<std::size_t>(r) * in];
      for (int i = 0; i < in; ++i) {
        if (zrow[i] <= 0.0) continue;  // relu gate
        const double* wrow = &w[static_cast<std::size_t>(i) * out];
        double acc = 0.0;
        for (int j = 0; j < out; ++j) acc += wrow[j] * drow[j];
        prow[i] = acc;
      }
    }
    dz = std::move(dprev);
  }
  return geff;
}

}  // namespace detail

inline LayerVec masked_weights(const LayerVec& weights, const BinaryMask& mask) {
  LayerVec eff = weights;
  for (std::size_t l = 0; l < eff.size(); ++l) {
    const auto& bits = mask.layers[l];
    for (std::size_t e = 0; e < eff[l].size(); ++e)
      if (!bits[e]) eff[l][e] = 0.0;
  }
  return eff;
}

// Weighted superposition of masks: eff[e] = w[e] * sum_q alpha[q] * M_q[e].
inline LayerVec superposed_weights(const LayerVec& weights, const std::vector<BinaryMask>& masks,
                                   const std::vector<double>& alpha) {
  if (masks.size() != alpha.size()) throw std::invalid_argument("superposed_weights: size mismatch");
  LayerVec eff(weights.size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    eff[l].assign(weights[l].size(), 0.0);
    for (std::size_t e = 0; e < weights[l].size(); ++e) {
      double coeff = 0.0;
      for (std::size_t q = 0; q < masks.size(); ++q)
        if (masks[q].layers[l][e]) coeff += alpha[q];
      eff[l][e] = weights[l][e] * coeff;
    }
  }
  return eff;
}

// Dense forward with explicit weights; softmax over the output layer.
inline Matrix forward_dense(const NetSpec& spec, const LayerVec& weights, const Batch& batch) {
  spec.validate();
  batch.validate(spec.input_dim(), spec.output_dim());
  detail::Trace t = detail::forward_trace(spec, weights, batch);
  return detail::softmax_rows(t.pre[static_cast<std::size_t>(spec.num_layers()) - 1], batch.rows, spec.output_dim());
}

inline Matrix forward(const SuperNetwork& net, const BinaryMask& mask, const Batch& batch) {
  detail::check_mask_shape(net.spec(), mask);
  return forward_dense(net.spec(), masked_weights(net.weights(), mask), batch);
}

inline Matrix forward(const SuperNetwork& net, const Batch& batch) {
  return forward_dense(net.spec(), net.weights(), batch);
}

inline double mean_cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
  if (probs.rows != static_cast<int>(labels.size())) throw std::invalid_argument("cross entropy: label count mismatch");
  double total = 0.0;
  for (int r = 0; r < probs.rows; ++r) total -= std::log(probs.at(r, labels[static_cast<std::size_t>(r)]) + 1e-12);
  return total / probs.rows;
}

// Mean per-row entropy of a probability matrix (nats).
inline double mean_entropy(const Matrix& probs) {
  double total = 0.0;
  for (int r = 0; r < probs.rows; ++r) {
    for (int c = 0; c < probs.cols; ++c) {
      const double p = probs.at(r, c);
      if (p < 0.0) throw std::invalid_argument("mean_entropy: negative probability");
      total -= p * std::log(p + 1e-12);
    }
  }
  return probs.rows > 0 ? total / probs.rows : 0.0;
}

// Fraction of rows whose argmax (ties to the lowest class index) matches the label.
inline double accuracy(const Matrix& probs, const std::vector<int>& labels) {
  if (probs.rows != static_cast<int>(labels.size())) throw std::invalid_argument("accuracy: label count mismatch");
  int correct = 0;
  for (int r = 0; r < probs.rows; ++r) {
    int best = 0;
    for (int c = 1; c < probs.cols; ++c)
      if (probs.at(r, c) > probs.at(r, best)) best = c;
    if (best == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / probs.rows;
}

namespace detail {

// d(mean cross entropy)/d logits.
inline std::vector<double> ce_output_delta(const Matrix& probs, const std::vector<int>& labels) {
  std::vector<double> dz(probs.v);
  for (int r = 0; r < probs.rows; ++r) dz[static_cast<std::size_t>(r) * probs.cols + labels[static_cast<std::size_t>(r)]] -= 1.0;
  for (double& d : dz) d /= probs.rows;
  return dz;
}

// d(mean entropy)/d logits = -p * (log p + H_row) / rows.
inline std::vector<double> entropy_output_delta(const Matrix& probs) {
  std::vector<double> dz(static_cast<std::size_t>(probs.rows) * probs.cols);
  for (int r = 0; r < probs.rows; ++r) {
    double hrow = 0.0;
    for (int c = 0; c < probs.cols; ++c) {
      const double p = probs.at(r, c);
      hrow -= p * std::log(p + 1e-12);
    }
    for (int c = 0; c < probs.cols; ++c) {
      const double p = probs.at(r, c);
      dz[static_cast<std::size_t>(r) * probs.cols + c] = -p * (std::log(p + 1e-12) + hrow) / probs.rows;
    }
  }
  return dz;
}

}  // namespace detail

struct BackwardResult {
  double loss = 0.0;
  GradientSet weight_grads;  // gated by the mask
  GradientSet score_grads;   // straight-through: d loss / d effective weight, times the frozen weight
};

// Masked forward + backward for the mean cross entropy. Weight gradients are
// restricted to surviving edges; score gradients bypass the mask so every
// edge keeps receiving a learning signal.
inline BackwardResult backward(const SuperNetwork& net, const BinaryMask& mask, const Batch& batch) {
  const NetSpec& spec = net.spec();
  detail::check_mask_shape(spec, mask);
  batch.validate(spec.input_dim(), spec.output_dim());
  const LayerVec eff = masked_weights(net.weights(), mask);
  detail::Trace t = detail::forward_trace(spec, eff, batch);
  const Matrix probs =
      detail::softmax_rows(t.pre[static_cast<std::size_t>(spec.num_layers()) - 1], batch.rows, spec.output_dim());
  BackwardResult out;
  out.loss = mean_cross_entropy(probs, batch.y);
  LayerVec geff = detail::backprop_eff(spec, eff, t, detail::ce_output_delta(probs, batch.y), batch.rows);
  out.weight_grads.kind = GradKind::weights;
  out.score_grads.kind = GradKind::scores;
  out.weight_grads.layers.resize(geff.size());
  out.score_grads.layers.resize(geff.size());
  for (std::size_t l = 0; l < geff.size(); ++l) {
    const auto& bits = mask.layers[l];
    const auto& w = net.weights()[l];
    auto& wg = out.weight_grads.layers[l];
    auto& sg = out.score_grads.layers[l];
    wg.resize(geff[l].size());
    sg.resize(geff[l].size());
    for (std::size_t e = 0; e < geff[l].size(); ++e) {
      wg[e] = bits[e] ? geff[l][e] : 0.0;
      sg[e] = geff[l][e] * w[e];
    }
  }
  return out;
}

struct DenseBackward {
  double loss = 0.0;
  LayerVec grads;
};

inline DenseBackward backward_dense(const NetSpec& spec, const LayerVec& weights, const Batch& batch) {
  spec.validate();
  batch.validate(spec.input_dim(), spec.output_dim());
  detail::Trace t = detail::forward_trace(spec, weights, batch);
  const Matrix probs =
      detail::softmax_rows(t.pre[static_cast<std::size_t>(spec.num_layers()) - 1], batch.rows, spec.output_dim());
  DenseBackward out;
  out.loss = mean_cross_entropy(probs, batch.y);
  out.grads = detail::backprop_eff(spec, weights, t, detail::ce_output_delta(probs, batch.y), batch.rows);
  return out;
}

// SGD with classic momentum; weight decay is folded into the gradient:
// v = mu*v + g + wd*p; p -= lr*v.
inline void sgd_step(LayerVec& params, const LayerVec& grads, LayerVec& velocity, double lr, double momentum,
                     double weight_decay) {
  if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: shape mismatch");
  if (velocity.size() != params.size()) {
    velocity.resize(params.size());
    for (std::size_t l = 0; l < params.size(); ++l) velocity[l].assign(params[l].size(), 0.0);
  }
  for (std::size_t l = 0; l < params.size(); ++l) {
    if (params[l].size() != grads[l].size()) throw std::invalid_argument("sgd_step: layer shape mismatch");
    for (std::size_t e = 0; e < params[l].size(); ++e) {
      const double g = grads[l][e];
      if (!std::isfinite(g)) throw DivergenceError("sgd_step: non-finite gradient");
      velocity[l][e] = momentum * velocity[l][e] + g + weight_decay * params[l][e];
      params[l][e] -= lr * velocity[l][e];
    }
  }
}

}  // namespace e2fl
