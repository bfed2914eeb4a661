#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "e2fl/neural.hpp"
#include "e2fl/rng.hpp"

namespace e2fl {

constexpr std::uint64_t kSaltPrototype = 0x70726F746FULL;
constexpr std::uint64_t kSaltTransform = 0x7065726DULL;
constexpr std::uint64_t kSaltClient = 0x636C69656E74ULL;
constexpr std::uint64_t kSaltTabular = 0x746162ULL;
constexpr std::uint64_t kSaltDirichlet = 0x646972ULL;

// One participant: local train/test split plus its ground-truth group.
// attr carries a per-sample binary attribute for tabular data (empty otherwise).
struct ClientData {
  int id = 0;
  int group = 0;
  Batch train;
  Batch test;
  std::vector<int> train_attr;
  std::vector<int> test_attr;
};

enum class TransformKind { coordinate_permutation, planar_rotation };

// Grouped task family: one shared base task, one bijective feature transform
// per group. transform_params[g] selects the transform: for permutations,
// param 0 is the identity and any other value seeds a shuffle; for rotations
// the param is the angle in radians. Empty params derive defaults (group g
// gets param g, respectively evenly spaced angles over [0, pi/2]).
struct GroupSpec {
  std::vector<int> client_counts;
  TransformKind kind = TransformKind::coordinate_permutation;
  std::vector<double> transform_params;

  int n_groups() const { return static_cast<int>(client_counts.size()); }

  int total_clients() const {
    int total = 0;
    for (int c : client_counts) total += c;
    return total;
  }

  double param(int group) const {
    if (!transform_params.empty()) return transform_params.at(static_cast<std::size_t>(group));
    if (kind == TransformKind::coordinate_permutation) return static_cast<double>(group);
    const int n = n_groups();
    return n > 1 ? static_cast<double>(group) * 1.5707963267948966 / (n - 1) : 0.0;
  }

  void validate() const {
    if (client_counts.empty()) throw std::invalid_argument("GroupSpec: no groups");
    for (int c : client_counts)
      if (c < 1) throw std::invalid_argument("GroupSpec: client counts must be >= 1");
    if (!transform_params.empty() && transform_params.size() != client_counts.size())
      throw std::invalid_argument("GroupSpec: need one transform param per group");
  }
};

namespace detail {

inline std::vector<int> transform_permutation(std::uint64_t base_seed, double param, int dim) {
  std::vector<int> perm(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) perm[static_cast<std::size_t>(i)] = i;
  if (param != 0.0) {
    Rng rng(base_seed, mix64(kSaltTransform, static_cast<std::uint64_t>(std::llround(param))));
    rng.shuffle(perm);
  }
  return perm;
}

}  // namespace detail

// In-place bijective group transform of one feature vector.
inline void apply_transform(const GroupSpec& spec, int group, std::uint64_t base_seed, std::vector<double>& x) {
  if (spec.kind == TransformKind::coordinate_permutation) {
    const auto perm = detail::transform_permutation(base_seed, spec.param(group), static_cast<int>(x.size()));
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[static_cast<std::size_t>(perm[i])];
    x = std::move(out);
  } else {
    const double theta = spec.param(group);
    const double c = std::cos(theta), s = std::sin(theta);
    const double x0 = x[0], x1 = x[1];
    x[0] = c * x0 - s * x1;
    x[1] = s * x0 + c * x1;
  }
}

inline void apply_inverse_transform(const GroupSpec& spec, int group, std::uint64_t base_seed,
                                    std::vector<double>& x) {
  if (spec.kind == TransformKind::coordinate_permutation) {
    const auto perm = detail::transform_permutation(base_seed, spec.param(group), static_cast<int>(x.size()));
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(perm[i])] = x[i];
    x = std::move(out);
  } else {
    const double theta = -spec.param(group);
    const double c = std::cos(theta), s = std::sin(theta);
    const double x0 = x[0], x1 = x[1];
    x[0] = c * x0 - s * x1;
    x[1] = s * x0 + c * x1;
  }
}

// Unit-norm Gaussian prototype per class, shared across groups.
inline std::vector<std::vector<double>> class_prototypes(std::uint64_t base_seed, int n_classes, int feature_dim) {
  std::vector<std::vector<double>> protos(static_cast<std::size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    Rng rng(base_seed, mix64(kSaltPrototype, static_cast<std::uint64_t>(c)));
    auto& p = protos[static_cast<std::size_t>(c)];
    p.resize(static_cast<std::size_t>(feature_dim));
    double norm = 0.0;
    for (double& v : p) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    for (double& v : p) v /= norm;
  }
  return protos;
}

struct GroupedDataset {
  int feature_dim = 0;
  int n_classes = 0;
  std::vector<ClientData> clients;
};

// Shared base task (unit prototypes + isotropic noise), one bijective feature
// transform per group, i.i.d. per-client draws, 80/20 train/test split.
inline GroupedDataset make_grouped_dataset(std::uint64_t base_seed, const GroupSpec& spec, int samples_per_client,
                                           int n_classes, int feature_dim, double noise_sigma = 0.3) {
  spec.validate();
  if (feature_dim < 2) throw std::invalid_argument("make_grouped_dataset: feature_dim must be >= 2");
  if (n_classes < 2) throw std::invalid_argument("make_grouped_dataset: n_classes must be >= 2");
  if (samples_per_client < 2) throw std::invalid_argument("make_grouped_dataset: need >= 2 samples per client");
  const auto protos = class_prototypes(base_seed, n_classes, feature_dim);

  GroupedDataset out;
  out.feature_dim = feature_dim;
  out.n_classes = n_classes;
  out.clients.reserve(static_cast<std::size_t>(spec.total_clients()));
  int id = 0;
  for (int g = 0; g < spec.n_groups(); ++g) {
    for (int k = 0; k < spec.client_counts[static_cast<std::size_t>(g)]; ++k, ++id) {
      Rng rng(base_seed, mix64(kSaltClient, static_cast<std::uint64_t>(id)));
      const int n_train = std::max(1, std::min(samples_per_client - 1,
                                               static_cast<int>(std::llround(0.8 * samples_per_client))));
      ClientData client;
      client.id = id;
      client.group = g;
      for (int s = 0; s < samples_per_client; ++s) {
        const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_classes)));
        std::vector<double> x(static_cast<std::size_t>(feature_dim));
        for (int i = 0; i < feature_dim; ++i)
          x[static_cast<std::size_t>(i)] = protos[static_cast<std::size_t>(label)][static_cast<std::size_t>(i)] +
                                           noise_sigma * rng.normal();
        apply_transform(spec, g, base_seed, x);
        Batch& dst = s < n_train ? client.train : client.test;
        dst.x.insert(dst.x.end(), x.begin(), x.end());
        dst.y.push_back(label);
      }
      client.train.rows = n_train;
      client.train.cols = feature_dim;
      client.test.rows = samples_per_client - n_train;
      client.test.cols = feature_dim;
      out.clients.push_back(std::move(client));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dirichlet non-IID split of a pooled dataset.

// Index lists per client. Per class, client proportions are drawn from
// Dirichlet(alpha) and that class's samples are split by largest remainder.
// Re-draws the whole partition (up to 100 attempts) until every client owns
// at least one sample, then falls back to moving singles from the largest
// client.
inline std::vector<std::vector<int>> dirichlet_partition(const Batch& pool, int n_clients, double alpha,
                                                         std::uint64_t seed) {
  if (n_clients < 1) throw std::invalid_argument("dirichlet_partition: n_clients must be >= 1");
  if (pool.rows < n_clients) throw std::invalid_argument("dirichlet_partition: pool too small for n_clients");
  if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be positive");

  int n_classes = 0;
  for (int y : pool.y) n_classes = std::max(n_classes, y + 1);
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(n_classes));
  for (int r = 0; r < pool.rows; ++r) by_class[static_cast<std::size_t>(pool.y[static_cast<std::size_t>(r)])].push_back(r);

  Rng rng(seed, kSaltDirichlet);
  std::vector<std::vector<int>> result;
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<std::vector<int>> clients(static_cast<std::size_t>(n_clients));
    for (const auto& members : by_class) {
      if (members.empty()) continue;
      const int m = static_cast<int>(members.size());
      std::vector<double> p(static_cast<std::size_t>(n_clients));
      double total = 0.0;
      for (double& v : p) {
        v = rng.gamma(alpha);
        total += v;
      }
      std::vector<int> counts(static_cast<std::size_t>(n_clients));
      std::vector<double> frac(static_cast<std::size_t>(n_clients));
      int assigned = 0;
      for (int i = 0; i < n_clients; ++i) {
        const double ideal = p[static_cast<std::size_t>(i)] / total * m;
        counts[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(ideal));
        frac[static_cast<std::size_t>(i)] = ideal - counts[static_cast<std::size_t>(i)];
        assigned += counts[static_cast<std::size_t>(i)];
      }
      for (int left = m - assigned; left > 0; --left) {
        int best = 0;
        for (int i = 1; i < n_clients; ++i)
          if (frac[static_cast<std::size_t>(i)] > frac[static_cast<std::size_t>(best)]) best = i;
        ++counts[static_cast<std::size_t>(best)];
        frac[static_cast<std::size_t>(best)] = -1.0;
      }
      int cursor = 0;
      for (int i = 0; i < n_clients; ++i)
        for (int c = 0; c < counts[static_cast<std::size_t>(i)]; ++c)
          clients[static_cast<std::size_t>(i)].push_back(members[static_cast<std::size_t>(cursor++)]);
    }
    bool ok = true;
    for (const auto& c : clients)
      if (c.empty()) ok = false;
    result = std::move(clients);
    if (ok) return result;
  }
  // Fallback: shift one sample at a time from the largest client.
  for (auto& c : result) {
    while (c.empty()) {
      std::size_t donor = 0;
      for (std::size_t i = 1; i < result.size(); ++i)
        if (result[i].size() > result[donor].size()) donor = i;
      c.push_back(result[donor].back());
      result[donor].pop_back();
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Bias-planted tabular generator.

struct TabularBiasSpec {
  int n_samples = 0;
  double pr_a1 = 0.5;     // Pr[A=1]
  double pr_y1_a1 = 0.5;  // Pr[Y=1 | A=1]
  double pr_y1_a0 = 0.5;  // Pr[Y=1 | A=0]
  int feature_dim = 8;
  double y_shift = 1.5;      // class separation along the label direction
  double a_shift = 0.8;      // attribute leak along an orthogonal direction
  double noise_sigma = 1.0;

  void validate() const {
    if (n_samples < 1) throw std::invalid_argument("TabularBiasSpec: n_samples must be >= 1");
    if (feature_dim < 2) throw std::invalid_argument("TabularBiasSpec: feature_dim must be >= 2");
    for (double p : {pr_a1, pr_y1_a1, pr_y1_a0})
      if (p < 0.0 || p > 1.0) throw std::invalid_argument("TabularBiasSpec: probabilities must be in [0,1]");
  }
};

struct TabularDataset {
  Batch all;                        // labels are Y in {0,1}
  std::vector<int> attr;            // protected attribute A per row
  std::vector<double> y_direction;  // unit vector the label shifts along
  std::vector<double> a_direction;  // unit vector (orthogonal) the attribute leaks along
};

// Features are Gaussian around y*y_shift*u_y + a*a_shift*u_a with u_a
// orthogonal to u_y, so the planted label signal is attribute-symmetric while
// A stays partially recoverable from the features.
inline TabularDataset make_biased_tabular(const TabularBiasSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng dir_rng(seed, mix64(kSaltTabular, 0));
  const int dim = spec.feature_dim;
  auto draw_unit = [&]() {
    std::vector<double> v(static_cast<std::size_t>(dim));
    double norm = 0.0;
    for (double& x : v) {
      x = dir_rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  };
  TabularDataset out;
  out.y_direction = draw_unit();
  out.a_direction = draw_unit();
  double dot = 0.0;
  for (int i = 0; i < dim; ++i) dot += out.y_direction[static_cast<std::size_t>(i)] * out.a_direction[static_cast<std::size_t>(i)];
  double norm = 0.0;
  for (int i = 0; i < dim; ++i) {
    out.a_direction[static_cast<std::size_t>(i)] -= dot * out.y_direction[static_cast<std::size_t>(i)];
    norm += out.a_direction[static_cast<std::size_t>(i)] * out.a_direction[static_cast<std::size_t>(i)];
  }
  norm = std::sqrt(norm);
  for (double& x : out.a_direction) x /= norm;

  Rng rng(seed, mix64(kSaltTabular, 1));
  out.all.rows = spec.n_samples;
  out.all.cols = dim;
  out.all.x.resize(static_cast<std::size_t>(spec.n_samples) * dim);
  out.all.y.resize(static_cast<std::size_t>(spec.n_samples));
  out.attr.resize(static_cast<std::size_t>(spec.n_samples));
  for (int r = 0; r < spec.n_samples; ++r) {
    const int a = rng.uniform() < spec.pr_a1 ? 1 : 0;
    const int y = rng.uniform() < (a ? spec.pr_y1_a1 : spec.pr_y1_a0) ? 1 : 0;
    out.attr[static_cast<std::size_t>(r)] = a;
    out.all.y[static_cast<std::size_t>(r)] = y;
    for (int i = 0; i < dim; ++i)
      out.all.x[static_cast<std::size_t>(r) * dim + i] =
          y * spec.y_shift * out.y_direction[static_cast<std::size_t>(i)] +
          a * spec.a_shift * out.a_direction[static_cast<std::size_t>(i)] + spec.noise_sigma * rng.normal();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flat binary fixtures (float32 features, byte labels). Layout documented in
// docs/formats.md.

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
}

inline std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::invalid_argument("dataset fixture: truncated");
  std::uint32_t v = 0;
  for (int s = 0; s < 32; s += 8) v |= static_cast<std::uint32_t>(in[pos++]) << s;
  return v;
}

inline void put_f32(std::vector<std::uint8_t>& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  put_u32(out, bits);
}

inline double get_f32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  const std::uint32_t bits = get_u32(in, pos);
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return static_cast<double>(f);
}

inline void put_batch(std::vector<std::uint8_t>& out, const Batch& b, const std::vector<int>& attr) {
  for (double v : b.x) put_f32(out, v);
  for (int y : b.y) out.push_back(static_cast<std::uint8_t>(y));
  for (int a : attr) out.push_back(static_cast<std::uint8_t>(a));
}

}  // namespace detail

constexpr std::uint32_t kGroupedMagic = 0x45324644;  // "E2FD"

inline std::vector<std::uint8_t> serialize_dataset(const GroupedDataset& ds) {
  std::vector<std::uint8_t> out;
  detail::put_u32(out, kGroupedMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(ds.clients.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.feature_dim));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.n_classes));
  bool has_attr = false;
  for (const auto& c : ds.clients)
    if (!c.train_attr.empty()) has_attr = true;
  detail::put_u32(out, has_attr ? 1 : 0);
  for (const auto& c : ds.clients) {
    detail::put_u32(out, static_cast<std::uint32_t>(c.id));
    detail::put_u32(out, static_cast<std::uint32_t>(c.group));
    detail::put_u32(out, static_cast<std::uint32_t>(c.train.rows));
    detail::put_u32(out, static_cast<std::uint32_t>(c.test.rows));
    detail::put_batch(out, c.train, has_attr ? c.train_attr : std::vector<int>{});
    detail::put_batch(out, c.test, has_attr ? c.test_attr : std::vector<int>{});
  }
  return out;
}

inline GroupedDataset deserialize_dataset(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  if (detail::get_u32(bytes, pos) != kGroupedMagic) throw std::invalid_argument("dataset fixture: bad magic");
  const std::uint32_t n_clients = detail::get_u32(bytes, pos);
  GroupedDataset ds;
  ds.feature_dim = static_cast<int>(detail::get_u32(bytes, pos));
  ds.n_classes = static_cast<int>(detail::get_u32(bytes, pos));
  const bool has_attr = detail::get_u32(bytes, pos) != 0;
  ds.clients.resize(n_clients);
  for (auto& c : ds.clients) {
    c.id = static_cast<int>(detail::get_u32(bytes, pos));
    c.group = static_cast<int>(detail::get_u32(bytes, pos));
    const int n_train = static_cast<int>(detail::get_u32(bytes, pos));
    const int n_test = static_cast<int>(detail::get_u32(bytes, pos));
    auto read_batch = [&](Batch& b, std::vector<int>& attr, int rows) {
      b.rows = rows;
      b.cols = ds.feature_dim;
      b.x.resize(static_cast<std::size_t>(rows) * ds.feature_dim);
      for (double& v : b.x) v = detail::get_f32(bytes, pos);
      b.y.resize(static_cast<std::size_t>(rows));
      for (int& y : b.y) {
        if (pos >= bytes.size()) throw std::invalid_argument("dataset fixture: truncated");
        y = bytes[pos++];
      }
      if (has_attr) {
        attr.resize(static_cast<std::size_t>(rows));
        for (int& a : attr) {
          if (pos >= bytes.size()) throw std::invalid_argument("dataset fixture: truncated");
          a = bytes[pos++];
        }
      }
    };
    read_batch(c.train, c.train_attr, n_train);
    read_batch(c.test, c.test_attr, n_test);
  }
  if (pos != bytes.size()) throw std::invalid_argument("dataset fixture: trailing bytes");
  return ds;
}

inline void save_dataset(const GroupedDataset& ds, const std::string& path) {
  const auto bytes = serialize_dataset(ds);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_dataset: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline GroupedDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_dataset: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_dataset(bytes);
}

}  // namespace e2fl
