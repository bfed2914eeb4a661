#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "datagen.hpp"
#include "federation.hpp"
#include "metrics.hpp"

namespace e2fl {

// Raised for anything wrong with a config file or a compare input. The CLI
// maps it to exit 2; runtime failures (divergence, broken invariants) map to 3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config model. Flat key = value lines, full-line # comments, optional
// [cell NAME] sections. Cells inherit the keys above the first section.

struct CellConfig {
  std::string name = "main";

  std::string dataset = "grouped";  // grouped | tabular
  std::vector<int> group_sizes = {2, 4, 5, 20, 40, 60, 10, 6, 3, 2};
  std::string transform = "permutation";  // permutation | rotation
  std::vector<double> transform_params;   // empty: per-group defaults
  int samples_per_client = 200;
  int feature_dim = 16;
  int classes = 4;
  double noise_sigma = 0.3;

  int tabular_samples = 20000;
  int tabular_clients = 20;
  double dirichlet_alpha = 1.0;
  double pr_a1 = 0.5;
  double pr_y1_a1 = 0.35;
  double pr_y1_a0 = 0.65;

  std::vector<int> layers = {16, 32, 4};
  int rounds = 10;
  int local_epochs = 2;
  int clients_per_round = 0;  // 0: every client participates each round
  int groups = -1;            // -1: one per dataset group, 0: dynamic discovery
  double k_percent = 50.0;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 8;
  std::vector<std::uint64_t> seeds = {1};
  std::string inference = "known";  // known | lowest_loss | oneshot | binary_search | rank_clustering
  std::vector<std::string> algorithms = {"e2fl"};
  bool aware = false;
  double tau = 0.0;  // 0: 0.7 * ln(classes)
  double eps = 0.1;
  int cluster_iters = 5;
  std::string wire_coding = "factorial";  // factorial | index
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline bool valid_cell_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

inline std::vector<std::string> split_list(const std::string& key, const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(value);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("key '" + key + "': empty list item in '" + value + "'");
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

inline long long cfg_int(const std::string& key, const std::string& value) {
  long long v = 0;
  const char* first = value.data();
  const char* last = first + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ConfigError("key '" + key + "': expected integer, got '" + value + "'");
  return v;
}

inline std::uint64_t cfg_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const char* first = value.data();
  const char* last = first + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ConfigError("key '" + key + "': expected unsigned integer, got '" + value + "'");
  return v;
}

inline double cfg_double(const std::string& key, const std::string& value) {
  if (value.empty()) throw ConfigError("key '" + key + "': expected number, got ''");
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size())
    throw ConfigError("key '" + key + "': expected number, got '" + value + "'");
  return v;
}

inline bool cfg_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "': expected true|false, got '" + value + "'");
}

inline std::vector<int> cfg_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const std::string& item : split_list(key, value)) out.push_back(static_cast<int>(cfg_int(key, item)));
  return out;
}

}  // namespace detail

// One scope of raw key/value pairs in file order. Duplicates within a scope
// are rejected at parse time; a cell overriding a global key is fine.
struct RawScope {
  std::string name;
  std::vector<std::pair<std::string, std::string>> entries;
};

struct RawConfig {
  RawScope globals;
  std::vector<RawScope> cells;
};

inline RawConfig parse_config_text(const std::string& text) {
  RawConfig raw;
  RawScope* scope = &raw.globals;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      std::istringstream head(t.substr(1, t.size() - 2));
      std::string word, name, extra;
      head >> word >> name;
      if (word != "cell" || !(head >> extra ? false : true) || !detail::valid_cell_name(name))
        throw ConfigError("line " + std::to_string(lineno) + ": expected [cell NAME] with NAME in [A-Za-z0-9_-]");
      for (const RawScope& c : raw.cells)
        if (c.name == name) throw ConfigError("line " + std::to_string(lineno) + ": duplicate cell '" + name + "'");
      raw.cells.push_back(RawScope{name, {}});
      scope = &raw.cells.back();
      seen.clear();
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    scope->entries.emplace_back(key, value);
  }
  return raw;
}

inline RawConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

namespace detail {

inline void apply_key(CellConfig& c, const std::string& key, const std::string& value) {
  if (key == "dataset") c.dataset = value;
  else if (key == "group_sizes") c.group_sizes = cfg_int_list(key, value);
  else if (key == "transform") c.transform = value;
  else if (key == "transform_params") {
    c.transform_params.clear();
    for (const std::string& item : split_list(key, value)) c.transform_params.push_back(cfg_double(key, item));
  } else if (key == "samples_per_client") c.samples_per_client = static_cast<int>(cfg_int(key, value));
  else if (key == "feature_dim") c.feature_dim = static_cast<int>(cfg_int(key, value));
  else if (key == "classes") c.classes = static_cast<int>(cfg_int(key, value));
  else if (key == "noise_sigma") c.noise_sigma = cfg_double(key, value);
  else if (key == "tabular_samples") c.tabular_samples = static_cast<int>(cfg_int(key, value));
  else if (key == "tabular_clients") c.tabular_clients = static_cast<int>(cfg_int(key, value));
  else if (key == "dirichlet_alpha") c.dirichlet_alpha = cfg_double(key, value);
  else if (key == "pr_a1") c.pr_a1 = cfg_double(key, value);
  else if (key == "pr_y1_a1") c.pr_y1_a1 = cfg_double(key, value);
  else if (key == "pr_y1_a0") c.pr_y1_a0 = cfg_double(key, value);
  else if (key == "layers") c.layers = cfg_int_list(key, value);
  else if (key == "rounds") c.rounds = static_cast<int>(cfg_int(key, value));
  else if (key == "local_epochs") c.local_epochs = static_cast<int>(cfg_int(key, value));
  else if (key == "clients_per_round") c.clients_per_round = static_cast<int>(cfg_int(key, value));
  else if (key == "groups") c.groups = value == "dynamic" ? 0 : static_cast<int>(cfg_int(key, value));
  else if (key == "k_percent") c.k_percent = cfg_double(key, value);
  else if (key == "lr") c.lr = cfg_double(key, value);
  else if (key == "momentum") c.momentum = cfg_double(key, value);
  else if (key == "weight_decay") c.weight_decay = cfg_double(key, value);
  else if (key == "batch_size") c.batch_size = static_cast<int>(cfg_int(key, value));
  else if (key == "seeds") {
    c.seeds.clear();
    for (const std::string& item : split_list(key, value)) c.seeds.push_back(cfg_u64(key, item));
  } else if (key == "inference") c.inference = value;
  else if (key == "algorithm") c.algorithms = split_list(key, value);
  else if (key == "aware") c.aware = cfg_bool(key, value);
  else if (key == "tau") c.tau = cfg_double(key, value);
  else if (key == "epsilon") c.eps = cfg_double(key, value);
  else if (key == "cluster_iters") c.cluster_iters = static_cast<int>(cfg_int(key, value));
  else if (key == "wire_coding") c.wire_coding = value;
  else throw ConfigError("unknown key '" + key + "'");
}

}  // namespace detail

inline int total_clients(const CellConfig& c) {
  if (c.dataset == "tabular") return c.tabular_clients;
  int total = 0;
  for (int n : c.group_sizes) total += n;
  return total;
}

inline int resolved_groups(const CellConfig& c) {
  if (c.groups >= 0) return c.groups;
  if (c.dataset == "tabular") return c.aware ? 2 : 1;
  return static_cast<int>(c.group_sizes.size());
}

inline InferenceMode inference_mode(const CellConfig& c) {
  if (c.inference == "known") return InferenceMode::known;
  if (c.inference == "lowest_loss") return InferenceMode::lowest_loss;
  if (c.inference == "oneshot") return InferenceMode::oneshot;
  if (c.inference == "binary_search") return InferenceMode::binary;
  if (c.inference == "rank_clustering") return InferenceMode::rank_cluster;
  throw ConfigError("key 'inference': unknown mode '" + c.inference + "'");
}

inline Algorithm algorithm_kind(const std::string& label) {
  if (label == "e2fl") return Algorithm::e2fl;
  if (label == "fedavg") return Algorithm::fedavg;
  if (label == "ifca") return Algorithm::ifca;
  if (label == "local") return Algorithm::local;
  throw ConfigError("key 'algorithm': unknown algorithm '" + label + "'");
}

inline void validate_cell(const CellConfig& c) {
  auto fail = [&](const std::string& msg) { throw ConfigError("cell '" + c.name + "': " + msg); };
  if (c.dataset != "grouped" && c.dataset != "tabular")
    fail("key 'dataset': expected grouped|tabular, got '" + c.dataset + "'");
  if (c.transform != "permutation" && c.transform != "rotation")
    fail("key 'transform': expected permutation|rotation, got '" + c.transform + "'");
  if (c.wire_coding != "factorial" && c.wire_coding != "index")
    fail("key 'wire_coding': expected factorial|index, got '" + c.wire_coding + "'");
  inference_mode(c);
  if (c.algorithms.empty()) fail("key 'algorithm': empty");
  std::set<std::string> labels;
  for (const std::string& a : c.algorithms) {
    algorithm_kind(a);
    if (!labels.insert(a).second) fail("key 'algorithm': duplicate entry '" + a + "'");
  }
  if (c.seeds.empty()) fail("key 'seeds': empty");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
    fail("key 'seeds': duplicate seed");
  if (c.layers.size() < 2) fail("key 'layers': need at least input and output sizes");
  for (int d : c.layers)
    if (d < 1) fail("key 'layers': sizes must be >= 1");
  if (c.feature_dim < 2) fail("key 'feature_dim': must be >= 2");
  if (c.layers.front() != c.feature_dim) fail("key 'layers': input size must equal feature_dim");

  if (c.dataset == "grouped") {
    if (c.classes < 2) fail("key 'classes': must be >= 2");
    if (c.layers.back() != c.classes) fail("key 'layers': output size must equal classes");
    if (c.group_sizes.empty()) fail("key 'group_sizes': empty");
    for (int n : c.group_sizes)
      if (n < 1) fail("key 'group_sizes': counts must be >= 1");
    if (!c.transform_params.empty() && c.transform_params.size() != c.group_sizes.size())
      fail("key 'transform_params': need one parameter per group");
    if (c.samples_per_client < 2) fail("key 'samples_per_client': must be >= 2");
    if (c.inference == "known" && c.groups > 0 && c.groups < static_cast<int>(c.group_sizes.size()))
      fail("key 'groups': known-group runs need one group per dataset group");
    if (c.aware) fail("key 'aware': needs dataset = tabular");
  } else {
    if (c.classes != 2) fail("key 'classes': tabular labels are binary");
    if (c.layers.back() != 2) fail("key 'layers': tabular output size must be 2");
    if (c.tabular_clients < 1) fail("key 'tabular_clients': must be >= 1");
    if (c.tabular_samples < 2 * c.tabular_clients) fail("key 'tabular_samples': need at least 2 per client");
    if (!(c.dirichlet_alpha > 0.0)) fail("key 'dirichlet_alpha': must be positive");
    for (auto [key, p] : {std::pair<const char*, double>{"pr_a1", c.pr_a1},
                          {"pr_y1_a1", c.pr_y1_a1},
                          {"pr_y1_a0", c.pr_y1_a0}})
      if (p < 0.0 || p > 1.0) fail(std::string("key '") + key + "': probability outside [0,1]");
    if (c.aware && c.inference != "known") fail("key 'aware': requires inference = known");
  }

  if (c.rounds < 1) fail("key 'rounds': must be >= 1");
  if (c.local_epochs < 1) fail("key 'local_epochs': must be >= 1");
  if (c.batch_size < 1) fail("key 'batch_size': must be >= 1");
  if (!(c.k_percent > 0.0) || c.k_percent > 100.0) fail("key 'k_percent': must be in (0, 100]");
  const int N = total_clients(c);
  if (c.clients_per_round < 0 || c.clients_per_round > N)
    fail("key 'clients_per_round': must be in [0, " + std::to_string(N) + "]");
  if (c.groups == 0) {
    if (c.inference != "lowest_loss" && c.inference != "oneshot")
      fail("key 'groups': dynamic discovery needs inference = lowest_loss or oneshot");
    for (const std::string& a : c.algorithms)
      if (a == "ifca") fail("key 'groups': ifca needs a fixed group count");
  }
  if (c.tau < 0.0) fail("key 'tau': must be >= 0");
  if (c.eps < 0.0) fail("key 'epsilon': must be >= 0");
  if (c.cluster_iters < 1) fail("key 'cluster_iters': must be >= 1");
}

inline std::vector<CellConfig> resolve_cells(const RawConfig& raw) {
  std::vector<RawScope> cells = raw.cells;
  if (cells.empty()) cells.push_back(RawScope{"main", {}});
  std::vector<CellConfig> out;
  out.reserve(cells.size());
  for (const RawScope& scope : cells) {
    CellConfig c;
    c.name = scope.name;
    std::set<std::string> set_keys;
    for (const auto& [key, value] : raw.globals.entries) {
      detail::apply_key(c, key, value);
      set_keys.insert(key);
    }
    for (const auto& [key, value] : scope.entries) {
      detail::apply_key(c, key, value);
      set_keys.insert(key);
    }
    if (c.dataset == "tabular" && !set_keys.count("classes")) c.classes = 2;
    validate_cell(c);
    out.push_back(std::move(c));
  }
  return out;
}

inline FederationConfig fed_config(const CellConfig& c, Algorithm algo, std::uint64_t seed) {
  FederationConfig fc;
  fc.net.layer_sizes = c.layers;
  fc.rounds = c.rounds;
  fc.local_epochs = c.local_epochs;
  fc.clients_per_round = c.clients_per_round == 0 ? total_clients(c) : c.clients_per_round;
  fc.k_percent = c.k_percent;
  fc.lr = c.lr;
  fc.momentum = c.momentum;
  fc.weight_decay = c.weight_decay;
  fc.batch_size = c.batch_size;
  fc.seed = seed;
  fc.algorithm = algo;
  fc.tau = c.tau;
  fc.eps = c.eps;
  fc.cluster_iters = c.cluster_iters;
  fc.wire.coding = c.wire_coding == "index" ? RankCoding::index : RankCoding::factorial;
  if (algo == Algorithm::e2fl) {
    fc.groups = resolved_groups(c);
    fc.inference = inference_mode(c);
    fc.aware = c.aware;
  } else {
    fc.groups = algo == Algorithm::ifca ? std::max(1, resolved_groups(c)) : 1;
    fc.inference = InferenceMode::known;
    fc.aware = false;
  }
  return fc;
}

// ---------------------------------------------------------------------------
// Dataset construction per (cell, seed).

struct BuiltData {
  std::vector<ClientData> clients;
  std::vector<int> metric_group;  // true dataset group per client (grouped runs)
  int n_metric_groups = 1;
  bool has_attr = false;
};

inline BuiltData build_dataset(const CellConfig& cell, std::uint64_t seed) {
  BuiltData out;
  if (cell.dataset == "grouped") {
    GroupSpec spec;
    spec.client_counts = cell.group_sizes;
    spec.kind =
        cell.transform == "rotation" ? TransformKind::planar_rotation : TransformKind::coordinate_permutation;
    spec.transform_params = cell.transform_params;
    GroupedDataset ds = make_grouped_dataset(seed, spec, cell.samples_per_client, cell.classes, cell.feature_dim,
                                             cell.noise_sigma);
    out.clients = std::move(ds.clients);
    out.n_metric_groups = spec.n_groups();
    out.metric_group.reserve(out.clients.size());
    for (const ClientData& c : out.clients) out.metric_group.push_back(c.group);
    return out;
  }

  TabularBiasSpec spec;
  spec.n_samples = cell.tabular_samples;
  spec.pr_a1 = cell.pr_a1;
  spec.pr_y1_a1 = cell.pr_y1_a1;
  spec.pr_y1_a0 = cell.pr_y1_a0;
  spec.feature_dim = cell.feature_dim;
  const TabularDataset ds = make_biased_tabular(spec, seed);
  auto parts = dirichlet_partition(ds.all, cell.tabular_clients, cell.dirichlet_alpha, seed);

  // Every client needs a train AND a test row; top up from the largest part.
  for (std::size_t i = 0; i < parts.size(); ++i) {
    while (parts[i].size() < 2) {
      std::size_t biggest = 0;
      for (std::size_t j = 1; j < parts.size(); ++j)
        if (parts[j].size() > parts[biggest].size()) biggest = j;
      parts[i].push_back(parts[biggest].back());
      parts[biggest].pop_back();
    }
  }

  out.has_attr = true;
  out.metric_group.assign(parts.size(), 0);
  out.clients.reserve(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::vector<int>& rows = parts[i];
    Rng rng(seed, mix64(kSaltClient, static_cast<std::uint64_t>(i)));
    rng.shuffle(rows);
    const int n = static_cast<int>(rows.size());
    const int n_train = std::max(1, std::min(n - 1, static_cast<int>(std::lround(0.8 * n))));
    const std::vector<int> train_idx(rows.begin(), rows.begin() + n_train);
    const std::vector<int> test_idx(rows.begin() + n_train, rows.end());
    ClientData c;
    c.id = static_cast<int>(i);
    c.group = 0;
    c.train = ds.all.select(train_idx);
    c.test = ds.all.select(test_idx);
    for (int r : train_idx) c.train_attr.push_back(ds.attr[static_cast<std::size_t>(r)]);
    for (int r : test_idx) c.test_attr.push_back(ds.attr[static_cast<std::size_t>(r)]);
    out.clients.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-round metric rows and CSV emission.

struct RowMetrics {
  int round = 0;
  LevelStats user;
  std::optional<LevelStats> group;
  std::optional<double> eod_value;
  std::optional<double> di_value;
  std::uint64_t up_bytes = 0;
  std::uint64_t down_bytes = 0;
};

struct AlgoSeries {
  std::string label;
  std::vector<RowMetrics> rows;
};

struct CellSeedRun {
  std::uint64_t seed = 0;
  std::vector<AlgoSeries> series;
};

namespace detail {

// Pooled per-attribute accuracy over every client's test rows, in percent.
inline std::optional<std::vector<double>> stratum_accuracies(const std::vector<ClientData>& clients,
                                                             const std::vector<std::vector<int>>& preds) {
  double correct[2] = {0.0, 0.0};
  double count[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const ClientData& c = clients[i];
    for (int r = 0; r < c.test.rows; ++r) {
      const int a = c.test_attr[static_cast<std::size_t>(r)];
      count[a] += 1.0;
      if (preds[i][static_cast<std::size_t>(r)] == c.test.y[static_cast<std::size_t>(r)]) correct[a] += 1.0;
    }
  }
  if (count[0] == 0.0 || count[1] == 0.0) return std::nullopt;
  return std::vector<double>{100.0 * correct[0] / count[0], 100.0 * correct[1] / count[1]};
}

inline RowMetrics build_row(int round, std::vector<double> acc_percent, const BuiltData& data,
                            const std::vector<std::vector<int>>* preds, std::uint64_t up, std::uint64_t down) {
  RowMetrics row;
  row.round = round;
  row.user = equality_stats(acc_percent);
  if (data.has_attr) {
    if (preds && !preds->empty()) {
      if (const auto strata = stratum_accuracies(data.clients, *preds)) row.group = spread_stats(*strata);
      std::vector<int> p, y, a;
      for (std::size_t i = 0; i < data.clients.size(); ++i) {
        const ClientData& c = data.clients[i];
        p.insert(p.end(), (*preds)[i].begin(), (*preds)[i].end());
        y.insert(y.end(), c.test.y.begin(), c.test.y.end());
        a.insert(a.end(), c.test_attr.begin(), c.test_attr.end());
      }
      row.eod_value = eod(p, y, a);
      row.di_value = di(p, y, a);
    }
  } else {
    row.group = spread_stats(group_mean_accuracies(acc_percent, data.metric_group, data.n_metric_groups));
  }
  row.up_bytes = up;
  row.down_bytes = down;
  return row;
}

inline std::vector<double> to_percent(const std::vector<double>& acc) {
  std::vector<double> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = 100.0 * acc[i];
  return out;
}

}  // namespace detail

inline CellSeedRun run_cell_seed(const CellConfig& cell, std::uint64_t seed) {
  const BuiltData data = build_dataset(cell, seed);
  CellSeedRun out;
  out.seed = seed;
  for (const std::string& label : cell.algorithms) {
    const Algorithm algo = algorithm_kind(label);
    const FederationConfig fc = fed_config(cell, algo, seed);
    if (algo == Algorithm::e2fl) {
      const E2flResult res = e2fl_train(data.clients, fc);
      AlgoSeries series{label, {}};
      AlgoSeries global{label + "_gm", {}};
      for (const RoundRecord& rec : res.records) {
        // Clustering warmup traffic happens before the first round; bill it there.
        const std::uint64_t up = rec.up_bytes + (rec.round == 0 ? res.warmup_up_bytes : 0);
        const std::uint64_t down = rec.down_bytes + (rec.round == 0 ? res.warmup_down_bytes : 0);
        const auto* preds = rec.client_pred.empty() ? nullptr : &rec.client_pred;
        series.rows.push_back(
            detail::build_row(rec.round, detail::to_percent(rec.client_acc), data, preds, up, down));
        global.rows.push_back(
            detail::build_row(rec.round, detail::to_percent(rec.client_acc_global), data, nullptr, up, down));
      }
      out.series.push_back(std::move(series));
      out.series.push_back(std::move(global));
    } else {
      const DenseResult res = algo == Algorithm::fedavg ? fedavg_train(data.clients, fc)
                              : algo == Algorithm::ifca ? ifca_train(data.clients, fc)
                                                        : local_train(data.clients, fc);
      AlgoSeries series{label, {}};
      for (const DenseRoundRecord& rec : res.records) {
        const auto* preds = rec.client_pred.empty() ? nullptr : &rec.client_pred;
        series.rows.push_back(detail::build_row(rec.round, detail::to_percent(rec.client_acc), data, preds,
                                                rec.up_bytes, rec.down_bytes));
      }
      out.series.push_back(std::move(series));
    }
  }
  return out;
}

inline constexpr const char* kMetricsHeader =
    "algorithm,seed,round,user_avg,user_worst10,user_best10,user_std,user_var,"
    "group_avg,group_worst,group_best,group_std,group_var,eod,di,up_bytes,down_bytes";

namespace detail {

inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt6(*v) : std::string(); }

}  // namespace detail

inline void write_metrics_csv(const std::filesystem::path& path, const CellSeedRun& run) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << kMetricsHeader << '\n';
  for (const AlgoSeries& series : run.series) {
    for (const RowMetrics& row : series.rows) {
      out << series.label << ',' << run.seed << ',' << row.round;
      for (double v : {row.user.avg, row.user.worst10, row.user.best10, row.user.stddev, row.user.variance})
        out << ',' << detail::fmt6(v);
      if (row.group)
        for (double v : {row.group->avg, row.group->worst10, row.group->best10, row.group->stddev, row.group->variance})
          out << ',' << detail::fmt6(v);
      else
        out << ",,,,,";
      out << ',' << detail::fmt_opt(row.eod_value) << ',' << detail::fmt_opt(row.di_value);
      out << ',' << row.up_bytes << ',' << row.down_bytes << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Cross-seed summary. One row per (cell, algorithm): mean and std across
// seeds of the final round's metrics plus total traffic.

inline constexpr std::array<const char*, 12> kSummaryMetrics = {
    "user_avg", "user_worst10", "user_best10", "user_std", "user_var", "group_avg",
    "group_worst", "group_best", "group_std", "group_var", "eod", "di"};

namespace detail {

inline std::array<std::optional<double>, 12> final_metric_values(const AlgoSeries& series) {
  const RowMetrics& row = series.rows.back();
  std::array<std::optional<double>, 12> out;
  out[0] = row.user.avg;
  out[1] = row.user.worst10;
  out[2] = row.user.best10;
  out[3] = row.user.stddev;
  out[4] = row.user.variance;
  if (row.group) {
    out[5] = row.group->avg;
    out[6] = row.group->worst10;
    out[7] = row.group->best10;
    out[8] = row.group->stddev;
    out[9] = row.group->variance;
  }
  out[10] = row.eod_value;
  out[11] = row.di_value;
  return out;
}

inline std::pair<std::optional<double>, std::optional<double>> mean_std(const std::vector<std::optional<double>>& xs) {
  double sum = 0.0;
  int n = 0;
  for (const auto& x : xs)
    if (x) {
      sum += *x;
      ++n;
    }
  if (n == 0) return {std::nullopt, std::nullopt};
  const double mean = sum / n;
  double var = 0.0;
  for (const auto& x : xs)
    if (x) var += (*x - mean) * (*x - mean);
  return {mean, std::sqrt(var / n)};
}

}  // namespace detail

inline std::string summary_header() {
  std::string h = "cell,algorithm,n_seeds";
  for (const char* m : kSummaryMetrics) {
    h += ',';
    h += m;
    h += "_mean,";
    h += m;
    h += "_std";
  }
  h += ",total_up_bytes_mean,total_down_bytes_mean";
  return h;
}

inline std::vector<std::string> summarize_cell(const CellConfig& cell, const std::vector<CellSeedRun>& runs) {
  std::vector<std::string> rows;
  if (runs.empty()) return rows;
  const std::size_t n_series = runs.front().series.size();
  for (std::size_t s = 0; s < n_series; ++s) {
    std::vector<std::array<std::optional<double>, 12>> finals;
    double up_sum = 0.0, down_sum = 0.0;
    for (const CellSeedRun& run : runs) {
      finals.push_back(detail::final_metric_values(run.series[s]));
      std::uint64_t up = 0, down = 0;
      for (const RowMetrics& row : run.series[s].rows) {
        up += row.up_bytes;
        down += row.down_bytes;
      }
      up_sum += static_cast<double>(up);
      down_sum += static_cast<double>(down);
    }
    std::string line = cell.name + ',' + runs.front().series[s].label + ',' + std::to_string(runs.size());
    for (std::size_t m = 0; m < kSummaryMetrics.size(); ++m) {
      std::vector<std::optional<double>> column;
      for (const auto& f : finals) column.push_back(f[m]);
      const auto [mean, sd] = detail::mean_std(column);
      line += ',' + detail::fmt_opt(mean) + ',' + detail::fmt_opt(sd);
    }
    line += ',' + detail::fmt6(up_sum / static_cast<double>(runs.size()));
    line += ',' + detail::fmt6(down_sum / static_cast<double>(runs.size()));
    rows.push_back(std::move(line));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Resolved config provenance.

namespace detail {

inline std::string fmt_cfg(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename Fmt>
inline std::string join_list(const std::vector<T>& xs, Fmt fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += fmt(xs[i]);
  }
  return out;
}

}  // namespace detail

inline void write_resolved_config(const std::filesystem::path& path, const std::vector<CellConfig>& cells) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  auto fmt_int = [](int v) { return std::to_string(v); };
  for (const CellConfig& c : cells) {
    out << "[cell " << c.name << "]\n";
    out << "dataset = " << c.dataset << '\n';
    if (c.dataset == "grouped") {
      out << "group_sizes = " << detail::join_list(c.group_sizes, fmt_int) << '\n';
      out << "transform = " << c.transform << '\n';
      if (!c.transform_params.empty())
        out << "transform_params = " << detail::join_list(c.transform_params, detail::fmt_cfg) << '\n';
      out << "samples_per_client = " << c.samples_per_client << '\n';
      out << "noise_sigma = " << detail::fmt_cfg(c.noise_sigma) << '\n';
    } else {
      out << "tabular_samples = " << c.tabular_samples << '\n';
      out << "tabular_clients = " << c.tabular_clients << '\n';
      out << "dirichlet_alpha = " << detail::fmt_cfg(c.dirichlet_alpha) << '\n';
      out << "pr_a1 = " << detail::fmt_cfg(c.pr_a1) << '\n';
      out << "pr_y1_a1 = " << detail::fmt_cfg(c.pr_y1_a1) << '\n';
      out << "pr_y1_a0 = " << detail::fmt_cfg(c.pr_y1_a0) << '\n';
    }
    out << "feature_dim = " << c.feature_dim << '\n';
    out << "classes = " << c.classes << '\n';
    out << "layers = " << detail::join_list(c.layers, fmt_int) << '\n';
    out << "rounds = " << c.rounds << '\n';
    out << "local_epochs = " << c.local_epochs << '\n';
    out << "clients_per_round = " << (c.clients_per_round == 0 ? total_clients(c) : c.clients_per_round) << '\n';
    out << "groups = " << resolved_groups(c) << '\n';
    out << "k_percent = " << detail::fmt_cfg(c.k_percent) << '\n';
    out << "lr = " << detail::fmt_cfg(c.lr) << '\n';
    out << "momentum = " << detail::fmt_cfg(c.momentum) << '\n';
    out << "weight_decay = " << detail::fmt_cfg(c.weight_decay) << '\n';
    out << "batch_size = " << c.batch_size << '\n';
    out << "seeds = " << detail::join_list(c.seeds, [](std::uint64_t s) { return std::to_string(s); }) << '\n';
    out << "inference = " << c.inference << '\n';
    out << "algorithm = " << detail::join_list(c.algorithms, [](const std::string& s) { return s; }) << '\n';
    out << "aware = " << (c.aware ? "true" : "false") << '\n';
    out << "tau = " << detail::fmt_cfg(c.tau > 0.0 ? c.tau : 0.7 * std::log(static_cast<double>(c.classes)))
        << '\n';
    out << "epsilon = " << detail::fmt_cfg(c.eps) << '\n';
    out << "cluster_iters = " << c.cluster_iters << '\n';
    out << "wire_coding = " << c.wire_coding << '\n';
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Runner.

struct RunOptions {
  std::string config_path;
  std::string out_dir;  // empty: $E2FL_OUT_ROOT/<stem> if set, else ./<stem>_out
  int jobs = 1;
  std::vector<std::uint64_t> seed_override;
};

inline std::filesystem::path resolve_out_dir(const std::string& config_path, const std::string& out_flag) {
  if (!out_flag.empty()) return std::filesystem::path(out_flag);
  std::string stem = std::filesystem::path(config_path).stem().string();
  if (stem.empty()) stem = "run";
  if (const char* root = std::getenv("E2FL_OUT_ROOT"); root && *root)
    return std::filesystem::path(root) / stem;
  return std::filesystem::path(stem + "_out");
}

inline std::filesystem::path run_experiment(const RunOptions& opt) {
  const RawConfig raw = parse_config_file(opt.config_path);
  std::vector<CellConfig> cells = resolve_cells(raw);
  if (!opt.seed_override.empty()) {
    for (CellConfig& c : cells) c.seeds = opt.seed_override;
    for (const CellConfig& c : cells) validate_cell(c);
  }
  // Surface invalid training setups before any work starts (as exit 2, not 3).
  for (const CellConfig& c : cells)
    for (const std::string& label : c.algorithms) {
      try {
        fed_config(c, algorithm_kind(label), c.seeds.front()).validate(total_clients(c));
      } catch (const std::invalid_argument& e) {
        throw ConfigError("cell '" + c.name + "': " + e.what());
      }
    }

  const std::filesystem::path out = resolve_out_dir(opt.config_path, opt.out_dir);
  std::filesystem::create_directories(out);

  struct Task {
    std::size_t cell;
    std::size_t seed_idx;
  };
  std::vector<Task> tasks;
  std::vector<std::vector<CellSeedRun>> results(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    results[i].resize(cells[i].seeds.size());
    for (std::size_t s = 0; s < cells[i].seeds.size(); ++s) tasks.push_back(Task{i, s});
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& task = tasks[i];
      const CellConfig& cell = cells[task.cell];
      const std::uint64_t seed = cell.seeds[task.seed_idx];
      try {
        CellSeedRun run = run_cell_seed(cell, seed);
        const std::filesystem::path dir = out / cell.name / ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(dir);
        write_metrics_csv(dir / "metrics.csv", run);
        results[task.cell][task.seed_idx] = std::move(run);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(opt.jobs, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  std::vector<std::string> all_rows;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::vector<std::string> rows = summarize_cell(cells[i], results[i]);
    std::ofstream cell_out(out / cells[i].name / "summary.csv", std::ios::binary);
    cell_out << summary_header() << '\n';
    for (const std::string& row : rows) cell_out << row << '\n';
    all_rows.insert(all_rows.end(), rows.begin(), rows.end());
  }
  std::ofstream top(out / "summary.csv", std::ios::binary);
  top << summary_header() << '\n';
  for (const std::string& row : all_rows) top << row << '\n';
  top.close();

  write_resolved_config(out / "resolved.cfg", cells);
  return out;
}

// ---------------------------------------------------------------------------
// Comparison across run directories (first one is the baseline).

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  CsvTable table;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(s);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!s.empty() && s.back() == ',') out.push_back("");
    return out;
  };
  if (!std::getline(in, line)) throw ConfigError("empty csv '" + path.string() + "'");
  table.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> row = split(line);
    if (row.size() != table.header.size())
      throw ConfigError("malformed row in '" + path.string() + "': " + line);
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline std::filesystem::path compare_runs(const std::vector<std::string>& dirs, const std::string& out_dir) {
  if (dirs.size() < 2) throw ConfigError("compare needs at least two run directories");
  std::vector<CsvTable> tables;
  tables.reserve(dirs.size());
  for (const std::string& dir : dirs) tables.push_back(read_csv_file(std::filesystem::path(dir) / "summary.csv"));

  const CsvTable& base = tables.front();
  auto column_of = [](const CsvTable& t, const std::string& name) {
    for (std::size_t i = 0; i < t.header.size(); ++i)
      if (t.header[i] == name) return static_cast<long long>(i);
    return -1LL;
  };
  for (std::size_t d = 1; d < tables.size(); ++d) {
    for (const std::string& col : base.header)
      if (column_of(tables[d], col) < 0)
        throw ConfigError("schema mismatch: '" + dirs[d] + "/summary.csv' missing column '" + col + "'");
    for (const std::string& col : tables[d].header)
      if (column_of(base, col) < 0)
        throw ConfigError("schema mismatch: '" + dirs[d] + "/summary.csv' has unexpected column '" + col + "'");
  }
  const long long cell_col = column_of(base, "cell");
  const long long algo_col = column_of(base, "algorithm");
  if (cell_col < 0 || algo_col < 0) throw ConfigError("summary schema needs 'cell' and 'algorithm' columns");

  auto key_of = [&](const std::vector<std::string>& row, const CsvTable& t) {
    return row[static_cast<std::size_t>(column_of(t, "cell"))] + '\x1f' +
           row[static_cast<std::size_t>(column_of(t, "algorithm"))];
  };

  auto parse_num = [](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) return std::nullopt;
    return v;
  };

  const std::filesystem::path out =
      (out_dir.empty() ? std::filesystem::path(".") : std::filesystem::path(out_dir)) / "comparison.csv";
  std::filesystem::create_directories(out.parent_path());
  std::ofstream fh(out, std::ios::binary);
  if (!fh) throw std::runtime_error("cannot write '" + out.string() + "'");
  fh << "cell,algorithm,metric,baseline_dir,candidate_dir,baseline,candidate,delta,reduction_pct\n";

  for (std::size_t d = 1; d < tables.size(); ++d) {
    const CsvTable& cand = tables[d];
    // Match rows by (cell, algorithm) when possible, else line them up by
    // position so runs of different algorithms stay comparable.
    std::map<std::string, std::size_t> by_key;
    for (std::size_t r = 0; r < cand.rows.size(); ++r) by_key.emplace(key_of(cand.rows[r], cand), r);
    bool keyed = true;
    for (const auto& row : base.rows)
      if (!by_key.count(key_of(row, base))) keyed = false;
    if (!keyed && cand.rows.size() != base.rows.size())
      throw ConfigError("cannot align '" + dirs[d] + "/summary.csv' with baseline: rows differ");

    for (std::size_t r = 0; r < base.rows.size(); ++r) {
      const std::vector<std::string>& brow = base.rows[r];
      const std::vector<std::string>& crow = keyed ? cand.rows[by_key.at(key_of(brow, base))] : cand.rows[r];
      for (std::size_t m = 0; m < base.header.size(); ++m) {
        const std::string& metric = base.header[m];
        if (metric == "cell" || metric == "algorithm" || metric == "n_seeds") continue;
        const std::string& bval = brow[m];
        const std::string& cval = crow[static_cast<std::size_t>(column_of(cand, metric))];
        fh << brow[static_cast<std::size_t>(cell_col)] << ',' << brow[static_cast<std::size_t>(algo_col)] << ','
           << metric << ',' << dirs.front() << ',' << dirs[d] << ',' << bval << ',' << cval << ',';
        const auto b = parse_num(bval);
        const auto c = parse_num(cval);
        if (b && c) {
          fh << detail::fmt6(*c - *b) << ',';
          if (*b != 0.0) fh << detail::fmt6((*b - *c) / *b * 100.0);
        } else {
          fh << ',';
        }
        fh << '\n';
      }
    }
  }
  return out;
}

}  // namespace e2fl
