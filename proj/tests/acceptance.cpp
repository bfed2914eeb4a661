// Acceptance gate: thirteen end-to-end criteria, one PASS/FAIL line each.
// Exit status 0 iff every criterion passes. Tolerances are pinned inline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "e2fl/experiment.hpp"

namespace {

using namespace e2fl;

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

std::vector<int> random_perm(Rng& rng, int d) {
  std::vector<int> p(static_cast<std::size_t>(d));
  std::iota(p.begin(), p.end(), 0);
  rng.shuffle(p);
  return p;
}

Ranking random_ranking(Rng& rng, const NetSpec& spec) {
  Ranking r;
  for (int l = 0; l < spec.num_layers(); ++l) r.layers.push_back(random_perm(rng, spec.edge_count(l)));
  return r;
}

Batch random_batch(Rng& rng, int rows, int dim, int classes) {
  Batch b;
  b.rows = rows;
  b.cols = dim;
  for (int i = 0; i < rows * dim; ++i) b.x.push_back(rng.uniform(-1.0, 1.0));
  for (int i = 0; i < rows; ++i) b.y.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  return b;
}

// Small net specs drawn within the [8, 16, 4] envelope.
NetSpec random_spec(Rng& rng) {
  NetSpec spec;
  const int in = 2 + static_cast<int>(rng.below(7));
  const int out = 2 + static_cast<int>(rng.below(3));
  spec.layer_sizes.push_back(in);
  if (rng.below(2)) spec.layer_sizes.push_back(4 + static_cast<int>(rng.below(13)));
  spec.layer_sizes.push_back(out);
  return spec;
}

// Two gaussian blobs at +/-2 per coordinate; linearly separable by a wide
// margin, alternating labels.
Batch make_blobs(std::uint64_t seed, int n, int dim, double noise) {
  Rng rng(seed, 0x626C6F6273ULL);
  Batch b;
  b.rows = n;
  b.cols = dim;
  for (int r = 0; r < n; ++r) {
    const int y = r % 2;
    const double center = (y == 0) ? 2.0 : -2.0;
    for (int j = 0; j < dim; ++j) b.x.push_back(center + noise * rng.normal());
    b.y.push_back(y);
  }
  return b;
}

CellConfig benchmark_cell() {
  CellConfig cell;  // defaults already carry the 10-group imbalanced layout
  cell.rounds = 150;
  cell.clients_per_round = 30;
  cell.algorithms = {"e2fl", "fedavg"};
  cell.seeds = {1, 2, 3, 4, 5};
  return cell;
}

const AlgoSeries& find_series(const CellSeedRun& run, const std::string& label) {
  for (const AlgoSeries& s : run.series)
    if (s.label == label) return s;
  throw std::logic_error("series '" + label + "' missing from run");
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

int main() {
  std::filesystem::remove_all("acceptance_tmp");
  std::filesystem::create_directories("acceptance_tmp");

  int failures = 0;
  auto criterion = [&](int id, const char* label, const std::function<bool(std::string&)>& body) {
    std::string note;
    bool ok = false;
    try {
      ok = body(note);
    } catch (const std::exception& e) {
      ok = false;
      note = std::string("exception: ") + e.what();
    }
    std::printf("%s %2d %s%s%s\n", ok ? "PASS" : "FAIL", id, label, note.empty() ? "" : " | ", note.c_str());
    if (!ok) ++failures;
  };

  // Shared across criteria 5 and 6.
  std::vector<CellSeedRun> bench_runs;

  criterion(1, "majority vote matches the brute-force reputation oracle on 1000 cases", [&](std::string& note) {
    Rng rng(4242, 0x766F7465ULL);
    int mismatches = 0;
    for (int t = 0; t < 1000; ++t) {
      const int n_layers = 1 + static_cast<int>(rng.below(3));
      std::vector<int> dims;
      for (int l = 0; l < n_layers; ++l) dims.push_back(1 + static_cast<int>(rng.below(6)));
      const int voters = 1 + static_cast<int>(rng.below(5));
      std::vector<Ranking> rankings(static_cast<std::size_t>(voters));
      for (auto& r : rankings)
        for (int d : dims) r.layers.push_back(random_perm(rng, d));
      const Ranking got = vote(rankings);
      for (int l = 0; l < n_layers; ++l) {
        const int d = dims[static_cast<std::size_t>(l)];
        std::vector<long long> rep(static_cast<std::size_t>(d), 0);
        for (const Ranking& r : rankings)
          for (int i = 0; i < d; ++i) rep[static_cast<std::size_t>(r.layers[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)])] += i;
        std::vector<int> want(static_cast<std::size_t>(d));
        std::iota(want.begin(), want.end(), 0);
        std::sort(want.begin(), want.end(), [&](int a, int b) {
          if (rep[static_cast<std::size_t>(a)] != rep[static_cast<std::size_t>(b)])
            return rep[static_cast<std::size_t>(a)] < rep[static_cast<std::size_t>(b)];
          return a < b;
        });
        if (got.layers[static_cast<std::size_t>(l)] != want) ++mismatches;
      }
    }
    note = fmt("%0.f mismatched layers", static_cast<double>(mismatches));
    return mismatches == 0;
  });

  criterion(2, "single-group runs equal the one-vote reference loop for all 30 rounds", [&](std::string& note) {
    GroupSpec gs;
    gs.client_counts = {10};
    gs.transform_params = {0.0};
    const GroupedDataset data = make_grouped_dataset(11, gs, 60, 3, 8, 0.3);

    FederationConfig cfg;
    cfg.net.layer_sizes = {8, 16, 3};
    cfg.rounds = 30;
    cfg.local_epochs = 2;
    cfg.clients_per_round = 4;
    cfg.groups = 1;
    cfg.seed = 11;
    const E2flResult res = e2fl_train(data.clients, cfg);

    SuperNetwork net = init_supernetwork(cfg.net, cfg.seed);
    Ranking global = ranking_from_scores(net.scores());
    for (int t = 0; t < cfg.rounds; ++t) {
      const std::vector<int> sel = round_sample(cfg.seed, t, cfg.clients_per_round, 10);
      if (res.records[static_cast<std::size_t>(t)].selected != sel) {
        note = fmt("selection diverged at round %.0f", static_cast<double>(t));
        return false;
      }
      std::vector<Ranking> subs;
      for (int u : sel) {
        EPConfig ep;
        ep.epochs = cfg.local_epochs;
        ep.k_percent = cfg.k_percent;
        ep.lr = cfg.lr;
        ep.batch_size = cfg.batch_size;
        ep.momentum = cfg.momentum;
        ep.weight_decay = cfg.weight_decay;
        ep.shuffle_seed = client_shuffle_seed(cfg.seed, u, t);
        net.reset_scores();
        net.scores() = reorder_scores(net.scores(), global);
        ep_train(net, data.clients[static_cast<std::size_t>(u)].train, ep);
        subs.push_back(ranking_from_scores(net.scores()));
      }
      global = vote(subs);
      if (!(res.records[static_cast<std::size_t>(t)].global_ranking == global)) {
        note = fmt("ranking diverged at round %.0f", static_cast<double>(t));
        return false;
      }
    }
    return true;
  });

  criterion(3, "weight and mixture-entropy gradients match finite differences (100+100 nets)", [&](std::string& note) {
    const double h = 1e-5;
    int weight_checked = 0;
    double worst_weight_rel = 0.0;
    for (int i = 0; i < 100; ++i) {
      Rng rng(9000 + static_cast<std::uint64_t>(i), 0x6664ULL);
      const NetSpec spec = random_spec(rng);
      LayerVec weights = initial_weights(spec, 777 + static_cast<std::uint64_t>(i));
      const Batch batch = random_batch(rng, 3 + static_cast<int>(rng.below(4)), spec.input_dim(), spec.output_dim());
      const DenseBackward bwd = backward_dense(spec, weights, batch);
      for (int probe = 0; probe < 8; ++probe) {
        const int l = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_layers())));
        const int e = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.edge_count(l))));
        const double saved = weights[static_cast<std::size_t>(l)][static_cast<std::size_t>(e)];
        weights[static_cast<std::size_t>(l)][static_cast<std::size_t>(e)] = saved + h;
        const double up = mean_cross_entropy(forward_dense(spec, weights, batch), batch.y);
        weights[static_cast<std::size_t>(l)][static_cast<std::size_t>(e)] = saved - h;
        const double down = mean_cross_entropy(forward_dense(spec, weights, batch), batch.y);
        weights[static_cast<std::size_t>(l)][static_cast<std::size_t>(e)] = saved;
        const double fd = (up - down) / (2.0 * h);
        if (std::fabs(fd) <= 1e-6) continue;
        ++weight_checked;
        const double rel = std::fabs(bwd.grads[static_cast<std::size_t>(l)][static_cast<std::size_t>(e)] - fd) / std::fabs(fd);
        worst_weight_rel = std::max(worst_weight_rel, rel);
      }
    }

    int alpha_checked = 0;
    double worst_alpha_rel = 0.0;
    for (int i = 0; i < 100; ++i) {
      Rng rng(12000 + static_cast<std::uint64_t>(i), 0x616C66ULL);
      const NetSpec spec = random_spec(rng);
      const SuperNetwork net = init_supernetwork(spec, 555 + static_cast<std::uint64_t>(i));
      const int Q = 2 + static_cast<int>(rng.below(4));
      std::vector<BinaryMask> masks;
      for (int q = 0; q < Q; ++q) masks.push_back(ranking_to_mask(random_ranking(rng, spec), 50.0));
      std::vector<double> alpha(static_cast<std::size_t>(Q));
      double total = 0.0;
      for (double& a : alpha) {
        a = rng.uniform_open();
        total += a;
      }
      for (double& a : alpha) a /= total;
      const Batch batch = random_batch(rng, 3 + static_cast<int>(rng.below(4)), spec.input_dim(), spec.output_dim());
      const std::vector<double> grad = alpha_gradient(net, masks, alpha, batch);
      for (int q = 0; q < Q; ++q) {
        std::vector<double> a2 = alpha;
        a2[static_cast<std::size_t>(q)] += h;
        const double up = mean_entropy(forward_dense(spec, superposed_weights(net.weights(), masks, a2), batch));
        a2[static_cast<std::size_t>(q)] -= 2.0 * h;
        const double down = mean_entropy(forward_dense(spec, superposed_weights(net.weights(), masks, a2), batch));
        const double fd = (up - down) / (2.0 * h);
        if (std::fabs(fd) <= 1e-6) continue;
        ++alpha_checked;
        const double rel = std::fabs(grad[static_cast<std::size_t>(q)] - fd) / std::fabs(fd);
        worst_alpha_rel = std::max(worst_alpha_rel, rel);
      }
    }

    note = fmt("weight worst rel %.2e over %.0f probes, alpha worst rel %.2e over %.0f probes", worst_weight_rel,
               static_cast<double>(weight_checked), worst_alpha_rel, static_cast<double>(alpha_checked));
    return worst_weight_rel <= 1e-4 && weight_checked >= 400 && worst_alpha_rel <= 1e-3 && alpha_checked >= 150;
  });

  criterion(4, "edge-popup reaches >=95% on separable blobs within 30 epochs (5-seed mean)", [&](std::string& note) {
    double acc_sum = 0.0;
    for (int s = 0; s < 5; ++s) {
      const Batch blobs = make_blobs(140 + static_cast<std::uint64_t>(s), 200, 4, 0.3);
      // Linear oracle along the center axis must be perfect for the instance
      // to count as separable at all.
      for (int r = 0; r < blobs.rows; ++r) {
        double proj = 0.0;
        for (int j = 0; j < blobs.cols; ++j) proj += blobs.at(r, j);
        if ((proj > 0.0 ? 0 : 1) != blobs.y[static_cast<std::size_t>(r)]) {
          note = fmt("seed %.0f: blob instance not linearly separable", static_cast<double>(s));
          return false;
        }
      }
      NetSpec spec;
      spec.layer_sizes = {4, 16, 2};
      SuperNetwork net = init_supernetwork(spec, 40 + static_cast<std::uint64_t>(s));
      EPConfig ep;
      ep.epochs = 30;
      ep.k_percent = 50.0;
      ep.lr = 0.1;
      ep.batch_size = 8;
      ep.momentum = 0.9;
      ep.weight_decay = 1e-4;
      ep.shuffle_seed = mix64(90 + static_cast<std::uint64_t>(s), 0x65706F63ULL);
      ep_train(net, blobs, ep);
      acc_sum += accuracy(forward(net, score_mask(net, 50.0), blobs), blobs.y);
    }
    const double mean_acc = acc_sum / 5.0;
    note = fmt("mean train accuracy %.4f", mean_acc);
    return mean_acc >= 0.95;
  });

  criterion(5, "e2fl halves fedavg's group variance without raising user variance", [&](std::string& note) {
    const CellConfig cell = benchmark_cell();
    bench_runs.assign(cell.seeds.size(), CellSeedRun{});
    std::vector<std::string> errors(cell.seeds.size());
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < cell.seeds.size(); ++i)
      pool.emplace_back([&, i] {
        try {
          bench_runs[i] = run_cell_seed(cell, cell.seeds[i]);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      });
    for (std::thread& t : pool) t.join();
    for (std::size_t i = 0; i < errors.size(); ++i)
      if (!errors[i].empty()) {
        bench_runs.clear();
        note = "seed " + std::to_string(cell.seeds[i]) + ": " + errors[i];
        return false;
      }

    double e2fl_gv = 0.0, fed_gv = 0.0, e2fl_uv = 0.0, fed_uv = 0.0;
    for (const CellSeedRun& run : bench_runs) {
      const RowMetrics& e = find_series(run, "e2fl").rows.back();
      const RowMetrics& f = find_series(run, "fedavg").rows.back();
      e2fl_gv += e.group->variance;
      fed_gv += f.group->variance;
      e2fl_uv += e.user.variance;
      fed_uv += f.user.variance;
    }
    const double n = static_cast<double>(bench_runs.size());
    e2fl_gv /= n;
    fed_gv /= n;
    e2fl_uv /= n;
    fed_uv /= n;
    note = fmt("group var %.2f vs %.2f, user var %.2f vs %.2f", e2fl_gv, fed_gv, e2fl_uv, fed_uv);
    return e2fl_gv <= 0.5 * fed_gv && e2fl_uv <= fed_uv;
  });

  criterion(6, "per-group masks beat the global mask on group accuracy in >=4 of 5 seeds", [&](std::string& note) {
    if (bench_runs.empty()) {
      note = "benchmark runs unavailable";
      return false;
    }
    int wins = 0;
    for (const CellSeedRun& run : bench_runs) {
      const RowMetrics& grouped = find_series(run, "e2fl").rows.back();
      const RowMetrics& global = find_series(run, "e2fl_gm").rows.back();
      if (grouped.group->avg > global.group->avg) ++wins;
    }
    note = fmt("%.0f of 5 seeds", static_cast<double>(wins));
    return wins >= 4;
  });

  criterion(7, "inference pass counts: Q forwards / 1+1 / <=ceil(log2 Q)+1 pairs", [&](std::string& note) {
    NetSpec spec;
    spec.layer_sizes = {6, 12, 3};
    const SuperNetwork net = init_supernetwork(spec, 71);
    Rng rng(71, 0x70617373ULL);
    const Batch batch = random_batch(rng, 8, 6, 3);
    for (int Q : {1, 2, 4, 8, 16}) {
      std::vector<BinaryMask> masks;
      for (int q = 0; q < Q; ++q) masks.push_back(ranking_to_mask(random_ranking(rng, spec), 50.0));
      PassCounts ll, os, bs;
      lowest_loss_group(net, masks, batch, &ll);
      oneshot_group(net, masks, batch, &os);
      binary_search_group(net, masks, batch, &bs);
      const long long budget = (Q == 1) ? 0 : ceil_log2(Q) + 1;
      if (ll.forwards != Q || ll.backwards != 0 || os.forwards != 1 || os.backwards != 1 ||
          bs.forwards != bs.backwards || bs.forwards > budget) {
        note = fmt("Q=%.0f: lowest %.0f/%.0f", static_cast<double>(Q), static_cast<double>(ll.forwards),
                   static_cast<double>(ll.backwards)) +
               fmt(", oneshot %.0f/%.0f", static_cast<double>(os.forwards), static_cast<double>(os.backwards)) +
               fmt(", binary %.0f pairs (budget %.0f)", static_cast<double>(bs.forwards), static_cast<double>(budget));
        return false;
      }
    }
    return true;
  });

  criterion(8, "group identities recovered after 30 warmup rounds on 3 groups", [&](std::string& note) {
    GroupSpec gs;
    gs.client_counts = {10, 10, 10};
    gs.transform_params = {0.0, 7.0, 13.0};
    const GroupedDataset data = make_grouped_dataset(101, gs, 200, 4, 16, 0.3);

    FederationConfig cfg;
    cfg.net.layer_sizes = {16, 32, 4};
    cfg.rounds = 30;
    cfg.local_epochs = 2;
    cfg.clients_per_round = 30;
    cfg.groups = 3;
    cfg.seed = 101;
    const E2flResult res = e2fl_train(data.clients, cfg);

    const SuperNetwork net = init_supernetwork(cfg.net, cfg.seed);
    const std::vector<BinaryMask>& masks = res.registry.masks();
    const int N = static_cast<int>(data.clients.size());
    int ll_correct = 0;
    int os_agree = 0;
    std::vector<int> ll_pick(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
      const ClientData& c = data.clients[static_cast<std::size_t>(i)];
      ll_pick[static_cast<std::size_t>(i)] = lowest_loss_group(net, masks, c.train);
      if (ll_pick[static_cast<std::size_t>(i)] == c.group) ++ll_correct;
      if (oneshot_group(net, masks, c.train) == ll_pick[static_cast<std::size_t>(i)]) ++os_agree;
    }

    SuperNetwork scratch = init_supernetwork(cfg.net, cfg.seed);
    std::vector<Ranking> warmups;
    for (const ClientData& c : data.clients) {
      EPConfig ep;
      ep.epochs = cfg.local_epochs;
      ep.k_percent = cfg.k_percent;
      ep.lr = cfg.lr;
      ep.batch_size = cfg.batch_size;
      ep.momentum = cfg.momentum;
      ep.weight_decay = cfg.weight_decay;
      ep.shuffle_seed = client_shuffle_seed(cfg.seed, c.id, -1);
      warmups.push_back(local_ranking(scratch, res.global, c.train, ep));
    }
    const ClusterAssignment ca = rank_clustering(warmups, 3, 5, mix64(cfg.seed, kSaltCluster));
    // Majority-map clusters onto true groups, then score the mapped labels.
    std::vector<std::vector<int>> tally(3, std::vector<int>(3, 0));
    for (int i = 0; i < N; ++i)
      ++tally[static_cast<std::size_t>(ca.group_of[static_cast<std::size_t>(i)])]
             [static_cast<std::size_t>(data.clients[static_cast<std::size_t>(i)].group)];
    std::vector<int> mapped(3);
    for (int q = 0; q < 3; ++q)
      mapped[static_cast<std::size_t>(q)] = static_cast<int>(
          std::max_element(tally[static_cast<std::size_t>(q)].begin(), tally[static_cast<std::size_t>(q)].end()) -
          tally[static_cast<std::size_t>(q)].begin());
    int rc_correct = 0;
    for (int i = 0; i < N; ++i)
      if (mapped[static_cast<std::size_t>(ca.group_of[static_cast<std::size_t>(i)])] ==
          data.clients[static_cast<std::size_t>(i)].group)
        ++rc_correct;

    note = fmt("lowest_loss %.0f/30, rank_clustering %.0f/30, oneshot agreement %.0f/30",
               static_cast<double>(ll_correct), static_cast<double>(rc_correct), static_cast<double>(os_agree));
    return ll_correct >= 27 && rc_correct >= 27 && os_agree >= 24;
  });

  criterion(9, "rank clustering recovers planted permutation families in >=95/100 trials", [&](std::string& note) {
    const int d = 16;
    std::vector<int> base0(static_cast<std::size_t>(d));
    std::iota(base0.begin(), base0.end(), 0);
    std::vector<int> base1(base0.rbegin(), base0.rend());
    Ranking r0, r1;
    r0.layers = {base0};
    r1.layers = {base1};
    if (spearman_distance(r0, r1) < static_cast<long long>(d) * d / 4) {
      note = "base permutations too close";
      return false;
    }
    int recovered = 0;
    for (int trial = 0; trial < 100; ++trial) {
      Rng rng(3000 + static_cast<std::uint64_t>(trial), 0x706C616EULL);
      std::vector<Ranking> family;
      for (int fam = 0; fam < 2; ++fam)
        for (int m = 0; m < 20; ++m) {
          std::vector<int> p = (fam == 0) ? base0 : base1;
          for (int s = 0; s < 2; ++s) {
            const int at = static_cast<int>(rng.below(static_cast<std::uint64_t>(d - 1)));
            std::swap(p[static_cast<std::size_t>(at)], p[static_cast<std::size_t>(at) + 1]);
          }
          Ranking r;
          r.layers = {std::move(p)};
          family.push_back(std::move(r));
        }
      const ClusterAssignment ca = rank_clustering(family, 2, 5, 3000 + static_cast<std::uint64_t>(trial));
      bool exact = true;
      for (int i = 1; i < 20 && exact; ++i)
        if (ca.group_of[static_cast<std::size_t>(i)] != ca.group_of[0]) exact = false;
      for (int i = 21; i < 40 && exact; ++i)
        if (ca.group_of[static_cast<std::size_t>(i)] != ca.group_of[20]) exact = false;
      if (exact && ca.group_of[0] != ca.group_of[20]) ++recovered;
    }
    note = fmt("%.0f/100 exact recoveries", static_cast<double>(recovered));
    return recovered >= 95;
  });

  criterion(10, "wire accounting lands on 4.05 MB up / 5.99 MB down and an exact x32 ratio", [&](std::string& note) {
    // Reference network: conv(288) conv(18432) fc(1605632) fc(1280) edges,
    // ten group masks in every broadcast.
    const std::vector<long long> layer_edges = {288, 18432, 1605632, 1280};
    WireSizeModel model;  // factorial coding, 32-bit floats
    const WireSizes w = wire_sizes(layer_edges, model, 10);
    const double up_mb = static_cast<double>(w.upload_bits) / 8.0 / 1e6;
    const double down_mb = static_cast<double>(w.download_bits) / 8.0 / 1e6;
    note = fmt("up %.3f MB (ref 4.05), down %.3f MB (ref 5.99), ratio %.1f", up_mb, down_mb, w.mask_float_ratio);
    return std::fabs(up_mb - 4.05) <= 0.1 * 4.05 && std::fabs(down_mb - 5.99) <= 0.1 * 5.99 &&
           w.mask_float_ratio == 32.0;
  });

  criterion(11, "fairness metrics match hand-computed fixtures", [&](std::string& note) {
    // Decimal fixtures tolerate representation roundoff; dyadic ones are exact.
    const double tol = 1e-12;
    const LevelStats eq = equality_stats({0.8, 1.0});
    if (eq.avg != 0.9 || std::fabs(eq.variance - 0.01) > tol || std::fabs(eq.stddev - 0.1) > tol ||
        eq.worst10 != 0.8 || eq.best10 != 1.0) {
      note = "two-client equality fixture";
      return false;
    }
    std::vector<double> twelve(12);
    std::iota(twelve.begin(), twelve.end(), 1.0);
    const LevelStats dozen = spread_stats(twelve);
    if (dozen.worst10 != 1.5 || dozen.best10 != 11.5) {
      note = "bottom/top decile fixture";
      return false;
    }
    const LevelStats et = equity_stats({1.0, 0.0, 0.0}, {0, 1, 1}, 2);
    if (et.avg != 0.5 || et.variance != 0.25 || et.stddev != 0.5) {
      note = "two-group equity fixture";
      return false;
    }
    const auto eod_v = eod({1, 0, 1, 1, 1, 0, 0, 1}, {1, 1, 1, 1, 1, 1, 0, 0}, {0, 0, 1, 1, 1, 1, 0, 1});
    if (!eod_v || *eod_v != -0.25) {
      note = "equalized-odds fixture";
      return false;
    }
    if (eod({1, 0}, {1, 0}, {0, 1}).has_value()) {
      note = "equalized-odds empty-stratum fixture";
      return false;
    }
    const auto di_v = di({1, 1, 0, 1, 1, 1, 0}, {1, 0, 1, 1, 1, 1, 1}, {0, 0, 0, 1, 1, 1, 1});
    if (!di_v || *di_v != 0.5 - 6.0 / 7.0) {
      note = "f1-gap fixture";
      return false;
    }
    const auto di_zero = di({0, 0}, {0, 0}, {0, 1});
    if (!di_zero || *di_zero != 0.0) {
      note = "all-negative f1-gap fixture";
      return false;
    }
    return true;
  });

  criterion(12, "a novel cohort triggers exactly one creation seeded by the vote of existing groups",
            [&](std::string& note) {
    GroupSpec gs;
    gs.client_counts = {3, 3};
    gs.transform_params = {0.0, 7.0};
    const GroupedDataset phase1 = make_grouped_dataset(29, gs, 200, 3, 12, 0.3);

    FederationConfig cfg;
    cfg.net.layer_sizes = {12, 24, 3};
    cfg.rounds = 12;
    cfg.local_epochs = 2;
    cfg.clients_per_round = 6;
    cfg.groups = 2;
    cfg.seed = 29;
    const E2flResult warm = e2fl_train(phase1.clients, cfg);

    GroupSpec ood;
    ood.client_counts = {4};
    ood.transform_params = {13.0};
    const GroupedDataset cohort = make_grouped_dataset(29, ood, 200, 3, 12, 0.3);

    for (const InferenceMode mode : {InferenceMode::lowest_loss, InferenceMode::oneshot}) {
      const char* name = mode == InferenceMode::lowest_loss ? "lowest_loss" : "oneshot";
      FederationConfig cfg2 = cfg;
      cfg2.inference = mode;
      cfg2.groups = 0;
      cfg2.rounds = 3;
      cfg2.clients_per_round = 4;
      cfg2.round_offset = 12;
      const E2flResult res = e2fl_train(cohort.clients, cfg2, &warm.registry, &warm.global);
      if (res.creations != 1) {
        note = std::string(name) + ": " + fmt("%.0f creations", static_cast<double>(res.creations));
        return false;
      }
      if (res.registry.size() != 3 || !res.records[0].creation || res.records[1].creation ||
          res.records[2].creation) {
        note = std::string(name) + ": creation missing from the first round";
        return false;
      }
      const CreationEvent& ev = *res.records[0].creation;
      const Ranking want = knowledge_transfer_init(
          {res.records[0].group_rankings[0], res.records[0].group_rankings[1]});
      if (ev.group != 2 || !(ev.initial_ranking == want)) {
        note = std::string(name) + ": new group not seeded by the vote of existing rankings";
        return false;
      }
    }
    return true;
  });

  criterion(13, "identical configs produce byte-identical metrics files", [&](std::string& note) {
    const std::filesystem::path cfg_path = "acceptance_tmp/bench.cfg";
    {
      std::ofstream out(cfg_path, std::ios::binary);
      out << "rounds = 150\nclients_per_round = 30\nseeds = 3\nalgorithm = e2fl,fedavg\n";
    }
    RunOptions first;
    first.config_path = cfg_path.string();
    first.out_dir = "acceptance_tmp/run_a";
    first.jobs = 2;
    RunOptions second = first;
    second.out_dir = "acceptance_tmp/run_b";
    run_experiment(first);
    run_experiment(second);
    const std::string a = read_bytes("acceptance_tmp/run_a/main/seed_3/metrics.csv");
    const std::string b = read_bytes("acceptance_tmp/run_b/main/seed_3/metrics.csv");
    if (a != b) {
      note = "metrics.csv differs between the two runs";
      return false;
    }
    if (a.empty()) {
      note = "metrics.csv empty";
      return false;
    }
    return true;
  });

  if (failures == 0)
    std::printf("all 13 criteria passed\n");
  else
    std::printf("%d of 13 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
