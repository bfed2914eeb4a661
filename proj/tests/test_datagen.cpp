#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include <e2fl/datagen.hpp>

using namespace e2fl;

namespace {

Batch pool_batches(const std::vector<const Batch*>& parts) {
  Batch out;
  out.cols = parts.front()->cols;
  for (const Batch* p : parts) {
    out.rows += p->rows;
    out.x.insert(out.x.end(), p->x.begin(), p->x.end());
    out.y.insert(out.y.end(), p->y.begin(), p->y.end());
  }
  return out;
}

// Small dense trainer, just enough model to probe distribution shifts.
LayerVec train_dense(const NetSpec& spec, const Batch& data, int epochs, std::uint64_t seed) {
  LayerVec w = initial_weights(spec, seed);
  LayerVec velocity;
  std::vector<int> order(static_cast<std::size_t>(data.rows));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(seed, static_cast<std::uint64_t>(epoch) + 1);
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += 16) {
      const std::size_t stop = std::min(order.size(), start + 16);
      const Batch mb = data.select(std::vector<int>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                    order.begin() + static_cast<std::ptrdiff_t>(stop)));
      const DenseBackward bwd = backward_dense(spec, w, mb);
      sgd_step(w, bwd.grads, velocity, 0.1, 0.9, 1e-4);
    }
  }
  return w;
}

double dense_accuracy(const NetSpec& spec, const LayerVec& w, const Batch& b) {
  return accuracy(forward_dense(spec, w, b), b.y);
}

}  // namespace

TEST_CASE("grouped dataset is reproducible from its seed") {
  GroupSpec spec;
  spec.client_counts = {2, 3};
  const GroupedDataset a = make_grouped_dataset(7, spec, 20, 3, 6);
  const GroupedDataset b = make_grouped_dataset(7, spec, 20, 3, 6);
  REQUIRE(a.clients.size() == 5);
  for (std::size_t i = 0; i < a.clients.size(); ++i) {
    CHECK(a.clients[i].id == static_cast<int>(i));
    CHECK(a.clients[i].train.x == b.clients[i].train.x);
    CHECK(a.clients[i].test.y == b.clients[i].test.y);
  }
  const GroupedDataset c = make_grouped_dataset(8, spec, 20, 3, 6);
  CHECK(a.clients[0].train.x != c.clients[0].train.x);
}

TEST_CASE("train/test split is an exact 80/20 cut") {
  GroupSpec spec;
  spec.client_counts = {1};
  const GroupedDataset ds = make_grouped_dataset(1, spec, 200, 4, 16);
  CHECK(ds.clients[0].train.rows == 160);
  CHECK(ds.clients[0].test.rows == 40);
  const GroupedDataset tiny = make_grouped_dataset(1, spec, 2, 2, 4);
  CHECK(tiny.clients[0].train.rows == 1);
  CHECK(tiny.clients[0].test.rows == 1);
}

TEST_CASE("group transforms are bijective") {
  Rng rng(3, 3);
  GroupSpec perm;
  perm.client_counts = {1, 1, 1};
  perm.kind = TransformKind::coordinate_permutation;
  GroupSpec rot;
  rot.client_counts = {1, 1, 1};
  rot.kind = TransformKind::planar_rotation;
  for (int g = 0; g < 3; ++g) {
    std::vector<double> x(10);
    for (double& v : x) v = rng.normal();
    const std::vector<double> orig = x;
    apply_transform(perm, g, 5, x);
    apply_inverse_transform(perm, g, 5, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - orig[i]) < 1e-9);
    x = orig;
    apply_transform(rot, g, 5, x);
    if (g > 0) CHECK(x != orig);
    apply_inverse_transform(rot, g, 5, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - orig[i]) < 1e-9);
  }
  // Param 0 is the identity permutation.
  std::vector<double> x{1.0, 2.0, 3.0};
  apply_transform(perm, 0, 5, x);
  CHECK(x == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("identity transforms yield one indistinguishable population") {
  GroupSpec spec;
  spec.client_counts = {6, 6};
  spec.transform_params = {0.0, 0.0};
  const GroupedDataset ds = make_grouped_dataset(11, spec, 200, 3, 8, 0.3);

  NetSpec net;
  net.layer_sizes = {8, 16, 3};
  std::vector<const Batch*> train0, test0, test1;
  for (const auto& c : ds.clients) {
    if (c.group == 0) {
      train0.push_back(&c.train);
      test0.push_back(&c.test);
    } else {
      test1.push_back(&c.test);
    }
  }
  const LayerVec w = train_dense(net, pool_batches(train0), 8, 19);
  const double acc0 = dense_accuracy(net, w, pool_batches(test0));
  const double acc1 = dense_accuracy(net, w, pool_batches(test1));
  CHECK(acc0 > 0.85);
  CHECK(std::abs(acc0 - acc1) < 0.05);
}

TEST_CASE("distinct permutations put other groups near chance") {
  GroupSpec spec;
  spec.client_counts = {6, 6};
  spec.transform_params = {0.0, 7.0};
  const GroupedDataset ds = make_grouped_dataset(13, spec, 200, 4, 16, 0.3);

  NetSpec net;
  net.layer_sizes = {16, 32, 4};
  std::vector<const Batch*> train0, test0, test1;
  for (const auto& c : ds.clients) {
    if (c.group == 0) {
      train0.push_back(&c.train);
      test0.push_back(&c.test);
    } else {
      test1.push_back(&c.test);
    }
  }
  const LayerVec w = train_dense(net, pool_batches(train0), 8, 23);
  CHECK(dense_accuracy(net, w, pool_batches(test0)) > 0.9);
  CHECK(dense_accuracy(net, w, pool_batches(test1)) <= 0.25 + 0.1);
}

TEST_CASE("dirichlet partition covers the pool exactly") {
  TabularBiasSpec tspec;
  tspec.n_samples = 500;
  const TabularDataset ds = make_biased_tabular(tspec, 5);
  const auto parts = dirichlet_partition(ds.all, 9, 1.0, 5);
  REQUIRE(parts.size() == 9);
  std::vector<int> seen(static_cast<std::size_t>(ds.all.rows), 0);
  for (const auto& part : parts) {
    CHECK_FALSE(part.empty());
    for (int idx : part) {
      REQUIRE(idx >= 0);
      REQUIRE(idx < ds.all.rows);
      ++seen[static_cast<std::size_t>(idx)];
    }
  }
  for (int s : seen) CHECK(s == 1);
  CHECK(dirichlet_partition(ds.all, 9, 1.0, 5) == parts);
  CHECK(dirichlet_partition(ds.all, 1, 1.0, 5).front().size() == static_cast<std::size_t>(ds.all.rows));
  CHECK_THROWS_AS(dirichlet_partition(ds.all, 0, 1.0, 5), std::invalid_argument);
  CHECK_THROWS_AS(dirichlet_partition(ds.all, 9, 0.0, 5), std::invalid_argument);
}

TEST_CASE("dirichlet alpha controls class skew") {
  TabularBiasSpec tspec;
  tspec.n_samples = 20000;
  tspec.pr_y1_a1 = 0.5;
  tspec.pr_y1_a0 = 0.5;
  const TabularDataset ds = make_biased_tabular(tspec, 9);
  double global_share = 0.0;
  for (int y : ds.all.y) global_share += y;
  global_share /= ds.all.rows;

  // Huge alpha: every client's class mix hugs the global mix.
  for (const auto& part : dirichlet_partition(ds.all, 20, 5000.0, 9)) {
    double share = 0.0;
    for (int idx : part) share += ds.all.y[static_cast<std::size_t>(idx)];
    share /= static_cast<double>(part.size());
    CHECK(std::abs(share - global_share) / global_share < 0.05);
  }

  // alpha = 1: at least one client ends up with a clearly inflated class share.
  double most = 0.0;
  for (const auto& part : dirichlet_partition(ds.all, 20, 1.0, 9)) {
    double share = 0.0;
    for (int idx : part) share += ds.all.y[static_cast<std::size_t>(idx)];
    most = std::max(most, share / static_cast<double>(part.size()));
  }
  CHECK(most >= 1.5 * global_share);
}

TEST_CASE("tabular generator hits the requested rates") {
  TabularBiasSpec spec;
  spec.n_samples = 48842;
  spec.pr_a1 = 0.675;
  spec.pr_y1_a1 = 0.314;
  spec.pr_y1_a0 = 0.113;
  const TabularDataset ds = make_biased_tabular(spec, 33);
  REQUIRE(ds.all.rows == spec.n_samples);
  REQUIRE(ds.attr.size() == static_cast<std::size_t>(spec.n_samples));

  double a1 = 0.0, y1a1 = 0.0, y1a0 = 0.0, n1 = 0.0, n0 = 0.0;
  for (int r = 0; r < ds.all.rows; ++r) {
    if (ds.attr[static_cast<std::size_t>(r)]) {
      a1 += 1.0;
      n1 += 1.0;
      y1a1 += ds.all.y[static_cast<std::size_t>(r)];
    } else {
      n0 += 1.0;
      y1a0 += ds.all.y[static_cast<std::size_t>(r)];
    }
  }
  CHECK(std::abs(a1 / ds.all.rows - spec.pr_a1) < 0.01);
  CHECK(std::abs(y1a1 / n1 - spec.pr_y1_a1) < 0.01);
  CHECK(std::abs(y1a0 / n0 - spec.pr_y1_a0) < 0.01);
}

TEST_CASE("label signal is attribute-symmetric for the planted classifier") {
  TabularBiasSpec spec;
  spec.n_samples = 20000;
  spec.pr_a1 = 0.5;
  spec.pr_y1_a1 = 0.4;
  spec.pr_y1_a0 = 0.6;
  const TabularDataset ds = make_biased_tabular(spec, 21);

  // Bayes-style rule along the label direction ignores A entirely.
  double tp1 = 0.0, p1 = 0.0, tp0 = 0.0, p0 = 0.0;
  for (int r = 0; r < ds.all.rows; ++r) {
    double dot = 0.0;
    for (int i = 0; i < ds.all.cols; ++i)
      dot += ds.all.at(r, i) * ds.y_direction[static_cast<std::size_t>(i)];
    const int pred = dot >= spec.y_shift / 2 ? 1 : 0;
    if (ds.all.y[static_cast<std::size_t>(r)] == 1) {
      if (ds.attr[static_cast<std::size_t>(r)]) {
        p1 += 1.0;
        tp1 += pred;
      } else {
        p0 += 1.0;
        tp0 += pred;
      }
    }
  }
  CHECK(std::abs(tp0 / p0 - tp1 / p1) < 0.03);

  // The attribute direction really is orthogonal to the label direction.
  double dot = 0.0;
  for (std::size_t i = 0; i < ds.y_direction.size(); ++i) dot += ds.y_direction[i] * ds.a_direction[i];
  CHECK(std::abs(dot) < 1e-12);
}

TEST_CASE("dataset fixtures round-trip through bytes and files") {
  GroupSpec spec;
  spec.client_counts = {1, 2};
  GroupedDataset ds = make_grouped_dataset(17, spec, 10, 3, 5);
  ds.clients[0].train_attr.assign(static_cast<std::size_t>(ds.clients[0].train.rows), 1);
  ds.clients[0].test_attr.assign(static_cast<std::size_t>(ds.clients[0].test.rows), 0);
  for (std::size_t i = 1; i < ds.clients.size(); ++i) {
    ds.clients[i].train_attr.assign(static_cast<std::size_t>(ds.clients[i].train.rows), 0);
    ds.clients[i].test_attr.assign(static_cast<std::size_t>(ds.clients[i].test.rows), 1);
  }

  const std::vector<std::uint8_t> bytes = serialize_dataset(ds);
  const GroupedDataset back = deserialize_dataset(bytes);
  REQUIRE(back.clients.size() == ds.clients.size());
  CHECK(back.feature_dim == 5);
  CHECK(back.n_classes == 3);
  for (std::size_t i = 0; i < ds.clients.size(); ++i) {
    CHECK(back.clients[i].id == ds.clients[i].id);
    CHECK(back.clients[i].group == ds.clients[i].group);
    CHECK(back.clients[i].train.y == ds.clients[i].train.y);
    CHECK(back.clients[i].test.y == ds.clients[i].test.y);
    CHECK(back.clients[i].train_attr == ds.clients[i].train_attr);
    CHECK(back.clients[i].test_attr == ds.clients[i].test_attr);
    REQUIRE(back.clients[i].train.x.size() == ds.clients[i].train.x.size());
    for (std::size_t j = 0; j < ds.clients[i].train.x.size(); ++j)
      CHECK(back.clients[i].train.x[j] == static_cast<double>(static_cast<float>(ds.clients[i].train.x[j])));
  }

  const std::string path = "datagen_roundtrip.bin";
  save_dataset(ds, path);
  const GroupedDataset loaded = load_dataset(path);
  CHECK(serialize_dataset(loaded) == bytes);
  std::remove(path.c_str());

  std::vector<std::uint8_t> cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(deserialize_dataset(cut), std::invalid_argument);
  std::vector<std::uint8_t> extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(deserialize_dataset(extra), std::invalid_argument);
  std::vector<std::uint8_t> bad = bytes;
  bad[0] ^= 0xFF;
  CHECK_THROWS_AS(deserialize_dataset(bad), std::invalid_argument);
}
