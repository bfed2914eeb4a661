// Rank aggregation on a toy net: three clients vote, the consensus picks the
// winning mask, and the wire model prices the exchange under both codings.

#include <cstdio>

#include <e2fl/ranking.hpp>
#include <e2fl/rng.hpp>

using namespace e2fl;

namespace {

Ranking random_ranking(Rng& rng, const NetSpec& spec) {
  Ranking r;
  for (int l = 0; l < spec.num_layers(); ++l) {
    std::vector<int> perm(static_cast<std::size_t>(spec.edge_count(l)));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    rng.shuffle(perm);
    r.layers.push_back(std::move(perm));
  }
  return r;
}

void print_layer(const char* name, const std::vector<int>& perm) {
  std::printf("  %-10s", name);
  for (int p : perm) std::printf(" %2d", p);
  std::printf("\n");
}

}  // namespace

int main() {
  const NetSpec spec{{3, 4, 2}};
  Rng rng(7);

  std::vector<Ranking> ballots;
  for (int c = 0; c < 3; ++c) ballots.push_back(random_ranking(rng, spec));
  const Ranking consensus = vote(ballots);

  std::printf("layer 0 ballots (worst edge first, %d edges):\n", spec.edge_count(0));
  for (std::size_t c = 0; c < ballots.size(); ++c) {
    char name[16];
    std::snprintf(name, sizeof name, "client %zu", c);
    print_layer(name, ballots[c].layers[0]);
  }
  print_layer("consensus", consensus.layers[0]);

  std::printf("\nfootrule distance to consensus:");
  for (const Ranking& b : ballots) std::printf(" %lld", spearman_distance(b, consensus));
  std::printf("\n");

  const BinaryMask mask = ranking_to_mask(consensus, 50.0);
  std::printf("\ntop-50%% mask, layer 0:");
  for (std::uint8_t bit : mask.layers[0]) std::printf(" %d", static_cast<int>(bit));
  std::printf("\n");

  // Pricing a realistic conv topology takes raw edge counts; its layers do
  // not factor as a fully connected chain.
  const std::vector<long long> conv_edges = {288, 18432, 1605632, 1280};
  for (RankCoding coding : {RankCoding::factorial, RankCoding::index}) {
    WireSizeModel model;
    model.coding = coding;
    const WireSizes w = wire_sizes(conv_edges, model, 10);
    std::printf("\n%s coding, 10 groups:\n", coding == RankCoding::factorial ? "factorial" : "index");
    std::printf("  upload   %8.3f MB per client per round\n", static_cast<double>(w.upload_bits) / 8e6);
    std::printf("  download %8.3f MB (ranking + 10 masks)\n", static_cast<double>(w.download_bits) / 8e6);
    std::printf("  dense    %8.3f MB (32-bit weights), mask is x%.0f smaller\n",
                static_cast<double>(w.dense_bits) / 8e6, w.mask_float_ratio);
  }
  return 0;
}
