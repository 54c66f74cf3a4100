#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <utility>
#include <vector>

#include "shapflow/bits.hpp"
#include "shapflow/error.hpp"
#include "shapflow/gcn.hpp"
#include "shapflow/graph.hpp"
#include "shapflow/philox.hpp"
#include "shapflow/synthetic.hpp"
#include "test_helpers.hpp"

using namespace shapflow;
using shapflow::testing::TempDir;
using shapflow::testing::toy_graph;

namespace {

// Two nodes joined by one edge; features 1 and 3; a single layer mapping
// feature x to logits (x, -x). Small enough to check by hand.
struct HandCase {
  Graph g;
  GcnModel m;
  ComputationalGraph cg;
};

HandCase hand_case() {
  HandCase h;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> edges = {{0, 1}};
  h.g = build_graph(2, edges, {1.0f, 3.0f}, 1, {});
  GcnLayer lay;
  lay.in = 1;
  lay.out = 2;
  lay.weight = {1.0f, -1.0f};
  lay.bias = {0.0f, 0.0f};
  h.m.layers.push_back(lay);
  h.cg = extract_computational_graph(h.g, 0, 1);
  return h;
}

}  // namespace

TEST_CASE("normalized adjacency by hand: kept and dropped edge") {
  HandCase h = hand_case();
  REQUIRE(h.cg.num_players() == 1);

  SparseMatrix a = normalize_adjacency(h.cg, full_mask(1));
  // degrees 2 with the self-loop: diagonal 1/2, off-diagonal 1/sqrt(2*2),
  // up to the rounding of the two float square roots
  REQUIRE(a.row_ptr == std::vector<std::size_t>{0, 2, 4});
  CHECK(a.col == std::vector<std::uint32_t>{0, 1, 1, 0});
  for (float v : a.val) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));

  SparseMatrix b = normalize_adjacency(h.cg, empty_mask(1));
  REQUIRE(b.row_ptr == std::vector<std::size_t>{0, 1, 2});
  CHECK(b.col == std::vector<std::uint32_t>{0, 1});
  for (float v : b.val) CHECK(v == 1.0f);
}

TEST_CASE("prediction by hand: aggregated logits through softmax") {
  HandCase h = hand_case();
  // kept edge: h0 = (1 + 3)/2 = 2, logits (2, -2), p0 = 1/(1 + e^-4)
  const float kept = predict(h.m, h.cg, full_mask(1), 0);
  CHECK(kept == doctest::Approx(0.9820137900379085).epsilon(1e-6));
  // dropped edge: h0 = 1, logits (1, -1), p0 = 1/(1 + e^-2)
  const float dropped = predict(h.m, h.cg, empty_mask(1), 0);
  CHECK(dropped == doctest::Approx(0.8807970779778823).epsilon(1e-6));
  // class probabilities sum to one
  const auto probs = predict_probs(h.m, h.cg, full_mask(1));
  CHECK(probs[0] + probs[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("masked prediction equals deleting the edges and rerunning") {
  Graph g = toy_graph();
  GcnModel m = gen_random_model(g.feature_dim, std::vector<std::size_t>{8},
                                3, 17);
  ComputationalGraph cg = extract_computational_graph(g, 0, 2);
  const auto n = static_cast<std::uint32_t>(cg.num_players());
  REQUIRE(n >= 4);

  std::vector<std::uint32_t> ball = cg.local_to_global;
  std::sort(ball.begin(), ball.end());

  Philox rng(99, 0);
  int covered = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint64_t> mask = empty_mask(n);
    std::set<std::pair<std::uint32_t, std::uint32_t>> kept_edges;
    for (std::uint32_t e = 0; e < n; ++e) {
      if (rng.next_double() < 0.75) {
        set_bit(mask.data(), e);
        std::uint32_t a = cg.local_to_global[cg.players[e].first];
        std::uint32_t b = cg.local_to_global[cg.players[e].second];
        if (a > b) std::swap(a, b);
        kept_edges.insert({a, b});
      }
    }

    // rebuild the graph with only the kept players and predict normally
    std::vector<std::pair<std::uint64_t, std::uint64_t>> edges(
        kept_edges.begin(), kept_edges.end());
    Graph pruned = build_graph(g.num_nodes, edges, g.features, g.feature_dim,
                               g.labels);
    ComputationalGraph pruned_cg = extract_computational_graph(pruned, 0, 2);

    // The equivalence only holds when no ball node drifts out of hop range:
    // masking keeps the node set fixed, so a node pushed beyond two hops by
    // the deletions still contributes its degree to boundary normalization,
    // while re-extraction drops it. Skip those masks.
    std::vector<std::uint32_t> pruned_ball = pruned_cg.local_to_global;
    std::sort(pruned_ball.begin(), pruned_ball.end());
    if (pruned_ball != ball) continue;
    ++covered;

    const auto probs_masked = predict_probs(m, cg, mask);
    const auto probs_rerun = predict_probs(
        m, pruned_cg, full_mask(static_cast<std::uint32_t>(
                          pruned_cg.num_players())));
    REQUIRE(probs_masked.size() == probs_rerun.size());
    for (std::size_t c = 0; c < probs_masked.size(); ++c) {
      CHECK(probs_masked[c] ==
            doctest::Approx(probs_rerun[c]).epsilon(1e-5));
    }
  }
  CHECK(covered >= 4);
}

TEST_CASE("batched prediction is independent of batch size") {
  Graph g = toy_graph();
  GcnModel m = gen_random_model(g.feature_dim, std::vector<std::size_t>{6},
                                2, 5);
  ComputationalGraph cg = extract_computational_graph(g, 1, 2);
  const auto n = static_cast<std::uint32_t>(cg.num_players());

  // seven masks covering empty, full and random fills
  const std::size_t rows = 7;
  const std::size_t wpr = words_for_bits(n);
  std::vector<std::uint64_t> bits(rows * wpr, 0);
  Philox rng(4, 1);
  for (std::size_t r = 1; r + 1 < rows; ++r) {
    for (std::uint32_t e = 0; e < n; ++e) {
      if (rng.next_double() < 0.5) set_bit(&bits[r * wpr], e);
    }
  }
  for (std::uint32_t e = 0; e < n; ++e) set_bit(&bits[(rows - 1) * wpr], e);
  BitRows masks{bits.data(), rows, wpr};

  const auto ref = predict_batched(m, cg, masks, 0, 1);
  REQUIRE(ref.size() == rows);
  for (std::size_t bs : {2, 3, 7, 50}) {
    CAPTURE(bs);
    const auto got = predict_batched(m, cg, masks, 0, bs);
    CHECK(got == ref);  // bitwise, not approximately
  }
  // and the one-at-a-time entry point agrees exactly
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<const std::uint64_t> mask{&bits[r * wpr], wpr};
    CHECK(predict(m, cg, mask, 0) == ref[r]);
  }
}

TEST_CASE("model file round-trips exactly") {
  TempDir dir;
  GcnModel m = gen_random_model(3, std::vector<std::size_t>{5, 4}, 2, 123);
  const std::string path = dir.file("m.sfn");
  save_model(m, path);
  GcnModel h = load_model(path);
  REQUIRE(h.layers.size() == m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    CHECK(h.layers[l].in == m.layers[l].in);
    CHECK(h.layers[l].out == m.layers[l].out);
    CHECK(h.layers[l].weight == m.layers[l].weight);
    CHECK(h.layers[l].bias == m.layers[l].bias);
  }
}

TEST_CASE("model loading rejects malformed files") {
  TempDir dir;
  {
    std::ofstream out(dir.file("garbage.sfn"));
    out << "not json at all";
  }
  CHECK_THROWS_AS(load_model(dir.file("garbage.sfn")), DataError);
  {
    std::ofstream out(dir.file("broken.sfn"));
    // dimension chain 2 -> (3 != 2) -> 1
    out << R"({"layers":[
      {"in":2,"out":3,"weight":[1,1,1,1,1,1],"bias":[0,0,0]},
      {"in":2,"out":1,"weight":[1,1],"bias":[0]}]})";
  }
  CHECK_THROWS_AS(load_model(dir.file("broken.sfn")), DataError);
  CHECK_THROWS_AS(load_model(dir.file("absent.sfn")), DataError);
}

TEST_CASE("prediction input validation") {
  HandCase h = hand_case();
  CHECK_THROWS_AS(predict(h.m, h.cg, full_mask(1), 7), DataError);
  BitRows masks{nullptr, 0, 0};
  CHECK_THROWS_AS(predict_batched(h.m, h.cg, masks, 0, 0), DataError);
  // model whose input width disagrees with the features
  GcnModel wide = gen_random_model(4, {}, 2, 1);
  CHECK_THROWS_AS(predict(wide, h.cg, full_mask(1), 0), DataError);
}
