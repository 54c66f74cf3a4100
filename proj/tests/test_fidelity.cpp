#include <doctest.h>

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "shapflow/error.hpp"
#include "shapflow/fidelity.hpp"
#include "shapflow/gcn.hpp"
#include "shapflow/graph.hpp"
#include "shapflow/synthetic.hpp"

#include "test_helpers.hpp"

using namespace shapflow;

namespace {

struct Fixture {
  Graph g = testing::toy_graph(3);
  GcnModel m = gen_random_model(3, std::vector<std::size_t>{4}, 2, 21);
  ComputationalGraph cg = extract_computational_graph(g, 1, 2);
};

double masked_score(const GcnModel& m, const ComputationalGraph& cg,
                    std::uint32_t cls, std::uint64_t mask) {
  return static_cast<double>(
      predict(m, cg, std::span<const std::uint64_t>(&mask, 1), cls));
}

}  // namespace

TEST_CASE("removing nothing changes nothing") {
  Fixture f;
  CHECK(fidelity_plus(f.m, f.cg, 0, std::vector<std::uint32_t>{}) == 0.0);
}

TEST_CASE("removing everything compares against the empty graph") {
  Fixture f;
  const std::uint32_t n = static_cast<std::uint32_t>(f.cg.num_players());
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  const double full = masked_score(f.m, f.cg, 1, (1ull << n) - 1);
  const double base = masked_score(f.m, f.cg, 1, 0);
  CHECK(fidelity_plus(f.m, f.cg, 1, all) ==
        doctest::Approx(std::abs(full - base)).epsilon(1e-12));
}

TEST_CASE("score drop matches a hand-built mask") {
  Fixture f;
  const std::uint32_t n = static_cast<std::uint32_t>(f.cg.num_players());
  REQUIRE(n == 7);
  const std::vector<std::uint32_t> selected = {1, 4};
  const std::uint64_t mask = ((1ull << n) - 1) & ~(1ull << 1) & ~(1ull << 4);
  const double full = masked_score(f.m, f.cg, 0, (1ull << n) - 1);
  const double expect = std::abs(full - masked_score(f.m, f.cg, 0, mask));
  CHECK(fidelity_plus(f.m, f.cg, 0, selected) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("kept player count per sparsity level") {
  CHECK(kept_at_sparsity(10, 0.0) == 10);
  CHECK(kept_at_sparsity(10, 0.5) == 5);
  CHECK(kept_at_sparsity(10, 1.0) == 0);
  CHECK(kept_at_sparsity(7, 0.5) == 4);   // ceil(3.5)
  CHECK(kept_at_sparsity(10, 0.95) == 1); // ceil(0.5)
  CHECK(kept_at_sparsity(10, 0.99) == 1);
  CHECK(kept_at_sparsity(0, 0.3) == 0);
  CHECK_THROWS_AS(kept_at_sparsity(10, -0.1), DataError);
  CHECK_THROWS_AS(kept_at_sparsity(10, 1.5), DataError);
}

TEST_CASE("keeping everyone at sparsity zero is exact") {
  Fixture f;
  const std::uint32_t n = static_cast<std::uint32_t>(f.cg.num_players());
  std::vector<double> phi(n, 0.0);
  for (std::uint32_t i = 0; i < n; ++i) phi[i] = 0.1 * i;
  CHECK(fidelity_minus(f.m, f.cg, 0, phi, 0.0) == 0.0);
}

TEST_CASE("kept core is the attribution ranking prefix") {
  Fixture f;
  const std::uint32_t n = static_cast<std::uint32_t>(f.cg.num_players());
  REQUIRE(n == 7);
  // strongest players 3, 0, 6 in that order
  const std::vector<double> phi = {5.0, -1.0, 0.0, 9.0, 0.5, 0.25, 4.0};
  // sparsity 0.6 keeps ceil(0.4 * 7) = 3 players
  const std::uint64_t kept = (1ull << 3) | (1ull << 0) | (1ull << 6);
  const double full = masked_score(f.m, f.cg, 1, (1ull << n) - 1);
  const double expect = std::abs(full - masked_score(f.m, f.cg, 1, kept));
  CHECK(fidelity_minus(f.m, f.cg, 1, phi, 0.6) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("random baselines are reproducible and bounded") {
  Fixture f;
  const double a = random_fidelity_plus(f.m, f.cg, 0, 3, 42, 8);
  const double b = random_fidelity_plus(f.m, f.cg, 0, 3, 42, 8);
  const double c = random_fidelity_plus(f.m, f.cg, 0, 3, 43, 8);
  CHECK(a == b);
  CHECK(a != c);  // astronomically unlikely to collide
  CHECK(a >= 0.0);
  CHECK(a <= 1.0);

  const double d = random_fidelity_minus(f.m, f.cg, 0, 0.5, 42, 8);
  const double e = random_fidelity_minus(f.m, f.cg, 0, 0.5, 42, 8);
  CHECK(d == e);
  CHECK(d >= 0.0);

  // degenerate cardinalities need no model call and are exactly zero
  CHECK(random_fidelity_plus(f.m, f.cg, 0, 0, 7, 4) == 0.0);
  CHECK(random_fidelity_minus(f.m, f.cg, 0, 0.0, 7, 4) == 0.0);
}

TEST_CASE("report covers every requested size and level") {
  Fixture f;
  const std::uint32_t n = static_cast<std::uint32_t>(f.cg.num_players());
  std::vector<double> phi(n);
  for (std::uint32_t i = 0; i < n; ++i) phi[i] = 1.0 / (i + 1);
  const std::vector<std::uint32_t> counts = {2, 5, 100};  // 100 clamps to n
  const std::vector<double> levels = {0.0, 0.5, 1.0};
  const FidelityReport rep =
      evaluate_fidelity(f.m, f.cg, 0, phi, counts, levels, 9, 4);

  REQUIRE(rep.top_counts.size() == 3);
  CHECK(rep.top_counts[2] == n);
  REQUIRE(rep.plus.size() == 3);
  REQUIRE(rep.plus_random.size() == 3);
  REQUIRE(rep.minus.size() == 3);
  REQUIRE(rep.minus_random.size() == 3);
  CHECK(rep.baseline_seed == 9);
  CHECK(rep.baseline_trials == 4);
  CHECK(rep.minus[0] == 0.0);  // sparsity 0 keeps everyone

  // spot-check one entry against the direct call
  CHECK(rep.plus[0] ==
        fidelity_plus(f.m, f.cg, 0, std::vector<std::uint32_t>(
                                        {0, 1})));  // top-2 by phi
  CHECK(rep.minus[1] == fidelity_minus(f.m, f.cg, 0, phi, 0.5));
}

TEST_CASE("fidelity input validation") {
  Fixture f;
  const std::uint32_t n = static_cast<std::uint32_t>(f.cg.num_players());
  std::vector<double> phi(n, 0.0);
  CHECK_THROWS_AS(fidelity_minus(f.m, f.cg, 0, phi, -0.01), DataError);
  CHECK_THROWS_AS(fidelity_minus(f.m, f.cg, 0, phi, 1.01), DataError);
  std::vector<double> short_phi(n - 1, 0.0);
  CHECK_THROWS_AS(fidelity_minus(f.m, f.cg, 0, short_phi, 0.5), DataError);
  const std::vector<std::uint32_t> oob = {n};
  CHECK_THROWS_AS(fidelity_plus(f.m, f.cg, 0, oob), DataError);
}
