#include <doctest.h>

#include <bit>
#include <cmath>
#include <span>
#include <vector>

#include "shapflow/comm.hpp"
#include "shapflow/error.hpp"
#include "shapflow/gcn.hpp"
#include "shapflow/graph.hpp"
#include "shapflow/oracle.hpp"
#include "shapflow/sampler.hpp"
#include "shapflow/solver.hpp"
#include "shapflow/synthetic.hpp"

#include "test_helpers.hpp"

using namespace shapflow;

TEST_CASE("additive games attribute each player its own term") {
  const std::uint32_t n = 8;
  const std::vector<double> a = {0.5, -1.0, 2.0, 0.0, 3.5, -0.25, 1.0, 4.0};
  auto game = [&](std::uint64_t mask) {
    double v = 0.0;
    for (std::uint32_t i = 0; i < n; ++i)
      if (mask & (1ull << i)) v += a[i];
    return v;
  };
  const std::vector<double> phi = exact_shapley(n, game);
  REQUIRE(phi.size() == n);
  for (std::uint32_t i = 0; i < n; ++i) {
    CHECK(phi[i] == doctest::Approx(a[i]).epsilon(1e-12));
  }
}

TEST_CASE("constant games attribute nothing") {
  const std::vector<double> phi =
      exact_shapley(5, [](std::uint64_t) { return 3.25; });
  for (double v : phi) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("two-player hand case") {
  // f(empty)=0, f({0})=1, f({1})=2, f(both)=4
  auto game = [](std::uint64_t mask) {
    switch (mask) {
      case 0b00: return 0.0;
      case 0b01: return 1.0;
      case 0b10: return 2.0;
      default: return 4.0;
    }
  };
  const std::vector<double> phi = exact_shapley(2, game);
  CHECK(phi[0] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(phi[1] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("attributions always sum to the full-minus-empty span") {
  auto game = [](std::uint64_t mask) {
    // arbitrary nonlinear game
    const double s = static_cast<double>(std::popcount(mask));
    return s * s + 0.25 * static_cast<double>(mask % 7);
  };
  for (std::uint32_t n : {1u, 4u, 9u}) {
    CAPTURE(n);
    const std::vector<double> phi = exact_shapley(n, game);
    double sum = 0.0;
    for (double v : phi) sum += v;
    const double full = game((1ull << n) - 1);
    CHECK(sum == doctest::Approx(full - game(0)).epsilon(1e-12));
  }
}

TEST_CASE("model oracle agrees with the generic oracle") {
  const Graph g = testing::toy_graph(3);
  const GcnModel m = gen_random_model(3, std::vector<std::size_t>{4}, 2, 11);
  const ComputationalGraph cg = extract_computational_graph(g, 1, 2);
  const std::uint32_t n = static_cast<std::uint32_t>(cg.num_players());
  REQUIRE(n == 7);  // two hops from node 1 reach the whole toy graph

  const std::vector<double> direct = exact_shapley_gnn(m, cg, 1, 16);

  auto game = [&](std::uint64_t mask) {
    return static_cast<double>(
        predict(m, cg, std::span<const std::uint64_t>(&mask, 1), 1));
  };
  const std::vector<double> generic = exact_shapley(n, game);
  REQUIRE(direct.size() == generic.size());
  for (std::size_t i = 0; i < direct.size(); ++i) {
    CHECK(direct[i] == doctest::Approx(generic[i]).epsilon(1e-10));
  }
}

TEST_CASE("model oracle is batch-size independent") {
  const Graph g = testing::toy_graph(2);
  const GcnModel m = gen_random_model(2, std::vector<std::size_t>{3}, 2, 7);
  const ComputationalGraph cg = extract_computational_graph(g, 0, 2);
  const std::vector<double> a = exact_shapley_gnn(m, cg, 0, 1);
  const std::vector<double> b = exact_shapley_gnn(m, cg, 0, 64);
  const std::vector<double> c = exact_shapley_gnn(m, cg, 0, 1000);
  REQUIRE(a.size() == b.size());
  REQUIRE(a.size() == c.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == b[i]);
    CHECK(a[i] == c[i]);
  }
}

TEST_CASE("exhaustive weighted fit reproduces the exact attribution") {
  // with every coalition enumerated, the kernel-weighted least squares
  // solution is the exact value
  const Graph g = testing::toy_graph(2);
  const GcnModel m = gen_random_model(2, std::vector<std::size_t>{4}, 2, 3);
  const ComputationalGraph cg = extract_computational_graph(g, 1, 1);
  const std::uint32_t n = static_cast<std::uint32_t>(cg.num_players());
  REQUIRE(n == 5);  // induced edges within one hop of node 1

  const std::vector<double> exact = exact_shapley_gnn(m, cg, 0);

  SizePlan plan = plan_sizes(n, std::uint64_t{1} << n, true);
  REQUIRE(plan.exhaustive);
  MaskBlock mb = generate_masks(plan, 0);
  const std::vector<float> outs = predict_batched(m, cg, mb.view(), 0, 50);
  const std::vector<double> values(outs.begin(), outs.end());
  std::uint64_t empty = 0, full = (1ull << n) - 1;
  const double base =
      predict(m, cg, std::span<const std::uint64_t>(&empty, 1), 0);
  const double full_v =
      predict(m, cg, std::span<const std::uint64_t>(&full, 1), 0);
  const WlsProblem p = assemble_problem(mb, values, base, full_v);
  auto comm = make_local_communicator();
  const CglsResult res = solve_cgls(p, *comm);

  for (std::uint32_t i = 0; i < n; ++i) {
    CHECK(std::abs(res.phi[i] - exact[i]) <= 1e-6);
  }
}

TEST_CASE("oracle input validation") {
  CHECK_THROWS_AS(exact_shapley(23, [](std::uint64_t) { return 0.0; }),
                  DataError);
  CHECK(exact_shapley(0, [](std::uint64_t) { return 0.0; }).empty());
}
