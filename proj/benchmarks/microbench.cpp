#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "shapflow/comm.hpp"
#include "shapflow/gcn.hpp"
#include "shapflow/graph.hpp"
#include "shapflow/sampler.hpp"
#include "shapflow/solver.hpp"
#include "shapflow/synthetic.hpp"

namespace {

using namespace shapflow;

// One shared medium-sized problem so the benchmarks measure the kernels,
// not setup.
struct Fixture {
  Graph graph = gen_random_graph(400, 2400, 16, 2, 7);
  GcnModel model =
      gen_random_model(16, std::vector<std::size_t>{32}, 2, 7);
  ComputationalGraph cg;

  Fixture() {
    // pick a node with a reasonably large two-hop neighborhood
    std::uint32_t best = 0;
    std::size_t best_players = 0;
    for (std::uint32_t u = 0; u < graph.num_nodes; u += 17) {
      const auto c = extract_computational_graph(graph, u, 2);
      if (c.num_players() > best_players) {
        best_players = c.num_players();
        best = u;
      }
    }
    cg = extract_computational_graph(graph, best, 2);
  }

  static const Fixture& get() {
    static Fixture f;
    return f;
  }
};

void BM_MaskGeneration(benchmark::State& state) {
  const auto n = static_cast<std::uint32_t>(Fixture::get().cg.num_players());
  const auto k = static_cast<std::uint64_t>(state.range(0));
  const SizePlan plan = plan_sizes(n, k, false);
  for (auto _ : state) {
    MaskBlock mb = generate_masks(plan, 1);
    benchmark::DoNotOptimize(mb.bits.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(k));
}
BENCHMARK(BM_MaskGeneration)->Arg(1 << 10)->Arg(1 << 13)->Arg(1 << 16);

void BM_BatchedInference(benchmark::State& state) {
  const Fixture& f = Fixture::get();
  const auto n = static_cast<std::uint32_t>(f.cg.num_players());
  const SizePlan plan = plan_sizes(n, 1024, false);
  const MaskBlock mb = generate_masks(plan, 1);
  const auto batch = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto out = predict_batched(f.model, f.cg, mb.view(), 0, batch);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(mb.num_rows));
}
BENCHMARK(BM_BatchedInference)->Arg(1)->Arg(10)->Arg(50)->Arg(200);

void BM_IterativeSolve(benchmark::State& state) {
  const Fixture& f = Fixture::get();
  const auto n = static_cast<std::uint32_t>(f.cg.num_players());
  const auto k = static_cast<std::uint64_t>(state.range(0));
  const SizePlan plan = plan_sizes(n, k, false);
  const MaskBlock mb = generate_masks(plan, 1);
  const std::vector<float> outs = predict_batched(f.model, f.cg, mb.view(), 0, 50);
  const std::vector<double> values(outs.begin(), outs.end());
  const WlsProblem p = assemble_problem(mb, values, 0.4, 0.6);
  for (auto _ : state) {
    auto comm = make_local_communicator();
    CglsResult res = solve_cgls(p, *comm);
    benchmark::DoNotOptimize(res.phi.data());
  }
}
BENCHMARK(BM_IterativeSolve)->Arg(1 << 12)->Arg(1 << 14);

}  // namespace

BENCHMARK_MAIN();
