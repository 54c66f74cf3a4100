#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shapflow/comm.hpp"
#include "shapflow/sampler.hpp"

namespace shapflow {

// One worker's slice of the weighted least-squares system whose solution is
// the per-player attribution vector. Row i is the 0/1 membership vector of
// a sampled coalition (stored dense), its target is the model output for
// that coalition minus the empty-coalition output, and its weight is the
// size-dependent kernel weight normalized so the largest finite weight
// (sizes 1 and n-1) is exactly 1.
//
// An implicit all-ones row with weight constraint_weight pins the sum of
// the attributions to constraint_target (full output minus empty output);
// it lives outside `rows` and every worker applies it identically.
struct WlsProblem {
  std::uint32_t num_players = 0;
  std::uint64_t num_rows = 0;  // local rows; complement pairs are adjacent
  int rank = 0;
  int world = 1;
  std::uint64_t global_pair_count = 0;      // pairs across all workers
  std::vector<std::uint64_t> global_pairs;  // global index of local pair j
  std::vector<float> rows;                  // num_rows x num_players, 0/1
  std::vector<double> weights;              // normalized, per local row
  std::vector<double> targets;              // v(S) - v(empty), per local row
  double constraint_target = 0.0;
  double constraint_weight = 0.0;

  const float* row(std::uint64_t i) const {
    return rows.data() + i * num_players;
  }
};

// Builds the local system from the local masks and the model outputs for
// them. values[i] is the model output under mask row i; base_value and
// full_value are the outputs with all players dropped and all kept. Row
// weights distribute each size class's kernel mass over the rows that
// represent it and are normalized to peak at 1; constraint_scale is the
// weight of the sum-pinning row on that scale.
WlsProblem assemble_problem(const MaskBlock& masks,
                            std::span<const double> values, double base_value,
                            double full_value,
                            double constraint_scale = 1.0e6);

struct CglsOptions {
  // Stop when the gradient norm drops to tol relative to the data block of
  // the starting gradient. The pinned row is excluded from the reference:
  // its weight dwarfs the kernel weights, so measuring against the whole
  // starting gradient would report convergence as soon as the sum is
  // pinned, long before the per-player fit settles.
  double tol = 1.0e-6;
  // 0 picks min(num_players, 5000)
  std::uint64_t max_iter = 0;
  // record per-iteration residual norms; costs one extra scalar all-reduce
  // per iteration, so leave off when counting collectives
  bool trace = false;
  // fixed-order tree summation (reproducible across worker counts); turning
  // it off uses plain running sums, which is faster but only reproducible
  // for one fixed layout
  bool fixed_order = true;
};

struct CglsResult {
  std::vector<double> phi;  // per player; identical on every rank
  std::uint64_t iterations = 0;
  double relative_residual = 0.0;  // data-row gradient ratio, see tol
  bool converged = false;
  std::vector<double> trace;           // relative residual per iteration
  std::vector<double> row_residual_trace;  // sqrt(weighted SSE) per iteration
};

// Conjugate-gradient least squares on the normal equations of the weighted
// system, run collectively: every rank calls with its local slice and the
// same communicator, and every rank returns the same solution.
//
// Cost per iteration is exactly one scalar all-reduce (the squared norm of
// the forward product) and one length-n all-reduce (the transpose product);
// initialization adds one more length-n all-reduce. The trace option adds
// one scalar all-reduce per iteration on top.
//
// With fixed_order on, all cross-row sums are evaluated in a fixed binary
// tree over global pair indices (padded to a power of two, at least 64
// leaves), so the returned solution is bitwise identical for any
// power-of-two worker count up to 64 and for any batch or backend
// configuration. Rows are consumed in adjacent pairs; pairs whose second
// row is the complement of the first take a cheaper path, but arbitrary
// rows are accepted (row counts must be even).
CglsResult solve_cgls(const WlsProblem& problem, Communicator& comm,
                      const CglsOptions& opts = {});

// Dense normal-equations solve (Cholesky) of the same system, for checking
// the iterative path. Requires the full system (world == 1) and refuses
// more than 20000 players.
std::vector<double> solve_direct(const WlsProblem& problem);

struct RankedEdge {
  std::uint32_t player = 0;
  double phi = 0.0;
};

// Players by descending attribution; equal values break toward the smaller
// player index so rankings are reproducible.
std::vector<RankedEdge> rank_edges(std::span<const double> phi);

}  // namespace shapflow
