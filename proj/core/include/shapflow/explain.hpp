#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shapflow/comm.hpp"
#include "shapflow/document.hpp"
#include "shapflow/gcn.hpp"
#include "shapflow/graph.hpp"

namespace shapflow {

struct ExplainOptions {
  std::uint64_t samples = 0;  // 0: auto_samples(player count)
  std::size_t batch_size = 50;
  std::uint32_t top_k = 10;
  std::vector<std::uint32_t> top_counts = {5, 10, 20};
  std::vector<double> sparsities = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::uint64_t seed = 0;
  double tol = 1.0e-6;
  std::uint64_t max_iter = 0;  // 0: solver default
  // Nodes with more players than this are skipped with a warning record;
  // 0 disables the cap.
  std::uint64_t player_cap = 0;
  bool allow_exhaustive = true;
  double constraint_scale = 1.0e6;
  bool fidelity = true;
  std::uint32_t baseline_trials = 8;
  bool fixed_order = true;
};

// Sample-count default by problem size.
std::uint64_t auto_samples(std::size_t num_players);

// Per-node sampling and baseline seed derived from the configured seed, so
// different nodes draw different coalitions. Independent of worker count.
std::uint64_t node_sampling_seed(std::uint64_t seed, std::uint32_t node);

// Explains one node collectively: every rank of `comm` must call this with
// identical arguments. Extracts the depth-hop computational graph, samples
// this rank's share of coalition masks, scores them with batched masked
// inference, solves the weighted least squares system, ranks the edges and
// scores fidelity. The returned explanation is identical on every rank.
// An unconverged solve is reported in the warning field, not thrown.
NodeExplanation explain_node(const Graph& g, const GcnModel& m,
                             std::uint32_t node, const ExplainOptions& opts,
                             Communicator& comm);

// Runs explain_node over the list sequentially with the same worker pool
// and collects the per-node warnings. The config echo carries the
// numerical settings; callers fill in the file paths and backend name.
ExplanationDocument explain_nodes(const Graph& g, const GcnModel& m,
                                  std::span<const std::uint32_t> nodes,
                                  const ExplainOptions& opts,
                                  Communicator& comm);

// Node selection: either a comma-separated id list ("3,17,42") or the rule
// "degree-range:[lo,hi]:count", which takes the first `count` node ids in
// ascending order whose degree lies in [lo, hi]. May select fewer than
// `count` nodes, including none.
std::vector<std::uint32_t> select_nodes(const Graph& g,
                                        const std::string& rule);

}  // namespace shapflow
