#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace shapflow {

inline constexpr std::uint32_t kNoLabel = 0xFFFFFFFFu;

// Undirected graph with node features, stored as a symmetric CSR.
// Rows are sorted, self-loops are dropped at construction, duplicate input
// edges collapse to one.
struct Graph {
  std::uint32_t num_nodes = 0;
  std::size_t feature_dim = 0;
  std::vector<std::size_t> row_ptr;    // num_nodes + 1
  std::vector<std::uint32_t> col;      // both directions of every edge
  std::vector<float> features;         // num_nodes x feature_dim, row major
  std::vector<std::uint32_t> labels;   // kNoLabel where absent

  std::size_t num_undirected_edges() const { return col.size() / 2; }
  std::span<const std::uint32_t> neighbors(std::uint32_t u) const {
    return {col.data() + row_ptr[u], col.data() + row_ptr[u + 1]};
  }
};

// The hop-limited neighborhood a GCN prediction for one node depends on.
// Local node ids follow breadth-first discovery order with the target at 0.
// Players are the undirected edges inside the ball (edges between two
// boundary nodes included); they are what explanation masks toggle.
// Self-loops are added later by adjacency normalization and are never
// players.
struct ComputationalGraph {
  std::uint32_t target_global = 0;
  std::size_t feature_dim = 0;
  std::vector<std::uint32_t> local_to_global;
  // players[e] = (u, v) in local ids with u < v, sorted lexicographically
  std::vector<std::pair<std::uint32_t, std::uint32_t>> players;
  // symmetric CSR over local ids; edge_player[i] is the player owning the
  // stored direction col[i]
  std::vector<std::size_t> row_ptr;
  std::vector<std::uint32_t> col;
  std::vector<std::uint32_t> edge_player;
  std::vector<float> features;  // |V_c| x feature_dim

  std::uint32_t num_nodes() const {
    return static_cast<std::uint32_t>(local_to_global.size());
  }
  std::size_t num_players() const { return players.size(); }
};

// Symmetrizes, deduplicates and drops self-loops. Throws DataError on
// out-of-range endpoints or a feature/label buffer of the wrong size.
Graph build_graph(std::uint32_t num_nodes,
                  std::span<const std::pair<std::uint64_t, std::uint64_t>> edges,
                  std::vector<float> features, std::size_t feature_dim,
                  std::vector<std::uint32_t> labels);

// Dispatches on extension: ".sfg" reads the binary format, anything else is
// treated as a text edge list with a "<stem>.features.csv" sidecar and an
// optional "<stem>.labels.csv".
Graph load_graph(const std::string& path);
void save_graph(const Graph& g, const std::string& path);

// Breadth-first ball of `hops` around `target` with the induced edge set.
ComputationalGraph extract_computational_graph(const Graph& g,
                                               std::uint32_t target, int hops);

}  // namespace shapflow
