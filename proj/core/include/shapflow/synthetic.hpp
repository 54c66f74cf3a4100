#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shapflow/gcn.hpp"
#include "shapflow/graph.hpp"

namespace shapflow {

// Erdos-Renyi style graph with exactly `edges` distinct undirected edges,
// uniform features in [-1, 1) and uniform labels in [0, classes). Throws
// DataError when `edges` exceeds the number of node pairs.
Graph gen_random_graph(std::uint32_t nodes, std::uint64_t edges,
                       std::size_t feature_dim, std::uint32_t classes,
                       std::uint64_t seed);

// Glorot-uniform weights, zero biases. Layer widths are
// input_dim, hidden..., classes.
GcnModel gen_random_model(std::size_t input_dim,
                          std::span<const std::size_t> hidden,
                          std::uint32_t classes, std::uint64_t seed);

// A labelled graph whose ground truth is known by construction: "marker"
// nodes are planted in adjacent pairs, a node's label is 1 exactly when it
// has a marker neighbor, and the bundled one-layer model classifies every
// node correctly with a logit margin of at least 10. The edge to a marker
// is therefore the provably decisive player for every label-1 prediction.
struct PlantedMotif {
  Graph graph;
  GcnModel model;
  std::vector<std::uint32_t> markers;  // sorted node ids
};

PlantedMotif gen_planted_motif(std::uint32_t nodes, double avg_degree,
                               std::size_t feature_dim, std::uint64_t seed,
                               double marker_fraction = 0.05);

}  // namespace shapflow
