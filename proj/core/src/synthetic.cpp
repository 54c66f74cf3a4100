#include "shapflow/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "shapflow/error.hpp"
#include "shapflow/philox.hpp"

namespace shapflow {

namespace {

// RNG stream ids per artifact, so regeneration is byte-identical and
// independent of how many values another artifact consumed.
constexpr std::uint64_t kStreamEdges = 0;
constexpr std::uint64_t kStreamFeatures = 1;
constexpr std::uint64_t kStreamLabels = 2;
constexpr std::uint64_t kStreamPerm = 3;
constexpr std::uint64_t kStreamLayerBase = 16;

std::uint64_t pair_count(std::uint32_t nodes) {
  return static_cast<std::uint64_t>(nodes) * (nodes - 1) / 2;
}

// Rejection sampling of distinct unordered pairs. Fine for the sparse
// graphs this module targets; requests near the complete graph are legal
// but slow.
std::vector<std::pair<std::uint64_t, std::uint64_t>> sample_edges(
    std::uint32_t nodes, std::uint64_t edges, Philox& rng) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  out.reserve(edges);
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(edges * 2);
  while (out.size() < edges) {
    auto u = static_cast<std::uint32_t>(rng.next_index(nodes));
    auto v = static_cast<std::uint32_t>(rng.next_index(nodes));
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    const std::uint64_t key = static_cast<std::uint64_t>(u) * nodes + v;
    if (seen.insert(key).second) out.emplace_back(u, v);
  }
  return out;
}

float uniform_pm1(Philox& rng) {
  return static_cast<float>(2.0 * rng.next_double() - 1.0);
}

}  // namespace

Graph gen_random_graph(std::uint32_t nodes, std::uint64_t edges,
                       std::size_t feature_dim, std::uint32_t classes,
                       std::uint64_t seed) {
  if (nodes < 2 && edges > 0) {
    throw DataError("cannot place edges on fewer than two nodes");
  }
  if (nodes >= 2 && edges > pair_count(nodes)) {
    throw DataError("requested " + std::to_string(edges) + " edges but " +
                    std::to_string(nodes) + " nodes admit only " +
                    std::to_string(pair_count(nodes)));
  }

  Philox edge_rng(seed, kStreamEdges);
  const auto edge_list = sample_edges(nodes, edges, edge_rng);

  Philox feat_rng(seed, kStreamFeatures);
  std::vector<float> features(static_cast<std::size_t>(nodes) * feature_dim);
  for (auto& x : features) x = uniform_pm1(feat_rng);

  std::vector<std::uint32_t> labels;
  if (classes > 0) {
    Philox label_rng(seed, kStreamLabels);
    labels.resize(nodes);
    for (auto& l : labels) {
      l = static_cast<std::uint32_t>(label_rng.next_index(classes));
    }
  }

  return build_graph(nodes, edge_list, std::move(features), feature_dim,
                     std::move(labels));
}

GcnModel gen_random_model(std::size_t input_dim,
                          std::span<const std::size_t> hidden,
                          std::uint32_t classes, std::uint64_t seed) {
  if (input_dim == 0 || classes == 0) {
    throw DataError("model needs at least one input feature and one class");
  }
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(classes);

  GcnModel m;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    GcnLayer layer;
    layer.in = dims[l];
    layer.out = dims[l + 1];
    if (layer.in == 0 || layer.out == 0) {
      throw DataError("hidden layer widths must be positive");
    }
    Philox rng(seed, kStreamLayerBase + l);
    const double limit =
        std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    layer.weight.resize(layer.in * layer.out);
    for (auto& w : layer.weight) {
      w = static_cast<float>(limit * (2.0 * rng.next_double() - 1.0));
    }
    layer.bias.assign(layer.out, 0.0f);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

PlantedMotif gen_planted_motif(std::uint32_t nodes, double avg_degree,
                               std::size_t feature_dim, std::uint64_t seed,
                               double marker_fraction) {
  if (nodes < 2) throw DataError("planted motif needs at least two nodes");
  if (feature_dim == 0) {
    throw DataError("planted motif needs at least one feature channel");
  }
  if (!(avg_degree >= 0.0) || !(marker_fraction >= 0.0)) {
    throw DataError("avg_degree and marker_fraction must be non-negative");
  }

  std::uint32_t num_pairs = std::max<std::uint32_t>(
      1, static_cast<std::uint32_t>(
             std::llround(nodes * marker_fraction / 2.0)));
  num_pairs = std::min(num_pairs, nodes / 2);

  // Marker pairs are drawn by shuffling the node ids.
  std::vector<std::uint32_t> perm(nodes);
  for (std::uint32_t i = 0; i < nodes; ++i) perm[i] = i;
  Philox perm_rng(seed, kStreamPerm);
  for (std::uint32_t i = nodes - 1; i > 0; --i) {
    const auto j = static_cast<std::uint32_t>(perm_rng.next_index(i + 1));
    std::swap(perm[i], perm[j]);
  }

  const std::uint64_t background =
      std::min(pair_count(nodes),
               static_cast<std::uint64_t>(std::llround(
                   static_cast<double>(nodes) * avg_degree / 2.0)));
  Philox edge_rng(seed, kStreamEdges);
  auto edge_list = sample_edges(nodes, background, edge_rng);
  for (std::uint32_t p = 0; p < num_pairs; ++p) {
    edge_list.emplace_back(perm[2 * p], perm[2 * p + 1]);
  }

  std::vector<std::uint32_t> markers(perm.begin(),
                                     perm.begin() + 2 * num_pairs);
  std::sort(markers.begin(), markers.end());
  std::vector<bool> is_marker(nodes, false);
  for (std::uint32_t u : markers) is_marker[u] = true;

  // Channel 0 carries the marker indicator; the rest is noise the model
  // ignores.
  Philox feat_rng(seed, kStreamFeatures);
  std::vector<float> features(static_cast<std::size_t>(nodes) * feature_dim,
                              0.0f);
  for (std::uint32_t u = 0; u < nodes; ++u) {
    features[static_cast<std::size_t>(u) * feature_dim] =
        is_marker[u] ? 1.0f : 0.0f;
    for (std::size_t c = 1; c < feature_dim; ++c) {
      features[static_cast<std::size_t>(u) * feature_dim + c] =
          uniform_pm1(feat_rng);
    }
  }

  PlantedMotif out;
  out.graph = build_graph(nodes, edge_list, std::move(features), feature_dim,
                          {});
  out.markers = std::move(markers);

  // Label 1 exactly when a neighbor is a marker. Every marker has its
  // partner as a neighbor, so markers are themselves label 1.
  out.graph.labels.assign(nodes, 0);
  for (std::uint32_t u = 0; u < nodes; ++u) {
    for (std::uint32_t v : out.graph.neighbors(u)) {
      if (is_marker[v]) {
        out.graph.labels[u] = 1;
        break;
      }
    }
  }

  // One linear layer reading only the marker channel. With self-loop
  // degrees capped by maxdeg + 1, a single marker neighbor contributes
  // alpha / (maxdeg + 1) >= 20 to the class-1 logit against a -10 bias,
  // so classification is exact with a logit margin of at least 10.
  std::size_t maxdeg = 0;
  for (std::uint32_t u = 0; u < nodes; ++u) {
    maxdeg = std::max(maxdeg,
                      out.graph.row_ptr[u + 1] - out.graph.row_ptr[u]);
  }
  const float alpha = 20.0f * static_cast<float>(maxdeg + 1);
  GcnLayer layer;
  layer.in = feature_dim;
  layer.out = 2;
  layer.weight.assign(feature_dim * 2, 0.0f);
  layer.weight[1] = alpha;  // channel 0 -> class 1
  layer.bias = {0.0f, -10.0f};
  out.model.layers.push_back(std::move(layer));
  return out;
}

}  // namespace shapflow
