#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shapflow/bits.hpp"
#include "shapflow/graph.hpp"

namespace shapflow {

struct GcnLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<float> weight;  // in x out, row major
  std::vector<float> bias;    // out
};

// Graph convolutional network: every layer aggregates with the normalized
// adjacency and applies an affine map; hidden layers use ReLU, the last
// layer is linear and predictions apply a softmax. The layer count equals
// the hop count used for computational graph extraction.
struct GcnModel {
  std::vector<GcnLayer> layers;

  std::size_t depth() const { return layers.size(); }
  std::size_t input_dim() const { return layers.front().in; }
  std::size_t num_classes() const { return layers.back().out; }
};

GcnModel load_model(const std::string& path);
void save_model(const GcnModel& m, const std::string& path);

// CSR over local ids of one computational graph, float values.
struct SparseMatrix {
  std::uint32_t n = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::uint32_t> col;
  std::vector<float> val;
};

// D^{-1/2} (A_kept + I) D^{-1/2} where A_kept keeps both directions of the
// unmasked players and D counts the self-loop. Recomputed per mask so that
// degrees always match the surviving edges.
SparseMatrix normalize_adjacency(const ComputationalGraph& cg,
                                 std::span<const std::uint64_t> mask);

// Softmax class probabilities for the target node under the given mask.
std::vector<float> predict_probs(const GcnModel& m, const ComputationalGraph& cg,
                                 std::span<const std::uint64_t> mask);

// Probability of class_index for the target node.
float predict(const GcnModel& m, const ComputationalGraph& cg,
              std::span<const std::uint64_t> mask, std::uint32_t class_index);

// Evaluates many masks by stacking batch_size independent copies of the
// computational graph into one block-diagonal system per pass. Per-sample
// arithmetic is self-contained, so results do not depend on batch_size.
std::vector<float> predict_batched(const GcnModel& m, const ComputationalGraph& cg,
                                   const BitRows& masks, std::uint32_t class_index,
                                   std::size_t batch_size);

}  // namespace shapflow
