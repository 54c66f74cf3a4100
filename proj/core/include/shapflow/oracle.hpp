#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "shapflow/gcn.hpp"

namespace shapflow {

// Exact per-player attribution of a set function by full enumeration:
// each player's value is its marginal contribution averaged over all
// orderings, i.e. sum over coalitions S not containing i of
// |S|! (n-|S|-1)! / n! times [value(S + i) - value(S)].
//
// value receives the coalition as mask bits (bit e set = player e present)
// and must be deterministic. 2^n evaluations; guarded to n <= 22.
std::vector<double> exact_shapley(
    std::uint32_t n, const std::function<double(std::uint64_t)>& value);

// Exact attribution of every edge of a computational graph, using the
// model's class_index output at the target node as the set function.
// All 2^n coalition predictions run through the batched path.
std::vector<double> exact_shapley_gnn(const GcnModel& m,
                                      const ComputationalGraph& cg,
                                      std::uint32_t class_index,
                                      std::size_t batch_size = 64);

}  // namespace shapflow
