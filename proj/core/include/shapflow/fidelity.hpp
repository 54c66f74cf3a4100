#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shapflow/gcn.hpp"

namespace shapflow {

// Score drop caused by removing the selected players:
// |f(everything kept) - f(everything except selected)| on class_index.
// Large values mean the selection carries the prediction.
double fidelity_plus(const GcnModel& m, const ComputationalGraph& cg,
                     std::uint32_t class_index,
                     std::span<const std::uint32_t> selected);

// Score drop when only the strongest players survive:
// |f(everything kept) - f(top players only)| where the top
// ceil((1 - sparsity) * n) players by attribution are kept. Small values
// mean the kept core reproduces the prediction.
double fidelity_minus(const GcnModel& m, const ComputationalGraph& cg,
                      std::uint32_t class_index, std::span<const double> phi,
                      double sparsity);

// Number of players kept at a sparsity level.
std::uint32_t kept_at_sparsity(std::uint32_t num_players, double sparsity);

// Mean of the corresponding metric over `trials` uniformly random
// selections of the same cardinality, for baseline comparisons.
double random_fidelity_plus(const GcnModel& m, const ComputationalGraph& cg,
                            std::uint32_t class_index, std::uint32_t count,
                            std::uint64_t seed, std::uint32_t trials);
double random_fidelity_minus(const GcnModel& m, const ComputationalGraph& cg,
                             std::uint32_t class_index, double sparsity,
                             std::uint64_t seed, std::uint32_t trials);

struct FidelityReport {
  std::uint32_t node = 0;  // global node id
  std::uint32_t predicted_class = 0;
  double full_score = 0.0;  // model output with every player kept

  std::vector<std::uint32_t> top_counts;  // selection sizes scored below
  std::vector<double> plus;               // attribution-guided, per count
  std::vector<double> plus_random;        // baseline, per count

  std::vector<double> sparsities;  // sparsity levels scored below
  std::vector<double> minus;       // attribution-guided, per level
  std::vector<double> minus_random;

  std::uint64_t baseline_seed = 0;
  std::uint32_t baseline_trials = 0;
};

// Scores an attribution vector at several selection sizes and sparsity
// levels, with seeded random baselines of matching cardinality. Selection
// sizes above the player count are clamped to it.
FidelityReport evaluate_fidelity(const GcnModel& m,
                                 const ComputationalGraph& cg,
                                 std::uint32_t class_index,
                                 std::span<const double> phi,
                                 std::span<const std::uint32_t> top_counts,
                                 std::span<const double> sparsities,
                                 std::uint64_t seed, std::uint32_t trials);

}  // namespace shapflow
