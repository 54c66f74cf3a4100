#include "shapflow/fidelity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "shapflow/bits.hpp"
#include "shapflow/error.hpp"
#include "shapflow/philox.hpp"
#include "shapflow/solver.hpp"

namespace shapflow {

namespace {

double score_with_mask(const GcnModel& m, const ComputationalGraph& cg,
                       std::uint32_t class_index,
                       std::span<const std::uint64_t> mask) {
  return static_cast<double>(predict(m, cg, mask, class_index));
}

// Uniform random subset of `count` players, Floyd's algorithm. The mask is
// its own membership structure.
std::vector<std::uint64_t> random_mask(Philox& rng, std::uint32_t n,
                                       std::uint32_t count) {
  std::vector<std::uint64_t> mask = empty_mask(n);
  for (std::uint32_t j = n - count; j < n; ++j) {
    const auto t = static_cast<std::uint32_t>(rng.next_index(j + 1));
    set_bit(mask.data(), test_bit(mask.data(), t) ? j : t);
  }
  return mask;
}

void check_sparsity(double sparsity) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) {
    throw DataError("sparsity must lie in [0, 1], got " +
                    std::to_string(sparsity));
  }
}

}  // namespace

std::uint32_t kept_at_sparsity(std::uint32_t num_players, double sparsity) {
  check_sparsity(sparsity);
  const auto kept = static_cast<std::uint32_t>(
      std::ceil((1.0 - sparsity) * static_cast<double>(num_players)));
  return std::min(kept, num_players);
}

double fidelity_plus(const GcnModel& m, const ComputationalGraph& cg,
                     std::uint32_t class_index,
                     std::span<const std::uint32_t> selected) {
  const auto n = static_cast<std::uint32_t>(cg.num_players());
  std::vector<std::uint64_t> mask = full_mask(n);
  const double full = score_with_mask(m, cg, class_index, mask);
  for (std::uint32_t e : selected) {
    if (e >= n) {
      throw DataError("selected player " + std::to_string(e) +
                      " out of range for " + std::to_string(n) + " players");
    }
    mask[e >> 6] &= ~(std::uint64_t{1} << (e & 63));
  }
  return std::abs(full - score_with_mask(m, cg, class_index, mask));
}

double fidelity_minus(const GcnModel& m, const ComputationalGraph& cg,
                      std::uint32_t class_index, std::span<const double> phi,
                      double sparsity) {
  const auto n = static_cast<std::uint32_t>(cg.num_players());
  if (phi.size() != n) {
    throw DataError("attribution vector has " + std::to_string(phi.size()) +
                    " entries for " + std::to_string(n) + " players");
  }
  const std::uint32_t keep = kept_at_sparsity(n, sparsity);
  const std::vector<RankedEdge> ranked = rank_edges(phi);
  std::vector<std::uint64_t> mask = empty_mask(n);
  for (std::uint32_t i = 0; i < keep; ++i) {
    set_bit(mask.data(), ranked[i].player);
  }
  const double kept_score = score_with_mask(m, cg, class_index, mask);
  const double full =
      score_with_mask(m, cg, class_index, full_mask(n));
  return std::abs(full - kept_score);
}

double random_fidelity_plus(const GcnModel& m, const ComputationalGraph& cg,
                            std::uint32_t class_index, std::uint32_t count,
                            std::uint64_t seed, std::uint32_t trials) {
  const auto n = static_cast<std::uint32_t>(cg.num_players());
  count = std::min(count, n);
  if (trials == 0) return 0.0;
  const double full =
      score_with_mask(m, cg, class_index, full_mask(n));
  double acc = 0.0;
  for (std::uint32_t t = 0; t < trials; ++t) {
    // Stream key folds in the cardinality so different selection sizes draw
    // independent sequences from the same seed.
    Philox rng(seed, (static_cast<std::uint64_t>(count) << 32) | t);
    std::vector<std::uint64_t> removed = random_mask(rng, n, count);
    std::vector<std::uint64_t> mask = full_mask(n);
    for (std::size_t w = 0; w < mask.size(); ++w) mask[w] &= ~removed[w];
    acc += std::abs(full - score_with_mask(m, cg, class_index, mask));
  }
  return acc / static_cast<double>(trials);
}

double random_fidelity_minus(const GcnModel& m, const ComputationalGraph& cg,
                             std::uint32_t class_index, double sparsity,
                             std::uint64_t seed, std::uint32_t trials) {
  const auto n = static_cast<std::uint32_t>(cg.num_players());
  const std::uint32_t keep = kept_at_sparsity(n, sparsity);
  if (trials == 0) return 0.0;
  const double full =
      score_with_mask(m, cg, class_index, full_mask(n));
  double acc = 0.0;
  for (std::uint32_t t = 0; t < trials; ++t) {
    Philox rng(seed, (static_cast<std::uint64_t>(keep) << 32) |
                         (std::uint64_t{1} << 63) | t);
    std::vector<std::uint64_t> mask = random_mask(rng, n, keep);
    acc += std::abs(full - score_with_mask(m, cg, class_index, mask));
  }
  return acc / static_cast<double>(trials);
}

FidelityReport evaluate_fidelity(const GcnModel& m,
                                 const ComputationalGraph& cg,
                                 std::uint32_t class_index,
                                 std::span<const double> phi,
                                 std::span<const std::uint32_t> top_counts,
                                 std::span<const double> sparsities,
                                 std::uint64_t seed, std::uint32_t trials) {
  const auto n = static_cast<std::uint32_t>(cg.num_players());
  if (phi.size() != n) {
    throw DataError("attribution vector has " + std::to_string(phi.size()) +
                    " entries for " + std::to_string(n) + " players");
  }
  FidelityReport rep;
  rep.node = cg.target_global;
  rep.predicted_class = class_index;
  rep.full_score = score_with_mask(m, cg, class_index, full_mask(n));
  rep.baseline_seed = seed;
  rep.baseline_trials = trials;

  const std::vector<RankedEdge> ranked = rank_edges(phi);
  for (std::uint32_t count : top_counts) {
    const std::uint32_t c = std::min(count, n);
    std::vector<std::uint32_t> selected(c);
    for (std::uint32_t i = 0; i < c; ++i) selected[i] = ranked[i].player;
    rep.top_counts.push_back(c);  // record the evaluated count, not the request
    rep.plus.push_back(fidelity_plus(m, cg, class_index, selected));
    rep.plus_random.push_back(
        random_fidelity_plus(m, cg, class_index, c, seed, trials));
  }
  for (double s : sparsities) {
    rep.sparsities.push_back(s);
    rep.minus.push_back(fidelity_minus(m, cg, class_index, phi, s));
    rep.minus_random.push_back(
        random_fidelity_minus(m, cg, class_index, s, seed, trials));
  }
  return rep;
}

}  // namespace shapflow
