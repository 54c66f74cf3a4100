#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shapflow/bits.hpp"

namespace shapflow {

// Weight of one coalition row in the least-squares fit:
//   (n - 1) / (C(n, s) * s * (n - s))
// for a kept-set of size s out of n players. Endpoints s = 0 and s = n have
// infinite weight and are rejected; for n beyond a few hundred the mid sizes
// underflow to zero, which is harmless because they are negligible anyway.
double kernel_weight(std::uint32_t n, std::uint32_t s);

// Exact binomial coefficient, saturating at UINT64_MAX instead of wrapping.
std::uint64_t binomial_or_max(std::uint32_t n, std::uint32_t s);

// Coalitions are drawn in complement pairs. A pair of class `size` holds one
// row with s players kept and one with n - s kept (the complement), so only
// sizes 1..n/2 appear as classes. Classes occupy contiguous ranges of the
// global pair index space, starting at first_pair.
struct SizeClass {
  std::uint32_t size = 0;
  std::uint64_t pairs = 0;
  std::uint64_t first_pair = 0;
};

struct SizePlan {
  std::uint32_t num_players = 0;
  std::uint64_t requested = 0;  // row budget after rounding up to even
  bool exhaustive = false;      // every nonempty proper subset, each once
  std::vector<SizeClass> classes;

  std::uint64_t total_pairs() const {
    return classes.empty() ? 0
                           : classes.back().first_pair + classes.back().pairs;
  }
  std::uint64_t total_rows() const { return 2 * total_pairs(); }
};

// Splits a row budget of k across coalition sizes proportionally to the
// per-size weight mass (n-1)/(s(n-s)), using largest-remainder rounding on
// whole pairs (ties go to the smaller size). If the budget covers all
// 2^n - 2 nonempty proper subsets, switches to exhaustive enumeration
// unless allow_exhaustive is off.
SizePlan plan_sizes(std::uint32_t n, std::uint64_t k,
                    bool allow_exhaustive = true);

// One worker's share of the coalition masks: the pairs with global index
// congruent to rank modulo world, in ascending order. Local row 2j is the
// kept-set of local pair j, row 2j+1 its complement.
struct MaskBlock {
  std::uint32_t num_players = 0;
  std::uint64_t num_rows = 0;
  std::size_t words_per_row = 0;
  int rank = 0;
  int world = 1;
  std::uint64_t seed = 0;
  std::uint64_t global_pair_count = 0;      // pairs across all workers
  std::vector<std::uint64_t> global_pairs;  // global index of local pair j
  // Rows of each kept-set size across all workers, indexed by size. The
  // fit weights rows so every size class carries its kernel mass no matter
  // how many rows represent it, which needs the global split.
  std::vector<std::uint64_t> global_rows_of_size;
  std::vector<std::uint64_t> bits;

  std::uint64_t num_pairs() const { return num_rows / 2; }
  const std::uint64_t* row(std::uint64_t i) const {
    return bits.data() + i * words_per_row;
  }
  std::uint64_t* row(std::uint64_t i) {
    return bits.data() + i * words_per_row;
  }
  BitRows view() const { return {bits.data(), num_rows, words_per_row}; }
};

// Deterministic mask generation: the subset of pair g is produced by a
// counter RNG keyed on (seed, g), so any worker layout yields the same
// global set of rows. Exhaustive plans enumerate subsets in lexicographic
// order per class instead of sampling.
MaskBlock generate_masks(const SizePlan& plan, std::uint64_t seed,
                         int rank = 0, int world = 1);

// Binary dump of the local rows: magic "SFM1", u64 row count, u64 player
// count, then ceil(n/8) bytes per row, bit e = player e kept.
void write_masks(const std::string& path, const MaskBlock& masks);
MaskBlock read_masks(const std::string& path);

}  // namespace shapflow
