#pragma once

#include <bit>
#include <cstdint>
#include <vector>

namespace shapflow {

// Coalition masks are bit rows: bit e set means player e is kept.

inline std::size_t words_for_bits(std::size_t n) { return (n + 63) / 64; }

inline bool test_bit(const std::uint64_t* row, std::size_t j) {
  return (row[j >> 6] >> (j & 63)) & 1u;
}

inline void set_bit(std::uint64_t* row, std::size_t j) {
  row[j >> 6] |= std::uint64_t{1} << (j & 63);
}

inline std::size_t popcount_row(const std::uint64_t* row, std::size_t words) {
  std::size_t c = 0;
  for (std::size_t w = 0; w < words; ++w) c += std::popcount(row[w]);
  return c;
}

inline std::vector<std::uint64_t> full_mask(std::size_t n) {
  std::vector<std::uint64_t> m(words_for_bits(n), ~std::uint64_t{0});
  if (n % 64) m.back() = (std::uint64_t{1} << (n % 64)) - 1;
  if (n == 0) m.clear();
  return m;
}

inline std::vector<std::uint64_t> empty_mask(std::size_t n) {
  return std::vector<std::uint64_t>(words_for_bits(n), 0);
}

// Non-owning view of k bit rows with a fixed word stride.
struct BitRows {
  const std::uint64_t* data = nullptr;
  std::size_t rows = 0;
  std::size_t words_per_row = 0;

  const std::uint64_t* row(std::size_t i) const {
    return data + i * words_per_row;
  }
};

}  // namespace shapflow
