#include "shapflow/sampler.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "shapflow/error.hpp"
#include "shapflow/philox.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian and read without byte swaps");

namespace shapflow {

namespace {

constexpr char kMaskMagic[4] = {'S', 'F', 'M', '1'};

template <typename T>
void read_raw(std::istream& in, T* dst, std::size_t count, const char* what) {
  in.read(reinterpret_cast<char*>(dst),
          static_cast<std::streamsize>(sizeof(T) * count));
  if (!in)
    throw DataError(std::string("mask file truncated while reading ") + what);
}

template <typename T>
void write_raw(std::ostream& out, const T* src, std::size_t count) {
  out.write(reinterpret_cast<const char*>(src),
            static_cast<std::streamsize>(sizeof(T) * count));
}

// Writes the idx-th t-subset of {offset, ..., offset+m-1} in lexicographic
// order into the row.
void unrank_combination(std::uint64_t* row, std::uint64_t idx, std::uint32_t m,
                        std::uint32_t t, std::uint32_t offset) {
  std::uint32_t x = 0;
  for (std::uint32_t i = 0; i < t; ++i) {
    while (true) {
      std::uint64_t c = binomial_or_max(m - 1 - x, t - 1 - i);
      if (idx < c) break;
      idx -= c;
      ++x;
    }
    set_bit(row, x + offset);
    ++x;
  }
}

// Floyd's sampler: s distinct players out of n, uniform, using the row
// itself as the membership set (the row starts zeroed).
void sample_subset(std::uint64_t* row, std::uint32_t n, std::uint32_t s,
                   Philox& rng) {
  for (std::uint32_t m = n - s; m < n; ++m) {
    std::uint32_t t =
        static_cast<std::uint32_t>(rng.next_index(std::uint64_t{m} + 1));
    std::uint32_t pick = test_bit(row, t) ? m : t;
    set_bit(row, pick);
  }
}

}  // namespace

std::uint64_t binomial_or_max(std::uint32_t n, std::uint32_t s) {
  if (s > n) return 0;
  s = std::min(s, n - s);
  unsigned __int128 r = 1;
  for (std::uint32_t i = 1; i <= s; ++i) {
    r = r * (n - s + i) / i;
    // running value is C(n-s+i, i), nondecreasing in i, so saturation is final
    if (r > UINT64_MAX) return UINT64_MAX;
  }
  return static_cast<std::uint64_t>(r);
}

double kernel_weight(std::uint32_t n, std::uint32_t s) {
  if (n < 2 || s == 0 || s >= n)
    throw DataError("coalition weight undefined for size " + std::to_string(s) +
                    " of " + std::to_string(n) + " players");
  if (n <= 60) {
    double c = static_cast<double>(binomial_or_max(n, s));
    return (n - 1.0) / (c * s * (n - s));
  }
  double log_c = std::lgamma(n + 1.0) - std::lgamma(s + 1.0) -
                 std::lgamma(n - s + 1.0);
  return std::exp(std::log(n - 1.0) - log_c - std::log(double(s)) -
                  std::log(double(n - s)));
}

SizePlan plan_sizes(std::uint32_t n, std::uint64_t k, bool allow_exhaustive) {
  if (n < 2) {
    throw DataError("plan_sizes: need at least 2 players, got " +
                    std::to_string(n));
  }
  if (k == 0) throw DataError("plan_sizes: sample budget must be positive");
  SizePlan plan;
  plan.num_players = n;
  if (k & 1) ++k;  // rows come in complement pairs
  plan.requested = k;

  if (allow_exhaustive && n <= 62 && ((std::uint64_t{1} << n) - 2) <= k) {
    plan.exhaustive = true;
    std::uint64_t next = 0;
    for (std::uint32_t s = 1; 2 * s <= n; ++s) {
      std::uint64_t pairs = binomial_or_max(n, s);
      // at the middle size a pair and its complement share a class; keep the
      // half whose kept-set contains player 0
      if (2 * s == n) pairs /= 2;
      plan.classes.push_back({s, pairs, next});
      next += pairs;
    }
    return plan;
  }

  const std::uint64_t total_pairs = k / 2;
  const std::uint32_t half = n / 2;
  std::vector<double> mass(half + 1, 0.0);
  double mass_sum = 0.0;
  for (std::uint32_t s = 1; s <= half; ++s) {
    double rho = (n - 1.0) / (double(s) * double(n - s));
    mass[s] = (2 * s == n) ? rho : 2.0 * rho;  // pair covers sizes s and n-s
    mass_sum += mass[s];
  }

  std::vector<std::uint64_t> quota(half + 1, 0);
  std::vector<std::pair<double, std::uint32_t>> order;  // (-remainder, s)
  std::uint64_t assigned = 0;
  for (std::uint32_t s = 1; s <= half; ++s) {
    double ideal = double(total_pairs) * (mass[s] / mass_sum);
    std::uint64_t q = static_cast<std::uint64_t>(std::floor(ideal));
    quota[s] = q;
    assigned += q;
    order.emplace_back(-(ideal - double(q)), s);
  }
  std::sort(order.begin(), order.end());
  for (std::size_t i = 0; assigned < total_pairs; ++i) {
    ++quota[order[i % order.size()].second];
    ++assigned;
  }

  std::uint64_t next = 0;
  for (std::uint32_t s = 1; s <= half; ++s) {
    if (quota[s] == 0) continue;
    plan.classes.push_back({s, quota[s], next});
    next += quota[s];
  }
  return plan;
}

MaskBlock generate_masks(const SizePlan& plan, std::uint64_t seed, int rank,
                         int world) {
  if (world < 1 || rank < 0 || rank >= world)
    throw DataError("invalid worker rank " + std::to_string(rank) + " of " +
                    std::to_string(world));
  const std::uint32_t n = plan.num_players;
  MaskBlock mb;
  mb.num_players = n;
  mb.words_per_row = words_for_bits(n);
  mb.rank = rank;
  mb.world = world;
  mb.seed = seed;

  const std::uint64_t global = plan.total_pairs();
  mb.global_pair_count = global;
  mb.global_rows_of_size.assign(std::size_t{n} + 1, 0);
  for (const SizeClass& cls : plan.classes) {
    if (2 * cls.size == n) {
      mb.global_rows_of_size[cls.size] += 2 * cls.pairs;
    } else {
      mb.global_rows_of_size[cls.size] += cls.pairs;
      mb.global_rows_of_size[n - cls.size] += cls.pairs;
    }
  }
  for (std::uint64_t g = rank; g < global; g += world)
    mb.global_pairs.push_back(g);
  mb.num_rows = 2 * mb.global_pairs.size();
  mb.bits.assign(mb.num_rows * mb.words_per_row, 0);
  if (mb.num_rows == 0) return mb;

  const std::uint64_t tail =
      (n % 64) ? (std::uint64_t{1} << (n % 64)) - 1 : ~std::uint64_t{0};
  std::size_t ci = 0;
  for (std::size_t j = 0; j < mb.global_pairs.size(); ++j) {
    const std::uint64_t g = mb.global_pairs[j];
    while (g >= plan.classes[ci].first_pair + plan.classes[ci].pairs) ++ci;
    const SizeClass& cls = plan.classes[ci];

    std::uint64_t* sub = mb.row(2 * j);
    if (plan.exhaustive) {
      std::uint64_t idx = g - cls.first_pair;
      if (2 * cls.size == n) {
        set_bit(sub, 0);
        unrank_combination(sub, idx, n - 1, cls.size - 1, 1);
      } else {
        unrank_combination(sub, idx, n, cls.size, 0);
      }
    } else {
      Philox rng(seed, g);
      sample_subset(sub, n, cls.size, rng);
    }

    std::uint64_t* comp = mb.row(2 * j + 1);
    for (std::size_t w = 0; w < mb.words_per_row; ++w) comp[w] = ~sub[w];
    comp[mb.words_per_row - 1] &= tail;
  }
  return mb;
}

void write_masks(const std::string& path, const MaskBlock& masks) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write mask file: " + path);
  write_raw(out, kMaskMagic, 4);
  std::uint64_t rows = masks.num_rows;
  std::uint64_t players = masks.num_players;
  write_raw(out, &rows, 1);
  write_raw(out, &players, 1);
  const std::size_t bytes_per_row = (masks.num_players + 7) / 8;
  for (std::uint64_t i = 0; i < masks.num_rows; ++i)
    write_raw(out, reinterpret_cast<const char*>(masks.row(i)), bytes_per_row);
  if (!out) throw DataError("write failed: " + path);
}

MaskBlock read_masks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open mask file: " + path);
  char magic[4];
  read_raw(in, magic, 4, "magic");
  if (std::memcmp(magic, kMaskMagic, 4) != 0)
    throw DataError("bad magic in " + path + " (expected SFM1)");
  std::uint64_t rows = 0, players = 0;
  read_raw(in, &rows, 1, "row count");
  read_raw(in, &players, 1, "player count");
  if (players > 0xFFFFFFFFull)
    throw DataError("player count too large in " + path);

  MaskBlock mb;
  mb.num_players = static_cast<std::uint32_t>(players);
  mb.num_rows = rows;
  mb.global_pair_count = rows / 2;
  mb.words_per_row = words_for_bits(mb.num_players);
  mb.bits.assign(rows * mb.words_per_row, 0);
  const std::size_t bytes_per_row = (mb.num_players + 7) / 8;
  mb.global_rows_of_size.assign(std::size_t{mb.num_players} + 1, 0);
  for (std::uint64_t i = 0; i < rows; ++i) {
    read_raw(in, reinterpret_cast<char*>(mb.row(i)), bytes_per_row, "rows");
    // the dump holds one worker's whole block, so counting it is exact
    ++mb.global_rows_of_size[popcount_row(mb.row(i), mb.words_per_row)];
  }
  return mb;
}

}  // namespace shapflow
