#include "shapflow/oracle.hpp"

#include <bit>

#include "shapflow/error.hpp"

namespace shapflow {

std::vector<double> exact_shapley(
    std::uint32_t n, const std::function<double(std::uint64_t)>& value) {
  if (n > 22)
    throw DataError("exact enumeration is limited to 22 players, got " +
                    std::to_string(n));
  if (n == 0) return {};

  const std::uint64_t full = std::uint64_t{1} << n;
  std::vector<double> val(full);
  for (std::uint64_t m = 0; m < full; ++m) val[m] = value(m);

  // ordering weight for a coalition of size s: s! (n-1-s)! / n!, built by
  // the ratio recurrence from 1/n in extended precision
  std::vector<long double> w(n);
  w[0] = 1.0L / n;
  for (std::uint32_t s = 1; s < n; ++s)
    w[s] = w[s - 1] * s / static_cast<long double>(n - s);

  std::vector<double> phi(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    long double acc = 0.0L;
    for (std::uint64_t m = 0; m < full; ++m) {
      if (m & bit) continue;
      acc += w[std::popcount(m)] *
             static_cast<long double>(val[m | bit] - val[m]);
    }
    phi[i] = static_cast<double>(acc);
  }
  return phi;
}

std::vector<double> exact_shapley_gnn(const GcnModel& m,
                                      const ComputationalGraph& cg,
                                      std::uint32_t class_index,
                                      std::size_t batch_size) {
  const std::uint32_t n = cg.num_players();
  if (n > 22)
    throw DataError("exact enumeration is limited to 22 players, got " +
                    std::to_string(n));
  if (n == 0) return {};

  // every subset as one mask row; n <= 22 so a row is a single word
  const std::uint64_t full = std::uint64_t{1} << n;
  std::vector<std::uint64_t> bits(full);
  for (std::uint64_t mask = 0; mask < full; ++mask) bits[mask] = mask;
  const std::vector<float> out = predict_batched(
      m, cg, BitRows{bits.data(), full, 1}, class_index, batch_size);

  return exact_shapley(
      n, [&](std::uint64_t mask) { return static_cast<double>(out[mask]); });
}

}  // namespace shapflow
