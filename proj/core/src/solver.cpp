#include "shapflow/solver.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "shapflow/error.hpp"

namespace shapflow {

namespace {

// Minimum leaf count of the reduction tree. Padding every problem to at
// least this many leaves fixes the tree shape, so the grouping of partial
// sums is the same for every power-of-two worker count up to 64.
constexpr std::uint64_t kReduceLeafFloor = 64;

std::uint64_t bit_reverse(std::uint64_t x, int bits) {
  std::uint64_t r = 0;
  for (int b = 0; b < bits; ++b) {
    r = (r << 1) | (x & 1);
    x >>= 1;
  }
  return r;
}

// Streaming fold-by-halves: leaves arrive in bit-reversed tree order, so
// merge partners are adjacent and a binary counter over completed subtrees
// reproduces the halving tree with log(m) working buffers instead of m.
class PairwiseFolder {
 public:
  explicit PairwiseFolder(std::size_t len) : len_(len), carry_(len) {}

  void reset() { count_ = 0; }

  void push(const double* leaf) {
    std::memcpy(carry_.data(), leaf, len_ * sizeof(double));
    std::size_t level = 0;
    for (std::uint64_t c = count_; c & 1; c >>= 1, ++level) {
      const double* slot = slots_[level].data();
      for (std::size_t i = 0; i < len_; ++i) carry_[i] = slot[i] + carry_[i];
    }
    if (level >= slots_.size()) slots_.resize(level + 1);
    slots_[level].swap(carry_);
    carry_.resize(len_);  // fresh slots arrive empty; restage the buffer
    ++count_;
  }

  // valid after a power-of-two number of pushes
  void result(double* out) const {
    const std::size_t top = std::countr_zero(count_);
    std::memcpy(out, slots_[top].data(), len_ * sizeof(double));
  }

 private:
  std::size_t len_;
  std::uint64_t count_ = 0;
  std::vector<double> carry_;
  std::vector<std::vector<double>> slots_;
};

double norm_squared(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

// Lower-triangular factor of a (copied) symmetric positive-definite matrix.
// Returns the pivot column that failed, or n on success.
std::uint32_t cholesky_factor(std::vector<double> a, std::uint32_t n,
                              std::vector<double>& out) {
  for (std::uint32_t c = 0; c < n; ++c) {
    double d = a[std::size_t{c} * n + c];
    for (std::uint32_t k = 0; k < c; ++k) {
      const double l = a[std::size_t{c} * n + k];
      d -= l * l;
    }
    if (!(d > 0.0) || !std::isfinite(d)) return c;
    const double piv = std::sqrt(d);
    a[std::size_t{c} * n + c] = piv;
    for (std::uint32_t r = c + 1; r < n; ++r) {
      double t = a[std::size_t{r} * n + c];
      for (std::uint32_t k = 0; k < c; ++k)
        t -= a[std::size_t{r} * n + k] * a[std::size_t{c} * n + k];
      a[std::size_t{r} * n + c] = t / piv;
    }
  }
  out = std::move(a);
  return n;
}

}  // namespace

WlsProblem assemble_problem(const MaskBlock& masks,
                            std::span<const double> values, double base_value,
                            double full_value, double constraint_scale) {
  if (values.size() != masks.num_rows)
    throw DataError("model outputs do not match mask rows: " +
                    std::to_string(values.size()) + " vs " +
                    std::to_string(masks.num_rows));
  const std::uint32_t n = masks.num_players;

  WlsProblem p;
  p.num_players = n;
  p.num_rows = masks.num_rows;
  p.rank = masks.rank;
  p.world = masks.world;
  p.global_pair_count = masks.global_pair_count;
  p.global_pairs = masks.global_pairs;
  p.constraint_target = full_value - base_value;
  p.constraint_weight = constraint_scale;

  // Every size class enters the fit with total weight equal to its kernel
  // mass rho_s = (n-1)/(s(n-s)), however many rows happen to represent it,
  // so a row of size s weighs rho_s over the global row count at that size.
  // Exhaustive blocks (C(n,s) rows per size) recover the per-coalition
  // kernel weight; sampled blocks come out near-uniform because the size
  // plan already allocates rows proportional to rho_s, and the division
  // corrects its rounding exactly. Normalized so the first populated size,
  // and by symmetry its complement, gets weight 1.
  std::vector<std::uint64_t> counts = masks.global_rows_of_size;
  if (counts.size() != std::size_t{n} + 1) {
    if (masks.world != 1)
      throw DataError("mask block lacks the global per-size row counts");
    counts.assign(std::size_t{n} + 1, 0);
    for (std::uint64_t i = 0; i < masks.num_rows; ++i)
      ++counts[popcount_row(masks.row(i), masks.words_per_row)];
  }
  std::vector<double> weight_of_size(n, 0.0);
  double scale = 0.0;
  for (std::uint32_t s = 1; s < n; ++s) {
    if (counts[s] == 0) continue;
    const double rho = (n - 1.0) / (double(s) * double(n - s));
    const double w = rho / static_cast<double>(counts[s]);
    if (scale == 0.0) scale = w;
    weight_of_size[s] = w / scale;
  }

  p.rows.assign(masks.num_rows * std::size_t{n}, 0.0f);
  p.weights.resize(masks.num_rows);
  p.targets.resize(masks.num_rows);
  for (std::uint64_t i = 0; i < masks.num_rows; ++i) {
    const std::uint64_t* bits = masks.row(i);
    float* dst = p.rows.data() + i * n;
    for (std::uint32_t e = 0; e < n; ++e)
      if (test_bit(bits, e)) dst[e] = 1.0f;
    const std::size_t size = popcount_row(bits, masks.words_per_row);
    if (size == 0 || size >= n)
      throw DataError("coalition row " + std::to_string(i) +
                      " keeps all or no players");
    p.weights[i] = weight_of_size[size];
    p.targets[i] = values[i] - base_value;
  }
  return p;
}

CglsResult solve_cgls(const WlsProblem& p, Communicator& comm,
                      const CglsOptions& opts) {
  CglsResult res;
  const std::uint32_t n = p.num_players;
  if (n == 0) {
    res.converged = true;
    return res;
  }
  if (p.rank != comm.rank() || p.world != comm.world_size())
    throw DataError("system slice does not match the communicator layout");
  if (p.num_rows % 2 != 0)
    throw DataError("local rows must come in adjacent pairs");
  if (p.weights.size() != p.num_rows || p.targets.size() != p.num_rows ||
      p.rows.size() != p.num_rows * std::size_t{n})
    throw DataError("inconsistent system slice");

  const std::uint64_t pairs_local = p.num_rows / 2;
  const std::uint64_t padded_global =
      std::bit_ceil(std::max(p.global_pair_count, kReduceLeafFloor));
  const std::uint64_t padded_local = std::bit_ceil(std::max<std::uint64_t>(
      {padded_global / std::uint64_t(p.world), pairs_local, 1}));
  const int log_local = std::countr_zero(padded_local);

  std::vector<double> sw(p.num_rows);
  for (std::uint64_t i = 0; i < p.num_rows; ++i)
    sw[i] = std::sqrt(p.weights[i]);
  const double sc = std::sqrt(p.constraint_weight);

  // pairs whose second row is the exact complement of the first share one
  // dot product and a two-coefficient transpose contribution
  std::vector<std::uint8_t> is_comp(pairs_local, 1);
  for (std::uint64_t j = 0; j < pairs_local; ++j) {
    const float* re = p.row(2 * j);
    const float* ro = p.row(2 * j + 1);
    for (std::uint32_t i = 0; i < n; ++i) {
      if (ro[i] != 1.0f - re[i]) {
        is_comp[j] = 0;
        break;
      }
    }
  }

  // residual in row space starts at the scaled targets
  std::vector<double> r(p.num_rows);
  for (std::uint64_t i = 0; i < p.num_rows; ++i)
    r[i] = sw[i] * p.targets[i];
  double r_c = sc * p.constraint_target;

  std::vector<double> s(n), u(n), v(p.num_rows), leaf(n);
  PairwiseFolder vec_folder(n), scalar_folder(1);

  auto transpose_leaf = [&](std::uint64_t j, double* out) {
    const std::uint64_t e = 2 * j;
    const double ce = sw[e] * r[e];
    const double co = sw[e + 1] * r[e + 1];
    const float* row_e = p.row(e);
    if (is_comp[j]) {
      const double beta = ce - co;
      for (std::uint32_t i = 0; i < n; ++i)
        out[i] = co + beta * double(row_e[i]);
    } else {
      const float* row_o = p.row(e + 1);
      for (std::uint32_t i = 0; i < n; ++i)
        out[i] = ce * double(row_e[i]) + co * double(row_o[i]);
    }
  };

  // s = A^T r over the global pair tree, then the pinned all-ones row
  auto transpose_product = [&] {
    if (opts.fixed_order) {
      vec_folder.reset();
      for (std::uint64_t t = 0; t < padded_local; ++t) {
        const std::uint64_t j = bit_reverse(t, log_local);
        if (j < pairs_local)
          transpose_leaf(j, leaf.data());
        else
          std::fill(leaf.begin(), leaf.end(), 0.0);
        vec_folder.push(leaf.data());
      }
      vec_folder.result(s.data());
    } else {
      std::fill(s.begin(), s.end(), 0.0);
      for (std::uint64_t j = 0; j < pairs_local; ++j) {
        transpose_leaf(j, leaf.data());
        for (std::uint32_t i = 0; i < n; ++i) s[i] += leaf[i];
      }
    }
    comm.all_reduce_sum(std::span<double>(s));
    const double pin = sc * r_c;
    for (std::uint32_t i = 0; i < n; ++i) s[i] += pin;
  };

  // v = A u locally; delta = ||A u||^2 reduced over all rows plus the
  // pinned row's component v_c
  auto forward_product = [&](double& delta, double& v_c) {
    double sum_u = 0.0;
    for (std::uint32_t i = 0; i < n; ++i) sum_u += u[i];
    for (std::uint64_t j = 0; j < pairs_local; ++j) {
      const std::uint64_t e = 2 * j;
      const float* row_e = p.row(e);
      double dot = 0.0;
      for (std::uint32_t i = 0; i < n; ++i) dot += double(row_e[i]) * u[i];
      v[e] = sw[e] * dot;
      if (is_comp[j]) {
        v[e + 1] = sw[e + 1] * (sum_u - dot);
      } else {
        const float* row_o = p.row(e + 1);
        double dot_o = 0.0;
        for (std::uint32_t i = 0; i < n; ++i) dot_o += double(row_o[i]) * u[i];
        v[e + 1] = sw[e + 1] * dot_o;
      }
    }
    if (opts.fixed_order) {
      scalar_folder.reset();
      for (std::uint64_t t = 0; t < padded_local; ++t) {
        const std::uint64_t j = bit_reverse(t, log_local);
        double d = 0.0;
        if (j < pairs_local)
          d = v[2 * j] * v[2 * j] + v[2 * j + 1] * v[2 * j + 1];
        scalar_folder.push(&d);
      }
      scalar_folder.result(&delta);
    } else {
      delta = 0.0;
      for (std::uint64_t i = 0; i < p.num_rows; ++i) delta += v[i] * v[i];
    }
    delta = comm.all_reduce_sum(delta);
    v_c = sc * sum_u;
    delta += v_c * v_c;
  };

  res.phi.assign(n, 0.0);
  transpose_product();
  double gamma = norm_squared(s);
  const double gamma0 = gamma;
  if (gamma0 == 0.0) {
    res.converged = true;
    return res;
  }

  // The gradient norm is compared against the data block of the starting
  // gradient, not the whole of it. The pinned row adds the same sc * r_c
  // to every coordinate of s_0 and its weight dwarfs the kernel weights,
  // so a reference including it would declare convergence as soon as the
  // sum is pinned, long before the per-player fit settles. The pin is
  // known on every rank, so removing it costs no communication.
  double data0 = 0.0;
  {
    const double pin = sc * r_c;
    for (std::uint32_t i = 0; i < n; ++i) {
      const double d = s[i] - pin;
      data0 += d * d;
    }
  }
  // no data signal: fall back to the whole-gradient reference
  const double reference = data0 > 0.0 ? data0 : gamma0;

  res.relative_residual = std::sqrt(gamma0 / reference);
  u = s;

  // the starting ratio is legitimately large when the pinned row dominates
  // the gradient, so blowup is judged relative to it
  const double blowup = 1.0e12 * std::max(res.relative_residual, 1.0);

  const std::uint64_t max_iter =
      opts.max_iter ? opts.max_iter : std::min<std::uint64_t>(n, 5000);
  while (res.iterations < max_iter) {
    double delta = 0.0, v_c = 0.0;
    forward_product(delta, v_c);
    if (!std::isfinite(delta))
      throw NumericalError("iterative solve diverged at iteration " +
                           std::to_string(res.iterations) +
                           ": non-finite step norm");
    if (delta <= 0.0) break;  // direction left the column space; stagnate

    const double theta = gamma / delta;
    for (std::uint32_t i = 0; i < n; ++i) res.phi[i] += theta * u[i];
    for (std::uint64_t i = 0; i < p.num_rows; ++i) r[i] -= theta * v[i];
    r_c -= theta * v_c;

    if (opts.trace) {
      double sse = norm_squared(r);
      sse = comm.all_reduce_sum(sse) + r_c * r_c;
      res.row_residual_trace.push_back(std::sqrt(sse));
    }

    transpose_product();
    const double gamma_next = norm_squared(s);
    ++res.iterations;
    res.relative_residual = std::sqrt(gamma_next / reference);
    if (opts.trace) res.trace.push_back(res.relative_residual);
    if (!std::isfinite(gamma_next) || res.relative_residual > blowup)
      throw NumericalError("iterative solve diverged at iteration " +
                           std::to_string(res.iterations) +
                           ": residual exploded");
    if (res.relative_residual <= opts.tol) {
      res.converged = true;
      break;
    }
    const double beta = gamma_next / gamma;
    for (std::uint32_t i = 0; i < n; ++i) u[i] = s[i] + beta * u[i];
    gamma = gamma_next;
  }
  return res;
}

std::vector<double> solve_direct(const WlsProblem& p) {
  if (p.world != 1)
    throw DataError("direct solve needs the full system on a single worker");
  const std::uint32_t n = p.num_players;
  if (n > 20000)
    throw DataError("direct solve limited to 20000 players, got " +
                    std::to_string(n));
  if (n == 0) return {};

  std::vector<double> gram(std::size_t{n} * n, 0.0), rhs(n, 0.0);
  std::vector<std::uint32_t> kept;
  for (std::uint64_t i = 0; i < p.num_rows; ++i) {
    const float* row = p.row(i);
    kept.clear();
    for (std::uint32_t e = 0; e < n; ++e)
      if (row[e] != 0.0f) kept.push_back(e);
    const double w = p.weights[i];
    const double wy = w * p.targets[i];
    for (std::size_t a = 0; a < kept.size(); ++a) {
      rhs[kept[a]] += wy;
      double* grow = gram.data() + std::size_t{kept[a]} * n;
      for (std::size_t b = a; b < kept.size(); ++b) grow[kept[b]] += w;
    }
  }
  const double cw = p.constraint_weight;
  for (std::uint32_t a = 0; a < n; ++a) {
    rhs[a] += cw * p.constraint_target;
    double* grow = gram.data() + std::size_t{a} * n;
    for (std::uint32_t b = a; b < n; ++b) grow[b] += cw;
  }
  for (std::uint32_t a = 0; a < n; ++a)
    for (std::uint32_t b = 0; b < a; ++b)
      gram[std::size_t{a} * n + b] = gram[std::size_t{b} * n + a];

  std::vector<double> chol;
  if (cholesky_factor(gram, n, chol) != n) {
    double trace = 0.0;
    for (std::uint32_t a = 0; a < n; ++a) trace += gram[std::size_t{a} * n + a];
    const double jitter = 1.0e-10 * trace / n;
    for (std::uint32_t a = 0; a < n; ++a) gram[std::size_t{a} * n + a] += jitter;
    const std::uint32_t bad = cholesky_factor(gram, n, chol);
    if (bad != n)
      throw NumericalError(
          "normal equations are singular: factorization failed at pivot " +
          std::to_string(bad) + " of " + std::to_string(n) +
          " even after diagonal jitter");
  }

  // L z = rhs, then L^T phi = z
  std::vector<double> z(n, 0.0), phi(n, 0.0);
  for (std::uint32_t i = 0; i < n; ++i) {
    double t = rhs[i];
    for (std::uint32_t k = 0; k < i; ++k)
      t -= chol[std::size_t{i} * n + k] * z[k];
    z[i] = t / chol[std::size_t{i} * n + i];
  }
  for (std::uint32_t ii = n; ii > 0; --ii) {
    const std::uint32_t i = ii - 1;
    double t = z[i];
    for (std::uint32_t k = i + 1; k < n; ++k)
      t -= chol[std::size_t{k} * n + i] * phi[k];
    phi[i] = t / chol[std::size_t{i} * n + i];
  }
  return phi;
}

std::vector<RankedEdge> rank_edges(std::span<const double> phi) {
  std::vector<RankedEdge> out(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i)
    out[i] = {static_cast<std::uint32_t>(i), phi[i]};
  std::sort(out.begin(), out.end(),
            [](const RankedEdge& a, const RankedEdge& b) {
              if (a.phi != b.phi) return a.phi > b.phi;
              return a.player < b.player;
            });
  return out;
}

}  // namespace shapflow
