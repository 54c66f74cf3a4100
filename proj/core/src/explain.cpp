#include "shapflow/explain.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <regex>
#include <sstream>
#include <utility>

#include "shapflow/bits.hpp"
#include "shapflow/error.hpp"
#include "shapflow/sampler.hpp"

namespace shapflow {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

std::uint32_t argmax_class(std::span<const float> probs) {
  return static_cast<std::uint32_t>(
      std::max_element(probs.begin(), probs.end()) - probs.begin());
}

}  // namespace

std::uint64_t auto_samples(std::size_t num_players) {
  return num_players < 5000 ? 60000 : 600000;
}

std::uint64_t node_sampling_seed(std::uint64_t seed, std::uint32_t node) {
  return seed ^
         (0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(node) + 1));
}

NodeExplanation explain_node(const Graph& g, const GcnModel& m,
                             std::uint32_t node, const ExplainOptions& opts,
                             Communicator& comm) {
  const auto t_start = Clock::now();
  NodeExplanation out;
  out.node = node;

  ComputationalGraph cg =
      extract_computational_graph(g, node, static_cast<int>(m.depth()));
  const std::size_t n_raw = cg.num_players();
  if (opts.player_cap != 0 && n_raw > opts.player_cap) {
    out.skipped = true;
    out.warning = "node " + std::to_string(node) + " skipped: " +
                  std::to_string(n_raw) + " players exceed the cap of " +
                  std::to_string(opts.player_cap);
    out.timings.total_ms = ms_since(t_start);
    return out;
  }
  const auto n = static_cast<std::uint32_t>(n_raw);
  const std::uint64_t seed = node_sampling_seed(opts.seed, node);

  const std::vector<float> probs = predict_probs(m, cg, full_mask(n));
  out.predicted_class = argmax_class(probs);
  out.full_score = static_cast<double>(probs[out.predicted_class]);
  out.base_score = static_cast<double>(
      predict(m, cg, empty_mask(n), out.predicted_class));

  out.players.reserve(n);
  for (const auto& [u, v] : cg.players) {
    std::uint32_t gu = cg.local_to_global[u];
    std::uint32_t gv = cg.local_to_global[v];
    if (gu > gv) std::swap(gu, gv);
    out.players.emplace_back(gu, gv);
  }

  if (n == 0) {
    out.exhaustive = true;
    out.converged = true;
  } else if (n == 1) {
    // One player carries the whole gap; no system to solve.
    out.phi = {out.full_score - out.base_score};
    out.exhaustive = true;
    out.converged = true;
  } else {
    const std::uint64_t k =
        opts.samples != 0 ? opts.samples : auto_samples(n);

    comm.barrier();
    auto t_stage = Clock::now();
    const SizePlan plan = plan_sizes(n, k, opts.allow_exhaustive);
    const MaskBlock masks =
        generate_masks(plan, seed, comm.rank(), comm.world_size());
    comm.barrier();
    out.timings.sampling_ms = ms_since(t_stage);
    out.exhaustive = plan.exhaustive;
    out.rows = plan.total_rows();

    t_stage = Clock::now();
    const std::vector<float> scores = predict_batched(
        m, cg, masks.view(), out.predicted_class, opts.batch_size);
    const std::vector<double> values(scores.begin(), scores.end());
    comm.barrier();
    out.timings.prediction_ms = ms_since(t_stage);

    t_stage = Clock::now();
    const WlsProblem problem =
        assemble_problem(masks, values, out.base_score, out.full_score,
                         opts.constraint_scale);
    CglsOptions copts;
    copts.tol = opts.tol;
    copts.max_iter = opts.max_iter;
    copts.fixed_order = opts.fixed_order;
    CglsResult res = solve_cgls(problem, comm, copts);
    comm.barrier();
    out.timings.solve_ms = ms_since(t_stage);

    out.phi = std::move(res.phi);
    out.iterations = static_cast<std::uint32_t>(res.iterations);
    out.residual = res.relative_residual;
    out.converged = res.converged;
    if (!res.converged) {
      std::ostringstream msg;
      msg << "node " << node << ": solver stopped after " << res.iterations
          << " iterations at relative residual " << res.relative_residual
          << " (tol " << opts.tol << ")";
      out.warning = msg.str();
    }
  }

  const std::vector<RankedEdge> ranked = rank_edges(out.phi);
  const std::size_t keep =
      std::min<std::size_t>(opts.top_k, ranked.size());
  out.top.assign(ranked.begin(), ranked.begin() + keep);

  if (opts.fidelity) {
    out.fidelity = evaluate_fidelity(m, cg, out.predicted_class, out.phi,
                                     opts.top_counts, opts.sparsities, seed,
                                     opts.baseline_trials);
  }
  out.timings.total_ms = ms_since(t_start);
  return out;
}

ExplanationDocument explain_nodes(const Graph& g, const GcnModel& m,
                                  std::span<const std::uint32_t> nodes,
                                  const ExplainOptions& opts,
                                  Communicator& comm) {
  if (m.input_dim() != g.feature_dim) {
    throw DataError("model expects " + std::to_string(m.input_dim()) +
                    " input features but the graph has " +
                    std::to_string(g.feature_dim));
  }
  ExplanationDocument doc;
  doc.config.samples = opts.samples;
  doc.config.workers = static_cast<std::uint32_t>(comm.world_size());
  doc.config.batch_size = opts.batch_size;
  doc.config.top_counts = opts.top_counts;
  doc.config.sparsities = opts.sparsities;
  doc.config.seed = opts.seed;
  doc.config.tol = opts.tol;
  doc.config.max_iter = opts.max_iter;

  if (nodes.empty()) {
    doc.warnings.push_back(
        "node selection matched no nodes; nothing to explain");
  }
  for (std::uint32_t node : nodes) {
    try {
      doc.nodes.push_back(explain_node(g, m, node, opts, comm));
    } catch (const DataError& e) {
      throw DataError("node " + std::to_string(node) + ": " + e.what());
    } catch (const NumericalError& e) {
      throw NumericalError("node " + std::to_string(node) + ": " + e.what());
    }
    if (!doc.nodes.back().warning.empty()) {
      doc.warnings.push_back(doc.nodes.back().warning);
    }
  }
  return doc;
}

std::vector<std::uint32_t> select_nodes(const Graph& g,
                                        const std::string& rule) {
  static const std::regex kDegreeRule(
      R"(^degree-range:\[([0-9]+),([0-9]+)\]:([0-9]+)$)");
  std::smatch match;
  if (std::regex_match(rule, match, kDegreeRule)) {
    const std::uint64_t lo = std::stoull(match[1]);
    const std::uint64_t hi = std::stoull(match[2]);
    const std::uint64_t count = std::stoull(match[3]);
    if (lo > hi) {
      throw DataError("degree range [" + std::to_string(lo) + "," +
                      std::to_string(hi) + "] is empty");
    }
    std::vector<std::uint32_t> out;
    for (std::uint32_t u = 0; u < g.num_nodes && out.size() < count; ++u) {
      const std::size_t deg = g.row_ptr[u + 1] - g.row_ptr[u];
      if (deg >= lo && deg <= hi) out.push_back(u);
    }
    return out;
  }
  if (rule.rfind("degree-range", 0) == 0) {
    throw DataError("malformed selection rule '" + rule +
                    "' (expected degree-range:[lo,hi]:count)");
  }

  std::vector<std::uint32_t> out;
  std::size_t pos = 0;
  while (pos <= rule.size()) {
    std::size_t comma = rule.find(',', pos);
    if (comma == std::string::npos) comma = rule.size();
    std::size_t b = pos, e = comma;
    while (b < e && rule[b] == ' ') ++b;
    while (e > b && rule[e - 1] == ' ') --e;
    std::uint64_t id = 0;
    const auto [ptr, ec] = std::from_chars(rule.data() + b, rule.data() + e, id);
    if (ec != std::errc{} || ptr != rule.data() + e || b == e) {
      throw DataError("cannot parse node id '" + rule.substr(pos, comma - pos) +
                      "' in selection '" + rule + "'");
    }
    if (id >= g.num_nodes) {
      throw DataError("node id " + std::to_string(id) +
                      " out of range for a graph with " +
                      std::to_string(g.num_nodes) + " nodes");
    }
    out.push_back(static_cast<std::uint32_t>(id));
    pos = comma + 1;
  }
  return out;
}

}  // namespace shapflow
