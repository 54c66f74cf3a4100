// Command line front end: explains GCN node predictions by attributing
// them to computational-graph edges, with exact-oracle, synthetic-data,
// benchmarking and fidelity re-scoring companions.
//
// Exit codes: 0 success, 1 usage, 2 bad data, 3 numerical or worker
// failure.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "shapflow/comm.hpp"
#include "shapflow/document.hpp"
#include "shapflow/error.hpp"
#include "shapflow/explain.hpp"
#include "shapflow/fidelity.hpp"
#include "shapflow/gcn.hpp"
#include "shapflow/graph.hpp"
#include "shapflow/oracle.hpp"
#include "shapflow/synthetic.hpp"

namespace {

using namespace shapflow;

bool is_pow2(std::uint64_t x) { return x != 0 && (x & (x - 1)) == 0; }

struct ExplainArgs {
  std::string graph;
  std::string model;
  std::string nodes;
  std::uint64_t samples = 0;
  std::uint32_t workers = 1;
  std::string backend = "threads";
  std::size_t batch_size = 50;
  std::vector<std::uint32_t> top_k = {5, 10, 20};
  std::vector<double> sparsity = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::uint64_t seed = 0;
  double tol = 1.0e-6;
  std::uint64_t max_iter = 0;
  std::string out;
  std::string sidecar;
  std::uint64_t player_cap = 0;
  std::uint32_t baseline_trials = 8;
  bool no_fidelity = false;
  bool force_sampled = false;
};

struct OracleArgs {
  std::string graph;
  std::string model;
  std::uint32_t node = 0;
  std::string out;
};

struct GenArgs {
  std::string kind;
  std::uint32_t nodes = 0;
  double avg_degree = 10.0;
  std::size_t features = 16;
  std::uint32_t classes = 2;
  std::uint64_t seed = 0;
  double marker_fraction = 0.05;
  std::vector<std::size_t> hidden = {16};
  std::string out_graph;
  std::string out_model;
  std::string out_markers;
};

struct BenchArgs {
  std::string graph;
  std::string model;
  std::uint32_t node = 0;
  std::vector<std::uint32_t> workers = {1};
  std::vector<std::uint64_t> samples = {0};
  std::vector<std::size_t> batch_sizes = {50};
  std::uint64_t seed = 0;
  double tol = 1.0e-6;
  std::uint64_t max_iter = 0;
  std::string out;
};

struct FidelityArgs {
  std::string graph;
  std::string model;
  std::string doc;
  std::string out;
  std::vector<std::uint32_t> top_k;
  std::vector<double> sparsity;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::uint32_t trials = 8;
  bool trials_given = false;
};

ExplainOptions to_options(const ExplainArgs& a) {
  ExplainOptions opts;
  opts.samples = a.samples;
  opts.batch_size = a.batch_size;
  opts.top_k = a.top_k.empty()
                   ? 10
                   : *std::max_element(a.top_k.begin(), a.top_k.end());
  opts.top_counts = a.top_k;
  opts.sparsities = a.sparsity;
  opts.seed = a.seed;
  opts.tol = a.tol;
  opts.max_iter = a.max_iter;
  opts.player_cap = a.player_cap;
  opts.allow_exhaustive = !a.force_sampled;
  opts.fidelity = !a.no_fidelity;
  opts.baseline_trials = a.baseline_trials;
  return opts;
}

// Parent side of the multi-process backend: bind the rendezvous port,
// re-exec this binary once per extra rank with the coordinates in the
// environment, then act as rank 0.
ExplanationDocument explain_with_procs(const ExplainArgs& a, const Graph& g,
                                       const GcnModel& m,
                                       const std::vector<std::uint32_t>& nodes,
                                       const ExplainOptions& opts,
                                       char** argv) {
  SocketListener listener("127.0.0.1", 0);
  const std::string coord = "127.0.0.1:" + std::to_string(listener.port());
  std::vector<pid_t> kids;
  for (std::uint32_t r = 1; r < a.workers; ++r) {
    const pid_t pid = fork();
    if (pid < 0) {
      for (pid_t k : kids) kill(k, SIGTERM);
      for (pid_t k : kids) waitpid(k, nullptr, 0);
      throw ProtocolError(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid == 0) {
      setenv("SHAPFLOW_RANK", std::to_string(r).c_str(), 1);
      setenv("SHAPFLOW_WORLD", std::to_string(a.workers).c_str(), 1);
      setenv("SHAPFLOW_COORD", coord.c_str(), 1);
      execv("/proc/self/exe", argv);
      _exit(127);
    }
    kids.push_back(pid);
  }

  ExplanationDocument doc;
  try {
    auto comm = make_root_socket_comm(listener, static_cast<int>(a.workers));
    doc = explain_nodes(g, m, nodes, opts, *comm);
  } catch (...) {
    for (pid_t k : kids) kill(k, SIGTERM);
    for (pid_t k : kids) waitpid(k, nullptr, 0);
    throw;
  }
  for (pid_t k : kids) {
    int status = 0;
    waitpid(k, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      throw ProtocolError("worker process " + std::to_string(k) +
                          " failed with status " + std::to_string(status));
    }
  }
  return doc;
}

int run_explain(const ExplainArgs& a, Communicator* env_comm, char** argv) {
  if (!is_pow2(a.workers) || a.workers > 64) {
    std::cerr << "error: --workers must be a power of two between 1 and 64\n";
    return 1;
  }
  if (a.samples != 0 && (a.samples < 2 || a.samples % 2 != 0)) {
    std::cerr << "error: --samples must be an even number of at least 2\n";
    return 1;
  }

  const Graph g = load_graph(a.graph);
  const GcnModel m = load_model(a.model);
  const std::vector<std::uint32_t> nodes = select_nodes(g, a.nodes);
  const ExplainOptions opts = to_options(a);

  ExplanationDocument doc;
  if (env_comm != nullptr) {
    doc = explain_nodes(g, m, nodes, opts, *env_comm);
    if (env_comm->rank() != 0) return 0;
  } else if (a.workers == 1) {
    auto comm = make_local_communicator();
    doc = explain_nodes(g, m, nodes, opts, *comm);
  } else if (a.backend == "threads") {
    run_on_thread_workers(
        static_cast<int>(a.workers), [&](Communicator& comm) {
          auto local = explain_nodes(g, m, nodes, opts, comm);
          if (comm.rank() == 0) doc = std::move(local);
        });
  } else {
    doc = explain_with_procs(a, g, m, nodes, opts, argv);
  }

  doc.config.graph = a.graph;
  doc.config.model = a.model;
  doc.config.nodes = a.nodes;
  doc.config.backend = a.backend;
  doc.config.workers = a.workers;
  save_document(doc, a.out);
  if (!a.sidecar.empty()) write_phi_sidecar(doc, a.sidecar);
  for (const auto& w : doc.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int run_oracle(const OracleArgs& a) {
  const Graph g = load_graph(a.graph);
  const GcnModel m = load_model(a.model);
  if (a.node >= g.num_nodes) {
    throw DataError("node id " + std::to_string(a.node) +
                    " out of range for a graph with " +
                    std::to_string(g.num_nodes) + " nodes");
  }
  const ComputationalGraph cg =
      extract_computational_graph(g, a.node, static_cast<int>(m.depth()));
  const auto n = static_cast<std::uint32_t>(cg.num_players());
  const std::vector<float> probs = predict_probs(m, cg, full_mask(n));
  const auto cls = static_cast<std::uint32_t>(
      std::max_element(probs.begin(), probs.end()) - probs.begin());
  const std::vector<double> phi = exact_shapley_gnn(m, cg, cls);

  nlohmann::json players = nlohmann::json::array();
  for (const auto& [u, v] : cg.players) {
    std::uint32_t gu = cg.local_to_global[u];
    std::uint32_t gv = cg.local_to_global[v];
    if (gu > gv) std::swap(gu, gv);
    players.push_back(nlohmann::json::array({gu, gv}));
  }
  const nlohmann::json j{
      {"node", a.node},
      {"predicted_class", cls},
      {"full_score", static_cast<double>(probs[cls])},
      {"base_score",
       static_cast<double>(predict(m, cg, empty_mask(n), cls))},
      {"players", players},
      {"phi", phi}};
  std::ofstream out(a.out, std::ios::binary);
  if (!out) throw DataError("cannot open output file: " + a.out);
  out << j.dump(2) << "\n";
  if (!out) throw DataError("failed writing output file: " + a.out);
  return 0;
}

int run_gen(const GenArgs& a) {
  if (a.kind == "planted-motif") {
    if (a.classes != 2) {
      throw DataError("planted-motif data always has 2 classes");
    }
    const PlantedMotif pm = gen_planted_motif(a.nodes, a.avg_degree,
                                              a.features, a.seed,
                                              a.marker_fraction);
    save_graph(pm.graph, a.out_graph);
    save_model(pm.model, a.out_model);
    if (!a.out_markers.empty()) {
      std::ofstream out(a.out_markers, std::ios::binary);
      if (!out) throw DataError("cannot open output file: " + a.out_markers);
      for (std::uint32_t u : pm.markers) out << u << "\n";
    }
    return 0;
  }
  const auto edges = static_cast<std::uint64_t>(
      std::llround(static_cast<double>(a.nodes) * a.avg_degree / 2.0));
  const Graph g =
      gen_random_graph(a.nodes, edges, a.features, a.classes, a.seed);
  const GcnModel m =
      gen_random_model(a.features, a.hidden, a.classes, a.seed);
  save_graph(g, a.out_graph);
  save_model(m, a.out_model);
  return 0;
}

int run_bench(const BenchArgs& a) {
  for (std::uint32_t p : a.workers) {
    if (!is_pow2(p) || p > 64) {
      std::cerr << "error: --workers entries must be powers of two between "
                   "1 and 64\n";
      return 1;
    }
  }
  const Graph g = load_graph(a.graph);
  const GcnModel m = load_model(a.model);

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::binary);
    if (!file) throw DataError("cannot open output file: " + a.out);
  }
  std::ostream& out = a.out.empty() ? std::cout : file;
  out << "p,k,batch_size,sampling_ms,predict_ms,solve_ms,total_ms,"
         "iterations\n";

  for (std::uint32_t p : a.workers) {
    for (std::uint64_t k : a.samples) {
      for (std::size_t b : a.batch_sizes) {
        ExplainOptions opts;
        opts.samples = k;
        opts.batch_size = b;
        opts.seed = a.seed;
        opts.tol = a.tol;
        opts.max_iter = a.max_iter;
        opts.fidelity = false;
        NodeExplanation r;
        if (p == 1) {
          auto comm = make_local_communicator();
          r = explain_node(g, m, a.node, opts, *comm);
        } else {
          run_on_thread_workers(
              static_cast<int>(p), [&](Communicator& comm) {
                auto local = explain_node(g, m, a.node, opts, comm);
                if (comm.rank() == 0) r = std::move(local);
              });
        }
        const std::uint64_t resolved =
            k != 0 ? k : auto_samples(r.phi.size());
        out << p << ',' << resolved << ',' << b << ','
            << r.timings.sampling_ms << ',' << r.timings.prediction_ms << ','
            << r.timings.solve_ms << ',' << r.timings.total_ms << ','
            << r.iterations << "\n";
      }
    }
  }
  out.flush();
  return 0;
}

int run_fidelity(const FidelityArgs& a) {
  ExplanationDocument doc = load_document(a.doc);
  const Graph g = load_graph(a.graph);
  const GcnModel m = load_model(a.model);

  const std::vector<std::uint32_t> top_counts =
      a.top_k.empty() ? doc.config.top_counts : a.top_k;
  const std::vector<double> sparsities =
      a.sparsity.empty() ? doc.config.sparsities : a.sparsity;
  const std::uint64_t seed = a.seed_given ? a.seed : doc.config.seed;
  const std::uint32_t trials = a.trials_given ? a.trials : 8;

  for (auto& ne : doc.nodes) {
    if (ne.skipped) continue;
    const ComputationalGraph cg =
        extract_computational_graph(g, ne.node, static_cast<int>(m.depth()));
    if (cg.num_players() != ne.phi.size()) {
      throw DataError("document does not match the graph: node " +
                      std::to_string(ne.node) + " has " +
                      std::to_string(cg.num_players()) +
                      " players but the document stores " +
                      std::to_string(ne.phi.size()));
    }
    ne.fidelity = evaluate_fidelity(m, cg, ne.predicted_class, ne.phi,
                                    top_counts, sparsities,
                                    node_sampling_seed(seed, ne.node), trials);
  }
  doc.config.top_counts = top_counts;
  doc.config.sparsities = sparsities;
  save_document(doc, a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Edge-level explanations of GCN node classifications: approximate "
      "Shapley values for every edge of a node's receptive field, computed "
      "from kernel-weighted coalition samples by a distributed least "
      "squares solver."};
  app.require_subcommand(1);

  ExplainArgs ea;
  auto* cx = app.add_subcommand(
      "explain", "Explain node predictions and score the explanations");
  cx->add_option("--graph", ea.graph, "Graph file")->required();
  cx->add_option("--model", ea.model, "Model file")->required();
  cx->add_option("--nodes", ea.nodes,
                 "Node ids (comma separated) or degree-range:[lo,hi]:count")
      ->required();
  cx->add_option("--samples", ea.samples,
                 "Coalition samples per node; 0 picks 60000 below 5000 "
                 "players, 600000 otherwise");
  cx->add_option("--workers", ea.workers, "Worker count (power of two)");
  cx->add_option("--backend", ea.backend, "Worker backend")
      ->check(CLI::IsMember({"threads", "procs"}));
  cx->add_option("--batch-size", ea.batch_size, "Masks per inference batch")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20));
  cx->add_option("--top-k", ea.top_k,
                 "Selection sizes for ranked edges and fidelity")
      ->delimiter(',');
  cx->add_option("--sparsity", ea.sparsity, "Sparsity levels for fidelity")
      ->delimiter(',');
  cx->add_option("--seed", ea.seed, "Sampling seed");
  cx->add_option("--tol", ea.tol, "Solver relative tolerance");
  cx->add_option("--max-iter", ea.max_iter,
                 "Solver iteration cap; 0 picks min(players, 5000)");
  cx->add_option("--out", ea.out, "Output document path")->required();
  cx->add_option("--sidecar", ea.sidecar,
                 "Also write raw attribution vectors to this path");
  cx->add_option("--player-cap", ea.player_cap,
                 "Skip nodes with more players than this; 0 disables");
  cx->add_option("--baseline-trials", ea.baseline_trials,
                 "Random selections per fidelity baseline");
  cx->add_flag("--no-fidelity", ea.no_fidelity, "Skip fidelity scoring");
  cx->add_flag("--force-sampled", ea.force_sampled,
               "Sample even when full enumeration would be cheaper");

  OracleArgs oa;
  auto* co = app.add_subcommand(
      "oracle", "Exact attributions by full enumeration (at most 22 players)");
  co->add_option("--graph", oa.graph, "Graph file")->required();
  co->add_option("--model", oa.model, "Model file")->required();
  co->add_option("--node", oa.node, "Node id")->required();
  co->add_option("--out", oa.out, "Output path")->required();

  GenArgs ga;
  auto* cg = app.add_subcommand("gen", "Generate synthetic graph and model");
  cg->add_option("--kind", ga.kind, "Dataset kind")
      ->check(CLI::IsMember({"planted-motif", "random"}))
      ->required();
  cg->add_option("--nodes", ga.nodes, "Node count")->required();
  cg->add_option("--avg-degree", ga.avg_degree, "Average degree");
  cg->add_option("--features", ga.features, "Feature channels");
  cg->add_option("--classes", ga.classes, "Class count (random kind)");
  cg->add_option("--seed", ga.seed, "Generator seed");
  cg->add_option("--marker-fraction", ga.marker_fraction,
                 "Marker node fraction (planted-motif kind)");
  cg->add_option("--hidden", ga.hidden, "Hidden widths (random kind)")
      ->delimiter(',');
  cg->add_option("--out-graph", ga.out_graph, "Graph output path")->required();
  cg->add_option("--out-model", ga.out_model, "Model output path")->required();
  cg->add_option("--out-markers", ga.out_markers,
                 "Marker id list output path (planted-motif kind)");

  BenchArgs ba;
  auto* cb = app.add_subcommand(
      "bench", "Time the explain pipeline over a configuration sweep");
  cb->add_option("--graph", ba.graph, "Graph file")->required();
  cb->add_option("--model", ba.model, "Model file")->required();
  cb->add_option("--node", ba.node, "Node id to explain")->required();
  cb->add_option("--workers", ba.workers, "Worker counts (thread backend)")
      ->delimiter(',');
  cb->add_option("--samples", ba.samples, "Sample counts; 0 = default")
      ->delimiter(',');
  cb->add_option("--batch-size", ba.batch_sizes, "Batch sizes")
      ->delimiter(',');
  cb->add_option("--seed", ba.seed, "Sampling seed");
  cb->add_option("--tol", ba.tol, "Solver relative tolerance");
  cb->add_option("--max-iter", ba.max_iter, "Solver iteration cap");
  cb->add_option("--out", ba.out, "CSV output path; default stdout");

  FidelityArgs fa;
  auto* cf = app.add_subcommand(
      "fidelity", "Re-score the fidelity of an existing document");
  cf->add_option("--graph", fa.graph, "Graph file")->required();
  cf->add_option("--model", fa.model, "Model file")->required();
  cf->add_option("--doc", fa.doc, "Existing explanation document")->required();
  cf->add_option("--out", fa.out, "Output document path")->required();
  cf->add_option("--top-k", fa.top_k, "Selection sizes; default from doc")
      ->delimiter(',');
  cf->add_option("--sparsity", fa.sparsity,
                 "Sparsity levels; default from doc")
      ->delimiter(',');
  auto* seed_opt = cf->add_option("--seed", fa.seed,
                                  "Baseline seed; default from doc");
  auto* trials_opt =
      cf->add_option("--trials", fa.trials, "Baseline trials");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  fa.seed_given = seed_opt->count() > 0;
  fa.trials_given = trials_opt->count() > 0;

  try {
    // When rendezvous coordinates are present this process is a spawned
    // worker rank of a procs-backend run.
    std::unique_ptr<Communicator> env_comm = connect_env_communicator();
    if (cx->parsed()) return run_explain(ea, env_comm.get(), argv);
    if (co->parsed()) return run_oracle(oa);
    if (cg->parsed()) return run_gen(ga);
    if (cb->parsed()) return run_bench(ba);
    if (cf->parsed()) return run_fidelity(fa);
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
