#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "shapflow/fidelity.hpp"
#include "shapflow/solver.hpp"

namespace shapflow {

// Wall-clock stage breakdown for one explained node, milliseconds.
struct StageTimings {
  double sampling_ms = 0.0;
  double prediction_ms = 0.0;
  double solve_ms = 0.0;
  double total_ms = 0.0;
};

struct NodeExplanation {
  std::uint32_t node = 0;  // global node id
  bool skipped = false;    // player cap exceeded; only node/warning valid
  std::string warning;     // empty when clean

  std::uint32_t predicted_class = 0;
  double base_score = 0.0;  // model output with every player removed
  double full_score = 0.0;  // model output with every player kept

  // players[e] = global endpoints of edge e, smaller id first; phi[e] is
  // its attribution.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> players;
  std::vector<double> phi;

  bool exhaustive = false;  // every proper nonempty coalition enumerated
  std::uint64_t rows = 0;   // mask rows across all workers
  std::uint32_t iterations = 0;
  double residual = 0.0;  // relative residual reached by the solver
  bool converged = true;

  std::vector<RankedEdge> top;
  std::optional<FidelityReport> fidelity;
  StageTimings timings;
};

// Echo of the settings that produced a document, so results are
// reproducible from the output alone.
struct DocumentConfig {
  std::string graph;
  std::string model;
  std::string nodes;  // selection rule or id list as given
  std::uint64_t samples = 0;  // 0 means the player-count default
  std::uint32_t workers = 1;
  std::string backend = "threads";
  std::size_t batch_size = 50;
  std::vector<std::uint32_t> top_counts;
  std::vector<double> sparsities;
  std::uint64_t seed = 0;
  double tol = 1e-6;
  std::uint64_t max_iter = 0;
};

struct ExplanationDocument {
  DocumentConfig config;
  std::vector<NodeExplanation> nodes;
  std::vector<std::string> warnings;
};

// JSON with sorted keys; numbers round-trip exactly, so
// parse_document(serialize_document(d)) reproduces d.
std::string serialize_document(const ExplanationDocument& doc);
ExplanationDocument parse_document(const std::string& text);
void save_document(const ExplanationDocument& doc, const std::string& path);
ExplanationDocument load_document(const std::string& path);

// Serialization with all timings zeroed and the execution shape (worker
// count, backend) normalized away. Runs of the same semantic config are
// deterministic exactly when their signatures match byte for byte.
std::string document_signature(const ExplanationDocument& doc);

// Raw little-endian doubles for the phi vectors, one record per
// non-skipped node, for consumers that want bit-exact values without
// parsing text.
void write_phi_sidecar(const ExplanationDocument& doc,
                       const std::string& path);
std::vector<std::pair<std::uint32_t, std::vector<double>>> read_phi_sidecar(
    const std::string& path);

}  // namespace shapflow
