#include "shapflow/document.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "shapflow/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian and read without byte swaps");

namespace shapflow {

namespace {

using nlohmann::json;

constexpr char kSidecarMagic[4] = {'S', 'F', 'P', '1'};

template <typename T>
void read_raw(std::istream& in, T* dst, std::size_t count, const char* what) {
  in.read(reinterpret_cast<char*>(dst),
          static_cast<std::streamsize>(sizeof(T) * count));
  if (!in) {
    throw DataError(std::string("sidecar file truncated while reading ") +
                    what);
  }
}

template <typename T>
void write_raw(std::ostream& out, const T* src, std::size_t count) {
  out.write(reinterpret_cast<const char*>(src),
            static_cast<std::streamsize>(sizeof(T) * count));
}

json fidelity_to_json(const FidelityReport& r) {
  return json{{"node", r.node},
              {"predicted_class", r.predicted_class},
              {"full_score", r.full_score},
              {"top_counts", r.top_counts},
              {"plus", r.plus},
              {"plus_random", r.plus_random},
              {"sparsities", r.sparsities},
              {"minus", r.minus},
              {"minus_random", r.minus_random},
              {"baseline_seed", r.baseline_seed},
              {"baseline_trials", r.baseline_trials}};
}

FidelityReport fidelity_from_json(const json& j) {
  FidelityReport r;
  r.node = j.at("node").get<std::uint32_t>();
  r.predicted_class = j.at("predicted_class").get<std::uint32_t>();
  r.full_score = j.at("full_score").get<double>();
  r.top_counts = j.at("top_counts").get<std::vector<std::uint32_t>>();
  r.plus = j.at("plus").get<std::vector<double>>();
  r.plus_random = j.at("plus_random").get<std::vector<double>>();
  r.sparsities = j.at("sparsities").get<std::vector<double>>();
  r.minus = j.at("minus").get<std::vector<double>>();
  r.minus_random = j.at("minus_random").get<std::vector<double>>();
  r.baseline_seed = j.at("baseline_seed").get<std::uint64_t>();
  r.baseline_trials = j.at("baseline_trials").get<std::uint32_t>();
  return r;
}

json node_to_json(const NodeExplanation& n) {
  json players = json::array();
  for (const auto& [u, v] : n.players) players.push_back(json::array({u, v}));
  json top = json::array();
  for (const auto& e : n.top) {
    top.push_back(json{{"player", e.player}, {"phi", e.phi}});
  }
  json j{{"node", n.node},
         {"skipped", n.skipped},
         {"warning", n.warning},
         {"predicted_class", n.predicted_class},
         {"base_score", n.base_score},
         {"full_score", n.full_score},
         {"players", std::move(players)},
         {"phi", n.phi},
         {"exhaustive", n.exhaustive},
         {"rows", n.rows},
         {"iterations", n.iterations},
         {"residual", n.residual},
         {"converged", n.converged},
         {"top", std::move(top)},
         {"timings", json{{"sampling_ms", n.timings.sampling_ms},
                          {"prediction_ms", n.timings.prediction_ms},
                          {"solve_ms", n.timings.solve_ms},
                          {"total_ms", n.timings.total_ms}}}};
  if (n.fidelity) j["fidelity"] = fidelity_to_json(*n.fidelity);
  return j;
}

NodeExplanation node_from_json(const json& j) {
  NodeExplanation n;
  n.node = j.at("node").get<std::uint32_t>();
  n.skipped = j.at("skipped").get<bool>();
  n.warning = j.at("warning").get<std::string>();
  n.predicted_class = j.at("predicted_class").get<std::uint32_t>();
  n.base_score = j.at("base_score").get<double>();
  n.full_score = j.at("full_score").get<double>();
  for (const auto& p : j.at("players")) {
    n.players.emplace_back(p.at(0).get<std::uint32_t>(),
                           p.at(1).get<std::uint32_t>());
  }
  n.phi = j.at("phi").get<std::vector<double>>();
  if (n.players.size() != n.phi.size()) {
    throw DataError("explanation document corrupt: node " +
                    std::to_string(n.node) + " has " +
                    std::to_string(n.players.size()) + " players but " +
                    std::to_string(n.phi.size()) + " attributions");
  }
  n.exhaustive = j.at("exhaustive").get<bool>();
  n.rows = j.at("rows").get<std::uint64_t>();
  n.iterations = j.at("iterations").get<std::uint32_t>();
  n.residual = j.at("residual").get<double>();
  n.converged = j.at("converged").get<bool>();
  for (const auto& e : j.at("top")) {
    n.top.push_back(RankedEdge{e.at("player").get<std::uint32_t>(),
                               e.at("phi").get<double>()});
  }
  if (j.contains("fidelity")) {
    n.fidelity = fidelity_from_json(j.at("fidelity"));
  }
  const json& t = j.at("timings");
  n.timings.sampling_ms = t.at("sampling_ms").get<double>();
  n.timings.prediction_ms = t.at("prediction_ms").get<double>();
  n.timings.solve_ms = t.at("solve_ms").get<double>();
  n.timings.total_ms = t.at("total_ms").get<double>();
  return n;
}

json config_to_json(const DocumentConfig& c) {
  return json{{"graph", c.graph},
              {"model", c.model},
              {"nodes", c.nodes},
              {"samples", c.samples},
              {"workers", c.workers},
              {"backend", c.backend},
              {"batch_size", c.batch_size},
              {"top_counts", c.top_counts},
              {"sparsities", c.sparsities},
              {"seed", c.seed},
              {"tol", c.tol},
              {"max_iter", c.max_iter}};
}

DocumentConfig config_from_json(const json& j) {
  DocumentConfig c;
  c.graph = j.at("graph").get<std::string>();
  c.model = j.at("model").get<std::string>();
  c.nodes = j.at("nodes").get<std::string>();
  c.samples = j.at("samples").get<std::uint64_t>();
  c.workers = j.at("workers").get<std::uint32_t>();
  c.backend = j.at("backend").get<std::string>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.top_counts = j.at("top_counts").get<std::vector<std::uint32_t>>();
  c.sparsities = j.at("sparsities").get<std::vector<double>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.tol = j.at("tol").get<double>();
  c.max_iter = j.at("max_iter").get<std::uint64_t>();
  return c;
}

json document_to_json(const ExplanationDocument& doc) {
  json nodes = json::array();
  for (const auto& n : doc.nodes) nodes.push_back(node_to_json(n));
  return json{{"config", config_to_json(doc.config)},
              {"nodes", std::move(nodes)},
              {"warnings", doc.warnings}};
}

}  // namespace

std::string serialize_document(const ExplanationDocument& doc) {
  return document_to_json(doc).dump(2) + "\n";
}

ExplanationDocument parse_document(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("explanation document is not valid JSON: ") +
                    e.what());
  }
  try {
    ExplanationDocument doc;
    doc.config = config_from_json(j.at("config"));
    for (const auto& n : j.at("nodes")) doc.nodes.push_back(node_from_json(n));
    doc.warnings = j.at("warnings").get<std::vector<std::string>>();
    return doc;
  } catch (const json::exception& e) {
    throw DataError(std::string("explanation document malformed: ") +
                    e.what());
  }
}

void save_document(const ExplanationDocument& doc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open output file: " + path);
  const std::string text = serialize_document(doc);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw DataError("failed writing output file: " + path);
}

ExplanationDocument load_document(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open document file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_document(buf.str());
}

std::string document_signature(const ExplanationDocument& doc) {
  ExplanationDocument stripped = doc;
  stripped.config.workers = 1;
  stripped.config.backend = "threads";
  for (auto& n : stripped.nodes) n.timings = StageTimings{};
  return serialize_document(stripped);
}

void write_phi_sidecar(const ExplanationDocument& doc,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open output file: " + path);
  write_raw(out, kSidecarMagic, 4);
  std::uint64_t count = 0;
  for (const auto& n : doc.nodes) {
    if (!n.skipped) ++count;
  }
  write_raw(out, &count, 1);
  for (const auto& n : doc.nodes) {
    if (n.skipped) continue;
    write_raw(out, &n.node, 1);
    const std::uint64_t len = n.phi.size();
    write_raw(out, &len, 1);
    write_raw(out, n.phi.data(), n.phi.size());
  }
  out.flush();
  if (!out) throw DataError("failed writing output file: " + path);
}

std::vector<std::pair<std::uint32_t, std::vector<double>>> read_phi_sidecar(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open sidecar file: " + path);
  char magic[4];
  read_raw(in, magic, 4, "magic");
  if (std::memcmp(magic, kSidecarMagic, 4) != 0) {
    throw DataError("bad magic in " + path + " (expected SFP1)");
  }
  std::uint64_t count = 0;
  read_raw(in, &count, 1, "record count");
  std::vector<std::pair<std::uint32_t, std::vector<double>>> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t node = 0;
    std::uint64_t len = 0;
    read_raw(in, &node, 1, "node id");
    read_raw(in, &len, 1, "vector length");
    std::vector<double> phi(len);
    read_raw(in, phi.data(), len, "attributions");
    out.emplace_back(node, std::move(phi));
  }
  return out;
}

}  // namespace shapflow
