#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include <json.hpp>

#include "shapflow/document.hpp"

#include "test_helpers.hpp"

using namespace shapflow;

namespace {

const std::string kCli = SHAPFLOW_CLI_PATH;

// Runs the binary with stdout and stderr captured into the scratch dir and
// returns the exit code.
int run(const testing::TempDir& tmp, const std::string& args) {
  const std::string cmd = kCli + " " + args + " >" + tmp.file("stdout.txt") +
                          " 2>" + tmp.file("stderr.txt");
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string shell_quote(const std::string& s) { return "'" + s + "'"; }

struct Workspace {
  testing::TempDir tmp;
  std::string graph, model;

  Workspace() {
    graph = tmp.file("g.sfg");
    model = tmp.file("m.json");
    const int rc = run(tmp, "gen --kind planted-motif --nodes 60 --avg-degree 4 "
                            "--features 3 --seed 5 --out-graph " +
                                shell_quote(graph) + " --out-model " +
                                shell_quote(model));
    REQUIRE(rc == 0);
  }
};

// config fields that legitimately differ across runs being compared
std::string neutral_signature(ExplanationDocument doc) {
  doc.config.workers = 0;
  doc.config.backend.clear();
  return document_signature(doc);
}

}  // namespace

TEST_CASE("cli help and usage errors") {
  testing::TempDir tmp;
  CHECK(run(tmp, "--help") == 0);
  CHECK(run(tmp, "explain --help") == 0);
  CHECK(run(tmp, "frobnicate") == 1);
  CHECK(run(tmp, "explain") == 1);              // required flags missing
  CHECK(run(tmp, "explain --graph a --model b --nodes 0 --out c "
                 "--backend quantum") == 1);    // invalid backend choice
}

TEST_CASE("missing input files are data errors") {
  testing::TempDir tmp;
  CHECK(run(tmp, "explain --graph " + shell_quote(tmp.file("no.sfg")) +
                     " --model " + shell_quote(tmp.file("no.json")) +
                     " --nodes 0 --out " + shell_quote(tmp.file("o.json"))) == 2);
}

TEST_CASE("worker and sample counts are validated before any work") {
  Workspace ws;
  const std::string base = "explain --graph " + shell_quote(ws.graph) +
                           " --model " + shell_quote(ws.model) +
                           " --nodes 0 --out " + shell_quote(ws.tmp.file("o.json"));
  CHECK(run(ws.tmp, base + " --workers 3") == 1);
  CHECK(run(ws.tmp, base + " --workers 0") == 1);
  CHECK(run(ws.tmp, base + " --workers 128") == 1);
  CHECK(run(ws.tmp, base + " --samples 7") == 1);
}

TEST_CASE("generate, explain, verify against the enumeration oracle") {
  Workspace ws;
  const std::string doc_path = ws.tmp.file("doc.json");
  const std::string phi_path = ws.tmp.file("phi.bin");
  int rc = run(ws.tmp, "explain --graph " + shell_quote(ws.graph) + " --model " +
                           shell_quote(ws.model) +
                           " --nodes degree-range:[2,6]:2 --out " +
                           shell_quote(doc_path) + " --sidecar " +
                           shell_quote(phi_path) + " --baseline-trials 2");
  REQUIRE(rc == 0);

  const ExplanationDocument doc = load_document(doc_path);
  REQUIRE(doc.nodes.size() == 2);
  const NodeExplanation& ex = doc.nodes[0];
  REQUIRE(!ex.skipped);
  CHECK(ex.exhaustive);  // small neighborhoods enumerate fully
  CHECK(doc.config.backend == "threads");

  // sidecar carries the same numbers bit for bit
  const auto records = read_phi_sidecar(phi_path);
  REQUIRE(records.size() == 2);
  CHECK(records[0].first == ex.node);
  CHECK(records[0].second == ex.phi);

  // independent exact enumeration of the same node
  const std::string oracle_path = ws.tmp.file("oracle.json");
  rc = run(ws.tmp, "oracle --graph " + shell_quote(ws.graph) + " --model " +
                       shell_quote(ws.model) + " --node " +
                       std::to_string(ex.node) + " --out " +
                       shell_quote(oracle_path));
  REQUIRE(rc == 0);
  const nlohmann::json oj =
      nlohmann::json::parse(testing::read_file(oracle_path));
  const std::vector<double> exact = oj.at("phi").get<std::vector<double>>();
  REQUIRE(exact.size() == ex.phi.size());
  CHECK(oj.at("node").get<std::uint32_t>() == ex.node);
  CHECK(oj.at("predicted_class").get<std::uint32_t>() == ex.predicted_class);
  for (std::size_t i = 0; i < exact.size(); ++i) {
    CHECK(std::abs(ex.phi[i] - exact[i]) <= 1e-6);
  }
}

TEST_CASE("thread and process backends write the same document") {
  Workspace ws;
  const std::string args = " --graph " + shell_quote(ws.graph) + " --model " +
                           shell_quote(ws.model) +
                           " --nodes 0,7 --samples 256 --force-sampled "
                           "--baseline-trials 2 --seed 3";
  const std::string t1 = ws.tmp.file("t1.json"), t4 = ws.tmp.file("t4.json"),
                    p2 = ws.tmp.file("p2.json");
  REQUIRE(run(ws.tmp, "explain" + args + " --workers 1 --out " + shell_quote(t1)) ==
          0);
  REQUIRE(run(ws.tmp, "explain" + args +
                          " --workers 4 --backend threads --out " +
                          shell_quote(t4)) == 0);
  REQUIRE(run(ws.tmp, "explain" + args + " --workers 2 --backend procs --out " +
                          shell_quote(p2)) == 0);

  const std::string ref = neutral_signature(load_document(t1));
  CHECK(neutral_signature(load_document(t4)) == ref);
  CHECK(neutral_signature(load_document(p2)) == ref);
}

TEST_CASE("fidelity rescoring preserves the attributions") {
  Workspace ws;
  const std::string doc_path = ws.tmp.file("doc.json");
  REQUIRE(run(ws.tmp, "explain --graph " + shell_quote(ws.graph) + " --model " +
                          shell_quote(ws.model) + " --nodes 0 --no-fidelity --out " +
                          shell_quote(doc_path)) == 0);
  const ExplanationDocument before = load_document(doc_path);
  REQUIRE(!before.nodes.empty());
  CHECK(!before.nodes[0].fidelity.has_value());

  const std::string scored_path = ws.tmp.file("scored.json");
  REQUIRE(run(ws.tmp, "fidelity --graph " + shell_quote(ws.graph) + " --model " +
                          shell_quote(ws.model) + " --doc " + shell_quote(doc_path) +
                          " --out " + shell_quote(scored_path) +
                          " --top-k 2,3 --sparsity 0.5 --trials 2") == 0);
  const ExplanationDocument after = load_document(scored_path);
  REQUIRE(!after.nodes.empty());
  CHECK(after.nodes[0].phi == before.nodes[0].phi);
  REQUIRE(after.nodes[0].fidelity.has_value());
  CHECK(after.nodes[0].fidelity->top_counts.size() == 2);
  CHECK(after.nodes[0].fidelity->sparsities ==
        std::vector<double>{0.5});

  // rescoring a document against the wrong graph is a data error; an
  // edgeless graph guarantees the player counts cannot line up
  const std::string other_graph = ws.tmp.file("other.sfg");
  const std::string other_model = ws.tmp.file("other.json");
  REQUIRE(run(ws.tmp, "gen --kind random --nodes 3 --avg-degree 0 "
                      "--features 3 --classes 2 --seed 1 --out-graph " +
                          shell_quote(other_graph) + " --out-model " +
                          shell_quote(other_model)) == 0);
  CHECK(run(ws.tmp, "fidelity --graph " + shell_quote(other_graph) + " --model " +
                        shell_quote(ws.model) + " --doc " + shell_quote(doc_path) +
                        " --out " + shell_quote(ws.tmp.file("bad.json"))) == 2);
}

TEST_CASE("bench emits the expected csv header") {
  Workspace ws;
  const std::string csv = ws.tmp.file("bench.csv");
  REQUIRE(run(ws.tmp, "bench --graph " + shell_quote(ws.graph) + " --model " +
                          shell_quote(ws.model) +
                          " --node 0 --workers 1 --samples 128 "
                          "--batch-size 16 --out " +
                          shell_quote(csv)) == 0);
  const std::string text = testing::read_file(csv);
  CHECK(text.rfind("p,k,batch_size,sampling_ms,predict_ms,solve_ms,total_ms,"
                   "iterations\n",
                   0) == 0);
  // one data row for the single configuration
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
}

TEST_CASE("an empty selection succeeds with a warning in the document") {
  Workspace ws;
  const std::string doc_path = ws.tmp.file("empty.json");
  REQUIRE(run(ws.tmp, "explain --graph " + shell_quote(ws.graph) + " --model " +
                          shell_quote(ws.model) +
                          " --nodes degree-range:[40,50]:3 --out " +
                          shell_quote(doc_path)) == 0);
  const ExplanationDocument doc = load_document(doc_path);
  CHECK(doc.nodes.empty());
  CHECK(doc.warnings.size() == 1);
}
