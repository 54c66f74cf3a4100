#include "shapflow/graph.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "shapflow/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian and read without byte swaps");

namespace shapflow {

namespace {

constexpr char kGraphMagic[4] = {'S', 'F', 'G', '1'};

template <typename T>
void read_raw(std::istream& in, T* dst, std::size_t count, const char* what) {
  in.read(reinterpret_cast<char*>(dst),
          static_cast<std::streamsize>(sizeof(T) * count));
  if (!in) throw DataError(std::string("graph file truncated while reading ") + what);
}

template <typename T>
void write_raw(std::ostream& out, const T* src, std::size_t count) {
  out.write(reinterpret_cast<const char*>(src),
            static_cast<std::streamsize>(sizeof(T) * count));
}

Graph load_graph_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open graph file: " + path);

  char magic[4];
  read_raw(in, magic, 4, "magic");
  if (std::memcmp(magic, kGraphMagic, 4) != 0)
    throw DataError("bad magic in " + path + " (expected SFG1)");

  std::uint64_t num_nodes = 0, num_edges = 0, dim = 0;
  read_raw(in, &num_nodes, 1, "node count");
  read_raw(in, &num_edges, 1, "edge count");
  read_raw(in, &dim, 1, "feature dim");
  if (num_nodes > 0xFFFFFFFFull)
    throw DataError("node count too large: " + std::to_string(num_nodes));

  std::vector<std::uint64_t> flat(num_edges * 2);
  read_raw(in, flat.data(), flat.size(), "edges");
  std::vector<std::pair<std::uint64_t, std::uint64_t>> edges(num_edges);
  for (std::uint64_t e = 0; e < num_edges; ++e)
    edges[e] = {flat[2 * e], flat[2 * e + 1]};

  std::vector<float> features(num_nodes * dim);
  read_raw(in, features.data(), features.size(), "features");
  std::vector<std::uint32_t> labels(num_nodes);
  read_raw(in, labels.data(), labels.size(), "labels");

  return build_graph(static_cast<std::uint32_t>(num_nodes), edges,
                     std::move(features), dim, std::move(labels));
}

Graph load_graph_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open graph file: " + path);

  std::vector<std::pair<std::uint64_t, std::uint64_t>> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::uint64_t u, v;
    if (!(ls >> u >> v))
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected 'u v' edge line");
    edges.emplace_back(u, v);
  }

  std::filesystem::path p(path);
  std::filesystem::path stem = p.parent_path() / p.stem();
  std::string feat_path = stem.string() + ".features.csv";
  std::ifstream feats(feat_path);
  if (!feats)
    throw DataError("missing feature sidecar for text graph: " + feat_path);

  std::vector<float> features;
  std::size_t dim = 0, rows = 0;
  while (std::getline(feats, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::size_t row_dim = 0;
    while (std::getline(ls, cell, ',')) {
      features.push_back(std::stof(cell));
      ++row_dim;
    }
    if (rows == 0)
      dim = row_dim;
    else if (row_dim != dim)
      throw DataError(feat_path + ": inconsistent column count at row " +
                      std::to_string(rows));
    ++rows;
  }
  if (rows == 0) throw DataError(feat_path + ": no feature rows");

  std::vector<std::uint32_t> labels(rows, kNoLabel);
  std::ifstream labs(stem.string() + ".labels.csv");
  if (labs) {
    std::size_t i = 0;
    while (std::getline(labs, line) && i < rows) {
      if (!line.empty()) labels[i] = static_cast<std::uint32_t>(std::stoul(line));
      ++i;
    }
  }

  return build_graph(static_cast<std::uint32_t>(rows), edges,
                     std::move(features), dim, std::move(labels));
}

}  // namespace

Graph build_graph(std::uint32_t num_nodes,
                  std::span<const std::pair<std::uint64_t, std::uint64_t>> edges,
                  std::vector<float> features, std::size_t feature_dim,
                  std::vector<std::uint32_t> labels) {
  if (features.size() != static_cast<std::size_t>(num_nodes) * feature_dim)
    throw DataError("feature buffer size does not match num_nodes x dim");
  if (labels.empty()) labels.assign(num_nodes, kNoLabel);
  if (labels.size() != num_nodes)
    throw DataError("label buffer size does not match num_nodes");

  // collect both directions, drop self-loops, dedupe
  std::vector<std::pair<std::uint32_t, std::uint32_t>> dir;
  dir.reserve(edges.size() * 2);
  for (const auto& [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes)
      throw DataError("edge endpoint out of range: (" + std::to_string(u) +
                      ", " + std::to_string(v) + ") with " +
                      std::to_string(num_nodes) + " nodes");
    if (u == v) continue;
    dir.emplace_back(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v));
    dir.emplace_back(static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(u));
  }
  std::sort(dir.begin(), dir.end());
  dir.erase(std::unique(dir.begin(), dir.end()), dir.end());

  Graph g;
  g.num_nodes = num_nodes;
  g.feature_dim = feature_dim;
  g.features = std::move(features);
  g.labels = std::move(labels);
  g.row_ptr.assign(num_nodes + 1, 0);
  for (const auto& [u, v] : dir) g.row_ptr[u + 1]++;
  for (std::size_t i = 1; i <= num_nodes; ++i) g.row_ptr[i] += g.row_ptr[i - 1];
  g.col.reserve(dir.size());
  for (const auto& [u, v] : dir) g.col.push_back(v);  // already row-major sorted
  return g;
}

Graph load_graph(const std::string& path) {
  if (std::filesystem::path(path).extension() == ".sfg")
    return load_graph_binary(path);
  return load_graph_text(path);
}

void save_graph(const Graph& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write graph file: " + path);

  write_raw(out, kGraphMagic, 4);
  std::uint64_t num_nodes = g.num_nodes;
  std::uint64_t num_edges = g.num_undirected_edges();
  std::uint64_t dim = g.feature_dim;
  write_raw(out, &num_nodes, 1);
  write_raw(out, &num_edges, 1);
  write_raw(out, &dim, 1);
  for (std::uint32_t u = 0; u < g.num_nodes; ++u) {
    for (std::uint32_t v : g.neighbors(u)) {
      if (u < v) {
        std::uint64_t pair[2] = {u, v};
        write_raw(out, pair, 2);
      }
    }
  }
  write_raw(out, g.features.data(), g.features.size());
  write_raw(out, g.labels.data(), g.labels.size());
  if (!out) throw DataError("write failed: " + path);
}

ComputationalGraph extract_computational_graph(const Graph& g,
                                               std::uint32_t target, int hops) {
  if (target >= g.num_nodes)
    throw DataError("target node " + std::to_string(target) + " out of range");
  if (hops < 0) throw DataError("hop count must be nonnegative");

  // breadth-first ball; discovery order defines local ids, target first
  std::vector<std::uint32_t> local_of(g.num_nodes, kNoLabel);
  ComputationalGraph cg;
  cg.target_global = target;
  cg.feature_dim = g.feature_dim;
  cg.local_to_global.push_back(target);
  local_of[target] = 0;
  std::size_t frontier_begin = 0;
  for (int hop = 0; hop < hops; ++hop) {
    std::size_t frontier_end = cg.local_to_global.size();
    if (frontier_begin == frontier_end) break;
    for (std::size_t i = frontier_begin; i < frontier_end; ++i) {
      for (std::uint32_t nb : g.neighbors(cg.local_to_global[i])) {
        if (local_of[nb] == kNoLabel) {
          local_of[nb] = static_cast<std::uint32_t>(cg.local_to_global.size());
          cg.local_to_global.push_back(nb);
        }
      }
    }
    frontier_begin = frontier_end;
  }

  // induced undirected edges, boundary-boundary included
  for (std::uint32_t lu = 0; lu < cg.num_nodes(); ++lu) {
    for (std::uint32_t gv : g.neighbors(cg.local_to_global[lu])) {
      std::uint32_t lv = local_of[gv];
      if (lv == kNoLabel) continue;
      if (lu < lv) cg.players.emplace_back(lu, lv);
    }
  }
  std::sort(cg.players.begin(), cg.players.end());

  // symmetric CSR over local ids carrying player ownership
  std::vector<std::size_t> deg(cg.num_nodes(), 0);
  for (const auto& [u, v] : cg.players) {
    deg[u]++;
    deg[v]++;
  }
  cg.row_ptr.assign(cg.num_nodes() + 1, 0);
  for (std::uint32_t u = 0; u < cg.num_nodes(); ++u)
    cg.row_ptr[u + 1] = cg.row_ptr[u] + deg[u];
  cg.col.resize(cg.row_ptr.back());
  cg.edge_player.resize(cg.row_ptr.back());
  std::vector<std::size_t> cursor(cg.row_ptr.begin(), cg.row_ptr.end() - 1);
  for (std::uint32_t e = 0; e < cg.players.size(); ++e) {
    auto [u, v] = cg.players[e];
    cg.col[cursor[u]] = v;
    cg.edge_player[cursor[u]++] = e;
    cg.col[cursor[v]] = u;
    cg.edge_player[cursor[v]++] = e;
  }

  cg.features.resize(static_cast<std::size_t>(cg.num_nodes()) * g.feature_dim);
  for (std::uint32_t lu = 0; lu < cg.num_nodes(); ++lu) {
    const float* src = g.features.data() +
                       static_cast<std::size_t>(cg.local_to_global[lu]) * g.feature_dim;
    std::copy(src, src + g.feature_dim,
              cg.features.data() + static_cast<std::size_t>(lu) * g.feature_dim);
  }
  return cg;
}

}  // namespace shapflow
