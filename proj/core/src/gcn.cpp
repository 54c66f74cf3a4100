#include "shapflow/gcn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "shapflow/error.hpp"

namespace shapflow {

namespace {

void validate_model(const GcnModel& m, const std::string& origin) {
  if (m.layers.empty()) throw DataError(origin + ": model has no layers");
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const GcnLayer& lay = m.layers[l];
    if (lay.in == 0 || lay.out == 0)
      throw DataError(origin + ": layer " + std::to_string(l) +
                      " has a zero dimension");
    if (lay.weight.size() != lay.in * lay.out)
      throw DataError(origin + ": layer " + std::to_string(l) +
                      " weight size does not match in x out");
    if (lay.bias.size() != lay.out)
      throw DataError(origin + ": layer " + std::to_string(l) +
                      " bias size does not match out");
    if (l > 0 && m.layers[l - 1].out != lay.in)
      throw DataError(origin + ": dimension chain broken between layers " +
                      std::to_string(l - 1) + " and " + std::to_string(l) +
                      " (" + std::to_string(m.layers[l - 1].out) + " -> " +
                      std::to_string(lay.in) + ")");
  }
}

// Evaluates every mask row and hands each sample's class probabilities to
// the sink. Work proceeds in slabs of batch_size copies stacked into one
// block-diagonal system; each copy's rows only ever reference that copy's
// entries, so results are independent of slab boundaries.
template <typename Sink>
void evaluate_masks(const GcnModel& m, const ComputationalGraph& cg,
                    const BitRows& masks, std::size_t batch_size, Sink&& sink) {
  if (m.input_dim() != cg.feature_dim)
    throw DataError("model input dim " + std::to_string(m.input_dim()) +
                    " does not match feature dim " +
                    std::to_string(cg.feature_dim));
  if (batch_size == 0) throw DataError("batch_size must be positive");
  if (masks.rows > 0 && masks.words_per_row < words_for_bits(cg.num_players()))
    throw DataError("mask rows narrower than the player count");

  const std::size_t V = cg.num_nodes();
  const std::size_t L = m.depth();
  const std::size_t C = m.num_classes();
  std::size_t dmax = cg.feature_dim;
  for (const GcnLayer& lay : m.layers) dmax = std::max(dmax, lay.out);

  const std::size_t cap = std::min(batch_size, std::max<std::size_t>(masks.rows, 1));
  std::vector<float> isd(cap * V);
  std::vector<std::size_t> row_ptr(cap * V + 1);
  std::vector<std::uint32_t> col;
  std::vector<float> val;
  col.reserve(cap * (V + 2 * cg.num_players()));
  val.reserve(cap * (V + 2 * cg.num_players()));
  std::vector<float> ha(cap * V * dmax), hb(cap * V * dmax), ah(cap * V * dmax);
  std::vector<float> logits(cap * C);

  for (std::size_t slab = 0; slab < masks.rows; slab += cap) {
    const std::size_t B = std::min(cap, masks.rows - slab);

    // per-copy renormalized adjacency; the self-loop entry leads each row
    col.clear();
    val.clear();
    row_ptr[0] = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const std::uint64_t* mask = masks.row(slab + b);
      const std::size_t base = b * V;
      for (std::size_t u = 0; u < V; ++u) {
        std::size_t deg = 1;
        for (std::size_t i = cg.row_ptr[u]; i < cg.row_ptr[u + 1]; ++i)
          deg += test_bit(mask, cg.edge_player[i]);
        isd[base + u] = 1.0f / std::sqrt(static_cast<float>(deg));
      }
      for (std::size_t u = 0; u < V; ++u) {
        const float du = isd[base + u];
        col.push_back(static_cast<std::uint32_t>(base + u));
        val.push_back(du * du);
        for (std::size_t i = cg.row_ptr[u]; i < cg.row_ptr[u + 1]; ++i) {
          if (!test_bit(mask, cg.edge_player[i])) continue;
          col.push_back(static_cast<std::uint32_t>(base + cg.col[i]));
          val.push_back(du * isd[base + cg.col[i]]);
        }
        row_ptr[base + u + 1] = col.size();
      }
    }

    // stack input features
    for (std::size_t b = 0; b < B; ++b)
      std::copy(cg.features.begin(), cg.features.end(),
                ha.begin() + b * V * cg.feature_dim);

    float* h = ha.data();
    float* hnext = hb.data();
    for (std::size_t l = 0; l < L; ++l) {
      const GcnLayer& lay = m.layers[l];
      const std::size_t din = lay.in, dout = lay.out;
      const bool last = (l + 1 == L);

      auto aggregate_row = [&](std::size_t r, float* dst) {
        std::fill(dst, dst + din, 0.0f);
        for (std::size_t i = row_ptr[r]; i < row_ptr[r + 1]; ++i) {
          const float a = val[i];
          const float* src = h + static_cast<std::size_t>(col[i]) * din;
          for (std::size_t j = 0; j < din; ++j) dst[j] += a * src[j];
        }
      };
      auto affine_row = [&](const float* src, float* dst) {
        std::copy(lay.bias.begin(), lay.bias.end(), dst);
        for (std::size_t kin = 0; kin < din; ++kin) {
          const float a = src[kin];
          const float* wrow = lay.weight.data() + kin * dout;
          for (std::size_t j = 0; j < dout; ++j) dst[j] += a * wrow[j];
        }
      };

      if (!last) {
        for (std::size_t r = 0; r < B * V; ++r)
          aggregate_row(r, ah.data() + r * din);
        for (std::size_t r = 0; r < B * V; ++r) {
          float* dst = hnext + r * dout;
          affine_row(ah.data() + r * din, dst);
          for (std::size_t j = 0; j < dout; ++j) dst[j] = std::max(dst[j], 0.0f);
        }
        std::swap(h, hnext);
      } else {
        // only the target row of each copy feeds the prediction
        for (std::size_t b = 0; b < B; ++b) {
          aggregate_row(b * V, ah.data() + b * din);
          affine_row(ah.data() + b * din, logits.data() + b * C);
        }
      }
    }

    for (std::size_t b = 0; b < B; ++b) {
      float* z = logits.data() + b * C;
      float mx = z[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, z[c]);
      float sum = 0.0f;
      for (std::size_t c = 0; c < C; ++c) {
        z[c] = std::exp(z[c] - mx);
        sum += z[c];
      }
      for (std::size_t c = 0; c < C; ++c) z[c] /= sum;
      sink(slab + b, std::span<const float>(z, C));
    }
  }
}

}  // namespace

GcnModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed model file: " + e.what());
  }

  GcnModel m;
  try {
    if (j.contains("hidden_activation") && j["hidden_activation"] != "relu")
      throw DataError(path + ": unsupported hidden_activation '" +
                      j["hidden_activation"].get<std::string>() + "'");
    for (const auto& jl : j.at("layers")) {
      GcnLayer lay;
      lay.in = jl.at("in").get<std::size_t>();
      lay.out = jl.at("out").get<std::size_t>();
      lay.weight = jl.at("weight").get<std::vector<float>>();
      lay.bias = jl.at("bias").get<std::vector<float>>();
      m.layers.push_back(std::move(lay));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed model file: " + e.what());
  }
  validate_model(m, path);
  return m;
}

void save_model(const GcnModel& m, const std::string& path) {
  validate_model(m, path);
  nlohmann::json j;
  j["hidden_activation"] = "relu";
  j["layers"] = nlohmann::json::array();
  for (const GcnLayer& lay : m.layers) {
    nlohmann::json jl;
    jl["in"] = lay.in;
    jl["out"] = lay.out;
    // doubles round-trip the exact float values
    jl["weight"] = std::vector<double>(lay.weight.begin(), lay.weight.end());
    jl["bias"] = std::vector<double>(lay.bias.begin(), lay.bias.end());
    j["layers"].push_back(std::move(jl));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write model file: " + path);
  out << j.dump(1) << "\n";
  if (!out) throw DataError("write failed: " + path);
}

SparseMatrix normalize_adjacency(const ComputationalGraph& cg,
                                 std::span<const std::uint64_t> mask) {
  if (mask.size() < words_for_bits(cg.num_players()))
    throw DataError("mask shorter than the player count");
  const std::size_t V = cg.num_nodes();
  SparseMatrix a;
  a.n = cg.num_nodes();
  a.row_ptr.assign(V + 1, 0);

  std::vector<float> isd(V);
  for (std::size_t u = 0; u < V; ++u) {
    std::size_t deg = 1;
    for (std::size_t i = cg.row_ptr[u]; i < cg.row_ptr[u + 1]; ++i)
      deg += test_bit(mask.data(), cg.edge_player[i]);
    isd[u] = 1.0f / std::sqrt(static_cast<float>(deg));
  }
  for (std::size_t u = 0; u < V; ++u) {
    a.col.push_back(static_cast<std::uint32_t>(u));
    a.val.push_back(isd[u] * isd[u]);
    for (std::size_t i = cg.row_ptr[u]; i < cg.row_ptr[u + 1]; ++i) {
      if (!test_bit(mask.data(), cg.edge_player[i])) continue;
      a.col.push_back(cg.col[i]);
      a.val.push_back(isd[u] * isd[cg.col[i]]);
    }
    a.row_ptr[u + 1] = a.col.size();
  }
  return a;
}

std::vector<float> predict_probs(const GcnModel& m, const ComputationalGraph& cg,
                                 std::span<const std::uint64_t> mask) {
  if (mask.size() < words_for_bits(cg.num_players()))
    throw DataError("mask shorter than the player count");
  std::vector<float> probs;
  BitRows rows{mask.data(), 1, mask.size()};
  evaluate_masks(m, cg, rows, 1,
                 [&](std::size_t, std::span<const float> p) {
                   probs.assign(p.begin(), p.end());
                 });
  return probs;
}

float predict(const GcnModel& m, const ComputationalGraph& cg,
              std::span<const std::uint64_t> mask, std::uint32_t class_index) {
  if (class_index >= m.num_classes())
    throw DataError("class index out of range");
  return predict_probs(m, cg, mask)[class_index];
}

std::vector<float> predict_batched(const GcnModel& m, const ComputationalGraph& cg,
                                   const BitRows& masks, std::uint32_t class_index,
                                   std::size_t batch_size) {
  if (class_index >= m.num_classes())
    throw DataError("class index out of range");
  std::vector<float> out(masks.rows);
  evaluate_masks(m, cg, masks, batch_size,
                 [&](std::size_t i, std::span<const float> p) {
                   out[i] = p[class_index];
                 });
  return out;
}

}  // namespace shapflow
