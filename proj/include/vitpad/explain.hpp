#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vitpad/data.hpp"
#include "vitpad/errors.hpp"
#include "vitpad/image.hpp"
#include "vitpad/parallel.hpp"
#include "vitpad/tape.hpp"
#include "vitpad/tensor.hpp"
#include "vitpad/train.hpp"
#include "vitpad/vit.hpp"

namespace vitpad {

enum class RelevancyMethod { Rollout, GradRelevancy };

inline const char* method_name(RelevancyMethod m) {
  return m == RelevancyMethod::Rollout ? "rollout" : "grad_relevancy";
}

// Per-patch importance on the g×g patch grid. Entries are non-negative and
// sum to 1 unless the map carries no mass at all, in which case it is all zero.
struct RelevancyMap {
  Tensor<double> grid;
  std::string sample_id;
  RelevancyMethod method = RelevancyMethod::Rollout;
  double mass = 0.0;  // class-row patch mass before normalization
};

namespace detail {

template <typename T>
std::size_t check_attention_stack(const std::vector<Tensor<T>>& attn, const char* what) {
  if (attn.empty()) throw DimensionError(std::string(what) + ": no attention layers");
  const std::size_t n = attn.front().rank() == 3 ? attn.front().dim(1) : 0;
  for (const auto& a : attn) {
    if (a.rank() != 3 || a.dim(1) != n || a.dim(2) != n) {
      throw DimensionError(std::string(what) + ": attention map " + shape_str(a.shape()) +
                           " is not [heads, tokens, tokens] with a common token count");
    }
  }
  if (n < 2) throw DimensionError(std::string(what) + ": need a class token and at least one patch");
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n - 1))));
  if (g * g != n - 1) {
    throw DimensionError(std::string(what) + ": " + std::to_string(n - 1) + " patch tokens do not form a square grid");
  }
  return g;
}

// Class-token row of R restricted to patch tokens, clamped, normalized.
inline RelevancyMap class_row_map(const Tensor<double>& r, std::size_t g, RelevancyMethod method) {
  RelevancyMap map;
  map.method = method;
  map.grid = Tensor<double>({g, g});
  double mass = 0.0;
  for (std::size_t p = 0; p < g * g; ++p) {
    const double v = std::max(0.0, r(0, p + 1));
    map.grid[p] = v;
    mass += v;
  }
  map.mass = mass;
  if (mass > 0.0)
    for (auto& v : map.grid.data()) v /= mass;
  return map;
}

template <typename T>
Tensor<double> mean_heads(const Tensor<T>& a) {
  const std::size_t h = a.dim(0), n = a.dim(1);
  Tensor<double> out({n, n});
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t i = 0; i < n * n; ++i) out[i] += static_cast<double>(a[k * n * n + i]);
  for (auto& v : out.data()) v /= static_cast<double>(h);
  return out;
}

}  // namespace detail

// R = Â_L ⋯ Â_1 with Â = rownorm(0.5·mean_heads(A) + 0.5·I).
template <typename T>
RelevancyMap attention_rollout(const std::vector<Tensor<T>>& attn) {
  const std::size_t g = detail::check_attention_stack(attn, "attention_rollout");
  const std::size_t n = attn.front().dim(1);
  for (const auto& a : attn) {
    for (std::size_t row = 0; row < a.dim(0) * n; ++row) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(a[row * n + j]);
      if (std::abs(s - 1.0) > 1e-5) throw ArgumentError("attention_rollout: attention rows must sum to 1");
    }
  }
  Tensor<double> r = Tensor<double>::identity(n);
  for (const auto& a : attn) {
    Tensor<double> mixed = detail::mean_heads(a);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        mixed(i, j) = 0.5 * mixed(i, j) + (i == j ? 0.5 : 0.0);
        s += mixed(i, j);
      }
      for (std::size_t j = 0; j < n; ++j) mixed(i, j) /= s;
    }
    r = matmul(mixed, r);
  }
  return detail::class_row_map(r, g, RelevancyMethod::Rollout);
}

// R ← I; per layer from input to output: R ← R + mean_heads((∇A ⊙ A)⁺)·R.
template <typename T>
RelevancyMap grad_relevancy(const std::vector<Tensor<T>>& attn, const std::vector<Tensor<T>>& attn_grads) {
  const std::size_t g = detail::check_attention_stack(attn, "grad_relevancy");
  if (attn_grads.size() != attn.size()) {
    throw DimensionError("grad_relevancy: " + std::to_string(attn.size()) + " attention layers but " +
                         std::to_string(attn_grads.size()) + " gradient layers");
  }
  const std::size_t n = attn.front().dim(1);
  Tensor<double> r = Tensor<double>::identity(n);
  for (std::size_t l = 0; l < attn.size(); ++l) {
    const auto& a = attn[l];
    const auto& ga = attn_grads[l];
    if (ga.shape() != a.shape()) {
      throw DimensionError("grad_relevancy: layer " + std::to_string(l) + " gradient " + shape_str(ga.shape()) +
                           " does not match attention " + shape_str(a.shape()));
    }
    Tensor<T> prod(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) prod[i] = std::max(T{0}, a[i] * ga[i]);
    const auto abar = detail::mean_heads(prod);
    const auto update = matmul(abar, r);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += update[i];
  }
  return detail::class_row_map(r, g, RelevancyMethod::GradRelevancy);
}

struct Explanation {
  RelevancyMap rollout;
  RelevancyMap grad_relevancy;
  double logit = 0.0;
};

// Forward pass with attention tracked, then d(logit)/d(attention) with the raw
// logit as seed.
template <typename T>
Explanation explain_input(const Tensor<T>& input, const ViTParams<T>& params, const ViTConfig& cfg) {
  Tape<T> tape;
  const auto vars = bind_params(tape, params, {});
  const auto graph = record_forward(tape, input, vars, cfg, /*watch_attention=*/true);
  const auto& logit = tape.value(graph.logit);
  Tensor<T> seed(logit.shape());
  seed[0] = T{1};
  tape.backprop(graph.logit, seed);
  const auto maps = stack_attention(tape, graph, cfg);
  const auto grads = stack_attention(tape, graph, cfg, /*gradients=*/true);
  Explanation e;
  e.logit = static_cast<double>(logit[0]);
  e.rollout = attention_rollout(maps);
  e.grad_relevancy = grad_relevancy(maps, grads);
  return e;
}

inline Explanation explain_sample(const ViTParams<float>& params, const ViTConfig& cfg, const Manifest& manifest,
                                  const std::string& sample_id) {
  params.validate(cfg);
  const auto& s = manifest.at(sample_id);
  auto e = explain_input(load_input(manifest, s, cfg), params, cfg);
  e.rollout.sample_id = sample_id;
  e.grad_relevancy.sample_id = sample_id;
  return e;
}

// Grayscale PGM scaled so the maximum maps to 255 (zero map → zero image), and
// a CSV of raw grid values, one grid row per line.
inline void export_heatmap(const RelevancyMap& map, const std::string& pgm_path, const std::string& csv_path) {
  const auto& grid = map.grid;
  if (grid.rank() != 2) throw DimensionError("export_heatmap: grid must be 2-D");
  double mx = 0.0;
  for (double v : grid.data()) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ArgumentError("export_heatmap: relevancy values must be finite and >= 0");
    mx = std::max(mx, v);
  }
  std::vector<std::uint8_t> px(grid.size(), 0);
  if (mx > 0.0)
    for (std::size_t i = 0; i < grid.size(); ++i) px[i] = static_cast<std::uint8_t>(std::lround(255.0 * grid[i] / mx));
  write_pgm(grid.dim(1), grid.dim(0), px, pgm_path);

  std::ofstream os(csv_path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + csv_path + "' for writing");
  for (std::size_t i = 0; i < grid.dim(0); ++i) {
    for (std::size_t j = 0; j < grid.dim(1); ++j) os << (j ? "," : "") << format_real(grid(i, j));
    os << '\n';
  }
  if (!os) throw IoError("write failure on '" + csv_path + "'");
}

inline Tensor<double> read_heatmap_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (rows == 0) cols = f.size();
    if (f.size() != cols) throw FormatError("'" + path + "': ragged heatmap row");
    for (const auto& v : f) values.push_back(std::stod(v));
    ++rows;
  }
  if (rows == 0) throw FormatError("'" + path + "': empty heatmap");
  return Tensor<double>({rows, cols}, std::move(values));
}

// CSV: sample_id,label,attack_type,f0..f{D-1}; features are the class-token
// embedding after the final norm.
inline void export_embeddings(const ViTParams<float>& params, const ViTConfig& cfg, const Manifest& manifest,
                              const std::vector<std::string>& ids, const std::string& path, std::size_t workers = 0) {
  params.validate(cfg);
  for (const auto& id : ids)
    if (!manifest.contains(id)) throw ArgumentError("unknown sample_id '" + id + "'");
  std::vector<std::vector<float>> rows(ids.size());
  parallel_for(ids.size(), workers ? workers : worker_count(), [&](std::size_t i) {
    const auto& s = manifest.at(ids[i]);
    rows[i] = forward(load_input(manifest, s, cfg), params, cfg).embedding;
  });
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "sample_id,label,attack_type";
  for (std::size_t k = 0; k < cfg.dim; ++k) os << ",f" << k;
  os << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& s = manifest.at(ids[i]);
    os << s.sample_id << ',' << label_name(s.label) << ',' << s.attack_type;
    for (float v : rows[i]) os << ',' << format_real(v);
    os << '\n';
  }
  if (!os) throw IoError("write failure on '" + path + "'");
}

}  // namespace vitpad
