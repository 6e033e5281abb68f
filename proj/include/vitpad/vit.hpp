#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vitpad/errors.hpp"
#include "vitpad/rng.hpp"
#include "vitpad/tape.hpp"
#include "vitpad/tensor.hpp"

namespace vitpad {

struct ViTConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t channels = 3;
  std::size_t dim = 768;
  std::size_t depth = 12;
  std::size_t heads = 12;
  std::size_t mlp_dim = 3072;
  std::size_t num_outputs = 1;
  double ln_eps = 1e-6;

  // ViT-Base/16 at 224×224 with a single-logit head.
  static ViTConfig base() { return ViTConfig{}; }

  // Desk-scale model used for gradient checks and synthetic end-to-end runs.
  static ViTConfig tiny() {
    ViTConfig c;
    c.image_size = 16;
    c.patch_size = 8;
    c.dim = 16;
    c.depth = 2;
    c.heads = 2;
    c.mlp_dim = 32;
    return c;
  }

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t head_dim() const { return dim / heads; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string("vit config: ") + name + " must be positive");
    };
    positive(image_size, "image_size");
    positive(patch_size, "patch_size");
    positive(channels, "channels");
    positive(dim, "dim");
    positive(depth, "depth");
    positive(heads, "heads");
    positive(mlp_dim, "mlp_dim");
    positive(num_outputs, "num_outputs");
    if (image_size % patch_size != 0) {
      throw ConfigError("vit config: image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                        std::to_string(patch_size));
    }
    if (dim % heads != 0) {
      throw ConfigError("vit config: dim " + std::to_string(dim) + " not divisible by heads " +
                        std::to_string(heads));
    }
    if (!(ln_eps > 0)) throw ConfigError("vit config: ln_eps must be positive");
  }

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

// Canonical parameter names and shapes, in a fixed order.
inline std::vector<std::pair<std::string, Shape>> param_layout(const ViTConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("patch_proj.weight", Shape{d, cfg.patch_dim()});
  out.emplace_back("patch_proj.bias", Shape{d});
  out.emplace_back("cls_token", Shape{d});
  out.emplace_back("pos_embed", Shape{cfg.tokens(), d});
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    out.emplace_back(p + "norm1.weight", Shape{d});
    out.emplace_back(p + "norm1.bias", Shape{d});
    out.emplace_back(p + "attn.qkv.weight", Shape{3 * d, d});
    out.emplace_back(p + "attn.qkv.bias", Shape{3 * d});
    out.emplace_back(p + "attn.proj.weight", Shape{d, d});
    out.emplace_back(p + "attn.proj.bias", Shape{d});
    out.emplace_back(p + "norm2.weight", Shape{d});
    out.emplace_back(p + "norm2.bias", Shape{d});
    out.emplace_back(p + "mlp.fc1.weight", Shape{cfg.mlp_dim, d});
    out.emplace_back(p + "mlp.fc1.bias", Shape{cfg.mlp_dim});
    out.emplace_back(p + "mlp.fc2.weight", Shape{d, cfg.mlp_dim});
    out.emplace_back(p + "mlp.fc2.bias", Shape{d});
  }
  out.emplace_back("norm.weight", Shape{d});
  out.emplace_back("norm.bias", Shape{d});
  out.emplace_back("head.weight", Shape{cfg.num_outputs, d});
  out.emplace_back("head.bias", Shape{cfg.num_outputs});
  return out;
}

// Exact scalar parameter count, closed form.
inline std::uint64_t param_count(const ViTConfig& cfg) {
  cfg.validate();
  const std::uint64_t d = cfg.dim, m = cfg.mlp_dim, o = cfg.num_outputs;
  const std::uint64_t embed = d * cfg.patch_dim() + d + d + cfg.tokens() * d;
  const std::uint64_t block = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (m * d + m) + (d * m + d);
  const std::uint64_t tail = 2 * d + o * d + o;
  return embed + cfg.depth * block + tail;
}

template <typename T>
struct ViTParams {
  std::map<std::string, Tensor<T>> tensors;

  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw MissingParameterError("missing parameter '" + name + "'");
    return it->second;
  }
  Tensor<T>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw MissingParameterError("missing parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  std::size_t size() const { return tensors.size(); }

  // Throws unless the names are exactly the canonical set for cfg and every
  // shape matches.
  void validate(const ViTConfig& cfg) const {
    const auto layout = param_layout(cfg);
    for (const auto& [name, shape] : layout) {
      const auto& t = at(name);
      if (t.shape() != shape) {
        throw ConfigError("parameter '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                          shape_str(shape));
      }
    }
    if (tensors.size() != layout.size()) {
      std::set<std::string> known;
      for (const auto& [name, shape] : layout) known.insert(name);
      for (const auto& [name, t] : tensors) {
        if (!known.count(name)) throw ConfigError("unexpected parameter '" + name + "'");
      }
    }
  }

  template <typename U>
  ViTParams<U> cast() const {
    ViTParams<U> out;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.template cast<U>());
    return out;
  }

  friend bool operator==(const ViTParams&, const ViTParams&) = default;
};

inline bool is_bias_name(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
}

inline bool is_norm_name(const std::string& name) {
  return name.rfind("norm.", 0) == 0 || name.find(".norm1.") != std::string::npos ||
         name.find(".norm2.") != std::string::npos;
}

// Truncated-normal (std 0.02, ±2 std) weights, cls token and positional
// embedding; zero biases; unit LayerNorm scales. Deterministic in seed.
template <typename T = float>
ViTParams<T> init_params(const ViTConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ViTParams<T> params;
  for (const auto& [name, shape] : param_layout(cfg)) {
    Tensor<T> t(shape);
    if (is_norm_name(name)) {
      if (!is_bias_name(name)) t.fill(T{1});
    } else if (!is_bias_name(name)) {
      for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(0.02));
    }
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

// [C,H,W] → [N, C·P²]; patches row-major over the grid, each flattened
// channel-major then row-major.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch) {
  if (image.rank() != 3) throw ConfigError("patchify: expected [C,H,W], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ConfigError("patchify: image " + shape_str(image.shape()) + " not divisible by patch size " +
                      std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch;
  Tensor<T> out({gh * gw, c * patch * patch});
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      const std::size_t row = py * gw + px;
      std::size_t col = 0;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x) out(row, col++) = image(ch, py * patch + y, px * patch + x);
    }
  }
  return out;
}

// Tape handles for a recorded forward pass.
struct ViTGraph {
  Var logit;                           // [1, num_outputs]
  Var embedding;                       // [1, D]
  std::vector<std::vector<Var>> attention;  // [layer][head] → [N+1, N+1]
};

using ParamVars = std::map<std::string, Var>;

// Puts every parameter on the tape; names in `trainable` get gradients.
template <typename T>
ParamVars bind_params(Tape<T>& tape, const ViTParams<T>& params, const std::set<std::string>& trainable) {
  ParamVars vars;
  for (const auto& [name, t] : params.tensors) vars.emplace(name, tape.parameter(name, t, trainable.count(name) != 0));
  return vars;
}

namespace detail {

inline const Var& param_var(const ParamVars& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw MissingParameterError("missing parameter '" + name + "'");
  return it->second;
}

}  // namespace detail

// One pre-norm encoder block: x += Attn(LN1(x)); x += MLP(LN2(x)).
template <typename T>
Var encoder_block(Tape<T>& tape, Var x, const ParamVars& vars, const ViTConfig& cfg,
                  std::size_t index, std::vector<Var>* attention = nullptr, bool watch_attention = false) {
  using detail::param_var;
  const std::string p = "blocks." + std::to_string(index) + ".";
  const T eps = static_cast<T>(cfg.ln_eps);
  const std::size_t d = cfg.dim, dh = cfg.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Var h = ad::layer_norm(tape, x, param_var(vars, p + "norm1.weight"), param_var(vars, p + "norm1.bias"), eps);
  Var qkv = ad::linear(tape, h, param_var(vars, p + "attn.qkv.weight"), param_var(vars, p + "attn.qkv.bias"));
  std::vector<Var> heads;
  for (std::size_t k = 0; k < cfg.heads; ++k) {
    Var q = ad::slice_cols(tape, qkv, k * dh, (k + 1) * dh);
    Var kk = ad::slice_cols(tape, qkv, d + k * dh, d + (k + 1) * dh);
    Var v = ad::slice_cols(tape, qkv, 2 * d + k * dh, 2 * d + (k + 1) * dh);
    Var scores = ad::scale(tape, ad::matmul_nt(tape, q, kk), scale);
    Var a = ad::softmax_rows(tape, scores);
    if (watch_attention) tape.watch(a);
    if (attention) attention->push_back(a);
    heads.push_back(ad::matmul(tape, a, v));
  }
  Var merged = heads.size() == 1 ? heads.front() : ad::concat_cols(tape, heads);
  Var attn_out =
      ad::linear(tape, merged, param_var(vars, p + "attn.proj.weight"), param_var(vars, p + "attn.proj.bias"));
  x = ad::add(tape, x, attn_out);

  h = ad::layer_norm(tape, x, param_var(vars, p + "norm2.weight"), param_var(vars, p + "norm2.bias"), eps);
  h = ad::linear(tape, h, param_var(vars, p + "mlp.fc1.weight"), param_var(vars, p + "mlp.fc1.bias"));
  h = ad::gelu(tape, h);
  h = ad::linear(tape, h, param_var(vars, p + "mlp.fc2.weight"), param_var(vars, p + "mlp.fc2.bias"));
  return ad::add(tape, x, h);
}

// Records the full network on `tape` for one [C,H,W] image.
template <typename T>
ViTGraph record_forward(Tape<T>& tape, const Tensor<T>& image, const ParamVars& vars,
                        const ViTConfig& cfg, bool watch_attention = false) {
  using detail::param_var;
  cfg.validate();
  if (image.rank() != 3 || image.dim(0) != cfg.channels || image.dim(1) != cfg.image_size ||
      image.dim(2) != cfg.image_size) {
    throw ConfigError("forward: image shape " + shape_str(image.shape()) + " does not match config [" +
                      std::to_string(cfg.channels) + "," + std::to_string(cfg.image_size) + "," +
                      std::to_string(cfg.image_size) + "]");
  }
  const T eps = static_cast<T>(cfg.ln_eps);
  Var patches = tape.constant(patchify(image, cfg.patch_size));
  Var proj = ad::linear(tape, patches, param_var(vars, "patch_proj.weight"), param_var(vars, "patch_proj.bias"));
  Var cls = ad::reshape(tape, param_var(vars, "cls_token"), Shape{1, cfg.dim});
  Var x = ad::add(tape, ad::concat_rows(tape, cls, proj), param_var(vars, "pos_embed"));

  ViTGraph graph;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    graph.attention.emplace_back();
    x = encoder_block(tape, x, vars, cfg, i, &graph.attention.back(), watch_attention);
  }
  Var normed = ad::layer_norm(tape, x, param_var(vars, "norm.weight"), param_var(vars, "norm.bias"), eps);
  graph.embedding = ad::slice_rows(tape, normed, 0, 1);
  graph.logit = ad::linear(tape, graph.embedding, param_var(vars, "head.weight"), param_var(vars, "head.bias"));
  return graph;
}

template <typename T>
struct ForwardTrace {
  T logit{};
  std::vector<T> logits;                // all head outputs; logits[0] == logit
  std::vector<T> embedding;             // class-token feature after the final norm
  std::vector<Tensor<T>> attention;     // per layer: [heads, N+1, N+1]
};

template <typename T>
std::vector<Tensor<T>> stack_attention(const Tape<T>& tape, const ViTGraph& graph, const ViTConfig& cfg,
                                       bool gradients = false) {
  std::vector<Tensor<T>> maps;
  const std::size_t n = cfg.tokens();
  for (const auto& layer : graph.attention) {
    Tensor<T> m({layer.size(), n, n});
    for (std::size_t k = 0; k < layer.size(); ++k) {
      const Tensor<T> src = gradients ? tape.grad(layer[k]) : tape.value(layer[k]);
      std::copy(src.data().begin(), src.data().end(), m.data().begin() + static_cast<std::ptrdiff_t>(k * n * n));
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

template <typename T>
ForwardTrace<T> forward(const Tensor<T>& image, const ViTParams<T>& params, const ViTConfig& cfg) {
  Tape<T> tape;
  const auto vars = bind_params(tape, params, {});
  const auto graph = record_forward(tape, image, vars, cfg);
  ForwardTrace<T> trace;
  const auto& logits = tape.value(graph.logit);
  trace.logits.assign(logits.data().begin(), logits.data().end());
  trace.logit = trace.logits.front();
  const auto& emb = tape.value(graph.embedding);
  trace.embedding.assign(emb.data().begin(), emb.data().end());
  trace.attention = stack_attention(tape, graph, cfg);
  return trace;
}

}  // namespace vitpad
