#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vitpad/data.hpp"
#include "vitpad/errors.hpp"
#include "vitpad/image.hpp"
#include "vitpad/metrics.hpp"
#include "vitpad/parallel.hpp"
#include "vitpad/preprocess.hpp"
#include "vitpad/rng.hpp"
#include "vitpad/tape.hpp"
#include "vitpad/vit.hpp"

namespace vitpad {

// Which parameters fine-tuning may update.
enum class FreezePolicy {
  FC,    // head only
  E_FC,  // patch embedding, class token, positional embedding and head
  ALL,
};

inline const char* policy_name(FreezePolicy p) {
  switch (p) {
    case FreezePolicy::FC: return "fc";
    case FreezePolicy::E_FC: return "e_fc";
    case FreezePolicy::ALL: return "all";
  }
  return "?";
}

inline FreezePolicy parse_policy(const std::string& s) {
  if (s == "fc" || s == "FC") return FreezePolicy::FC;
  if (s == "e_fc" || s == "E_FC" || s == "e+fc" || s == "E+FC") return FreezePolicy::E_FC;
  if (s == "all" || s == "ALL") return FreezePolicy::ALL;
  throw ArgumentError("unknown policy '" + s + "' (expected fc, e_fc or all)");
}

inline std::set<std::string> select_trainable(FreezePolicy policy, const ViTConfig& cfg) {
  std::set<std::string> names{"head.weight", "head.bias"};
  if (policy == FreezePolicy::E_FC) {
    names.insert({"patch_proj.weight", "patch_proj.bias", "cls_token", "pos_embed"});
  } else if (policy == FreezePolicy::ALL) {
    for (const auto& [name, shape] : param_layout(cfg)) names.insert(name);
  }
  return names;
}

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  double flip_prob = 0.5;
  FreezePolicy policy = FreezePolicy::FC;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0: worker_count()

  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("flip_prob must lie in [0, 1]");
  }

  std::size_t workers() const { return threads ? threads : worker_count(); }
};

template <typename T>
struct AdamState {
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  std::uint64_t step = 0;
};

// One Adam update with coupled L2 weight decay (g += wd·θ) on every name in
// `trainable`. Parameters outside the set are untouched.
template <typename T>
void adam_step(ViTParams<T>& params, const std::map<std::string, Tensor<T>>& grads, AdamState<T>& state,
               const TrainConfig& cfg, const std::set<std::string>& trainable) {
  for (const auto& name : trainable) {
    if (!grads.count(name)) throw ContractError("missing gradient for trainable parameter '" + name + "'");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T wd = static_cast<T>(cfg.weight_decay);
  for (const auto& name : trainable) {
    auto& theta = params.at(name);
    const auto& g = grads.at(name);
    if (g.shape() != theta.shape()) {
      throw DimensionError("gradient for '" + name + "' has shape " + shape_str(g.shape()) + ", parameter " +
                           shape_str(theta.shape()));
    }
    auto& m = state.m.try_emplace(name, Tensor<T>::zeros(theta.shape())).first->second;
    auto& v = state.v.try_emplace(name, Tensor<T>::zeros(theta.shape())).first->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const T gi = g[i] + wd * theta[i];
      m[i] = b1 * m[i] + (T{1} - b1) * gi;
      v[i] = b2 * v[i] + (T{1} - b2) * gi * gi;
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) -
                                cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
}

// BCE target: 1 = bonafide.
inline double label_target(Label l) { return l == Label::Bonafide ? 1.0 : 0.0; }

// Aligned, cropped to the model resolution and mapped to [−1, 1].
inline Tensor<float> load_input(const Manifest& m, const Sample& s, const ViTConfig& cfg) {
  RawImage img;
  try {
    img = read_ppm(m.resolve(s).string());
  } catch (const Error& e) {
    throw IoError("sample '" + s.sample_id + "': " + e.what());
  }
  return normalize(align_crop(img, s.landmarks, cfg.image_size));
}

// Loss and gradients for one input; only names in `trainable` get gradients.
template <typename T>
struct LossGradient {
  T loss{};
  T logit{};
  std::vector<T> embedding;
  std::map<std::string, Tensor<T>> grads;
};

template <typename T>
LossGradient<T> loss_and_gradient(const Tensor<T>& input, T target, const ViTParams<T>& params, const ViTConfig& cfg,
                                  const std::set<std::string>& trainable) {
  Tape<T> tape;
  const auto vars = bind_params(tape, params, trainable);
  const auto graph = record_forward(tape, input, vars, cfg);
  const Var loss = ad::bce_with_logit(tape, graph.logit, target);
  LossGradient<T> out;
  out.loss = tape.value(loss)[0];
  out.logit = tape.value(graph.logit)[0];
  const auto& emb = tape.value(graph.embedding);
  out.embedding.assign(emb.data().begin(), emb.data().end());
  out.grads = tape.backprop(loss, Tensor<T>({1}, T{1}));
  return out;
}

struct TrainHistory {
  double initial_dev_loss = 0.0;
  std::vector<double> train_loss;  // per epoch, mean over samples
  std::vector<double> dev_loss;    // per epoch, mean over dev samples, no augmentation
  std::size_t best_epoch = 0;      // first argmin of dev_loss
};

struct TrainResult {
  ViTParams<float> params;  // snapshot from the best epoch
  TrainHistory history;
};

namespace detail {

inline std::vector<std::size_t> resolve_ids(const Manifest& m, const std::vector<std::string>& ids, const char* fold) {
  std::vector<std::size_t> out;
  for (const auto& id : ids) {
    if (!m.contains(id)) throw ProtocolError(std::string(fold) + " fold references unknown sample '" + id + "'");
    out.push_back(static_cast<std::size_t>(&m.at(id) - m.samples().data()));
  }
  return out;
}

// Reduces per-item values in item order.
inline double mean_in_order(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

inline double dev_loss(const std::vector<Tensor<float>>& inputs, const std::vector<double>& targets,
                       const ViTParams<float>& params, const ViTConfig& cfg, std::size_t workers) {
  std::vector<double> losses(inputs.size());
  parallel_for(inputs.size(), workers, [&](std::size_t i) {
    const auto trace = forward(inputs[i], params, cfg);
    losses[i] = ad::bce_with_logit(static_cast<double>(trace.logit), targets[i]);
  });
  return detail::mean_in_order(losses);
}

// Fine-tunes the parameters chosen by the freeze policy and returns the
// snapshot with the lowest dev loss.
inline TrainResult train(const Manifest& manifest, const Protocol& protocol, const ViTParams<float>& init_weights,
                         const ViTConfig& vit_cfg, const TrainConfig& cfg) {
  cfg.validate();
  vit_cfg.validate();
  init_weights.validate(vit_cfg);
  if (protocol.train.empty()) throw ProtocolError("protocol '" + protocol.name + "' has an empty train fold");
  if (protocol.dev.empty()) throw ProtocolError("protocol '" + protocol.name + "' has an empty dev fold");
  const auto train_idx = detail::resolve_ids(manifest, protocol.train, "train");
  const auto dev_idx = detail::resolve_ids(manifest, protocol.dev, "dev");
  const std::size_t workers = cfg.workers();

  auto load_all = [&](const std::vector<std::size_t>& idx, std::vector<Tensor<float>>& inputs,
                      std::vector<double>& targets) {
    inputs.resize(idx.size());
    targets.resize(idx.size());
    parallel_for(idx.size(), workers, [&](std::size_t i) {
      const auto& s = manifest.samples()[idx[i]];
      inputs[i] = load_input(manifest, s, vit_cfg);
      targets[i] = label_target(s.label);
    });
  };
  std::vector<Tensor<float>> train_inputs, dev_inputs;
  std::vector<double> train_targets, dev_targets;
  load_all(train_idx, train_inputs, train_targets);
  load_all(dev_idx, dev_inputs, dev_targets);

  const auto trainable = select_trainable(cfg.policy, vit_cfg);
  ViTParams<float> params = init_weights;
  AdamState<float> adam;
  // Batch order and flips come from separate streams.
  Rng order_rng(stable_hash("batch-order", cfg.seed));
  Rng flip_rng(stable_hash("flip", cfg.seed));

  TrainResult result;
  result.history.initial_dev_loss = dev_loss(dev_inputs, dev_targets, params, vit_cfg, workers);
  result.params = params;
  double best = 0.0;

  std::vector<std::size_t> order(train_inputs.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::size_t n = end - start;
      std::vector<bool> flip(n);
      for (std::size_t k = 0; k < n; ++k) flip[k] = flip_rng.uniform() < cfg.flip_prob;

      std::vector<LossGradient<float>> per_sample(n);
      parallel_for(n, workers, [&](std::size_t k) {
        const auto& x = train_inputs[order[start + k]];
        const float y = static_cast<float>(train_targets[order[start + k]]);
        per_sample[k] = loss_and_gradient(flip[k] ? hflip(x) : x, y, params, vit_cfg, trainable);
      });

      std::map<std::string, Tensor<float>> grads;
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        batch_loss += per_sample[k].loss;
        for (auto& [name, g] : per_sample[k].grads) {
          auto [it, fresh] = grads.try_emplace(name, g);
          if (!fresh)
            for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingDivergedError(static_cast<int>(epoch), static_cast<int>(batch_no));
      }
      const float inv = 1.0f / static_cast<float>(n);
      for (auto& [name, g] : grads)
        for (auto& v : g.data()) v *= inv;
      epoch_loss += batch_loss;
      adam_step(params, grads, adam, cfg, trainable);
    }
    const double dl = dev_loss(dev_inputs, dev_targets, params, vit_cfg, workers);
    if (!std::isfinite(dl)) throw TrainingDivergedError(static_cast<int>(epoch), -1);
    result.history.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    result.history.dev_loss.push_back(dl);
    if (epoch == 0 || dl < best) {
      best = dl;
      result.history.best_epoch = epoch;
      result.params = params;
    }
  }
  return result;
}

// sigmoid(logit) per id, in the order given. No augmentation.
inline ScoreSet score_samples(const ViTParams<float>& params, const ViTConfig& cfg, const Manifest& manifest,
                              const std::vector<std::string>& ids, std::size_t workers = 0) {
  params.validate(cfg);
  for (const auto& id : ids) {
    if (!manifest.contains(id)) throw ArgumentError("unknown sample_id '" + id + "'");
  }
  ScoreSet out(ids.size());
  parallel_for(ids.size(), workers ? workers : worker_count(), [&](std::size_t i) {
    const auto& s = manifest.at(ids[i]);
    const auto trace = forward(load_input(manifest, s, cfg), params, cfg);
    out[i] = ScoreRecord{s.sample_id, s.label, s.attack_type, sigmoid(static_cast<double>(trace.logit))};
  });
  return out;
}

inline void write_history(const TrainHistory& h, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "epoch,train_loss,dev_loss,best\n";
  os << "0,," << format_real(h.initial_dev_loss) << ",0\n";
  for (std::size_t e = 0; e < h.dev_loss.size(); ++e) {
    os << e + 1 << ',' << format_real(h.train_loss[e]) << ',' << format_real(h.dev_loss[e]) << ','
       << (e == h.best_epoch ? 1 : 0) << '\n';
  }
  if (!os) throw IoError("write failure on '" + path + "'");
}

}  // namespace vitpad
