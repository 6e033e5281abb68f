#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "vitpad/rng.hpp"
#include "vitpad/tape.hpp"
#include "vitpad/train.hpp"
#include "vitpad/vit.hpp"

namespace vitpad {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double step = 1e-4;
  // Relative error is |a − n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Random parameters at unit activation scale: weight matrices N(0, 1/fan_in),
// class token and positional embedding N(0, 1), other vectors N(0, 0.1²),
// LayerNorm scales 1 + N(0, 0.1²). Biases and norm
// scales are deliberately not at 0 and 1 so their gradients are generic.
inline ViTParams<double> gradcheck_params(const ViTConfig& cfg, std::uint64_t seed) {
  Rng rng(stable_hash("gradcheck-params", seed));
  ViTParams<double> params;
  for (const auto& [name, shape] : param_layout(cfg)) {
    Tensor<double> t(shape);
    const bool token = name == "pos_embed" || name == "cls_token";
    const bool matrix = shape.size() == 2 && !token;
    const double sd = token ? 1.0 : matrix ? 1.0 / std::sqrt(static_cast<double>(shape[1])) : 0.1;
    const double offset = is_norm_name(name) && !is_bias_name(name) ? 1.0 : 0.0;
    for (auto& v : t.data()) v = offset + sd * rng.normal();
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

// BCE loss of one random image through a double-precision model; every
// parameter scalar is checked against a central difference of the loss.
inline GradCheckResult gradient_check(const ViTConfig& cfg, std::uint64_t seed, const GradCheckOptions& opt = {}) {
  auto params = gradcheck_params(cfg, seed);
  Rng rng(stable_hash("gradcheck-input", seed));
  Tensor<double> image({cfg.channels, cfg.image_size, cfg.image_size});
  for (auto& v : image.data()) v = 2.0 * rng.uniform() - 1.0;
  const double target = 1.0;

  const auto all = select_trainable(FreezePolicy::ALL, cfg);
  const auto analytic = loss_and_gradient(image, target, params, cfg, all).grads;

  auto loss_at = [&](const ViTParams<double>& p) {
    return ad::bce_with_logit(forward(image, p, cfg).logit, target);
  };

  GradCheckResult res;
  for (const auto& [name, grad] : analytic) {
    auto& theta = params.at(name);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double orig = theta[i];
      theta[i] = orig + opt.step;
      const double up = loss_at(params);
      theta[i] = orig - opt.step;
      const double down = loss_at(params);
      theta[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double err = relative_error(grad[i], numeric, opt.floor);
      ++res.checked;
      if (err > res.max_relative_error || res.worst_parameter.empty()) {
        res.max_relative_error = err;
        res.worst_parameter = name;
        res.worst_index = i;
        res.worst_analytic = grad[i];
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace vitpad
