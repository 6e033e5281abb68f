#pragma once

#include <algorithm>
#include <cmath>
#include <complex>

#include "vitpad/errors.hpp"
#include "vitpad/image.hpp"
#include "vitpad/tensor.hpp"

namespace vitpad {

struct Point {
  double x = 0;
  double y = 0;
};

struct Landmarks {
  Point left_eye;
  Point right_eye;

  void check(const RawImage& img) const {
    auto inside = [&](const Point& p) {
      return p.x >= 0 && p.y >= 0 && p.x <= static_cast<double>(img.width - 1) &&
             p.y <= static_cast<double>(img.height - 1);
    };
    if (!std::isfinite(left_eye.x) || !std::isfinite(left_eye.y) || !std::isfinite(right_eye.x) ||
        !std::isfinite(right_eye.y)) {
      throw GeometryError("landmarks are not finite");
    }
    if (!inside(left_eye) || !inside(right_eye)) throw GeometryError("landmarks outside image bounds");
    if (std::hypot(left_eye.x - right_eye.x, left_eye.y - right_eye.y) <= 0.0) {
      throw GeometryError("degenerate landmarks: eye centers coincide");
    }
  }
};

// Where the eyes land in the crop, as fractions of the crop side.
struct EyeTargets {
  double left_x = 0.35;
  double right_x = 0.65;
  double y = 0.38;
};

// dst = a·src + b in complex form: rotation and uniform scale in a,
// translation in b. Pixel centers sit at integer coordinates.
struct SimilarityTransform {
  std::complex<double> a{1.0, 0.0};
  std::complex<double> b{0.0, 0.0};

  Point apply(const Point& p) const {
    const auto q = a * std::complex<double>(p.x, p.y) + b;
    return {q.real(), q.imag()};
  }
  Point invert(const Point& p) const {
    const auto q = (std::complex<double>(p.x, p.y) - b) / a;
    return {q.real(), q.imag()};
  }
};

// Exact two-point similarity fit taking the eyes onto the crop targets.
inline SimilarityTransform fit_similarity(const Landmarks& lm, std::size_t crop, const EyeTargets& targets = {}) {
  const std::complex<double> sl(lm.left_eye.x, lm.left_eye.y);
  const std::complex<double> sr(lm.right_eye.x, lm.right_eye.y);
  if (std::abs(sr - sl) <= 0.0) throw GeometryError("degenerate landmarks: eye centers coincide");
  const double s = static_cast<double>(crop);
  const std::complex<double> dl(targets.left_x * s, targets.y * s);
  const std::complex<double> dr(targets.right_x * s, targets.y * s);
  SimilarityTransform t;
  t.a = (dr - dl) / (sr - sl);
  t.b = dl - t.a * sl;
  return t;
}

// Aligns eyes horizontally and resamples to a crop×crop RGB tensor with values
// in [0,255]. Bilinear sampling, coordinates clamped to the image edge.
inline Tensor<float> align_crop(const RawImage& img, const Landmarks& lm, std::size_t crop = 224,
                                const EyeTargets& targets = {}) {
  img.check();
  lm.check(img);
  if (crop == 0) throw ArgumentError("align_crop: crop size must be positive");
  const auto xf = fit_similarity(lm, crop, targets);
  const double max_x = static_cast<double>(img.width - 1);
  const double max_y = static_cast<double>(img.height - 1);
  Tensor<float> out({3, crop, crop});
  for (std::size_t v = 0; v < crop; ++v) {
    for (std::size_t u = 0; u < crop; ++u) {
      const Point src = xf.invert({static_cast<double>(u), static_cast<double>(v)});
      const double sx = std::clamp(src.x, 0.0, max_x);
      const double sy = std::clamp(src.y, 0.0, max_y);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const auto y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const std::size_t y1 = std::min(y0 + 1, img.height - 1);
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1.0 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
        const double bottom = (1.0 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
        const double val = (1.0 - fy) * top + fy * bottom;
        out(c, v, u) = static_cast<float>(std::clamp(val, 0.0, 255.0));
      }
    }
  }
  return out;
}

// 0..255 → [−1, 1].
template <typename T>
Tensor<T> normalize(const Tensor<T>& img) {
  Tensor<T> out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] / static_cast<T>(127.5) - T{1};
  return out;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& img) {
  if (img.rank() != 3) throw DimensionError("hflip: expected [C,H,W], got " + shape_str(img.shape()));
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> out(img.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out(ch, y, x) = img(ch, y, w - 1 - x);
  return out;
}

}  // namespace vitpad
