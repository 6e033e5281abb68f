#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vitpad/errors.hpp"
#include "vitpad/tensor.hpp"

namespace vitpad {

// 8-bit RGB, row-major, interleaved.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  RawImage() = default;
  RawImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(3 * w * h, 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  void check() const {
    if (width == 0 || height == 0) throw DimensionError("image has zero extent");
    if (pixels.size() != 3 * width * height) {
      throw DimensionError("image buffer holds " + std::to_string(pixels.size()) + " bytes, expected " +
                           std::to_string(3 * width * height));
    }
  }

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

namespace detail {

inline std::size_t read_pnm_int(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) throw FormatError("'" + path + "': malformed PNM header");
  std::size_t v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + static_cast<std::size_t>(c - '0');
    c = in.get();
  }
  // exactly one whitespace byte terminates the token
  return v;
}

}  // namespace detail

inline RawImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw FormatError("'" + path + "' is not a binary PPM (P6)");
  const std::size_t w = detail::read_pnm_int(in, path);
  const std::size_t h = detail::read_pnm_int(in, path);
  const std::size_t maxval = detail::read_pnm_int(in, path);
  if (w == 0 || h == 0) throw FormatError("'" + path + "': zero image extent");
  if (maxval != 255) throw FormatError("'" + path + "': only 8-bit PPM supported (maxval 255)");
  RawImage img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) {
    throw CorruptionError("'" + path + "': truncated pixel data");
  }
  return img;
}

inline void write_ppm(const RawImage& img, const std::string& path) {
  img.check();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("write failure on '" + path + "'");
}

// 8-bit grayscale P5.
inline void write_pgm(std::size_t width, std::size_t height, const std::vector<std::uint8_t>& gray,
                      const std::string& path) {
  if (gray.size() != width * height) throw DimensionError("pgm buffer size does not match extent");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!os) throw IoError("write failure on '" + path + "'");
}

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5') throw FormatError("'" + path + "' is not a binary PGM (P5)");
  GrayImage g;
  g.width = detail::read_pnm_int(in, path);
  g.height = detail::read_pnm_int(in, path);
  if (detail::read_pnm_int(in, path) != 255) throw FormatError("'" + path + "': only 8-bit PGM supported");
  g.pixels.resize(g.width * g.height);
  in.read(reinterpret_cast<char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != g.pixels.size()) throw CorruptionError("'" + path + "': truncated");
  return g;
}

// [3,H,W] tensor with values 0..255 (no normalization).
template <typename T = float>
Tensor<T> to_tensor(const RawImage& img) {
  img.check();
  Tensor<T> t({3, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) t(c, y, x) = static_cast<T>(img.at(x, y, c));
  return t;
}

}  // namespace vitpad
