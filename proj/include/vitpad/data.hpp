#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vitpad/errors.hpp"
#include "vitpad/image.hpp"
#include "vitpad/preprocess.hpp"
#include "vitpad/rng.hpp"

namespace vitpad {

enum class Label { Bonafide, Attack };

inline const char* label_name(Label l) { return l == Label::Bonafide ? "bonafide" : "attack"; }

inline std::optional<Label> parse_label(const std::string& s) {
  if (s == "bonafide") return Label::Bonafide;
  if (s == "attack") return Label::Attack;
  return std::nullopt;
}

inline constexpr const char* kNoAttack = "none";

struct Sample {
  std::string sample_id;
  std::string path;  // relative to the manifest directory
  Label label = Label::Bonafide;
  std::string attack_type = kNoAttack;
  std::string identity;
  Landmarks landmarks;

  bool is_bonafide() const { return label == Label::Bonafide; }
};

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

class Manifest {
 public:
  static constexpr const char* kHeader = "sample_id,path,label,attack_type,identity,lx1,ly1,lx2,ly2";

  Manifest() = default;
  explicit Manifest(std::filesystem::path base_dir) : base_dir_(std::move(base_dir)) {}

  void add(Sample s) {
    if (s.is_bonafide() != (s.attack_type == kNoAttack)) {
      throw FormatError("sample '" + s.sample_id + "': label " + label_name(s.label) +
                        " inconsistent with attack_type '" + s.attack_type + "'");
    }
    if (!index_.emplace(s.sample_id, samples_.size()).second) {
      throw FormatError("duplicate sample_id '" + s.sample_id + "'");
    }
    samples_.push_back(std::move(s));
  }

  const std::vector<Sample>& samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  const Sample& at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ArgumentError("unknown sample_id '" + id + "'");
    return samples_[it->second];
  }

  std::filesystem::path resolve(const Sample& s) const { return base_dir_ / s.path; }

  // Sorted, distinct attack types (excluding "none").
  std::vector<std::string> attack_types() const {
    std::set<std::string> types;
    for (const auto& s : samples_)
      if (!s.is_bonafide()) types.insert(s.attack_type);
    return {types.begin(), types.end()};
  }

  std::vector<std::string> identities() const {
    std::set<std::string> ids;
    for (const auto& s : samples_) ids.insert(s.identity);
    return {ids.begin(), ids.end()};
  }

 private:
  std::filesystem::path base_dir_;
  std::vector<Sample> samples_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  Manifest m(std::filesystem::path(path).parent_path());
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != Manifest::kHeader) {
    throw FormatError("'" + path + "': manifest header must be '" + std::string(Manifest::kHeader) + "'");
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto where = "'" + path + "' row " + std::to_string(row);
    const auto f = split_csv_line(line);
    if (f.size() != 9) throw FormatError(where + ": expected 9 fields, got " + std::to_string(f.size()));
    Sample s;
    s.sample_id = f[0];
    s.path = f[1];
    const auto label = parse_label(f[2]);
    if (!label) throw FormatError(where + ": bad label '" + f[2] + "' (expected bonafide|attack)");
    s.label = *label;
    s.attack_type = f[3];
    s.identity = f[4];
    if (s.sample_id.empty()) throw FormatError(where + ": empty sample_id");
    if (s.is_bonafide() != (s.attack_type == kNoAttack)) {
      throw FormatError(where + ": label '" + f[2] + "' inconsistent with attack_type '" + f[3] + "'");
    }
    double lm[4];
    for (int k = 0; k < 4; ++k) {
      try {
        std::size_t used = 0;
        lm[k] = std::stod(f[5 + k], &used);
        if (used != f[5 + k].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw FormatError(where + ": bad landmark value '" + f[5 + k] + "'");
      }
    }
    s.landmarks = {{lm[0], lm[1]}, {lm[2], lm[3]}};
    if (m.contains(s.sample_id)) throw FormatError(where + ": duplicate sample_id '" + s.sample_id + "'");
    m.add(std::move(s));
  }
  return m;
}

inline void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << Manifest::kHeader << '\n';
  for (const auto& s : m.samples()) {
    os << s.sample_id << ',' << s.path << ',' << label_name(s.label) << ',' << s.attack_type << ',' << s.identity
       << ',' << format_real(s.landmarks.left_eye.x) << ',' << format_real(s.landmarks.left_eye.y) << ','
       << format_real(s.landmarks.right_eye.x) << ',' << format_real(s.landmarks.right_eye.y) << '\n';
  }
  if (!os) throw IoError("write failure on '" + path + "'");
}

enum class Fold { Train, Dev, Eval };

inline const char* fold_name(Fold f) {
  switch (f) {
    case Fold::Train: return "train";
    case Fold::Dev: return "dev";
    case Fold::Eval: return "eval";
  }
  return "?";
}

inline std::optional<Fold> parse_fold(const std::string& s) {
  if (s == "train") return Fold::Train;
  if (s == "dev") return Fold::Dev;
  if (s == "eval") return Fold::Eval;
  return std::nullopt;
}

struct Protocol {
  std::string name;
  std::vector<std::string> train;
  std::vector<std::string> dev;
  std::vector<std::string> eval;

  const std::vector<std::string>& fold(Fold f) const {
    switch (f) {
      case Fold::Train: return train;
      case Fold::Dev: return dev;
      case Fold::Eval: return eval;
    }
    return train;
  }
  std::vector<std::string>& fold(Fold f) { return const_cast<std::vector<std::string>&>(std::as_const(*this).fold(f)); }

  friend bool operator==(const Protocol&, const Protocol&) = default;
};

inline void write_protocol(const Protocol& p, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "sample_id,fold\n";
  for (Fold f : {Fold::Train, Fold::Dev, Fold::Eval})
    for (const auto& id : p.fold(f)) os << id << ',' << fold_name(f) << '\n';
  if (!os) throw IoError("write failure on '" + path + "'");
}

inline Protocol read_protocol(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open protocol '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "sample_id,fold") {
    throw FormatError("'" + path + "': protocol header must be 'sample_id,fold'");
  }
  Protocol p;
  p.name = std::filesystem::path(path).stem().string();
  std::set<std::string> seen;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const auto where = "'" + path + "' row " + std::to_string(row);
    if (f.size() != 2) throw FormatError(where + ": expected 2 fields");
    const auto fold = parse_fold(f[1]);
    if (!fold) throw FormatError(where + ": bad fold '" + f[1] + "'");
    if (!seen.insert(f[0]).second) throw FormatError(where + ": sample '" + f[0] + "' assigned twice");
    p.fold(*fold).push_back(f[0]);
  }
  return p;
}

namespace detail {

// Identities ordered by seeded hash; ties (astronomically unlikely) by name.
inline std::vector<std::string> hash_order(std::vector<std::string> ids, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end(), [seed](const std::string& a, const std::string& b) {
    const auto ha = stable_hash(a, seed), hb = stable_hash(b, seed);
    return ha != hb ? ha < hb : a < b;
  });
  return ids;
}

// Splits n items into three positive counts proportional to `fractions`
// (largest remainder), taking from the biggest fold to fill empty ones.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - std::floor(exact);
    used += counts[i];
  }
  while (used < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++counts[best];
    rem[best] = -1.0;
    ++used;
  }
  for (int i = 0; i < 3; ++i) {
    if (counts[i] == 0) {
      int big = 0;
      for (int j = 1; j < 3; ++j)
        if (counts[j] > counts[big]) big = j;
      --counts[big];
      ++counts[i];
    }
  }
  return counts;
}

inline std::map<std::string, Fold> assign_identities(const std::vector<std::string>& identities,
                                                     const std::array<double, 3>& fractions, std::uint64_t seed) {
  const auto ordered = hash_order(identities, seed);
  const auto counts = split_counts(ordered.size(), fractions);
  std::map<std::string, Fold> out;
  std::size_t i = 0;
  for (std::size_t k = 0; k < counts[0]; ++k) out[ordered[i++]] = Fold::Train;
  for (std::size_t k = 0; k < counts[1]; ++k) out[ordered[i++]] = Fold::Dev;
  for (std::size_t k = 0; k < counts[2]; ++k) out[ordered[i++]] = Fold::Eval;
  return out;
}

}  // namespace detail

// Share of identities whose bonafide samples go to eval in leave-one-out
// protocols.
inline constexpr double kLooEvalIdentityFraction = 1.0 / 3.0;

// Leave-one-out: attacks of type `left_out` go to eval only; every other
// attack follows its identity into train or dev (eval identities' attacks go
// to train); bonafide follows the identity → fold map.
inline Protocol gen_loo(const Manifest& m, const std::string& left_out, double dev_fraction, std::uint64_t seed) {
  const auto types = m.attack_types();
  if (std::find(types.begin(), types.end(), left_out) == types.end()) {
    std::string known;
    for (const auto& t : types) known += (known.empty() ? "" : ", ") + t;
    throw ArgumentError("unknown attack type '" + left_out + "'; known types: {" + known + "}");
  }
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) {
    throw ArgumentError("dev_fraction must lie in (0, 1), got " + format_real(dev_fraction));
  }
  const auto ids = m.identities();
  if (ids.size() < 3) throw ArgumentError("leave-one-out protocol needs at least 3 identities");
  const double rest = 1.0 - kLooEvalIdentityFraction;
  const auto fold_of = detail::assign_identities(
      ids, {rest * (1.0 - dev_fraction), rest * dev_fraction, kLooEvalIdentityFraction}, seed);

  Protocol p;
  p.name = "loo_" + left_out;
  for (const auto& s : m.samples()) {
    const Fold id_fold = fold_of.at(s.identity);
    if (s.is_bonafide()) {
      p.fold(id_fold).push_back(s.sample_id);
    } else if (s.attack_type == left_out) {
      p.eval.push_back(s.sample_id);
    } else {
      p.fold(id_fold == Fold::Dev ? Fold::Dev : Fold::Train).push_back(s.sample_id);
    }
  }
  return p;
}

// Grandtest: identities (never individual samples) distributed over the three
// folds by seeded hash order.
inline Protocol gen_grandtest(const Manifest& m, const std::array<double, 3>& fractions, std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ArgumentError("grandtest fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ArgumentError("grandtest fractions must sum to 1, got " + format_real(sum));
  const auto ids = m.identities();
  if (ids.size() < 3) throw ArgumentError("grandtest protocol needs at least 3 identities, got " +
                                          std::to_string(ids.size()));
  const auto fold_of = detail::assign_identities(ids, fractions, seed);
  Protocol p;
  p.name = "grandtest";
  for (const auto& s : m.samples()) p.fold(fold_of.at(s.identity)).push_back(s.sample_id);
  return p;
}

// ---------------------------------------------------------------------------
// Synthetic dataset

inline constexpr double kSkinGrain = 40.0;

struct SynthOptions {
  std::size_t image_size = 64;
};

namespace detail {

inline std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Adds the type-specific artifact to a bonafide frame in place.
inline void overlay_attack(RawImage& img, const std::string& type, Rng& rng) {
  const std::size_t w = img.width, h = img.height;
  const std::size_t cell = std::max<std::size_t>(2, w / 8);
  // recapture loses fine skin texture: 5x5 box blur first
  {
    const RawImage src = img;
    const long r = 2;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (long dy = -r; dy <= r; ++dy)
            for (long dx = -r; dx <= r; ++dx) {
              const auto sx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(w) - 1));
              const auto sy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(h) - 1));
              acc += src.at(sx, sy, c);
            }
          img.at(x, y, c) = clamp_u8(acc / static_cast<double>((2 * r + 1) * (2 * r + 1)));
        }
  }
  auto shift = [&](std::size_t x, std::size_t y, int c, double delta) {
    img.at(x, y, static_cast<std::size_t>(c)) = clamp_u8(img.at(x, y, static_cast<std::size_t>(c)) + delta);
  };
  if (type == "print") {
    // blocky halftone: dark dots on alternating cells
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (((x / cell) + (y / cell)) % 2 == 0)
          for (int c = 0; c < 3; ++c) shift(x, y, c, -80.0);
  } else if (type == "replay") {
    // horizontal scan-line stripes with a screen tint
    const std::size_t band = std::max<std::size_t>(1, h / 16);
    for (std::size_t y = 0; y < h; ++y) {
      const double delta = ((y / band) % 2 == 0) ? 60.0 : -40.0;
      for (std::size_t x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) shift(x, y, c, delta);
        shift(x, y, 2, 30.0);
      }
    }
  } else if (type == "mask") {
    // rigid surface: coarse vertical ridges, warm tint
    const std::size_t ridge = std::max<std::size_t>(2, w / 8);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double delta = ((x / ridge) % 2 == 0) ? 70.0 : -50.0;
        for (int c = 0; c < 3; ++c) shift(x, y, c, c == 0 ? delta + 30.0 : delta);
      }
  } else {
    // other types: diagonal bands whose period and tint derive from the name
    const std::uint64_t hsh = stable_hash(type, 0);
    const std::size_t period = 4 + hsh % 8;
    const int channel = static_cast<int>((hsh >> 8) % 3);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double delta = ((x + y) / period) % 2 == 0 ? 70.0 : -50.0;
        for (int c = 0; c < 3; ++c) shift(x, y, c, c == channel ? delta + 30.0 : delta);
      }
  }
  // a little extra sensor noise on recaptured media
  for (auto& p : img.pixels) p = clamp_u8(p + (rng.uniform() - 0.5) * 4.0);
}

}  // namespace detail

// Writes PPM frames under out_dir/images and out_dir/manifest.csv.
// Bonafide: smooth per-identity colour gradient plus low-amplitude noise.
// Attacks: the identity's bonafide frame with a type-specific texture.
inline Manifest synth_dataset(const std::string& out_dir, std::size_t n_identities, std::size_t frames_per_id,
                              const std::vector<std::string>& attack_types, std::uint64_t seed,
                              const SynthOptions& opt = {}) {
  namespace fs = std::filesystem;
  if (n_identities == 0 || frames_per_id == 0) throw ArgumentError("synth: counts must be positive");
  {
    std::set<std::string> uniq(attack_types.begin(), attack_types.end());
    if (uniq.size() != attack_types.size()) throw ArgumentError("synth: duplicate attack types");
    if (uniq.count(kNoAttack)) throw ArgumentError("synth: 'none' is not an attack type");
  }
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw IoError("cannot create '" + out_dir + "/images': " + ec.message());

  const std::size_t size = opt.image_size;
  const double s = static_cast<double>(size);
  const Landmarks lm{{0.35 * s, 0.38 * s}, {0.65 * s, 0.38 * s}};
  Manifest m{fs::path(out_dir)};

  for (std::size_t i = 0; i < n_identities; ++i) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "id%03zu", i);
    const std::string identity = idbuf;
    Rng id_rng(stable_hash(identity, seed));
    // skin-like tone with a per-identity offset and illumination gradient
    const double tone[3] = {170.0, 125.0, 100.0};
    double base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
      base[c] = tone[c] + (id_rng.uniform() - 0.5) * 16.0;
      gx[c] = (id_rng.uniform() - 0.5) * 30.0;
      gy[c] = (id_rng.uniform() - 0.5) * 30.0;
    }
    for (std::size_t f = 0; f < frames_per_id; ++f) {
      std::vector<std::string> kinds{kNoAttack};
      kinds.insert(kinds.end(), attack_types.begin(), attack_types.end());
      for (const auto& kind : kinds) {
        const bool bona = kind == kNoAttack;
        const std::string sid = identity + "_" + (bona ? std::string("bonafide") : kind) + "_f" + std::to_string(f);
        Rng rng(stable_hash(sid, seed));
        RawImage img(size, size);
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) {
              const double v = base[c] + gx[c] * (static_cast<double>(x) / s - 0.5) +
                               gy[c] * (static_cast<double>(y) / s - 0.5) + (rng.uniform() - 0.5) * kSkinGrain;
              img.at(x, y, static_cast<std::size_t>(c)) = detail::clamp_u8(v);
            }
        if (!bona) detail::overlay_attack(img, kind, rng);
        const std::string rel = "images/" + sid + ".ppm";
        write_ppm(img, (fs::path(out_dir) / rel).string());
        m.add(Sample{sid, rel, bona ? Label::Bonafide : Label::Attack, kind, identity, lm});
      }
    }
  }
  write_manifest(m, (fs::path(out_dir) / "manifest.csv").string());
  return m;
}

}  // namespace vitpad
