#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vitpad/data.hpp"
#include "vitpad/errors.hpp"

namespace vitpad {

// Higher score = more bonafide. A sample is accepted as bonafide iff
// score >= threshold.
struct ScoreRecord {
  std::string sample_id;
  Label label = Label::Bonafide;
  std::string attack_type = kNoAttack;
  double score = 0.0;

  bool is_bonafide() const { return label == Label::Bonafide; }
  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

using ScoreSet = std::vector<ScoreRecord>;

struct ClassCounts {
  std::size_t bonafide = 0;
  std::size_t attack = 0;
};

inline ClassCounts count_classes(const ScoreSet& s) {
  ClassCounts c;
  for (const auto& r : s) (r.is_bonafide() ? c.bonafide : c.attack)++;
  return c;
}

// Error rates at a threshold, kept as integer counts so threshold searches
// compare exactly.
struct ErrorCounts {
  std::size_t rejected_bonafide = 0;  // bonafide with score < τ
  std::size_t accepted_attacks = 0;   // attacks with score >= τ
  std::size_t bonafide = 0;
  std::size_t attack = 0;

  double frr() const { return static_cast<double>(rejected_bonafide) / static_cast<double>(bonafide); }
  double far() const { return static_cast<double>(accepted_attacks) / static_cast<double>(attack); }
};

inline ErrorCounts count_errors(const ScoreSet& s, double threshold) {
  ErrorCounts e;
  for (const auto& r : s) {
    if (r.is_bonafide()) {
      ++e.bonafide;
      if (r.score < threshold) ++e.rejected_bonafide;
    } else {
      ++e.attack;
      if (r.score >= threshold) ++e.accepted_attacks;
    }
  }
  return e;
}

// Largest candidate threshold (unique dev scores plus 0) whose dev BPCER does
// not exceed `target`; 0 when none does.
inline double threshold_at_bpcer(const ScoreSet& dev, double target) {
  if (!(target > 0.0 && target < 1.0)) throw ArgumentError("BPCER target must lie in (0, 1)");
  std::vector<double> bona;
  std::vector<double> candidates{0.0};
  for (const auto& r : dev) {
    if (r.is_bonafide()) bona.push_back(r.score);
    candidates.push_back(r.score);
  }
  if (bona.empty()) throw MetricError("threshold_at_bpcer: dev set has no bonafide scores");
  std::sort(bona.begin(), bona.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  const double nb = static_cast<double>(bona.size());
  // BPCER is non-decreasing in τ, so scan from the top.
  for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
    const auto rejected = static_cast<std::size_t>(std::lower_bound(bona.begin(), bona.end(), *it) - bona.begin());
    if (static_cast<double>(rejected) / nb <= target) return *it;
  }
  return 0.0;
}

inline constexpr double kEerSentinelOffset = 1e-6;

struct EerResult {
  double threshold = 0.0;
  double eer = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

// Sorted unique scores → midpoints between neighbours plus one sentinel below
// the minimum and one above the maximum.
inline std::vector<double> eer_candidates(const ScoreSet& s) {
  std::vector<double> u;
  for (const auto& r : s) u.push_back(r.score);
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> c;
  if (u.empty()) return c;
  c.push_back(u.front() - kEerSentinelOffset);
  for (std::size_t i = 0; i + 1 < u.size(); ++i) c.push_back((u[i] + u[i + 1]) / 2.0);
  c.push_back(u.back() + kEerSentinelOffset);
  std::sort(c.begin(), c.end());
  return c;
}

// Threshold minimising |FAR − FRR| over eer_candidates (smallest on ties).
// Uses a single sweep over sorted scores.
inline EerResult eer(const ScoreSet& s) {
  const auto cls = count_classes(s);
  if (cls.bonafide == 0 || cls.attack == 0) throw MetricError("eer: both bonafide and attack scores are required");
  std::vector<double> bona, att;
  for (const auto& r : s) (r.is_bonafide() ? bona : att).push_back(r.score);
  std::sort(bona.begin(), bona.end());
  std::sort(att.begin(), att.end());
  const auto nb = static_cast<std::int64_t>(bona.size());
  const auto na = static_cast<std::int64_t>(att.size());

  std::size_t ib = 0, ia = 0;  // count of bonafide / attacks strictly below τ
  bool have = false;
  std::int64_t best_gap = 0;
  EerResult best;
  for (double tau : eer_candidates(s)) {
    while (ib < bona.size() && bona[ib] < tau) ++ib;
    while (ia < att.size() && att[ia] < tau) ++ia;
    const auto rejected = static_cast<std::int64_t>(ib);
    const auto accepted = na - static_cast<std::int64_t>(ia);
    // |accepted/na − rejected/nb| compared over a common denominator
    const std::int64_t gap = std::llabs(accepted * nb - rejected * na);
    if (!have || gap < best_gap) {
      have = true;
      best_gap = gap;
      best.threshold = tau;
      best.far = static_cast<double>(accepted) / static_cast<double>(na);
      best.frr = static_cast<double>(rejected) / static_cast<double>(nb);
      best.eer = (best.far + best.frr) / 2.0;
    }
  }
  return best;
}

struct MetricsReport {
  double threshold = 0.0;
  std::map<std::string, double> apcer_per_type;
  std::optional<double> apcer_max;
  std::optional<double> apcer_pooled;
  std::optional<double> bpcer;
  std::optional<double> acer;
  std::optional<double> eer;
  std::optional<double> hter;
  std::vector<std::string> notes;
};

inline MetricsReport evaluate_at(const ScoreSet& eval, double threshold) {
  if (eval.empty()) throw MetricError("evaluate_at: empty score set");
  MetricsReport rep;
  rep.threshold = threshold;
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_type;  // accepted, total
  std::size_t nb = 0, rejected = 0, na = 0, accepted = 0;
  for (const auto& r : eval) {
    if (r.is_bonafide()) {
      ++nb;
      if (r.score < threshold) ++rejected;
    } else {
      ++na;
      auto& t = per_type[r.attack_type];
      ++t.second;
      if (r.score >= threshold) {
        ++t.first;
        ++accepted;
      }
    }
  }
  if (nb > 0) {
    rep.bpcer = static_cast<double>(rejected) / static_cast<double>(nb);
  } else {
    rep.notes.push_back("no bonafide samples: BPCER and ACER undefined");
  }
  if (na > 0) {
    double mx = 0.0;
    for (const auto& [type, c] : per_type) {
      const double rate = static_cast<double>(c.first) / static_cast<double>(c.second);
      rep.apcer_per_type[type] = rate;
      mx = std::max(mx, rate);
    }
    rep.apcer_max = mx;
    rep.apcer_pooled = static_cast<double>(accepted) / static_cast<double>(na);
  } else {
    rep.notes.push_back("no attack samples: APCER and ACER undefined");
  }
  if (rep.bpcer && rep.apcer_pooled) rep.acer = (*rep.apcer_pooled + *rep.bpcer) / 2.0;
  return rep;
}

inline double hter(const ScoreSet& eval, double threshold) {
  const auto e = count_errors(eval, threshold);
  if (e.bonafide == 0 || e.attack == 0) throw MetricError("hter: both bonafide and attack scores are required");
  return (e.frr() + e.far()) / 2.0;
}

inline double video_score(const std::vector<double>& frame_scores) {
  if (frame_scores.empty()) throw ArgumentError("video_score: no frame scores");
  double sum = 0.0;
  for (double v : frame_scores) sum += v;
  return sum / static_cast<double>(frame_scores.size());
}

// Video key for frame ids named "<video>_f<k>"; other ids are their own video.
inline std::string video_key(const std::string& sample_id) {
  const auto pos = sample_id.rfind("_f");
  if (pos == std::string::npos || pos + 2 >= sample_id.size()) return sample_id;
  for (std::size_t i = pos + 2; i < sample_id.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(sample_id[i]))) return sample_id;
  return sample_id.substr(0, pos);
}

// Mean-aggregates frames sharing a video key; first-appearance order.
inline ScoreSet aggregate_videos(const ScoreSet& frames) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<ScoreRecord, std::vector<double>>> groups;
  for (const auto& r : frames) {
    const auto key = video_key(r.sample_id);
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) {
      order.push_back(key);
      it->second.first = ScoreRecord{key, r.label, r.attack_type, 0.0};
    } else if (it->second.first.label != r.label || it->second.first.attack_type != r.attack_type) {
      throw ArgumentError("frames of video '" + key + "' disagree on label");
    }
    it->second.second.push_back(r.score);
  }
  ScoreSet out;
  for (const auto& key : order) {
    auto rec = groups[key].first;
    rec.score = video_score(groups[key].second);
    out.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Score and report files

inline void write_scores(const ScoreSet& s, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "sample_id,label,attack_type,score\n";
  for (const auto& r : s) {
    os << r.sample_id << ',' << label_name(r.label) << ',' << r.attack_type << ',' << format_real(r.score) << '\n';
  }
  if (!os) throw IoError("write failure on '" + path + "'");
}

inline ScoreSet read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open score file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "sample_id,label,attack_type,score") {
    throw FormatError("'" + path + "': score header must be 'sample_id,label,attack_type,score'");
  }
  ScoreSet s;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto where = "'" + path + "' row " + std::to_string(row);
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw FormatError(where + ": expected 4 fields");
    const auto label = parse_label(f[1]);
    if (!label) throw FormatError(where + ": bad label '" + f[1] + "'");
    if ((*label == Label::Bonafide) != (f[2] == kNoAttack)) {
      throw FormatError(where + ": label inconsistent with attack_type '" + f[2] + "'");
    }
    ScoreRecord r{f[0], *label, f[2], 0.0};
    try {
      std::size_t used = 0;
      r.score = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(where + ": bad score '" + f[3] + "'");
    }
    s.push_back(std::move(r));
  }
  return s;
}

inline std::string percent(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * rate);
  return buf;
}

// (metric, value) rows in a fixed order; rates as percentages with two
// decimals, the threshold with nine significant digits.
inline std::vector<std::pair<std::string, std::string>> report_rows(const MetricsReport& r) {
  std::vector<std::pair<std::string, std::string>> rows;
  rows.emplace_back("threshold", format_real(r.threshold));
  for (const auto& [type, v] : r.apcer_per_type) rows.emplace_back("apcer_" + type, percent(v));
  if (r.apcer_max) rows.emplace_back("apcer_max", percent(*r.apcer_max));
  if (r.apcer_pooled) rows.emplace_back("apcer", percent(*r.apcer_pooled));
  if (r.bpcer) rows.emplace_back("bpcer", percent(*r.bpcer));
  if (r.acer) rows.emplace_back("acer", percent(*r.acer));
  if (r.eer) rows.emplace_back("eer", percent(*r.eer));
  if (r.hter) rows.emplace_back("hter", percent(*r.hter));
  return rows;
}

inline std::string format_report_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "metric,value\n";
  for (const auto& [k, v] : report_rows(r)) os << k << ',' << v << '\n';
  return os.str();
}

inline std::string format_report_table(const MetricsReport& r) {
  std::ostringstream os;
  std::size_t width = 6;
  for (const auto& [k, v] : report_rows(r)) width = std::max(width, k.size());
  os << "metric" << std::string(width - 6 + 2, ' ') << "value\n";
  os << std::string(width + 2 + 10, '-') << '\n';
  for (const auto& [k, v] : report_rows(r)) {
    os << k << std::string(width - k.size() + 2, ' ') << v << (k == "threshold" ? "" : " %") << '\n';
  }
  for (const auto& n : r.notes) os << "note: " << n << '\n';
  return os.str();
}

}  // namespace vitpad
