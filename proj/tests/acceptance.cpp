// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "vitpad/vitpad.hpp"

using namespace vitpad;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& why) {
    if (!ok && pass) {
      pass = false;
      detail = why;
    }
  }
};

int failures = 0;

void report(int n, const std::string& title, const std::function<Verdict()>& check) {
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail = std::string("exception: ") + e.what();
  }
  if (!v.pass) ++failures;
  std::cout << (v.pass ? "PASS" : "FAIL") << "  " << n << ". " << title;
  if (!v.detail.empty()) std::cout << " (" << v.detail << ")";
  std::cout << std::endl;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 3: brute-force metric oracles -----------------------------------------

ScoreSet random_scores(Rng& rng) {
  const std::size_t n = 2 + rng.below(63);
  const std::vector<std::string> types{"print", "replay", "mask"};
  const bool coarse = rng.below(2) == 0;  // many ties
  ScoreSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const double score = coarse ? static_cast<double>(rng.below(9)) / 8.0 : rng.uniform();
    // the first two are one of each class so both are always present
    const bool bona = i == 0 || (i != 1 && rng.below(2) == 0);
    if (bona) {
      s.push_back({"s" + std::to_string(i), Label::Bonafide, kNoAttack, score});
    } else {
      s.push_back({"s" + std::to_string(i), Label::Attack, types[rng.below(types.size())], score});
    }
  }
  return s;
}

struct Counts {
  std::size_t nb = 0, na = 0, rejected = 0, accepted = 0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_type;
};

Counts sweep(const ScoreSet& s, double tau) {
  Counts c;
  for (const auto& r : s) {
    if (r.label == Label::Bonafide) {
      ++c.nb;
      if (r.score < tau) ++c.rejected;
    } else {
      ++c.na;
      auto& t = c.per_type[r.attack_type];
      ++t.second;
      if (r.score >= tau) {
        ++c.accepted;
        ++t.first;
      }
    }
  }
  return c;
}

bool metrics_match(const ScoreSet& s, double target, std::string& why) {
  // threshold_at_bpcer: every candidate tried
  std::set<double> cands{0.0};
  for (const auto& r : s) cands.insert(r.score);
  double best_tau = 0.0;
  for (double t : cands) {
    const auto c = sweep(s, t);
    if (static_cast<double>(c.rejected) / static_cast<double>(c.nb) <= target) best_tau = std::max(best_tau, t);
  }
  if (threshold_at_bpcer(s, target) != best_tau) {
    why = "threshold_at_bpcer";
    return false;
  }

  // eer: midpoints plus sentinels, integer gap, ties to the smallest τ
  std::set<double> uniq;
  for (const auto& r : s) uniq.insert(r.score);
  const std::vector<double> u(uniq.begin(), uniq.end());
  std::vector<double> mids{u.front() - kEerSentinelOffset, u.back() + kEerSentinelOffset};
  for (std::size_t i = 0; i + 1 < u.size(); ++i) mids.push_back((u[i] + u[i + 1]) / 2.0);
  std::sort(mids.begin(), mids.end());
  double e_tau = 0.0, e_val = 0.0;
  long long best_gap = -1;
  for (double t : mids) {
    const auto c = sweep(s, t);
    const long long gap =
        std::llabs(static_cast<long long>(c.accepted * c.nb) - static_cast<long long>(c.rejected * c.na));
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      e_tau = t;
      e_val = (static_cast<double>(c.accepted) / static_cast<double>(c.na) +
               static_cast<double>(c.rejected) / static_cast<double>(c.nb)) /
              2.0;
    }
  }
  const auto e = eer(s);
  if (e.threshold != e_tau || e.eer != e_val) {
    why = "eer";
    return false;
  }

  // evaluate_at and hter at the chosen thresholds and every score
  std::vector<double> taus{best_tau, e_tau, 0.0, 1.0};
  taus.insert(taus.end(), u.begin(), u.end());
  for (double t : taus) {
    const auto c = sweep(s, t);
    const auto rep = evaluate_at(s, t);
    const double bpcer = static_cast<double>(c.rejected) / static_cast<double>(c.nb);
    const double pooled = static_cast<double>(c.accepted) / static_cast<double>(c.na);
    double mx = 0.0;
    for (const auto& [type, tc] : c.per_type) {
      const double rate = static_cast<double>(tc.first) / static_cast<double>(tc.second);
      mx = std::max(mx, rate);
      if (rep.apcer_per_type.at(type) != rate) {
        why = "evaluate_at apcer_" + type;
        return false;
      }
    }
    if (rep.apcer_per_type.size() != c.per_type.size() || *rep.bpcer != bpcer || *rep.apcer_pooled != pooled ||
        *rep.apcer_max != mx || *rep.acer != (pooled + bpcer) / 2.0) {
      why = "evaluate_at";
      return false;
    }
    if (hter(s, t) != (pooled + bpcer) / 2.0) {
      why = "hter";
      return false;
    }
  }
  return true;
}

// ---- 4: random manifests ----------------------------------------------------

Manifest random_manifest(Rng& rng) {
  const std::vector<std::string> pool{"print", "replay", "mask", "makeup", "partial"};
  std::vector<std::string> types;
  for (const auto& t : pool)
    if (rng.below(2) == 0) types.push_back(t);
  if (types.empty()) types.push_back(pool[rng.below(pool.size())]);
  const std::size_t ids = 3 + rng.below(20);
  Manifest m;
  std::size_t k = 0;
  for (std::size_t i = 0; i < ids; ++i) {
    const std::string who = "id" + std::to_string(i);
    const std::size_t frames = 1 + rng.below(3);
    for (std::size_t f = 0; f < frames; ++f) {
      m.add(Sample{"x" + std::to_string(k++), "p.ppm", Label::Bonafide, kNoAttack, who, {}});
      for (const auto& t : types)
        if (i == 0 || rng.below(3) != 0) m.add(Sample{"x" + std::to_string(k++), "p.ppm", Label::Attack, t, who, {}});
    }
  }
  return m;
}

// ---- 6: desk-scale run --------------------------------------------------------

TrainConfig desk_train_config() {
  TrainConfig c;
  c.learning_rate = 0.1;
  c.batch_size = 16;
  c.epochs = 20;
  c.policy = FreezePolicy::FC;
  c.seed = 1;
  return c;
}

struct DeskRun {
  Manifest manifest;
  Protocol protocol;
  ViTParams<float> init;
  TrainResult result;
  double seconds = 0.0;
};

DeskRun desk_run(const fs::path& dir) {
  const auto t0 = Clock::now();
  DeskRun r;
  fs::remove_all(dir);
  r.manifest = synth_dataset(dir.string(), 8, 10, {"print", "replay", "mask"}, 1);
  r.protocol = gen_grandtest(r.manifest, {0.5, 0.25, 0.25}, 1);
  r.init = init_params(ViTConfig::tiny(), 1);
  r.result = train(r.manifest, r.protocol, r.init, ViTConfig::tiny(), desk_train_config());
  r.seconds = seconds_since(t0);
  return r;
}

bool same_run(const TrainResult& a, const TrainResult& b) {
  return a.params == b.params && a.history.dev_loss == b.history.dev_loss &&
         a.history.train_loss == b.history.train_loss && a.history.initial_dev_loss == b.history.initial_dev_loss;
}

}  // namespace

int main() {
  const auto work = fs::temp_directory_path() / "vitpad_acceptance";
  fs::create_directories(work);

  report(1, "gradient check, tiny ViT in double precision", [] {
    Verdict v;
    const auto t0 = Clock::now();
    const auto r = gradient_check(ViTConfig::tiny(), 7);
    const double secs = seconds_since(t0);
    v.detail = "max rel err " + fmt("%.3e", r.max_relative_error) + " over " + std::to_string(r.checked) +
               " parameters, " + fmt("%.1f s", secs);
    v.pass = r.max_relative_error < 1e-5 && secs < 60.0 && r.checked == param_count(ViTConfig::tiny());
    return v;
  });

  report(2, "parameter count of the base model", [] {
    Verdict v;
    const auto n = param_count(ViTConfig::base());
    v.detail = std::to_string(n);
    v.pass = n == 85'799'425u && std::lround(static_cast<double>(n) / 1e5) == 858;
    return v;
  });

  report(3, "metric functions match brute-force sweeps on 1000 random score sets", [] {
    Verdict v;
    Rng rng(2024);
    for (int trial = 0; trial < 1000 && v.pass; ++trial) {
      const auto s = random_scores(rng);
      const double target = rng.below(4) == 0 ? 0.01 : 0.005 + 0.6 * rng.uniform();
      std::string why;
      if (!metrics_match(s, target, why)) v.require(false, why + " differs on set " + std::to_string(trial));
    }
    return v;
  });

  report(4, "protocol invariants on 200 random manifests", [] {
    Verdict v;
    std::size_t violations = 0;
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
      const auto m = random_manifest(rng);
      const auto types = m.attack_types();
      const auto& left = types[rng.below(types.size())];
      const auto loo = gen_loo(m, left, 0.05 + 0.5 * rng.uniform(), static_cast<std::uint64_t>(trial));
      std::size_t left_in_eval = 0, total_left = 0;
      for (const auto& s : m.samples()) total_left += s.attack_type == left;
      for (const auto& id : loo.train) violations += m.at(id).attack_type == left;
      for (const auto& id : loo.dev) violations += m.at(id).attack_type == left;
      for (const auto& id : loo.eval) {
        const auto& s = m.at(id);
        if (!s.is_bonafide()) {
          violations += s.attack_type != left;
          left_in_eval += s.attack_type == left;
        }
      }
      violations += left_in_eval != total_left;

      const auto gt = gen_grandtest(m, {0.6, 0.2, 0.2}, static_cast<std::uint64_t>(trial));
      std::map<std::string, Fold> fold_of;
      for (Fold f : {Fold::Train, Fold::Dev, Fold::Eval})
        for (const auto& id : gt.fold(f)) {
          const auto& s = m.at(id);
          if (!s.is_bonafide()) continue;
          const auto [it, fresh] = fold_of.emplace(s.identity, f);
          violations += !fresh && it->second != f;
        }
      std::set<std::string> seen;
      for (const auto* p : {&loo, &gt})
        for (Fold f : {Fold::Train, Fold::Dev, Fold::Eval})
          for (const auto& id : p->fold(f)) violations += !seen.insert(std::string(p == &loo ? "l" : "g") + id).second;
      violations += seen.size() != 2 * m.size();
    }
    v.detail = std::to_string(violations) + " violations";
    v.pass = violations == 0;
    return v;
  });

  // Criteria 5 and 6 share the desk-scale run.
  std::optional<DeskRun> run;
  std::string run_error;
  try {
    run = desk_run(work / "synth");
  } catch (const std::exception& e) {
    run_error = e.what();
  }

  report(5, "FC policy freezes the encoder and head gradients match the closed form", [&] {
    Verdict v;
    if (!run) throw std::runtime_error(run_error);
    for (const auto& [name, t] : run->init.tensors) {
      const bool head = name == "head.weight" || name == "head.bias";
      if (!head) v.require(run->result.params.at(name) == t, name + " changed");
    }
    const auto cfg = ViTConfig::tiny();
    const auto trainable = select_trainable(FreezePolicy::FC, cfg);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto params = gradcheck_params(cfg, seed);
      const auto& s = run->manifest.samples()[seed * 7];
      const auto input = load_input(run->manifest, s, cfg).cast<double>();
      const double y = label_target(s.label);
      const auto lg = loss_and_gradient(input, y, params, cfg, trainable);
      v.require(lg.grads.size() == 2, "gradients for frozen parameters");
      const double p = sigmoid(lg.logit);
      worst = std::max(worst, std::abs(lg.grads.at("head.bias")[0] - (p - y)));
      for (std::size_t k = 0; k < cfg.dim; ++k)
        worst = std::max(worst, std::abs(lg.grads.at("head.weight")[k] - (p - y) * lg.embedding[k]));
    }
    v.require(worst < 1e-6, "head gradient off by " + fmt("%.2e", worst));
    if (v.pass) v.detail = "max head gradient deviation " + fmt("%.2e", worst);
    return v;
  });

  report(6, "desk-scale synthetic run: loss, ACER at dev BPCER 1%, runtime, determinism", [&] {
    Verdict v;
    if (!run) throw std::runtime_error(run_error);
    const auto& h = run->result.history;
    const double best = h.dev_loss[h.best_epoch];
    const auto cfg = ViTConfig::tiny();
    const auto dev = score_samples(run->result.params, cfg, run->manifest, run->protocol.dev);
    const auto eval = score_samples(run->result.params, cfg, run->manifest, run->protocol.eval);
    const double tau = threshold_at_bpcer(dev, 0.01);
    const double acer = *evaluate_at(eval, tau).acer;
    v.detail = "dev loss " + fmt("%.4f", h.initial_dev_loss) + " -> " + fmt("%.4f", best) + ", ACER " +
               fmt("%.2f%%", 100.0 * acer) + ", " + fmt("%.1f s", run->seconds);
    v.require(best < 0.5 * h.initial_dev_loss, "dev loss did not halve; " + v.detail);
    v.require(acer <= 0.10, "ACER above 10%; " + v.detail);
    v.require(run->seconds < 300.0, "too slow; " + v.detail);

    const auto again = train(run->manifest, run->protocol, run->init, cfg, desk_train_config());
    v.require(same_run(again, run->result), "repeat run differs");
    ::setenv("VITPAD_THREADS", "1", 1);
    const auto one = train(run->manifest, run->protocol, run->init, cfg, desk_train_config());
    ::setenv("VITPAD_THREADS", "4", 1);
    const auto four = train(run->manifest, run->protocol, run->init, cfg, desk_train_config());
    ::unsetenv("VITPAD_THREADS");
    v.require(same_run(one, four) && same_run(one, run->result), "thread count changes the result");
    return v;
  });

  report(7, "relevancy maps: zero maps, normalization, two-token example", [] {
    Verdict v;
    // identity attention
    std::vector<Tensor<double>> ident;
    for (int l = 0; l < 2; ++l) ident.push_back(Tensor<double>({2, 5, 5}));
    for (auto& a : ident)
      for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < 5; ++i) a[(k * 5 + i) * 5 + i] = 1.0;
    const auto id_map = attention_rollout(ident);
    v.require(id_map.grid == Tensor<double>::zeros({2, 2}), "identity rollout not zero");

    const auto cfg = ViTConfig::tiny();
    const auto params = gradcheck_params(cfg, 3);
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor<double> img({cfg.channels, cfg.image_size, cfg.image_size});
      for (auto& x : img.data()) x = 2.0 * rng.uniform() - 1.0;
      const auto e = explain_input(img, params, cfg);
      for (const auto* m : {&e.rollout, &e.grad_relevancy}) {
        double sum = 0.0;
        for (double x : m->grid.data()) {
          v.require(x >= 0.0, "negative relevancy");
          sum += x;
        }
        if (m->mass > 0.0) v.require(std::abs(sum - 1.0) < 1e-9, "map does not sum to 1");
      }
      v.require(e.rollout.mass > 0.0, "empty rollout on random input");
      // zero gradients with the same attention
      const auto trace = forward(img, params, cfg);
      std::vector<Tensor<double>> zeros;
      for (const auto& a : trace.attention) zeros.push_back(Tensor<double>::zeros(a.shape()));
      v.require(grad_relevancy(trace.attention, zeros).grid == Tensor<double>::zeros({cfg.grid(), cfg.grid()}),
                "zero-gradient map not zero");
    }

    const auto two = attention_rollout(std::vector<Tensor<double>>{Tensor<double>({1, 2, 2}, 0.5)});
    v.require(two.mass == 0.25 && two.grid.size() == 1 && two.grid[0] == 1.0, "two-token example");
    return v;
  });

  report(8, "weight container round trip and rejection of damaged files", [&] {
    Verdict v;
    const auto cfg = ViTConfig::base();
    const auto params = init_params(cfg, 2024);
    const auto path = (work / "base.vitw").string();
    write_container(params, path);
    v.require(load_params<float>(path, cfg) == params, "round trip not bit-exact");

    std::vector<char> bytes;
    {
      WeightContainer c;
      c.entries.push_back({"head.weight", {1, 4}, {1, 2, 3, 4}});
      c.entries.push_back({"head.bias", {1}, {5}});
      const auto small = (work / "small.vitw").string();
      write_container(c, small);
      std::ifstream in(small, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    auto dump = [&](const std::vector<char>& b) {
      const auto p = (work / "damaged.vitw").string();
      std::ofstream os(p, std::ios::binary | std::ios::trunc);
      os.write(b.data(), static_cast<std::streamsize>(b.size()));
      return p;
    };
    auto magic = bytes;
    magic[0] = 'X';
    try {
      read_container(dump(magic));
      v.require(false, "bad magic accepted");
    } catch (const CorruptionError&) {
      v.require(false, "bad magic reported as corruption");
    } catch (const FormatError&) {
    }
    auto cut = bytes;
    cut.resize(cut.size() - 2);
    try {
      read_container(dump(cut));
      v.require(false, "truncated payload accepted");
    } catch (const CorruptionError& e) {
      v.require(std::string(e.what()).find("head.bias") != std::string::npos, "truncation error names no entry");
    }
    fs::remove(path);
    return v;
  });

  return failures == 0 ? 0 : 1;
}
