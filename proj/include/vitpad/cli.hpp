#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vitpad/data.hpp"
#include "vitpad/errors.hpp"
#include "vitpad/explain.hpp"
#include "vitpad/gradcheck.hpp"
#include "vitpad/metrics.hpp"
#include "vitpad/run_config.hpp"
#include "vitpad/train.hpp"
#include "vitpad/vit.hpp"
#include "vitpad/weights_io.hpp"

namespace vitpad::cli {

namespace fs = std::filesystem;

inline constexpr double kGradCheckTolerance = 1e-5;

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw IoError("write failure on '" + path.string() + "'");
}

inline fs::path out_dir(const RunConfig& rc) {
  fs::path dir = rc.str("out_dir");
  fs::create_directories(dir);
  return dir;
}

inline Fold fold_setting(const RunConfig& rc, const char* fallback) {
  const auto name = rc.str("fold", fallback);
  const auto f = parse_fold(name);
  if (!f) throw UsageError("unknown fold '" + name + "' (expected train, dev or eval)");
  return *f;
}

inline ViTParams<float> load_weights(const RunConfig& rc, const ViTConfig& cfg) {
  return load_params<float>(rc.str("weights_in"), cfg);
}

inline ScoreSet maybe_videos(const RunConfig& rc, ScoreSet s) {
  return rc.flag("video_level") ? aggregate_videos(s) : s;
}

// ---- subcommands ---------------------------------------------------------

inline int run_synth(const RunConfig& rc, std::ostream& out) {
  const auto dir = out_dir(rc);
  std::vector<std::string> types{"print", "replay", "mask"};
  if (rc.has("attack_types")) types = rc.list("attack_types");
  SynthOptions opt;
  opt.image_size = rc.integer("synth_size", opt.image_size);
  const auto m = synth_dataset(dir.string(), rc.integer("identities", 8), rc.integer("frames", 3), types,
                               rc.integer("seed", 0), opt);
  out << "wrote " << m.size() << " samples to " << (dir / "manifest.csv").string() << '\n';
  return 0;
}

inline int run_protocol(const RunConfig& rc, const std::string& kind, std::ostream& out) {
  const auto m = load_manifest(rc.str("manifest"));
  const auto seed = rc.integer("seed", 0);
  Protocol p;
  if (kind == "loo") {
    p = gen_loo(m, rc.str("left_out"), rc.real("dev_fraction", 0.2), seed);
  } else if (kind == "grandtest") {
    p = gen_grandtest(m, rc.fractions({0.5, 0.25, 0.25}), seed);
  } else {
    throw UsageError("unknown protocol kind '" + kind + "' (expected loo or grandtest)");
  }
  const auto path = out_dir(rc) / "protocol.csv";
  write_protocol(p, path.string());
  out << p.name << ": train " << p.train.size() << ", dev " << p.dev.size() << ", eval " << p.eval.size() << " -> "
      << path.string() << '\n';
  return 0;
}

inline int run_train(const RunConfig& rc, std::ostream& out) {
  const auto vit_cfg = rc.vit_config();
  const auto cfg = rc.train_config();
  const auto weights_out = rc.str("weights_out");
  const auto manifest = load_manifest(rc.str("manifest"));
  const auto protocol = read_protocol(rc.str("protocol"));
  const auto init = rc.has("weights_in") ? load_weights(rc, vit_cfg) : init_params<float>(vit_cfg, cfg.seed);

  const auto result = train(manifest, protocol, init, vit_cfg, cfg);
  if (const auto parent = fs::path(weights_out).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_container(result.params, weights_out);
  fs::path hist_dir = rc.has("out_dir") ? out_dir(rc) : fs::path(weights_out).parent_path();
  const auto hist = hist_dir / "history.csv";
  write_history(result.history, hist.string());
  const auto& h = result.history;
  out << "policy " << policy_name(cfg.policy) << ", initial dev loss " << format_real(h.initial_dev_loss)
      << ", best dev loss " << format_real(h.dev_loss[h.best_epoch]) << " at epoch " << h.best_epoch + 1 << '\n';
  return 0;
}

inline int run_score(const RunConfig& rc, std::ostream& out) {
  const auto vit_cfg = rc.vit_config();
  const auto manifest = load_manifest(rc.str("manifest"));
  const auto protocol = read_protocol(rc.str("protocol"));
  const auto fold = fold_setting(rc, "eval");
  const auto params = load_weights(rc, vit_cfg);
  const auto scores = score_samples(params, vit_cfg, manifest, protocol.fold(fold));
  const auto path = out_dir(rc) / (std::string("scores_") + fold_name(fold) + ".csv");
  write_scores(scores, path.string());
  out << "scored " << scores.size() << " samples -> " << path.string() << '\n';
  return 0;
}

inline MetricsReport regime_report(const std::string& regime, const ScoreSet& dev, const ScoreSet& eval,
                                   double target_bpcer) {
  if (regime == "bpcer1") {
    return evaluate_at(eval, threshold_at_bpcer(dev, target_bpcer));
  }
  if (regime == "fixed05") {
    auto r = evaluate_at(eval, 0.5);
    const auto c = count_classes(eval);
    if (c.bonafide > 0 && c.attack > 0) r.eer = eer(eval).eer;
    return r;
  }
  if (regime == "eer-hter") {
    const auto dev_eer = eer(dev);
    auto r = evaluate_at(eval, dev_eer.threshold);
    r.eer = dev_eer.eer;
    r.hter = hter(eval, dev_eer.threshold);
    return r;
  }
  throw UsageError("unknown regime '" + regime + "' (expected bpcer1, fixed05 or eer-hter)");
}

inline void write_report(const MetricsReport& r, const RunConfig& rc, std::ostream& out) {
  const auto dir = out_dir(rc);
  write_text(dir / "metrics.csv", format_report_csv(r));
  const auto table = format_report_table(r);
  write_text(dir / "metrics.txt", table);
  out << table;
}

inline int run_evaluate(const RunConfig& rc, std::ostream& out) {
  const auto regime = rc.str("regime");
  const bool needs_dev = regime != "fixed05";
  const auto eval = maybe_videos(rc, read_scores(rc.str("eval_scores")));
  const auto dev = needs_dev ? maybe_videos(rc, read_scores(rc.str("dev_scores"))) : ScoreSet{};
  write_report(regime_report(regime, dev, eval, rc.real("target_bpcer", 0.01)), rc, out);
  return 0;
}

// Threshold from the EER point on the source dev fold; HTER on the target
// (its eval fold if a target protocol is given, otherwise every sample).
inline int run_cross_evaluate(const RunConfig& rc, std::ostream& out) {
  const auto vit_cfg = rc.vit_config();
  const auto params = load_weights(rc, vit_cfg);
  const auto src = load_manifest(rc.str("manifest"));
  const auto src_protocol = read_protocol(rc.str("protocol"));
  const auto dst = load_manifest(rc.str("target_manifest"));
  std::vector<std::string> dst_ids;
  if (rc.has("target_protocol")) {
    dst_ids = read_protocol(rc.str("target_protocol")).eval;
  } else {
    for (const auto& s : dst.samples()) dst_ids.push_back(s.sample_id);
  }
  const auto dev = score_samples(params, vit_cfg, src, src_protocol.dev);
  const auto eval = score_samples(params, vit_cfg, dst, dst_ids);
  const auto dir = out_dir(rc);
  write_scores(dev, (dir / "scores_source_dev.csv").string());
  write_scores(eval, (dir / "scores_target.csv").string());
  write_report(regime_report("eer-hter", maybe_videos(rc, dev), maybe_videos(rc, eval), 0.01), rc, out);
  return 0;
}

inline int run_explain(const RunConfig& rc, std::ostream& out) {
  const auto vit_cfg = rc.vit_config();
  const auto params = load_weights(rc, vit_cfg);
  const auto manifest = load_manifest(rc.str("manifest"));
  const auto id = rc.str("sample");
  const auto e = explain_sample(params, vit_cfg, manifest, id);
  const auto dir = out_dir(rc);
  for (const auto* map : {&e.rollout, &e.grad_relevancy}) {
    const auto stem = dir / (id + "_" + method_name(map->method));
    export_heatmap(*map, stem.string() + ".pgm", stem.string() + ".csv");
  }
  out << id << ": logit " << format_real(e.logit) << ", heatmaps in " << dir.string() << '\n';
  return 0;
}

inline int run_embed(const RunConfig& rc, std::ostream& out) {
  const auto vit_cfg = rc.vit_config();
  const auto params = load_weights(rc, vit_cfg);
  const auto manifest = load_manifest(rc.str("manifest"));
  std::vector<std::string> ids;
  if (rc.has("protocol")) {
    ids = read_protocol(rc.str("protocol")).fold(fold_setting(rc, "eval"));
  } else {
    for (const auto& s : manifest.samples()) ids.push_back(s.sample_id);
  }
  const auto path = out_dir(rc) / "embeddings.csv";
  export_embeddings(params, vit_cfg, manifest, ids, path.string());
  out << "embedded " << ids.size() << " samples -> " << path.string() << '\n';
  return 0;
}

inline int run_gradcheck(const RunConfig& rc, std::ostream& out) {
  const auto r = gradient_check(ViTConfig::tiny(), rc.integer("seed", 7));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", r.max_relative_error);
  out << "checked " << r.checked << " parameters\n";
  out << "max relative error: " << buf << " (" << r.worst_parameter << "[" << r.worst_index << "])\n";
  if (!(r.max_relative_error < kGradCheckTolerance)) {
    throw Error("gradient check failed: max relative error " + std::string(buf) + " >= 1e-5");
  }
  return 0;
}

}  // namespace detail

// Runs one command; returns the process exit code (0 ok, 1 usage, 2 runtime).
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Vision transformer face presentation attack detection", "vitpad"};
  app.require_subcommand(1, 1);

  RunConfig flags;
  std::string config_path;
  std::string protocol_kind;

  // Every flag just records a setting; values are validated after merging with
  // the config file.
  auto setting = [&flags](CLI::App* sub, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(
        "--" + RunConfig::flag_name(key), [&flags, key](const std::string& v) { flags.set(key, v); }, help);
  };
  auto switch_flag = [&flags](CLI::App* sub, const std::string& key, const std::string& help) {
    sub->add_flag_callback("--" + RunConfig::flag_name(key), [&flags, key] { flags.set(key, "1"); }, help);
  };
  auto model_flags = [&](CLI::App* sub) {
    setting(sub, "model", "model preset: base or tiny");
    for (const char* k : {"image_size", "patch_size", "dim", "depth", "heads", "mlp_dim"}) setting(sub, k, "model override");
  };

  std::map<std::string, CLI::App*> subs;
  auto add = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key = value settings file");
    subs[name] = sub;
    return sub;
  };

  auto* synth = add("synth", "generate a synthetic dataset");
  for (const char* k : {"out_dir", "identities", "frames", "attack_types", "synth_size", "seed"}) setting(synth, k, k);

  auto* protocol = add("protocol", "emit protocol.csv (loo or grandtest)");
  protocol->add_option("kind", protocol_kind, "loo | grandtest")->required();
  for (const char* k : {"manifest", "left_out", "dev_fraction", "fractions", "seed", "out_dir"}) setting(protocol, k, k);

  auto* train_cmd = add("train", "fine-tune and write the best weights");
  for (const char* k : {"manifest", "protocol", "weights_in", "weights_out", "out_dir", "policy", "seed", "learning_rate",
                        "weight_decay", "batch_size", "epochs", "flip_prob"})
    setting(train_cmd, k, k);
  model_flags(train_cmd);

  auto* score = add("score", "score one protocol fold");
  for (const char* k : {"manifest", "protocol", "fold", "weights_in", "out_dir"}) setting(score, k, k);
  model_flags(score);

  auto* evaluate = add("evaluate", "metrics from dev and eval score files");
  for (const char* k : {"dev_scores", "eval_scores", "regime", "target_bpcer", "out_dir"}) setting(evaluate, k, k);
  switch_flag(evaluate, "video_level", "average frame scores per video");

  auto* cross = add("cross-evaluate", "threshold on one dataset, HTER on another");
  for (const char* k : {"manifest", "protocol", "target_manifest", "target_protocol", "weights_in", "out_dir"})
    setting(cross, k, k);
  switch_flag(cross, "video_level", "average frame scores per video");
  model_flags(cross);

  auto* explain = add("explain", "relevancy heatmaps for one sample");
  for (const char* k : {"manifest", "sample", "weights_in", "out_dir"}) setting(explain, k, k);
  model_flags(explain);

  auto* embed = add("embed", "class-token embeddings to CSV");
  for (const char* k : {"manifest", "protocol", "fold", "weights_in", "out_dir"}) setting(embed, k, k);
  model_flags(embed);

  auto* gradcheck = add("gradcheck", "finite-difference check of the tiny model");
  setting(gradcheck, "seed", "seed");

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    RunConfig rc;
    if (!config_path.empty()) rc = RunConfig::load(config_path);
    rc.merge(flags);
    const auto name = chosen->get_name();
    if (name == "synth") return detail::run_synth(rc, out);
    if (name == "protocol") return detail::run_protocol(rc, protocol_kind, out);
    if (name == "train") return detail::run_train(rc, out);
    if (name == "score") return detail::run_score(rc, out);
    if (name == "evaluate") return detail::run_evaluate(rc, out);
    if (name == "cross-evaluate") return detail::run_cross_evaluate(rc, out);
    if (name == "explain") return detail::run_explain(rc, out);
    if (name == "embed") return detail::run_embed(rc, out);
    if (name == "gradcheck") return detail::run_gradcheck(rc, out);
    return 1;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << chosen->help();
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace vitpad::cli
