/* Copyright 2026 The ESI-HGE Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
        limitations under the License.
==============================================================================*/

#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "esihge/eval.hpp"
#include "esihge/graph.hpp"
#include "esihge/synthetic.hpp"
#include "esihge/train.hpp"

namespace esihge::cli {

using json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

enum class Mode { kGvae, kSiHge, kEsiHge };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kGvae: return "gvae";
    case Mode::kSiHge: return "si-hge";
    default: return "esi-hge";
  }
}

inline Mode parse_mode(const std::string& s) {
  if (s == "gvae") return Mode::kGvae;
  if (s == "si-hge") return Mode::kSiHge;
  if (s == "esi-hge") return Mode::kEsiHge;
  throw ConfigError("unknown mode '" + s + "'");
}

/// gvae: K = 0, γ = 0, c = 1e-8. si-hge: γ = 0.
inline void apply_mode(Mode m, HyperParams& hp) {
  if (m == Mode::kGvae) {
    hp.K = 0;
    hp.gamma = 0.0;
    hp.c = 1e-8;
  } else if (m == Mode::kSiHge) {
    hp.gamma = 0.0;
  }
}

struct RunConfig {
  std::string content, cites, depth;
  std::filesystem::path out;
  std::string mode = "esi-hge";
  bool row_normalize = false;
  bool split = true;
  HyperParams hp;
};

inline json hp_to_json(const HyperParams& hp) {
  return json{{"K", hp.K},
              {"J", hp.J},
              {"gamma", hp.gamma},
              {"curvature", hp.c},
              {"lr", hp.lr},
              {"lr_t", hp.lr_t},
              {"epochs", hp.epochs},
              {"seed", hp.seed},
              {"latent", hp.latent},
              {"hidden", hp.hidden},
              {"noise", hp.noise},
              {"noise_p", hp.noise_p},
              {"critic_hidden", hp.critic_hidden},
              {"mu_init_gain", hp.mu_init_gain},
              {"samples", hp.samples},
              {"val_every", hp.val_every},
              {"patience", hp.patience}};
}

inline HyperParams hp_from_json(const json& j) {
  HyperParams hp;
  hp.K = j.at("K").get<std::size_t>();
  hp.J = j.at("J").get<std::size_t>();
  hp.gamma = j.at("gamma").get<double>();
  hp.c = j.at("curvature").get<double>();
  hp.lr = j.at("lr").get<double>();
  hp.lr_t = j.at("lr_t").get<double>();
  hp.epochs = j.at("epochs").get<std::size_t>();
  hp.seed = j.at("seed").get<std::uint64_t>();
  hp.latent = j.at("latent").get<std::size_t>();
  hp.hidden = j.at("hidden").get<std::size_t>();
  hp.noise = j.at("noise").get<std::size_t>();
  hp.noise_p = j.at("noise_p").get<double>();
  hp.critic_hidden = j.at("critic_hidden").get<std::vector<std::size_t>>();
  hp.mu_init_gain = j.at("mu_init_gain").get<double>();
  hp.samples = j.at("samples").get<std::size_t>();
  hp.val_every = j.at("val_every").get<std::size_t>();
  hp.patience = j.at("patience").get<std::size_t>();
  return hp;
}

inline json config_to_json(const RunConfig& rc) {
  const SplitFractions f;
  return json{{"content", rc.content},
              {"cites", rc.cites},
              {"depth", rc.depth},
              {"mode", rc.mode},
              {"row_normalize", rc.row_normalize},
              {"split", rc.split},
              {"split_fractions", {{"train", f.train}, {"val", f.val}, {"test", f.test}}},
              {"hyperparameters", hp_to_json(rc.hp)}};
}

inline RunConfig config_from_json(const json& j) {
  RunConfig rc;
  rc.content = j.at("content").get<std::string>();
  rc.cites = j.at("cites").get<std::string>();
  rc.depth = j.value("depth", std::string{});
  rc.mode = j.at("mode").get<std::string>();
  rc.row_normalize = j.at("row_normalize").get<bool>();
  rc.split = j.at("split").get<bool>();
  rc.hp = hp_from_json(j.at("hyperparameters"));
  return rc;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw ConfigError("write failed for " + path.string());
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// The graph a run sees, and its split when one is used.
struct LoadedRun {
  Graph graph;
  std::optional<EdgeSplit> split;
  GraphInputs inputs;
};

inline LoadedRun load_run(const RunConfig& rc) {
  LoadedRun r;
  r.graph = load_citation(rc.content, rc.cites);
  if (rc.row_normalize) r.graph = row_normalize_features(std::move(r.graph));
  if (rc.split) r.split = split_edges(r.graph, SplitFractions{}, rc.hp.seed);
  r.inputs = prepare_inputs(r.split ? training_graph(r.graph, *r.split) : r.graph);
  return r;
}

inline std::string absolute_or_empty(const std::string& p) {
  return p.empty() ? p : std::filesystem::absolute(p).lexically_normal().string();
}

inline int cmd_train(RunConfig rc, std::ostream& log) {
  apply_mode(parse_mode(rc.mode), rc.hp);
  rc.content = absolute_or_empty(rc.content);
  rc.cites = absolute_or_empty(rc.cites);
  rc.depth = absolute_or_empty(rc.depth);
  rc.hp.validate();
  const LoadedRun run = load_run(rc);
  std::filesystem::create_directories(rc.out);
  write_json(rc.out / "config.json", config_to_json(rc));
  TrainOptions opts;
  opts.out_dir = rc.out;
  opts.on_epoch = [&](const EpochRecord& e) {
    if (e.epoch % 50 == 0 || !std::isnan(e.val_auc)) {
      log << "epoch " << e.epoch << " total " << format_double(e.loss.total);
      if (!std::isnan(e.val_auc)) log << " val_auc " << format_double(e.val_auc);
      log << '\n';
    }
  };
  const TrainResult res = train(run.graph, run.split ? &*run.split : nullptr, rc.hp, opts);
  write_metrics_csv(rc.out / "metrics.csv", res.history);
  if (res.aborted) {
    log << "error: " << res.diagnostic << '\n';
    return kExitError;
  }
  log << "trained " << res.history.size() << " epochs";
  if (res.best_epoch > 0) log << ", best validation AUC " << format_double(res.best_val_auc) << " at epoch " << res.best_epoch;
  if (res.stopped_early) log << " (early stop)";
  log << '\n';
  return kExitOk;
}

struct EvalOptions {
  std::filesystem::path run;
  std::string checkpoint = "best";
  std::string content, cites, depth;  // override the run's paths
  bool mi = false;
  MiConfig mi_cfg;
  std::size_t folds = 10;
  std::optional<std::size_t> samples;
  std::string space = "tangent";
};

inline int cmd_eval(const EvalOptions& eo, std::ostream& log) {
  RunConfig rc = config_from_json(read_json(eo.run / "config.json"));
  if (!eo.content.empty()) rc.content = eo.content;
  if (!eo.cites.empty()) rc.cites = eo.cites;
  if (!eo.depth.empty()) rc.depth = eo.depth;
  if (eo.samples) rc.hp.samples = *eo.samples;
  if (eo.space != "tangent" && eo.space != "ball") throw ConfigError("--space must be tangent or ball");
  const LoadedRun run = load_run(rc);
  const Checkpoint ck = load_checkpoint(eo.run / (eo.checkpoint + ".ckpt"));
  const auto [enc, critic] = load_model(ck, run.inputs, rc.hp);
  const poincare::Curvature c(rc.hp.c);

  std::mt19937_64 emb_rng = derived_rng(rc.hp.seed, kEvalStream);
  const Embeddings e = embed(run.inputs, enc, rc.hp, rc.hp.samples, emb_rng);
  LogisticConfig lc;
  lc.folds = eo.folds;

  json out;
  json protocol{{"checkpoint", eo.checkpoint},
                {"mode", rc.mode},
                {"samples", rc.hp.samples},
                {"embedding_seed", rc.hp.seed},
                {"split_seed", rc.hp.seed},
                {"score", "sigmoid of the tangent inner product"},
                {"ap_tie_break", "score descending, positives first among equal scores"}};
  if (run.split) {
    const LinkMetrics m = link_metrics(e.tangent, run.split->test_pos, run.split->test_neg);
    out["auc"] = m.auc;
    out["ap"] = m.ap;
    protocol["test_edges"] = run.split->test_pos.size();
  }
  if (run.graph.has_labels() && run.graph.num_classes >= 2) {
    try {
      out["classification_accuracy"] = node_classification(e.tangent, run.graph.labels, rc.hp.seed, lc);
    } catch (const DomainError& ex) {
      protocol["classification_skipped"] = ex.what();
    }
    protocol["classifier"] = {{"model", "multinomial logistic regression"},
                              {"l2", lc.l2},
                              {"steps", lc.steps},
                              {"lr", lc.lr},
                              {"folds", lc.folds},
                              {"stratified", true},
                              {"seed", rc.hp.seed}};
  }
  std::vector<int> depths;
  if (!rc.depth.empty()) {
    depths = load_depths(rc.depth, run.graph);
    std::mt19937_64 h_rng = derived_rng(rc.hp.seed, kHierarchyStream);
    const HierarchyMetrics h = hierarchy_metrics(e.ball, depths, run.graph.edges(), c, h_rng);
    out["spearman_depth_radius"] = h.spearman_depth_radius;
    out["edge_to_random_distance_ratio"] = h.edge_to_random_ratio;
    protocol["hierarchy_random_pairs"] = 10000;
  }
  if (eo.mi) {
    std::mt19937_64 mi_rng = derived_rng(rc.hp.seed, kMiStream);
    const MiResult mi = mi_estimate(run.inputs, enc, rc.hp, eo.mi_cfg, mi_rng);
    out["mi"] = mi.estimate;
    protocol["mi"] = {{"bound", "donsker-varadhan"},
                      {"steps", eo.mi_cfg.steps},
                      {"tail", eo.mi_cfg.tail},
                      {"lr", eo.mi_cfg.lr},
                      {"critic_hidden", eo.mi_cfg.critic_hidden},
                      {"restarted", mi.restarted},
                      {"below_floor", mi.below_floor}};
  }
  out["protocol"] = protocol;
  write_json(eo.run / "eval.json", out);
  export_embeddings(eo.run / "embeddings.csv", run.graph.node_ids, eo.space == "ball" ? e.ball : e.tangent,
                    run.graph.has_labels() ? &run.graph.labels : nullptr, depths.empty() ? nullptr : &depths);
  if (!depths.empty()) export_edges(eo.run / "edges.csv", run.graph.node_ids, run.graph.edges());
  log << out.dump(2) << '\n';
  return kExitOk;
}

inline int cmd_synth(const SyntheticTreeConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  const SyntheticTree t = generate_synthetic_tree(cfg);
  write_synthetic_tree(t, out);
  log << "wrote " << t.graph.n << " images, " << t.tree_edges.size() << " edges, M=" << t.graph.m << " to "
      << out.string() << '\n';
  return kExitOk;
}

/// Parses and runs one command line. Bad flags exit 2, module errors exit 1.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Semi-implicit hyperbolic graph embedding"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string out;
  auto* tr = app.add_subcommand("train", "train an encoder on a content/cites pair");
  tr->add_option("--content", rc.content, "node features and labels")->required();
  tr->add_option("--cites", rc.cites, "edge list")->required();
  tr->add_option("--out", out, "run directory")->required();
  tr->add_option("--mode", rc.mode, "gvae, si-hge or esi-hge")
      ->check(CLI::IsMember({"gvae", "si-hge", "esi-hge"}))
      ->capture_default_str();
  tr->add_option("--seed", rc.hp.seed)->capture_default_str();
  tr->add_option("--curvature", rc.hp.c)->capture_default_str();
  tr->add_option("--gamma", rc.hp.gamma)->capture_default_str();
  tr->add_option("--J", rc.hp.J)->capture_default_str();
  tr->add_option("--K", rc.hp.K)->capture_default_str();
  tr->add_option("--latent", rc.hp.latent)->capture_default_str();
  tr->add_option("--hidden", rc.hp.hidden)->capture_default_str();
  tr->add_option("--noise", rc.hp.noise, "Bernoulli noise width")->capture_default_str();
  tr->add_option("--lr", rc.hp.lr)->capture_default_str();
  tr->add_option("--lr-t", rc.hp.lr_t, "critic learning rate")->capture_default_str();
  tr->add_option("--epochs", rc.hp.epochs)->capture_default_str();
  tr->add_option("--samples", rc.hp.samples, "posterior draws per embedding")->capture_default_str();
  tr->add_option("--critic-hidden", rc.hp.critic_hidden)->capture_default_str();
  tr->add_option("--val-every", rc.hp.val_every)->capture_default_str();
  tr->add_option("--patience", rc.hp.patience, "validation checks without gain")->capture_default_str();
  tr->add_option("--depth", rc.depth, "depth.csv of a synthetic tree, recorded for eval");
  tr->add_flag("--row-normalize", rc.row_normalize, "scale feature rows to unit sum");
  bool no_split = false;
  tr->add_flag("--no-split", no_split, "train on every edge, no held-out edges");

  EvalOptions eo;
  auto* ev = app.add_subcommand("eval", "evaluate a trained run directory");
  ev->add_option("--out", eo.run, "run directory written by train")->required();
  ev->add_option("--checkpoint", eo.checkpoint)->check(CLI::IsMember({"best", "last"}))->capture_default_str();
  ev->add_option("--content", eo.content, "override the run's content file");
  ev->add_option("--cites", eo.cites, "override the run's cites file");
  ev->add_option("--depth", eo.depth, "depth.csv for hierarchy metrics");
  ev->add_option("--folds", eo.folds)->capture_default_str();
  std::size_t eval_samples = 0;
  ev->add_option("--samples", eval_samples, "override the run's sample count");
  ev->add_option("--space", eo.space, "embeddings.csv coordinates: tangent or ball")->capture_default_str();
  ev->add_flag("--mi", eo.mi, "estimate stored mutual information");
  ev->add_option("--mi-steps", eo.mi_cfg.steps)->capture_default_str();
  ev->add_option("--mi-tail", eo.mi_cfg.tail)->capture_default_str();
  ev->add_option("--mi-lr", eo.mi_cfg.lr)->capture_default_str();
  ev->add_option("--mi-critic-hidden", eo.mi_cfg.critic_hidden)->capture_default_str();

  SyntheticTreeConfig sc;
  auto* sy = app.add_subcommand("synth", "generate the synthetic image tree");
  sy->add_option("--nodes", sc.nodes)->capture_default_str();
  sy->add_option("--side", sc.side)->capture_default_str();
  sy->add_option("--seed", sc.seed)->capture_default_str();
  sy->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    log << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    log << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (tr->parsed()) {
      rc.out = out;
      rc.split = !no_split;
      return cmd_train(rc, log);
    }
    if (ev->parsed()) {
      if (eval_samples > 0) eo.samples = eval_samples;
      return cmd_eval(eo, log);
    }
    return cmd_synth(sc, out, log);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace esihge::cli
