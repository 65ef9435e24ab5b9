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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "esihge/adam.hpp"
#include "esihge/checkpoint.hpp"
#include "esihge/eval.hpp"
#include "esihge/graph.hpp"
#include "esihge/model.hpp"
#include "esihge/objective.hpp"

namespace esihge {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown loss;
  double critic_objective = std::numeric_limits<double>::quiet_NaN();
  double val_auc = std::numeric_limits<double>::quiet_NaN();
  double val_ap = std::numeric_limits<double>::quiet_NaN();
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // best.ckpt and last.ckpt
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(EncoderParams&, CriticParams&)> on_init;  // e.g. warm start
};

struct TrainResult {
  EncoderParams enc;
  CriticParams critic;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 when no validation ran
  double best_val_auc = -std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  bool aborted = false;
  std::string diagnostic;
};

/// Independent rng streams derived from one seed.
inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

enum RngStream : std::uint64_t {
  kInitStream = 1,
  kStepStream = 2,
  kValStream = 3,
  kEvalStream = 4,
  kMiStream = 5,
  kHierarchyStream = 6,
};

inline NamedTensors all_params(const EncoderParams& enc, const CriticParams& critic) {
  NamedTensors out = enc.named();
  for (auto& p : critic.named()) out.push_back(p);
  return out;
}

inline CheckpointHeader model_header(const GraphInputs& in, const HyperParams& hp) {
  return {in.n, in.m, hp.latent, hp.hidden, hp.noise, hp.c};
}

inline std::vector<std::vector<double>> snapshot(const NamedTensors& params) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : params) out.push_back(t.to_vector());
  return out;
}

inline void restore(const NamedTensors& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].second;
    std::copy(values[k].begin(), values[k].end(), t.mutable_data().begin());
  }
}

namespace detail {

inline bool grads_finite(const NamedTensors& params) {
  for (const auto& [name, t] : params) {
    for (double g : t.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

}  // namespace detail

/// Alternating φ-ascent and T-ascent. With a split, the encoder sees only
/// the training edges and validation AUC drives early stopping; without
/// one, the full graph is used and the last parameters are kept.
inline TrainResult train(const Graph& g, const EdgeSplit* split, const HyperParams& hp,
                         const TrainOptions& opts = {}) {
  hp.validate();
  const Graph train_g = split ? training_graph(g, *split) : g;
  const GraphInputs in = prepare_inputs(train_g);
  const poincare::Curvature c(hp.c);

  TrainResult res;
  std::mt19937_64 init_rng = derived_rng(hp.seed, kInitStream);
  res.enc = init_encoder(in.m, hp, init_rng);
  res.critic = init_critic(in.m, hp, init_rng);
  if (opts.on_init) opts.on_init(res.enc, res.critic);
  const NamedTensors enc_params = res.enc.named();
  const NamedTensors critic_params = res.critic.named();
  const NamedTensors params = all_params(res.enc, res.critic);
  const CheckpointHeader header = model_header(in, hp);
  const bool use_critic = hp.gamma > 0.0;

  set_requires_grad(enc_params, true);
  set_requires_grad(critic_params, false);
  Adam opt_phi(tensors_of(enc_params), AdamConfig{hp.lr}, true);
  Adam opt_t(tensors_of(critic_params), AdamConfig{hp.lr_t}, true);
  std::mt19937_64 step_rng = derived_rng(hp.seed, kStepStream);

  std::optional<std::vector<std::vector<double>>> best;
  std::size_t checks_without_gain = 0;

  for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const StepNoise noise = draw_step_noise(in.n, hp, step_rng);

    set_requires_grad(critic_params, false);
    Objective obj;
    try {
      obj = esi_objective(in, res.enc, use_critic ? &res.critic : nullptr, hp, noise);
    } catch (const DomainError& e) {
      res.aborted = true;
      res.diagnostic = "numerical failure at epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    rec.loss = obj.values();
    if (!std::isfinite(rec.loss.total)) {
      res.aborted = true;
      res.diagnostic = "non-finite objective at epoch " + std::to_string(epoch) +
                       " (recon " + format_double(rec.loss.recon) + ", prior " +
                       format_double(rec.loss.prior) + ", entropy " + format_double(rec.loss.entropy) +
                       ", mi " + format_double(rec.loss.mi) + ")";
      break;
    }
    const Tensor mu0 = obj.psi0.mu.detach();
    const Tensor z0 = obj.z0.detach();
    obj.total.backward();
    if (!detail::grads_finite(enc_params)) {
      res.aborted = true;
      res.diagnostic = "non-finite encoder gradient at epoch " + std::to_string(epoch);
      opt_phi.zero_grad();
      break;
    }
    opt_phi.step();

    if (use_critic && in.n >= 2) {
      set_requires_grad(critic_params, true);
      Tensor t_obj;
      try {
        t_obj = critic_objective(in, res.critic, mu0, z0, random_permutation(in.n, step_rng), c);
      } catch (const DomainError& e) {
        res.aborted = true;
        res.diagnostic = "numerical failure in the critic at epoch " + std::to_string(epoch) + ": " + e.what();
        break;
      }
      rec.critic_objective = t_obj.item();
      if (!std::isfinite(rec.critic_objective)) {
        res.aborted = true;
        res.diagnostic = "non-finite critic objective at epoch " + std::to_string(epoch);
        break;
      }
      t_obj.backward();
      if (!detail::grads_finite(critic_params)) {
        res.aborted = true;
        res.diagnostic = "non-finite critic gradient at epoch " + std::to_string(epoch);
        opt_t.zero_grad();
        break;
      }
      opt_t.step();
      set_requires_grad(critic_params, false);
    }

    if (split && epoch % hp.val_every == 0) {
      std::mt19937_64 val_rng = derived_rng(hp.seed, kValStream);
      const Embeddings e = embed(in, res.enc, hp, hp.samples, val_rng);
      const LinkMetrics m = link_metrics(e.tangent, split->val_pos, split->val_neg);
      rec.val_auc = m.auc;
      rec.val_ap = m.ap;
      if (m.auc > res.best_val_auc) {
        res.best_val_auc = m.auc;
        res.best_epoch = epoch;
        best = snapshot(params);
        checks_without_gain = 0;
      } else if (++checks_without_gain >= hp.patience) {
        res.stopped_early = true;
      }
    }
    res.history.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
    if (res.stopped_early) break;
  }

  set_requires_grad(enc_params, false);
  set_requires_grad(critic_params, false);
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    save_checkpoint(*opts.out_dir / "last.ckpt", header, params);
  }
  if (best) restore(params, *best);
  if (opts.out_dir) save_checkpoint(*opts.out_dir / "best.ckpt", header, params);
  return res;
}

/// Builds parameters of the right shapes and fills them from a checkpoint.
inline std::pair<EncoderParams, CriticParams> load_model(const Checkpoint& ck, const GraphInputs& in,
                                                         const HyperParams& hp) {
  const CheckpointHeader want = model_header(in, hp);
  if (!(ck.header == want)) {
    throw ConfigError("checkpoint shape (N=" + std::to_string(ck.header.n) + ", M=" +
                      std::to_string(ck.header.m) + ", F=" + std::to_string(ck.header.f) +
                      ", H=" + std::to_string(ck.header.h) + ", E=" + std::to_string(ck.header.e) +
                      ", c=" + format_double(ck.header.c) + ") does not match the graph and settings (N=" +
                      std::to_string(want.n) + ", M=" + std::to_string(want.m) + ", F=" +
                      std::to_string(want.f) + ", H=" + std::to_string(want.h) + ", E=" +
                      std::to_string(want.e) + ", c=" + format_double(want.c) + ")");
  }
  std::mt19937_64 rng(0);
  EncoderParams enc = init_encoder(in.m, hp, rng);
  CriticParams critic = init_critic(in.m, hp, rng);
  assign_named(all_params(enc, critic), ck.tensors);
  set_requires_grad(enc.named(), false);
  set_requires_grad(critic.named(), false);
  return {enc, critic};
}

/// `epoch,recon,prior,entropy_surrogate,mi_bound,total,val_auc,val_ap`;
/// epochs without validation leave the last two fields empty.
inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "epoch,recon,prior,entropy_surrogate,mi_bound,total,val_auc,val_ap\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << format_double(r.loss.recon) << ',' << format_double(r.loss.prior) << ','
        << format_double(r.loss.entropy) << ',' << format_double(r.loss.mi) << ','
        << format_double(r.loss.total) << ',';
    if (!std::isnan(r.val_auc)) out << format_double(r.val_auc);
    out << ',';
    if (!std::isnan(r.val_ap)) out << format_double(r.val_ap);
    out << '\n';
  }
  if (!out) throw ConfigError("write failed for " + path.string());
}

}  // namespace esihge
