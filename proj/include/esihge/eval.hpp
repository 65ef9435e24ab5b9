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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "esihge/adam.hpp"
#include "esihge/errors.hpp"
#include "esihge/geometry.hpp"
#include "esihge/graph.hpp"
#include "esihge/metrics.hpp"
#include "esihge/model.hpp"
#include "esihge/objective.hpp"
#include "esihge/tensor.hpp"

namespace esihge {

struct Embeddings {
  Tensor tangent;  // N×F, mean of log_0(z) over samples
  Tensor ball;     // N×F, exp_0 of the mean log_0(μ)
};

/// Averages S posterior draws (fresh ε and u each) in the tangent space at
/// the origin.
inline Embeddings embed(const GraphInputs& in, const EncoderParams& enc, const HyperParams& hp,
                        std::size_t samples, std::mt19937_64& rng) {
  if (samples < 1) throw ConfigError("embed: sample count must be positive");
  const poincare::Curvature c(hp.c);
  NoGradGuard ng;
  const Tensor h1 = encoder_hidden(in, enc);
  const Tensor sigma = exp(encoder_log_sigma(in, enc, h1));
  Tensor acc_z, acc_mu;
  for (std::size_t s = 0; s < samples; ++s) {
    const Tensor mu = encoder_mu(in, enc, h1, bernoulli_noise(in.n, hp.noise, hp.noise_p, rng), c);
    const Tensor z = poincare::wrapped_normal_sample(mu, sigma, c, normal_noise(in.n, hp.latent, rng));
    const Tensor vz = poincare::log_map0(z, c);
    const Tensor vm = poincare::log_map0(mu, c);
    acc_z = s == 0 ? vz : acc_z + vz;
    acc_mu = s == 0 ? vm : acc_mu + vm;
  }
  const double inv = 1.0 / static_cast<double>(samples);
  const Tensor tangent = (acc_z * inv).detach();
  const Tensor ball = poincare::exp_map0(acc_mu * inv, c).detach();
  return {tangent, ball};
}

/// sigmoid(⟨v_i, v_j⟩) for each pair, labelled positive or negative.
inline ScoredPairs score_pairs(const Tensor& tangent, const std::vector<Edge>& pos,
                               const std::vector<Edge>& neg) {
  ScoredPairs out;
  out.reserve(pos.size() + neg.size());
  const std::size_t f = tangent.cols();
  auto score = [&](const Edge& e) {
    double s = 0.0;
    for (std::size_t k = 0; k < f; ++k) s += tangent(e.first, k) * tangent(e.second, k);
    return 1.0 / (1.0 + std::exp(-s));
  };
  for (const auto& e : pos) out.push_back({score(e), 1});
  for (const auto& e : neg) out.push_back({score(e), 0});
  return out;
}

struct LinkMetrics {
  double auc = 0.0;
  double ap = 0.0;
};

inline LinkMetrics link_metrics(const Tensor& tangent, const std::vector<Edge>& pos,
                                const std::vector<Edge>& neg) {
  const ScoredPairs s = score_pairs(tangent, pos, neg);
  return {auc(s), average_precision(s)};
}

inline LinkMetrics link_prediction_eval(const GraphInputs& in, const EncoderParams& enc,
                                        const HyperParams& hp, const EdgeSplit& split,
                                        std::mt19937_64& rng) {
  const Embeddings e = embed(in, enc, hp, hp.samples, rng);
  return link_metrics(e.tangent, split.test_pos, split.test_neg);
}

inline Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t(i, j);
  return m;
}

inline double node_classification(const Tensor& embeddings, const std::vector<int>& labels,
                                  std::uint64_t seed, const LogisticConfig& cfg = {}) {
  return logistic_cv_accuracy(to_eigen(embeddings), labels, seed, cfg);
}

// ---------------------------------------------------------------------------
// Mutual information
// ---------------------------------------------------------------------------

struct MiConfig {
  std::size_t steps = 2000;
  std::size_t tail = 100;  // bound is averaged over the last `tail` steps
  double lr = 1e-4;
  std::vector<std::size_t> critic_hidden = {1000, 400, 100};
};

struct MiResult {
  double estimate = 0.0;
  std::vector<double> trace;
  bool restarted = false;
  bool below_floor = false;  // estimate < −0.02
};

/// Trains a fresh critic to ascend a bound. `make` builds critic parameters,
/// `bound` evaluates the bound on freshly drawn samples. A divergent run is
/// restarted once at lr/10.
template <class Critic>
MiResult train_mi_critic(const std::function<Critic(std::mt19937_64&)>& make,
                         const std::function<Tensor(const Critic&, std::mt19937_64&)>& bound,
                         const std::function<NamedTensors(const Critic&)>& named,
                         const MiConfig& cfg, std::mt19937_64& rng) {
  if (cfg.steps == 0 || cfg.tail == 0 || cfg.tail > cfg.steps) {
    throw ConfigError("mi estimate: need 0 < tail <= steps");
  }
  MiResult res;
  double lr = cfg.lr;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const Critic critic = make(rng);
    const NamedTensors params = named(critic);
    set_requires_grad(params, true);
    Adam opt(tensors_of(params), AdamConfig{lr}, true);
    res.trace.clear();
    bool diverged = false;
    for (std::size_t s = 0; s < cfg.steps; ++s) {
      const Tensor b = bound(critic, rng);
      const double v = b.item();
      if (!std::isfinite(v)) {
        diverged = true;
        break;
      }
      res.trace.push_back(v);
      b.backward();
      opt.step();
    }
    if (!diverged) {
      double sum = 0.0;
      for (std::size_t k = res.trace.size() - cfg.tail; k < res.trace.size(); ++k) sum += res.trace[k];
      res.estimate = sum / static_cast<double>(cfg.tail);
      res.below_floor = res.estimate < -0.02;
      return res;
    }
    if (attempt == 0) {
      res.restarted = true;
      lr /= 10.0;
    }
  }
  throw DomainError("mi estimate: critic diverged twice");
}

/// Donsker–Varadhan estimate of I((X, Ψ); Z) for a frozen encoder, using a
/// fresh critic with the T architecture.
inline MiResult mi_estimate(const GraphInputs& in, const EncoderParams& enc, HyperParams hp,
                            const MiConfig& cfg, std::mt19937_64& rng) {
  if (in.n < 2) throw DimensionError("mi estimate needs at least two nodes");
  hp.critic_hidden = cfg.critic_hidden;
  const poincare::Curvature c(hp.c);
  Tensor h1, sigma;
  {
    NoGradGuard ng;
    h1 = encoder_hidden(in, enc).detach();
    sigma = exp(encoder_log_sigma(in, enc, h1)).detach();
  }
  std::function<CriticParams(std::mt19937_64&)> make = [&](std::mt19937_64& r) {
    return init_critic(in.m, hp, r);
  };
  std::function<Tensor(const CriticParams&, std::mt19937_64&)> bound =
      [&](const CriticParams& t, std::mt19937_64& r) {
        Tensor mu, z;
        {
          NoGradGuard ng;
          mu = encoder_mu(in, enc, h1, bernoulli_noise(in.n, hp.noise, hp.noise_p, r), c).detach();
          z = poincare::wrapped_normal_sample(mu, sigma, c, normal_noise(in.n, hp.latent, r)).detach();
        }
        const CriticContext ctx = critic_context(in, t, mu, c);
        return dv_bound(critic_forward(ctx, t, z, c),
                        critic_forward(ctx, t, gather_rows(z, random_permutation(in.n, r)), c));
      };
  std::function<NamedTensors(const CriticParams&)> named = [](const CriticParams& t) {
    return t.named();
  };
  return train_mi_critic(make, bound, named, cfg, rng);
}

/// Donsker–Varadhan estimate of I(X; Y) from paired rows, with an MLP critic
/// on [x ‖ y].
inline MiResult mi_estimate_pairs(const Tensor& x, const Tensor& y, const MiConfig& cfg,
                                  std::mt19937_64& rng, std::size_t batch = 0) {
  if (x.rows() != y.rows() || x.rows() < 2) throw DimensionError("mi estimate: need paired rows");
  const std::size_t n = x.rows();
  std::vector<std::size_t> sizes{x.cols() + y.cols()};
  sizes.insert(sizes.end(), cfg.critic_hidden.begin(), cfg.critic_hidden.end());
  sizes.push_back(1);
  std::function<Mlp(std::mt19937_64&)> make = [sizes](std::mt19937_64& r) { return init_mlp(sizes, r); };
  std::function<Tensor(const Mlp&, std::mt19937_64&)> bound = [&](const Mlp& t, std::mt19937_64& r) {
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    if (batch > 0 && batch < n) {
      std::shuffle(rows.begin(), rows.end(), r);
      rows.resize(batch);
    }
    const Tensor xb = gather_rows(x, rows);
    const Tensor yb = gather_rows(y, rows);
    const Tensor yp = gather_rows(yb, random_permutation(rows.size(), r));
    return dv_bound(t.forward(hcat({xb, yb})), t.forward(hcat({xb, yp})));
  };
  std::function<NamedTensors(const Mlp&)> named = [](const Mlp& t) { return t.named("mi"); };
  return train_mi_critic(make, bound, named, cfg, rng);
}

// ---------------------------------------------------------------------------
// Hierarchy
// ---------------------------------------------------------------------------

struct HierarchyMetrics {
  double spearman_depth_radius = 0.0;
  double edge_to_random_ratio = 0.0;
};

inline HierarchyMetrics hierarchy_metrics(const Tensor& ball, const std::vector<int>& depths,
                                          const std::vector<Edge>& tree_edges,
                                          poincare::Curvature c, std::mt19937_64& rng,
                                          std::size_t random_pairs = 10000) {
  const std::size_t n = ball.rows(), f = ball.cols();
  if (depths.size() != n) throw DimensionError("hierarchy metrics: depths vs embeddings differ");
  if (tree_edges.empty() || n < 3) throw DimensionError("hierarchy metrics: need a tree");
  std::vector<poincare::BallPoint> pts(n);
  for (std::size_t i = 0; i < n; ++i) {
    pts[i].coords.resize(f);
    for (std::size_t k = 0; k < f; ++k) pts[i].coords[k] = ball(i, k);
  }
  const poincare::BallPoint origin{std::vector<double>(f, 0.0)};
  std::vector<double> radius(n), depth(n);
  for (std::size_t i = 0; i < n; ++i) {
    radius[i] = poincare::distance(origin, pts[i], c);
    depth[i] = depths[i];
  }
  HierarchyMetrics out;
  out.spearman_depth_radius = spearman(depth, radius);

  std::unordered_set<std::uint64_t> adjacent;
  double edge_sum = 0.0;
  for (const auto& e : tree_edges) {
    adjacent.insert(edge_key(canonical(e.first, e.second)));
    edge_sum += poincare::distance(pts[e.first], pts[e.second], c);
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  double rand_sum = 0.0;
  std::size_t drawn = 0;
  while (drawn < random_pairs) {
    const std::size_t a = pick(rng), b = pick(rng);
    if (a == b || adjacent.count(edge_key(canonical(a, b)))) continue;
    rand_sum += poincare::distance(pts[a], pts[b], c);
    ++drawn;
  }
  const double rand_mean = rand_sum / static_cast<double>(drawn);
  if (!(rand_mean > 0.0)) throw DomainError("hierarchy metrics: all random pairs coincide");
  out.edge_to_random_ratio = (edge_sum / static_cast<double>(tree_edges.size())) / rand_mean;
  return out;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV `node_id,z_1..z_F[,label][,depth]`.
inline void export_embeddings(const std::filesystem::path& path, const std::vector<std::string>& node_ids,
                              const Tensor& emb, const std::vector<int>* labels,
                              const std::vector<int>* depths) {
  const std::size_t n = emb.rows(), f = emb.cols();
  if (node_ids.size() != n) throw DimensionError("export: node ids vs embedding rows differ");
  if ((labels && labels->size() != n) || (depths && depths->size() != n)) {
    throw DimensionError("export: column length differs from embedding rows");
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "node_id";
  for (std::size_t k = 1; k <= f; ++k) out << ",z_" << k;
  if (labels) out << ",label";
  if (depths) out << ",depth";
  out << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    out << node_ids[i];
    for (std::size_t k = 0; k < f; ++k) out << ',' << format_double(emb(i, k));
    if (labels) out << ',' << (*labels)[i];
    if (depths) out << ',' << (*depths)[i];
    out << '\n';
  }
  if (!out) throw ConfigError("write failed for " + path.string());
}

inline void export_edges(const std::filesystem::path& path, const std::vector<std::string>& node_ids,
                         const std::vector<Edge>& edges) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "source,target\n";
  for (const auto& [a, b] : edges) out << node_ids.at(a) << ',' << node_ids.at(b) << '\n';
  if (!out) throw ConfigError("write failed for " + path.string());
}

}  // namespace esihge
