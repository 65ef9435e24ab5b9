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
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "esihge/errors.hpp"
#include "esihge/geometry.hpp"
#include "esihge/graph.hpp"
#include "esihge/tensor.hpp"

namespace esihge {

inline constexpr double kSigmaMin = 1e-4;
inline constexpr double kSigmaMax = 1e2;

struct HyperParams {
  std::size_t K = 18;
  std::size_t J = 3;
  double gamma = 1.0;
  double c = 3.1;
  double lr = 1e-5;
  double lr_t = 1e-5;
  std::size_t epochs = 1000;
  std::uint64_t seed = 0;
  std::size_t latent = 16;   // F
  std::size_t hidden = 32;   // H
  std::size_t noise = 32;    // E
  double noise_p = 0.5;
  std::vector<std::size_t> critic_hidden = {1000, 400, 100};
  double mu_init_gain = 0.1;
  std::size_t samples = 16;  // S for embeddings
  std::size_t val_every = 5;
  std::size_t patience = 100;  // validation checks

  void validate() const {
    if (J < 1) throw ConfigError("J must be at least 1");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be nonnegative");
    if (!(c > 0.0)) throw ConfigError("curvature must be positive");
    if (!(lr > 0.0) || !(lr_t > 0.0)) throw ConfigError("learning rates must be positive");
    if (latent < 1 || hidden < 1 || noise < 1) throw ConfigError("layer sizes must be positive");
    if (critic_hidden.empty()) throw ConfigError("critic needs at least one hidden layer");
    if (samples < 1) throw ConfigError("sample count must be positive");
    if (val_every < 1) throw ConfigError("validation interval must be positive");
    if (!(noise_p > 0.0 && noise_p < 1.0)) throw ConfigError("noise probability must be in (0, 1)");
  }
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct EncoderParams {
  Tensor w1;       // M×H
  Tensor w_mu;     // (H+E)×F
  Tensor w_sigma;  // H×F

  NamedTensors named() const {
    return {{"enc.w1", w1}, {"enc.w_mu", w_mu}, {"enc.w_sigma", w_sigma}};
  }
};

struct Linear {
  Tensor w;  // in×out
  Tensor b;  // 1×out
};

/// ReLU between layers, linear output.
struct Mlp {
  std::vector<Linear> layers;

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = matmul(h, layers[l].w) + layers[l].b;
      if (l + 1 < layers.size()) h = relu(h);
    }
    return h;
  }

  NamedTensors named(const std::string& prefix) const {
    NamedTensors out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      out.emplace_back(prefix + std::to_string(l) + ".w", layers[l].w);
      out.emplace_back(prefix + std::to_string(l) + ".b", layers[l].b);
    }
    return out;
  }
};

/// F gyroplane units; row k of `a` is unit k's orientation, row k of
/// `p_tangent` maps to its offset exp_0(p_tangent_k).
struct GyroLayer {
  Tensor a;          // F×F
  Tensor p_tangent;  // F×F
};

struct CriticParams {
  GyroLayer gyro_mu;
  GyroLayer gyro_z;
  Tensor wx;   // M×h1
  Tensor wmu;  // F×h1
  Tensor wz;   // F×h1
  Tensor b1;   // 1×h1
  Mlp tail;    // h1 → ... → 1

  NamedTensors named() const {
    NamedTensors out = {{"t.gyro_mu.a", gyro_mu.a}, {"t.gyro_mu.p", gyro_mu.p_tangent},
                        {"t.gyro_z.a", gyro_z.a},   {"t.gyro_z.p", gyro_z.p_tangent},
                        {"t.wx", wx},               {"t.wmu", wmu},
                        {"t.wz", wz},               {"t.b1", b1}};
    for (auto& nt : tail.named("t.tail")) out.push_back(std::move(nt));
    return out;
  }
};

inline std::vector<Tensor> tensors_of(const NamedTensors& named) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

inline void set_requires_grad(const NamedTensors& named, bool on) {
  for (const auto& [name, t] : named) {
    Tensor copy = t;
    copy.set_requires_grad(on);
  }
}

inline Tensor glorot_uniform(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out,
                             double gain = 1.0) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = u(rng);
  return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

inline EncoderParams init_encoder(std::size_t m, const HyperParams& hp, std::mt19937_64& rng) {
  EncoderParams p;
  p.w1 = glorot_uniform(rng, m, hp.hidden);
  p.w_mu = glorot_uniform(rng, hp.hidden + hp.noise, hp.latent, hp.mu_init_gain);
  p.w_sigma = glorot_uniform(rng, hp.hidden, hp.latent);
  return p;
}

inline Mlp init_mlp(const std::vector<std::size_t>& sizes, std::mt19937_64& rng) {
  Mlp mlp;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    mlp.layers.push_back({glorot_uniform(rng, sizes[l], sizes[l + 1]),
                          Tensor::zeros({1, sizes[l + 1]}, true)});
  }
  return mlp;
}

inline GyroLayer init_gyro(std::size_t f, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> a(f * f);
  for (std::size_t k = 0; k < f; ++k) {
    double norm = 0.0;
    while (norm == 0.0) {
      for (std::size_t j = 0; j < f; ++j) a[k * f + j] = n(rng);
      norm = 0.0;
      for (std::size_t j = 0; j < f; ++j) norm += a[k * f + j] * a[k * f + j];
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < f; ++j) a[k * f + j] /= norm;
  }
  return {Tensor::from({f, f}, std::move(a), true), Tensor::zeros({f, f}, true)};
}

inline CriticParams init_critic(std::size_t m, const HyperParams& hp, std::mt19937_64& rng) {
  CriticParams t;
  const std::size_t f = hp.latent;
  const std::size_t h1 = hp.critic_hidden.front();
  t.gyro_mu = init_gyro(f, rng);
  t.gyro_z = init_gyro(f, rng);
  // Glorot over the full first-layer fan-in m + 2F, split by input block.
  const double a = std::sqrt(6.0 / static_cast<double>(m + 2 * f + h1));
  auto block = [&](std::size_t rows) {
    std::uniform_real_distribution<double> u(-a, a);
    std::vector<double> v(rows * h1);
    for (auto& x : v) x = u(rng);
    return Tensor::from({rows, h1}, std::move(v), true);
  };
  t.wx = block(m);
  t.wmu = block(f);
  t.wz = block(f);
  t.b1 = Tensor::zeros({1, h1}, true);
  std::vector<std::size_t> sizes = hp.critic_hidden;
  sizes.push_back(1);
  t.tail = init_mlp(sizes, rng);
  return t;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

/// Inputs derived once from the graph the encoder sees.
struct GraphInputs {
  std::size_t n = 0;
  std::size_t m = 0;
  SparseMatrix features;
  SparseMatrix adjacency;  // binary, for reconstruction
  SparseMatrix adj_norm;   // Â
  std::size_t num_edges = 0;
};

inline GraphInputs prepare_inputs(const Graph& g) {
  return {g.n, g.m, g.features, g.adjacency, normalize_adjacency(g.adjacency), g.num_edges()};
}

enum class Activation { kIdentity, kRelu };

/// activation(Â · H · W)
inline Tensor gcn_layer(const SparseMatrix& adj_norm, const Tensor& h, const Tensor& w,
                        Activation act) {
  const Tensor out = spmm(adj_norm, matmul(h, w));
  return act == Activation::kRelu ? relu(out) : out;
}

/// Shared first layer relu(Â X W1).
inline Tensor encoder_hidden(const GraphInputs& in, const EncoderParams& p) {
  return relu(spmm(in.adj_norm, spmm(in.features, p.w1)));
}

/// Bernoulli(p) noise in {0, 1}.
inline Tensor bernoulli_noise(std::size_t n, std::size_t e, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  std::vector<double> v(n * e);
  for (auto& x : v) x = b(rng) ? 1.0 : 0.0;
  return Tensor::from({n, e}, std::move(v));
}

inline Tensor normal_noise(std::size_t n, std::size_t f, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n * f);
  for (auto& x : v) x = d(rng);
  return Tensor::from({n, f}, std::move(v));
}

struct Posterior {
  Tensor mu;         // N×F on the ball
  Tensor sigma;      // N×F
  Tensor log_sigma;  // N×F, clamped
};

/// log σ = clamp(Â H1 Wσ); shared across ψ draws.
inline Tensor encoder_log_sigma(const GraphInputs& in, const EncoderParams& p, const Tensor& h1) {
  return clamp(gcn_layer(in.adj_norm, h1, p.w_sigma, Activation::kIdentity), std::log(kSigmaMin),
               std::log(kSigmaMax));
}

/// μ = exp_0(Â [H1 ‖ ε] Wμ).
inline Tensor encoder_mu(const GraphInputs& in, const EncoderParams& p, const Tensor& h1,
                         const Tensor& eps, poincare::Curvature c) {
  const Tensor mu_euc = gcn_layer(in.adj_norm, hcat({h1, eps}), p.w_mu, Activation::kIdentity);
  return poincare::exp_map0(mu_euc, c);
}

/// One draw of Ψ = (μ, σ) for a given noise matrix.
inline Posterior sample_psi(const GraphInputs& in, const EncoderParams& p, const Tensor& eps,
                            poincare::Curvature c) {
  const Tensor h1 = encoder_hidden(in, p);
  const Tensor log_sigma = encoder_log_sigma(in, p, h1);
  return {encoder_mu(in, p, h1, eps, c), exp(log_sigma), log_sigma};
}

inline Posterior sample_psi(const GraphInputs& in, const EncoderParams& p, const HyperParams& hp,
                            std::mt19937_64& rng) {
  return sample_psi(in, p, bernoulli_noise(in.n, hp.noise, hp.noise_p, rng),
                    poincare::Curvature(hp.c));
}

inline Tensor sample_z(const Posterior& psi, const Tensor& u, poincare::Curvature c) {
  return poincare::wrapped_normal_sample(psi.mu, psi.sigma, c, u);
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

/// L = V Vᵀ with V = log_0(Z).
inline Tensor decode_logits(const Tensor& z, poincare::Curvature c) {
  const Tensor v = poincare::log_map0(z, c);
  return matmul(v, transpose(v));
}

inline double positive_weight(std::size_t n, std::size_t num_edges) {
  if (num_edges == 0) return 1.0;
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1);
  return (pairs - 2.0 * static_cast<double>(num_edges)) / (2.0 * static_cast<double>(num_edges));
}

/// Mean over ordered off-diagonal pairs of
/// w_pos·A·log σ(L) + (1 − A)·log(1 − σ(L)). Reference route over a dense N×N tensor.
inline Tensor recon_loglik(const SparseMatrix& adjacency, const Tensor& logits) {
  const std::size_t n = adjacency.rows();
  if (logits.rows() != n || logits.cols() != n) {
    throw DimensionError("recon_loglik: logits " + shape_str(logits.shape()) + " for " +
                         std::to_string(n) + " nodes");
  }
  if (n < 2) throw DimensionError("recon_loglik needs at least two nodes");
  const double w_pos = positive_weight(n, adjacency.nnz() / 2);
  std::vector<double> a = adjacency.to_dense();
  std::vector<double> off(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) off[i * n + i] = 0.0;
  const Tensor at = Tensor::from({n, n}, a);
  const Tensor mask = Tensor::from({n, n}, off);
  const Tensor pos = (w_pos * at) * (-softplus(-logits));
  const Tensor neg = (mask - at) * (-softplus(logits));
  return sum(pos + neg) * (1.0 / static_cast<double>(n * (n - 1)));
}

/// Same value as recon_loglik(adjacency, V Vᵀ) without recording N×N intermediates.
inline Tensor recon_loglik_tangent(const SparseMatrix& adjacency, const Tensor& v) {
  const std::size_t n = v.rows(), f = v.cols();
  if (adjacency.rows() != n) {
    throw DimensionError("recon_loglik_tangent: " + std::to_string(adjacency.rows()) +
                         " nodes vs embeddings " + shape_str(v.shape()));
  }
  if (n < 2) throw DimensionError("recon_loglik needs at least two nodes");
  const double w_pos = positive_weight(n, adjacency.nnz() / 2);
  const double scale = 1.0 / static_cast<double>(n * (n - 1));
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  auto logits_of = [n, f](std::span<const double> vals) {
    const Eigen::Map<const RowMat> vm(vals.data(), static_cast<Eigen::Index>(n),
                                      static_cast<Eigen::Index>(f));
    RowMat l = vm * vm.transpose();
    return l;
  };
  auto softplus = [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
  const RowMat l = logits_of(v.data());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) total -= softplus(l(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
  }
  // Positive pairs: w_pos·log σ(L) replaces log(1 − σ(L)), and
  // log σ(x) − log(1 − σ(x)) = x.
  adjacency.for_each([&](std::size_t i, std::size_t j, double) {
    const double x = l(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    total += softplus(x) - w_pos * softplus(-x);
  });
  return Tensor::make_op(
      {1, 1}, {total * scale}, {v},
      [adjacency, n, f, w_pos, scale, logits_of](detail::Node& self) {
        auto& in = *self.inputs[0];
        const double g = self.grad[0] * scale;
        RowMat lg = logits_of(in.value);
        // dℓ/dL_ij = w_pos·A(1 − σ) − (1 − A)σ off the diagonal.
        for (Eigen::Index i = 0; i < lg.rows(); ++i) {
          for (Eigen::Index j = 0; j < lg.cols(); ++j) {
            lg(i, j) = i == j ? 0.0 : -1.0 / (1.0 + std::exp(-lg(i, j)));
          }
        }
        adjacency.for_each([&](std::size_t i, std::size_t j, double) {
          const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
          const double s = -lg(ii, jj);
          lg(ii, jj) = w_pos * (1.0 - s);
        });
        const Eigen::Map<const RowMat> vm(in.value.data(), static_cast<Eigen::Index>(n),
                                          static_cast<Eigen::Index>(f));
        auto& gb = in.grad_buffer();
        Eigen::Map<RowMat> gm(gb.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
        gm.noalias() += (2.0 * g) * (lg * vm);
      },
      "recon_loglik_tangent");
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

/// All F gyroplane units of `layer` applied to every row of z: N×F.
/// Closed form of (2/√c)‖a_k‖·asinh(2√c⟨w_ik, a_k⟩ / ((1 − c‖w_ik‖²)‖a_k‖))
/// with w_ik = (−p_k) ⊕ z_i, expanded so no N×F×F tensor is formed.
inline Tensor gyro_layer(const Tensor& z, const GyroLayer& layer, poincare::Curvature c) {
  const double k = c.value();
  const Tensor p = poincare::exp_map0(layer.p_tangent, c);  // F×F, row k = p_k
  const Tensor x2 = transpose(row_sqnorm(p));               // 1×K  ‖p_k‖²
  const Tensor y2 = row_sqnorm(z);                          // N×1  ‖z_i‖²
  const Tensor xy = -matmul(z, transpose(p));               // N×K  ⟨−p_k, z_i⟩
  const Tensor za = matmul(z, transpose(layer.a));          // N×K  ⟨z_i, a_k⟩
  const Tensor pa = -transpose(row_dot(p, layer.a));        // 1×K  ⟨−p_k, a_k⟩
  const Tensor an2 = transpose(row_sqnorm(layer.a));        // 1×K
  for (double v : an2.data()) {
    if (v == 0.0) throw DomainError("gyro_layer: zero orientation vector");
  }
  const Tensor an = sqrt(an2);
  const Tensor alpha = 1.0 + 2.0 * k * xy + k * y2;         // coefficient of −p_k
  const Tensor beta = 1.0 - k * x2;                         // coefficient of z_i
  const Tensor den = 1.0 + 2.0 * k * xy + (k * k) * (x2 * y2);
  const Tensor wa = (alpha * pa + beta * za) / den;
  const Tensor w2 =
      (square(alpha) * x2 + 2.0 * alpha * beta * xy + square(beta) * y2) / square(den);
  const double floor = 1.0 - (1.0 - poincare::kBallEps) * (1.0 - poincare::kBallEps);
  const Tensor margin = clamp(1.0 - k * w2, floor, std::numeric_limits<double>::infinity());
  return (2.0 / c.sqrt()) * an * asinh((2.0 * c.sqrt()) * wa / (margin * an));
}

/// First-layer pre-activation pieces that do not depend on z.
struct CriticContext {
  Tensor xw;    // X Wx, N×h1
  Tensor mu_w;  // gyro(μ) Wμ, N×h1
};

inline CriticContext critic_context(const GraphInputs& in, const CriticParams& t,
                                    const Tensor& mu, poincare::Curvature c) {
  return {spmm(in.features, t.wx), matmul(gyro_layer(mu, t.gyro_mu, c), t.wmu)};
}

/// T(x_i, μ_i, z_i) for every row: N×1.
inline Tensor critic_forward(const CriticContext& ctx, const CriticParams& t, const Tensor& z,
                             poincare::Curvature c) {
  const Tensor zw = matmul(gyro_layer(z, t.gyro_z, c), t.wz);
  return t.tail.forward(relu(ctx.xw + ctx.mu_w + zw + t.b1));
}

inline Tensor t_critic(const GraphInputs& in, const CriticParams& t, const Tensor& mu,
                       const Tensor& z, poincare::Curvature c) {
  return critic_forward(critic_context(in, t, mu, c), t, z, c);
}

}  // namespace esihge
