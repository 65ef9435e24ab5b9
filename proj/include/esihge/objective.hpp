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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "esihge/errors.hpp"
#include "esihge/geometry.hpp"
#include "esihge/model.hpp"
#include "esihge/tensor.hpp"

namespace esihge {

/// Exponent cap inside f*; keeps the marginal term finite for runaway critics.
inline constexpr double kFStarMaxArg = 60.0;

/// Convex conjugate of u·log u.
inline double f_star(double t) { return std::exp(t - 1.0); }

inline Tensor f_star(const Tensor& t) {
  return exp(clamp(t, -std::numeric_limits<double>::infinity(), kFStarMaxArg) - 1.0);
}

/// mean T(joint) − mean f*(T(permuted)).
inline Tensor dual_bound(const Tensor& t_joint, const Tensor& t_marginal) {
  return mean(t_joint) - mean(f_star(t_marginal));
}

/// mean T(joint) − log mean exp T(permuted).
inline Tensor dv_bound(const Tensor& t_joint, const Tensor& t_marginal) {
  return mean(t_joint) - (logsumexp(t_marginal) - std::log(static_cast<double>(t_marginal.numel())));
}

inline std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
  if (n < 2) throw DimensionError("a permutation estimator needs at least two samples");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

/// log h_K per row: logsumexp over components minus log(K+1). N×1.
/// `first`, when given, replaces the ψ⁰ column.
inline Tensor log_hK(const Tensor& z, const std::vector<Tensor>& mus, const Tensor& sigma,
                     const Tensor& log_sigma, poincare::Curvature c, const Tensor* first = nullptr) {
  if (mus.empty()) throw DimensionError("log_hK needs at least one component");
  std::vector<Tensor> cols;
  cols.reserve(mus.size());
  for (std::size_t k = 0; k < mus.size(); ++k) {
    cols.push_back(k == 0 && first ? *first
                                   : poincare::wrapped_normal_logpdf(z, mus[k], sigma, log_sigma, c));
  }
  const Tensor lse = mus.size() == 1 ? cols.front() : logsumexp(hcat(cols), Axis::kCols);
  return lse - std::log(static_cast<double>(mus.size()));
}

/// log N_wrapped(z | 0, I), per row.
inline Tensor prior_logpdf(const Tensor& z, poincare::Curvature c) {
  const std::size_t f = z.cols();
  return poincare::wrapped_normal_logpdf(z, Tensor::zeros({1, f}), Tensor::full({1, f}, 1.0),
                                         Tensor::zeros({1, f}), c);
}

/// All randomness of one training step, drawn up front.
struct StepNoise {
  std::vector<Tensor> eps;        // K+1 Bernoulli N×E; [0] drives ψ⁰
  std::vector<Tensor> u;          // J standard normal N×F
  std::vector<std::size_t> perm;  // node permutation for the marginal term
};

inline StepNoise draw_step_noise(std::size_t n, const HyperParams& hp, std::mt19937_64& rng) {
  StepNoise s;
  for (std::size_t k = 0; k <= hp.K; ++k) s.eps.push_back(bernoulli_noise(n, hp.noise, hp.noise_p, rng));
  for (std::size_t j = 0; j < hp.J; ++j) s.u.push_back(normal_noise(n, hp.latent, rng));
  if (n >= 2) s.perm = random_permutation(n, rng);
  return s;
}

struct LossBreakdown {
  double recon = 0.0;
  double prior = 0.0;
  double entropy = 0.0;
  double mi = 0.0;
  double total = 0.0;
};

/// Tracked objective terms; `total` is to be maximized.
struct Objective {
  Tensor recon;
  Tensor prior;
  Tensor entropy;
  Tensor mi;
  Tensor total;
  Posterior psi0;
  Tensor z0;  // first of the J samples, shared with the critic

  LossBreakdown values() const {
    return {recon.item(), prior.item(), entropy.item(), mi.item(), total.item()};
  }
};

/// recon + (Σ log p(z) − Σ log h_K(z)) / (N² − N) + γ·bound, averaged over J.
/// The critic term is skipped when γ = 0 or `critic` is null.
inline Objective esi_objective(const GraphInputs& in, const EncoderParams& enc,
                               const CriticParams* critic, const HyperParams& hp,
                               const StepNoise& noise) {
  const poincare::Curvature c(hp.c);
  if (noise.eps.size() != hp.K + 1 || noise.u.size() != hp.J) {
    throw DimensionError("step noise does not match K and J");
  }
  const Tensor h1 = encoder_hidden(in, enc);
  const Tensor log_sigma = encoder_log_sigma(in, enc, h1);
  const Tensor sigma = exp(log_sigma);
  std::vector<Tensor> mus;
  for (const auto& e : noise.eps) mus.push_back(encoder_mu(in, enc, h1, e, c));

  const double pairs = static_cast<double>(in.n) * static_cast<double>(in.n - 1);
  const double inv_j = 1.0 / static_cast<double>(hp.J);
  Objective out;
  out.psi0 = {mus.front(), sigma, log_sigma};
  Tensor recon, prior, entropy;
  for (std::size_t j = 0; j < hp.J; ++j) {
    const Tensor z = poincare::wrapped_normal_sample(mus.front(), sigma, c, noise.u[j]);
    if (j == 0) out.z0 = z;
    const Tensor r = recon_loglik_tangent(in.adjacency, poincare::log_map0(z, c));
    // prior and ψ⁰ density from the tangent step, exact even if z was clipped
    const Tensor p = sum(poincare::prior_logpdf_at_step(mus.front(), noise.u[j] * sigma, c)) * (1.0 / pairs);
    const Tensor own = poincare::wrapped_normal_logpdf_at_draw(noise.u[j], sigma, log_sigma, c);
    const Tensor h = sum(log_hK(z, mus, sigma, log_sigma, c, &own)) * (-1.0 / pairs);
    recon = j == 0 ? r : recon + r;
    prior = j == 0 ? p : prior + p;
    entropy = j == 0 ? h : entropy + h;
  }
  out.recon = recon * inv_j;
  out.prior = prior * inv_j;
  out.entropy = entropy * inv_j;
  out.total = out.recon + out.prior + out.entropy;
  if (hp.gamma > 0.0 && critic != nullptr) {
    const CriticContext ctx = critic_context(in, *critic, out.psi0.mu, c);
    const Tensor t_joint = critic_forward(ctx, *critic, out.z0, c);
    const Tensor t_marg = critic_forward(ctx, *critic, gather_rows(out.z0, noise.perm), c);
    out.mi = dual_bound(t_joint, t_marg);
    out.total = out.total + hp.gamma * out.mi;
  } else {
    out.mi = Tensor::scalar(0.0);
  }
  return out;
}

/// Critic objective on detached samples (the T-step).
inline Tensor critic_objective(const GraphInputs& in, const CriticParams& critic,
                               const Tensor& mu, const Tensor& z,
                               const std::vector<std::size_t>& perm, poincare::Curvature c) {
  const CriticContext ctx = critic_context(in, critic, mu.detach(), c);
  const Tensor zd = z.detach();
  return dual_bound(critic_forward(ctx, critic, zd, c),
                    critic_forward(ctx, critic, gather_rows(zd, perm), c));
}

/// Per-node B_K sample: log q(z | ψ⁰) − log h_K(z).
inline Tensor bk_sample(const Tensor& z, const std::vector<Tensor>& mus, const Tensor& sigma,
                        const Tensor& log_sigma, poincare::Curvature c) {
  return poincare::wrapped_normal_logpdf(z, mus.front(), sigma, log_sigma, c) -
         log_hK(z, mus, sigma, log_sigma, c);
}

}  // namespace esihge
