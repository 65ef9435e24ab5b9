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
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "esihge/errors.hpp"
#include "esihge/tensor.hpp"

namespace esihge {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam descent step on a flat parameter buffer.
inline void adam_step(std::span<double> params, std::span<const double> grads,
                      AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " params vs " + std::to_string(grads.size()) + " grads");
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state does not match parameter size");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

/// Adam over a fixed list of leaf tensors. With `maximize`, steps ascend.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg, bool maximize = false)
      : params_(std::move(params)), states_(params_.size()), cfg_(cfg),
        maximize_(maximize) {}

  /// Applies the gradients currently stored on the parameters, then clears them.
  /// Parameters that received no gradient see a zero gradient.
  void step() {
    std::vector<double> g;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      const auto pg = p.grad();
      g.assign(p.numel(), 0.0);
      if (pg.size() == g.size()) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = maximize_ ? -pg[i] : pg[i];
      }
      adam_step(p.mutable_data(), g, states_[k], cfg_);
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  const AdamConfig& config() const { return cfg_; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  AdamConfig cfg_;
  bool maximize_;
};

}  // namespace esihge
