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
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "esihge/errors.hpp"

namespace esihge {

struct ScoredPair {
  double score = 0.0;
  int label = 0;  // 1 positive, 0 negative
};

using ScoredPairs = std::vector<ScoredPair>;

namespace detail {

inline void check_two_classes(const ScoredPairs& pairs, const char* op) {
  bool pos = false, neg = false;
  for (const auto& p : pairs) {
    if (p.label != 0 && p.label != 1) throw DomainError(std::string(op) + ": labels must be 0 or 1");
    if (!std::isfinite(p.score)) throw DomainError(std::string(op) + ": non-finite score");
    (p.label == 1 ? pos : neg) = true;
  }
  if (!pos || !neg) throw DomainError(std::string(op) + ": needs both positive and negative pairs");
}

/// Average 1-based ranks with ties sharing their mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace detail

/// P(score_pos > score_neg) + ½ P(tie), by one sort and integer pair counts.
inline double auc(const ScoredPairs& pairs) {
  detail::check_two_classes(pairs, "auc");
  ScoredPairs s = pairs;
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  std::uint64_t wins = 0, ties = 0, neg_below = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i;
    std::uint64_t gp = 0, gn = 0;
    while (j < s.size() && s[j].score == s[i].score) {
      (s[j].label == 1 ? gp : gn) += 1;
      ++j;
    }
    wins += gp * neg_below;
    ties += gp * gn;
    neg_below += gn;
    pos += gp;
    neg += gn;
    i = j;
  }
  return static_cast<double>(2 * wins + ties) / (2.0 * static_cast<double>(pos * neg));
}

/// Σ_k (R_k − R_{k−1}) P_k over the ranking by descending score; among equal
/// scores positives rank first.
inline double average_precision(const ScoredPairs& pairs) {
  detail::check_two_classes(pairs, "average_precision");
  ScoredPairs s = pairs;
  std::stable_sort(s.begin(), s.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.label > b.label;
  });
  double total_pos = 0.0;
  for (const auto& p : s) total_pos += p.label;
  double tp = 0.0, ap = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k].label == 1) {
      tp += 1.0;
      ap += tp / static_cast<double>(k + 1);
    }
  }
  return ap / total_pos;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("pearson: need two equal-length samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DomainError("correlation undefined for a constant sample");
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(detail::average_ranks(x), detail::average_ranks(y));
}

struct LogisticConfig {
  double l2 = 1e-3;
  std::size_t steps = 500;
  double lr = 0.5;
  std::size_t folds = 10;
};

/// Multinomial logistic regression by full-batch gradient descent on
/// standardized features. Returns the weight matrix with the bias as last row.
inline Eigen::MatrixXd fit_logistic(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                    std::size_t classes, const LogisticConfig& cfg) {
  const auto n = x.rows();
  Eigen::MatrixXd xb(n, x.cols() + 1);
  xb << x, Eigen::VectorXd::Ones(n);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(classes));
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1.0;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(xb.cols(), static_cast<Eigen::Index>(classes));
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    Eigen::MatrixXd logits = xb * w;
    logits.colwise() -= logits.rowwise().maxCoeff();
    Eigen::MatrixXd p = logits.array().exp();
    p.array().colwise() /= p.rowwise().sum().array();
    Eigen::MatrixXd grad = xb.transpose() * (p - onehot) / static_cast<double>(n);
    grad.topRows(x.cols()) += cfg.l2 * w.topRows(x.cols());
    w -= cfg.lr * grad;
  }
  return w;
}

/// Stratified k-fold mean test accuracy of the logistic classifier.
inline double logistic_cv_accuracy(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                   std::uint64_t seed, const LogisticConfig& cfg = {}) {
  const std::size_t n = labels.size();
  if (static_cast<std::size_t>(x.rows()) != n) throw DimensionError("classifier: rows vs labels differ");
  if (cfg.folds < 2) throw ConfigError("classifier: need at least two folds");
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw DomainError("classifier: negative label");
    max_label = std::max(max_label, l);
  }
  const std::size_t classes = static_cast<std::size_t>(max_label + 1);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> fold(n);
  std::size_t offset = 0;
  for (auto& members : by_class) {
    if (members.size() == 1) {
      throw DomainError("classifier: a class with a single member cannot appear in every training fold");
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t k = 0; k < members.size(); ++k) fold[members[k]] = (offset + k) % cfg.folds;
    offset += members.size();
  }
  double acc_sum = 0.0;
  std::size_t used = 0;
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    std::vector<Eigen::Index> train, test;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? test : train).push_back(static_cast<Eigen::Index>(i));
    if (test.empty()) continue;
    Eigen::MatrixXd xtr = x(train, Eigen::all);
    Eigen::MatrixXd xte = x(test, Eigen::all);
    const Eigen::RowVectorXd mean = xtr.colwise().mean();
    Eigen::RowVectorXd sd = ((xtr.rowwise() - mean).array().square().colwise().sum() /
                             static_cast<double>(xtr.rows()))
                                .sqrt();
    for (auto& v : sd) v = v > 0.0 ? v : 1.0;
    xtr = (xtr.rowwise() - mean).array().rowwise() / sd.array();
    xte = (xte.rowwise() - mean).array().rowwise() / sd.array();
    std::vector<int> ytr;
    for (auto i : train) ytr.push_back(labels[static_cast<std::size_t>(i)]);
    const Eigen::MatrixXd w = fit_logistic(xtr, ytr, classes, cfg);
    Eigen::MatrixXd xb(xte.rows(), xte.cols() + 1);
    xb << xte, Eigen::VectorXd::Ones(xte.rows());
    const Eigen::MatrixXd scores = xb * w;
    std::size_t correct = 0;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      Eigen::Index arg = 0;
      scores.row(r).maxCoeff(&arg);
      if (static_cast<int>(arg) == labels[static_cast<std::size_t>(test[static_cast<std::size_t>(r)])]) ++correct;
    }
    acc_sum += static_cast<double>(correct) / static_cast<double>(test.size());
    ++used;
  }
  return acc_sum / static_cast<double>(used);
}

}  // namespace esihge
