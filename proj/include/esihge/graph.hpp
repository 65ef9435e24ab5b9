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
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "esihge/errors.hpp"
#include "esihge/tensor.hpp"

namespace esihge {

/// Undirected edge with first < second.
using Edge = std::pair<std::size_t, std::size_t>;

inline Edge canonical(std::size_t a, std::size_t b) { return a < b ? Edge{a, b} : Edge{b, a}; }

inline std::uint64_t edge_key(const Edge& e) {
  return (static_cast<std::uint64_t>(e.first) << 32) | static_cast<std::uint64_t>(e.second);
}

struct Graph {
  std::size_t n = 0;
  std::size_t m = 0;
  SparseMatrix features;   // N×M
  SparseMatrix adjacency;  // N×N, binary, symmetric, zero diagonal
  std::vector<int> labels;  // empty when unlabelled
  std::size_t num_classes = 0;
  std::vector<std::string> node_ids;
  std::vector<std::string> class_names;

  bool has_labels() const { return !labels.empty(); }

  /// Each undirected edge once, sorted.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    adjacency.for_each([&](std::size_t r, std::size_t c, double) {
      if (r < c) out.emplace_back(r, c);
    });
    return out;
  }

  std::size_t num_edges() const { return adjacency.nnz() / 2; }

  Tensor dense_features() const { return Tensor::from({n, m}, features.to_dense()); }
};

/// Symmetric binary adjacency from an edge list; self-pairs and duplicates dropped.
inline SparseMatrix adjacency_from_edges(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<SparseMatrix::Triplet> t;
  std::unordered_set<std::uint64_t> seen;
  for (const auto& raw : edges) {
    if (raw.first >= n || raw.second >= n) {
      throw DimensionError("edge (" + std::to_string(raw.first) + "," +
                           std::to_string(raw.second) + ") outside " + std::to_string(n) +
                           " nodes");
    }
    if (raw.first == raw.second) continue;
    const Edge e = canonical(raw.first, raw.second);
    if (!seen.insert(edge_key(e)).second) continue;
    t.push_back({e.first, e.second, 1.0});
    t.push_back({e.second, e.first, 1.0});
  }
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

/// Checks the Graph invariants; throws on violation.
inline void validate(const Graph& g) {
  if (g.features.rows() != g.n || g.features.cols() != g.m) {
    throw DimensionError("graph features are " + shape_str({g.features.rows(), g.features.cols()}) +
                         ", expected " + shape_str({g.n, g.m}));
  }
  if (g.adjacency.rows() != g.n || g.adjacency.cols() != g.n) {
    throw DimensionError("graph adjacency is not " + shape_str({g.n, g.n}));
  }
  g.adjacency.for_each([&](std::size_t r, std::size_t c, double v) {
    if (r == c || v != 1.0 || g.adjacency.at(c, r) != 1.0) {
      throw DomainError("adjacency must be binary, symmetric and diagonal-free");
    }
  });
  for (double v : g.features.values()) {
    if (!std::isfinite(v)) throw DomainError("non-finite feature value");
  }
  if (g.has_labels()) {
    if (g.labels.size() != g.n) throw DimensionError("label count differs from node count");
    for (int l : g.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= g.num_classes) {
        throw DomainError("label id " + std::to_string(l) + " outside class count " +
                          std::to_string(g.num_classes));
      }
    }
  }
}

struct LoadReport {
  std::size_t unknown_citations = 0;
  std::size_t self_citations = 0;
  std::size_t duplicate_citations = 0;
};

namespace detail {

inline std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return in;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline double parse_double(const std::string& tok, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || !std::isfinite(v)) {
    throw ParseError(where + ": bad numeric field '" + tok + "'");
  }
  return v;
}

}  // namespace detail

/// Reads a `.content`/`.cites` pair. Node order follows the content file;
/// class ids follow sorted label names.
inline Graph load_citation(const std::string& content_path, const std::string& cites_path,
                           LoadReport* report = nullptr) {
  Graph g;
  std::vector<std::string> raw_labels;
  std::vector<SparseMatrix::Triplet> feats;
  std::unordered_map<std::string, std::size_t> index;
  {
    auto in = detail::open_or_throw(content_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto tok = detail::split_ws(line);
      if (tok.empty()) continue;
      const std::string where = content_path + ":" + std::to_string(lineno);
      if (tok.size() < 3) throw ParseError(where + ": expected id, features and label");
      const std::size_t m = tok.size() - 2;
      if (g.n == 0) {
        g.m = m;
      } else if (m != g.m) {
        throw ParseError(where + ": " + std::to_string(m) + " features, expected " +
                         std::to_string(g.m));
      }
      if (!index.emplace(tok[0], g.n).second) {
        throw ParseError(where + ": duplicate node id '" + tok[0] + "'");
      }
      for (std::size_t j = 0; j < m; ++j) {
        const double v = detail::parse_double(tok[j + 1], where);
        if (v != 0.0) feats.push_back({g.n, j, v});
      }
      g.node_ids.push_back(tok[0]);
      raw_labels.push_back(tok.back());
      ++g.n;
    }
  }
  if (g.n == 0) throw ParseError(content_path + ": no nodes");

  std::vector<Edge> edges;
  LoadReport rep;
  {
    auto in = detail::open_or_throw(cites_path);
    std::string line;
    std::size_t lineno = 0;
    std::unordered_set<std::uint64_t> seen;
    while (std::getline(in, line)) {
      ++lineno;
      const auto tok = detail::split_ws(line);
      if (tok.empty()) continue;
      if (tok.size() != 2) {
        throw ParseError(cites_path + ":" + std::to_string(lineno) +
                         ": expected '<cited-id> <citing-id>'");
      }
      const auto a = index.find(tok[0]);
      const auto b = index.find(tok[1]);
      if (a == index.end() || b == index.end()) {
        ++rep.unknown_citations;
        continue;
      }
      if (a->second == b->second) {
        ++rep.self_citations;
        continue;
      }
      const Edge e = canonical(a->second, b->second);
      if (!seen.insert(edge_key(e)).second) {
        ++rep.duplicate_citations;
        continue;
      }
      edges.push_back(e);
    }
  }

  g.features = SparseMatrix::from_triplets(g.n, g.m, std::move(feats));
  g.adjacency = adjacency_from_edges(g.n, edges);
  g.class_names = raw_labels;
  std::sort(g.class_names.begin(), g.class_names.end());
  g.class_names.erase(std::unique(g.class_names.begin(), g.class_names.end()),
                      g.class_names.end());
  g.num_classes = g.class_names.size();
  std::map<std::string, int> class_id;
  for (std::size_t k = 0; k < g.class_names.size(); ++k) class_id[g.class_names[k]] = static_cast<int>(k);
  for (const auto& l : raw_labels) g.labels.push_back(class_id[l]);
  if (report) *report = rep;
  return g;
}

/// Scales each nonzero feature row to unit sum.
inline Graph row_normalize_features(Graph g) {
  std::vector<SparseMatrix::Triplet> t;
  std::vector<double> rowsum(g.n, 0.0);
  g.features.for_each([&](std::size_t r, std::size_t, double v) { rowsum[r] += v; });
  g.features.for_each([&](std::size_t r, std::size_t c, double v) {
    t.push_back({r, c, rowsum[r] != 0.0 ? v / rowsum[r] : v});
  });
  g.features = SparseMatrix::from_triplets(g.n, g.m, std::move(t));
  return g;
}

/// D̃^{-1/2} (A + I) D̃^{-1/2}.
inline SparseMatrix normalize_adjacency(const SparseMatrix& a) {
  const std::size_t n = a.rows();
  std::vector<double> deg(n, 1.0);
  a.for_each([&](std::size_t r, std::size_t, double v) { deg[r] += v; });
  std::vector<SparseMatrix::Triplet> t;
  t.reserve(a.nnz() + n);
  for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0 / deg[i]});
  a.for_each([&](std::size_t r, std::size_t c, double v) {
    t.push_back({r, c, v / std::sqrt(deg[r] * deg[c])});
  });
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

struct SplitFractions {
  double train = 0.85;
  double val = 0.05;
  double test = 0.10;
};

struct EdgeSplit {
  std::vector<Edge> train_pos;
  std::vector<Edge> val_pos;
  std::vector<Edge> test_pos;
  std::vector<Edge> val_neg;
  std::vector<Edge> test_neg;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kMinSplitEdges = 20;

/// Uniform non-edges (no self-pairs), disjoint from `exclude`, which is
/// extended with every pair drawn.
inline std::vector<Edge> sample_negatives(std::size_t n, std::size_t count,
                                          std::unordered_set<std::uint64_t>& exclude,
                                          std::mt19937_64& rng) {
  const double total_pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  if (static_cast<double>(exclude.size() + count) > total_pairs) {
    throw ConfigError("graph too dense to draw " + std::to_string(count) + " negative pairs");
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<Edge> out;
  out.reserve(count);
  while (out.size() < count) {
    const std::size_t a = pick(rng), b = pick(rng);
    if (a == b) continue;
    const Edge e = canonical(a, b);
    if (!exclude.insert(edge_key(e)).second) continue;
    out.push_back(e);
  }
  return out;
}

inline EdgeSplit split_edges(const Graph& g, SplitFractions f, std::uint64_t seed) {
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9 || f.train < 0 || f.val < 0 || f.test < 0) {
    throw ConfigError("split fractions must be nonnegative and sum to 1");
  }
  std::vector<Edge> edges = g.edges();
  if (edges.size() < kMinSplitEdges) {
    throw ConfigError("graph has " + std::to_string(edges.size()) + " edges; at least " +
                      std::to_string(kMinSplitEdges) + " are needed to split");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(edges.begin(), edges.end(), rng);
  const auto e = static_cast<double>(edges.size());
  const auto n_test = static_cast<std::size_t>(std::llround(f.test * e));
  const auto n_val = static_cast<std::size_t>(std::llround(f.val * e));
  EdgeSplit s;
  s.seed = seed;
  s.test_pos.assign(edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.val_pos.assign(edges.begin() + static_cast<std::ptrdiff_t>(n_test),
                   edges.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  s.train_pos.assign(edges.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), edges.end());
  std::unordered_set<std::uint64_t> exclude;
  for (const auto& x : edges) exclude.insert(edge_key(x));
  s.val_neg = sample_negatives(g.n, s.val_pos.size(), exclude, rng);
  s.test_neg = sample_negatives(g.n, s.test_pos.size(), exclude, rng);
  return s;
}

/// The graph the encoder sees: same nodes and features, train edges only.
inline Graph training_graph(const Graph& g, const EdgeSplit& s) {
  Graph t = g;
  t.adjacency = adjacency_from_edges(g.n, s.train_pos);
  return t;
}

}  // namespace esihge
