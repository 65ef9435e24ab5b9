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

// Image-tree dataset: every child image is its parent plus one new shape.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "esihge/errors.hpp"
#include "esihge/graph.hpp"

namespace esihge {

struct SyntheticTreeConfig {
  std::size_t nodes = 63;
  std::size_t side = 64;
  double intensity_lo = 0.2;
  double intensity_hi = 1.0;
  std::uint64_t seed = 0;
  std::size_t attempts = 100;
  double min_radius = 1.5;
};

struct SyntheticTree {
  Graph graph;
  std::vector<int> depth;
  std::vector<std::vector<double>> images;  // side×side, row-major, in [0, 1]
  std::vector<std::vector<std::size_t>> shape_pixels;  // pixels added at each node
  std::vector<Edge> tree_edges;  // (parent, child)
  std::size_t side = 0;
};

inline std::size_t tree_parent(std::size_t i) { return (i - 1) / 2; }

inline int tree_depth(std::size_t i) {
  int d = 0;
  for (std::size_t k = i + 1; k > 1; k >>= 1) ++d;
  return d;
}

namespace detail {

/// Rasterized shape: pixel indices, or empty when it leaves the image.
inline std::vector<std::size_t> rasterize_shape(std::mt19937_64& rng, std::size_t side,
                                                double cx, double cy, double r) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> kind(2, 6);  // 2 means disc
  const int k = kind(rng);
  std::vector<double> px, py;
  if (k >= 3) {
    std::vector<double> ang(static_cast<std::size_t>(k));
    for (auto& a : ang) a = 2.0 * std::numbers::pi * u01(rng);
    std::sort(ang.begin(), ang.end());
    for (double a : ang) {
      px.push_back(cx + r * std::cos(a));
      py.push_back(cy + r * std::sin(a));
    }
  }
  const auto s = static_cast<double>(side);
  if (cx - r < 0.0 || cy - r < 0.0 || cx + r > s || cy + r > s) return {};
  std::vector<std::size_t> out;
  const auto x0 = static_cast<std::size_t>(std::floor(cx - r));
  const auto y0 = static_cast<std::size_t>(std::floor(cy - r));
  const auto x1 = std::min(side - 1, static_cast<std::size_t>(std::ceil(cx + r)));
  const auto y1 = std::min(side - 1, static_cast<std::size_t>(std::ceil(cy + r)));
  for (std::size_t y = y0; y <= y1; ++y) {
    for (std::size_t x = x0; x <= x1; ++x) {
      const double qx = static_cast<double>(x) + 0.5, qy = static_cast<double>(y) + 0.5;
      bool inside = true;
      if (k < 3) {
        inside = (qx - cx) * (qx - cx) + (qy - cy) * (qy - cy) <= r * r;
      } else {
        // Counter-clockwise vertices: inside iff left of every edge.
        for (std::size_t v = 0; v < px.size() && inside; ++v) {
          const std::size_t w = (v + 1) % px.size();
          const double cross = (px[w] - px[v]) * (qy - py[v]) - (py[w] - py[v]) * (qx - px[v]);
          inside = cross >= 0.0;
        }
      }
      if (inside) out.push_back(y * side + x);
    }
  }
  return out;
}

inline bool four_connected(const std::vector<std::size_t>& pixels, std::size_t side) {
  if (pixels.empty()) return false;
  std::vector<char> in(side * side, 0), seen(side * side, 0);
  for (auto p : pixels) in[p] = 1;
  std::vector<std::size_t> stack = {pixels.front()};
  seen[pixels.front()] = 1;
  std::size_t count = 0;
  while (!stack.empty()) {
    const std::size_t p = stack.back();
    stack.pop_back();
    ++count;
    const std::size_t x = p % side, y = p / side;
    const std::size_t nb[4] = {x > 0 ? p - 1 : p, x + 1 < side ? p + 1 : p,
                               y > 0 ? p - side : p, y + 1 < side ? p + side : p};
    for (auto q : nb) {
      if (in[q] && !seen[q]) {
        seen[q] = 1;
        stack.push_back(q);
      }
    }
  }
  return count == pixels.size();
}

/// True when no shape pixel or 4-neighbour is already lit.
inline bool clear_of(const std::vector<std::size_t>& pixels, const std::vector<double>& img,
                     std::size_t side) {
  for (auto p : pixels) {
    const std::size_t x = p % side, y = p / side;
    if (img[p] != 0.0) return false;
    if (x > 0 && img[p - 1] != 0.0) return false;
    if (x + 1 < side && img[p + 1] != 0.0) return false;
    if (y > 0 && img[p - side] != 0.0) return false;
    if (y + 1 < side && img[p + side] != 0.0) return false;
  }
  return true;
}

}  // namespace detail

inline SyntheticTree generate_synthetic_tree(const SyntheticTreeConfig& cfg) {
  if (cfg.nodes < 1) throw ConfigError("synthetic tree needs at least one node");
  if (cfg.side < 8) throw ConfigError("synthetic image side must be at least 8");
  if (!(cfg.intensity_lo > 0.0 && cfg.intensity_lo <= cfg.intensity_hi && cfg.intensity_hi <= 1.0)) {
    throw ConfigError("intensity range must satisfy 0 < lo <= hi <= 1");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> intensity(cfg.intensity_lo, cfg.intensity_hi);
  const std::size_t side = cfg.side;
  const auto s = static_cast<double>(side);

  SyntheticTree t;
  t.side = side;
  t.images.resize(cfg.nodes);
  t.shape_pixels.resize(cfg.nodes);
  for (std::size_t i = 0; i < cfg.nodes; ++i) {
    std::vector<double> img =
        i == 0 ? std::vector<double>(side * side, 0.0) : t.images[tree_parent(i)];
    double radius = s * (0.06 + 0.08 * u01(rng));
    std::vector<std::size_t> pixels;
    while (pixels.empty()) {
      if (radius < cfg.min_radius) {
        throw ConfigError("no room for a new shape at node " + std::to_string(i) +
                          "; increase the image side");
      }
      for (std::size_t a = 0; a < cfg.attempts; ++a) {
        const double cx = radius + (s - 2.0 * radius) * u01(rng);
        const double cy = radius + (s - 2.0 * radius) * u01(rng);
        auto cand = detail::rasterize_shape(rng, side, cx, cy, radius);
        if (detail::four_connected(cand, side) && detail::clear_of(cand, img, side)) {
          pixels = std::move(cand);
          break;
        }
      }
      radius *= 0.75;
    }
    const double value = intensity(rng);
    for (auto p : pixels) img[p] = value;
    t.images[i] = std::move(img);
    t.shape_pixels[i] = std::move(pixels);
    t.depth.push_back(tree_depth(i));
    if (i > 0) t.tree_edges.emplace_back(tree_parent(i), i);
  }

  Graph& g = t.graph;
  g.n = cfg.nodes;
  g.m = side * side;
  std::vector<SparseMatrix::Triplet> feats;
  for (std::size_t i = 0; i < cfg.nodes; ++i) {
    for (std::size_t p = 0; p < g.m; ++p) {
      if (t.images[i][p] != 0.0) feats.push_back({i, p, t.images[i][p]});
    }
    g.node_ids.push_back(std::to_string(i));
  }
  g.features = SparseMatrix::from_triplets(g.n, g.m, std::move(feats));
  g.adjacency = adjacency_from_edges(g.n, t.tree_edges);
  int max_depth = 0;
  for (int d : t.depth) max_depth = std::max(max_depth, d);
  g.num_classes = static_cast<std::size_t>(max_depth) + 1;
  for (int d = 0; d <= max_depth; ++d) g.class_names.push_back("depth" + std::to_string(d));
  g.labels = t.depth;
  return t;
}

/// Writes synthetic.content, synthetic.cites, depth.csv and node_<i>.pgm.
inline void write_synthetic_tree(const SyntheticTree& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [](const std::filesystem::path& p, std::ios::openmode mode = std::ios::out) {
    std::ofstream f(p, mode);
    if (!f) throw ParseError("cannot write " + p.string());
    return f;
  };
  const Graph& g = t.graph;
  {
    auto f = open(dir / "synthetic.content");
    f << std::setprecision(17);
    for (std::size_t i = 0; i < g.n; ++i) {
      f << i;
      for (double v : t.images[i]) f << '\t' << v;
      f << '\t' << g.class_names[static_cast<std::size_t>(t.depth[i])] << '\n';
    }
  }
  {
    auto f = open(dir / "synthetic.cites");
    for (const auto& [parent, child] : t.tree_edges) f << parent << '\t' << child << '\n';
  }
  {
    auto f = open(dir / "depth.csv");
    f << "node_id,depth\n";
    for (std::size_t i = 0; i < g.n; ++i) f << i << ',' << t.depth[i] << '\n';
  }
  for (std::size_t i = 0; i < g.n; ++i) {
    auto f = open(dir / ("node_" + std::to_string(i) + ".pgm"), std::ios::out | std::ios::binary);
    f << "P5\n" << t.side << ' ' << t.side << "\n255\n";
    for (double v : t.images[i]) {
      f.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  }
}

/// Reads `node_id,depth`, matching ids against g.node_ids.
inline std::vector<int> load_depths(const std::string& path, const Graph& g) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < g.n; ++i) index.emplace(g.node_ids[i], i);
  auto in = detail::open_or_throw(path);
  std::vector<int> depth(g.n, -1);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(where + ": expected node_id,depth");
    const auto it = index.find(line.substr(0, comma));
    if (it == index.end()) throw ParseError(where + ": unknown node id");
    depth[it->second] = static_cast<int>(detail::parse_double(line.substr(comma + 1), where));
  }
  for (int d : depth) {
    if (d < 0) throw ParseError(path + ": missing depth for some nodes");
  }
  return depth;
}

}  // namespace esihge
