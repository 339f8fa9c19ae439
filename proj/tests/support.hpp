#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <vector>

#include "evgraph/gconv.hpp"
#include "evgraph/graph.hpp"
#include "evgraph/ndiff/params.hpp"
#include "evgraph/ndiff/tape.hpp"

namespace evg::testing {

inline nd::Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                          double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  nd::Mat m(r, c);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

// Random graph of n vertices in [0, extent]^2 x [0, 10] with distinct random
// directed edges (no self-loops) and attrs from compute_edge_attrs.
inline EventGraph random_graph(std::size_t n, std::size_t n_edges, std::mt19937_64& rng,
                               int extent = 32) {
  std::uniform_real_distribution<float> ux(0.0f, static_cast<float>(extent) - 0.01f);
  std::uniform_real_distribution<float> ut(0.0f, 10.0f);
  std::bernoulli_distribution pol(0.5);
  EventGraph g;
  g.width = extent;
  g.height = extent;
  for (std::size_t i = 0; i < n; ++i) {
    g.positions.push_back({ux(rng), ux(rng), ut(rng)});
    g.features.push_back(pol(rng) ? 1.0f : -1.0f);
  }
  std::set<Edge> seen;
  if (n >= 2) {
    std::uniform_int_distribution<std::uint32_t> ui(0, static_cast<std::uint32_t>(n - 1));
    const std::size_t max_edges = n * (n - 1);
    while (seen.size() < std::min(n_edges, max_edges)) {
      const Edge e{ui(rng), ui(rng)};
      if (e.src != e.dst) seen.insert(e);
    }
  }
  g.edges.assign(seen.begin(), seen.end());
  g.edge_attrs = compute_edge_attrs(g);
  return g;
}

// Relabels vertices: new index of old vertex i is perm[i].
inline EventGraph permute_graph(const EventGraph& g, const std::vector<std::uint32_t>& perm) {
  EventGraph out = g;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.positions[perm[i]] = g.positions[i];
    out.features[perm[i]] = g.features[i];
  }
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    out.edges[e] = {perm[g.edges[e].src], perm[g.edges[e].dst]};
  }
  // Edge order is shuffled too so aggregation order differs.
  std::vector<std::size_t> order(g.edges.size());
  for (std::size_t e = 0; e < order.size(); ++e) order[e] = order.size() - 1 - e;
  std::vector<Edge> edges;
  std::vector<Point3> attrs;
  for (std::size_t e : order) {
    edges.push_back(out.edges[e]);
    if (g.edge_attrs) attrs.push_back((*g.edge_attrs)[e]);
  }
  out.edges = std::move(edges);
  if (g.edge_attrs) out.edge_attrs = std::move(attrs);
  return out;
}

inline std::vector<std::uint32_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::uint32_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::uint32_t>(i);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// sum(out ⊙ proj): turns a matrix-valued op into a scalar for grad checks.
inline double project(const nd::Mat& out, const nd::Mat& proj) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * proj[i];
  return s;
}

inline double max_abs_diff(const nd::Mat& a, const nd::Mat& b) {
  a.require_same_shape(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Gradient check of a tape-built function over every entry of `ps`.
// `build` records the op on the tape and returns its (matrix) output; the
// scalar is the projection onto a fixed random matrix.
inline double tape_grad_check(nd::ParameterSet& ps,
                              const std::function<nd::Var(nd::Tape&)>& build,
                              std::mt19937_64& rng) {
  nd::Mat proj;
  {
    nd::Tape t;
    const nd::Var out = build(t);
    proj = random_mat(t.value(out).rows(), t.value(out).cols(), rng);
  }
  ps.zero_grad();
  {
    nd::Tape t;
    const nd::Var out = build(t);
    t.backward(out, proj);
  }
  std::vector<nd::Mat*> inputs;
  std::vector<nd::Mat> analytic;
  for (auto& p : ps) {
    inputs.push_back(&p.tensor.value);
    analytic.push_back(p.tensor.grad);
  }
  auto f = [&] {
    nd::Tape t;
    const nd::Var out = build(t);
    return project(t.value(out), proj);
  };
  return nd::grad_check(f, inputs, analytic);
}

}  // namespace evg::testing
