#include "evgraph/gconv.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <tuple>

#include "evgraph/error.hpp"

namespace evg::gconv {

namespace {
std::atomic<std::size_t> g_spline_clamps{0};
}

// ------------------------------------------------------------------ batches

GraphBatch GraphBatch::from_graph(const EventGraph& g) {
  const EventGraph* one[] = {&g};
  return collate(one);
}

GraphBatch GraphBatch::collate(std::span<const EventGraph* const> graphs) {
  std::size_t n = 0, e = 0;
  bool attrs = !graphs.empty();
  for (const EventGraph* g : graphs) {
    n += g->num_vertices();
    e += g->num_edges();
    attrs = attrs && g->edge_attrs.has_value();
  }
  GraphBatch b;
  b.positions = Mat(n, 3);
  b.src.reserve(e);
  b.dst.reserve(e);
  b.graph_of.reserve(n);
  if (attrs) b.edge_attrs = Mat(e, 3);
  std::size_t v_off = 0, e_off = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const EventGraph& g = *graphs[gi];
    for (std::size_t i = 0; i < g.num_vertices(); ++i) {
      for (int a = 0; a < 3; ++a) b.positions(v_off + i, a) = g.positions[i][a];
      b.graph_of.push_back(static_cast<Index>(gi));
    }
    for (std::size_t k = 0; k < g.num_edges(); ++k) {
      b.src.push_back(static_cast<Index>(v_off + g.edges[k].src));
      b.dst.push_back(static_cast<Index>(v_off + g.edges[k].dst));
      if (attrs) {
        for (int a = 0; a < 3; ++a) (*b.edge_attrs)(e_off + k, a) = (*g.edge_attrs)[k][a];
      }
    }
    b.extents.push_back(SensorExtent{g.width, g.height});
    v_off += g.num_vertices();
    e_off += g.num_edges();
  }
  return b;
}

Mat collate_features(std::span<const EventGraph* const> graphs) {
  std::size_t n = 0;
  for (const EventGraph* g : graphs) n += g->num_vertices();
  Mat x(n, 1);
  std::size_t off = 0;
  for (const EventGraph* g : graphs) {
    for (float f : g->features) x[off++] = f;
  }
  return x;
}

// ------------------------------------------------------------------ layers

std::string_view to_string(ConvKind kind) {
  switch (kind) {
    case ConvKind::gcn: return "gcn";
    case ConvKind::sage: return "sage";
    case ConvKind::edge: return "edge";
    case ConvKind::pointnet: return "pointnet";
    case ConvKind::spline: return "spline";
  }
  return "?";
}

ConvKind parse_conv_kind(std::string_view name) {
  for (ConvKind k : kAllConvKinds) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown convolution kind '" + std::string(name) +
                    "' (expected gcn, sage, edge, pointnet or spline)");
}

std::size_t conv_parameter_count(ConvKind kind, std::size_t c_in, std::size_t c_out, int spline_k) {
  switch (kind) {
    case ConvKind::gcn: return c_in * c_out + c_out;
    case ConvKind::sage:
    case ConvKind::edge: return 2 * c_in * c_out + c_out;
    case ConvKind::pointnet: return (c_in + 3) * c_out + c_out;
    case ConvKind::spline: {
      const auto k = static_cast<std::size_t>(spline_k);
      return c_in * c_out * k * k * k + c_in * c_out + c_out;
    }
  }
  return 0;
}

std::vector<std::string> ConvLayer::roles() const {
  switch (kind) {
    case ConvKind::gcn:
    case ConvKind::edge:
    case ConvKind::pointnet: return {"weight", "bias"};
    case ConvKind::sage: return {"root", "neighbor", "bias"};
    case ConvKind::spline: return {"weight", "root", "bias"};
  }
  return {};
}

namespace {

Mat uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

}  // namespace

ConvLayer ConvLayer::create(ConvKind kind, std::size_t c_in, std::size_t c_out,
                            const std::string& prefix, nd::ParameterSet& store,
                            std::mt19937_64& rng, int spline_k) {
  if (c_in < 1 || c_out < 1) throw ConfigError("convolution channel counts must be at least 1");
  if (kind == ConvKind::spline && spline_k < 2) {
    throw ConfigError("spline kernel needs at least 2 knots per dimension for degree 1");
  }
  ConvLayer l;
  l.kind = kind;
  l.c_in = c_in;
  l.c_out = c_out;
  l.spline_k = spline_k;
  auto add = [&](const char* role, std::size_t rows, std::size_t fan_in) {
    l.params.push_back(store.add(prefix + "." + role, uniform_init(rows, c_out, fan_in, rng)));
  };
  switch (kind) {
    case ConvKind::gcn:
      add("weight", c_in, c_in);
      add("bias", 1, c_in);
      break;
    case ConvKind::sage:
      add("root", c_in, c_in);
      add("neighbor", c_in, c_in);
      add("bias", 1, c_in);
      break;
    case ConvKind::edge:
      add("weight", 2 * c_in, 2 * c_in);
      add("bias", 1, 2 * c_in);
      break;
    case ConvKind::pointnet:
      add("weight", c_in + 3, c_in + 3);
      add("bias", 1, c_in + 3);
      break;
    case ConvKind::spline: {
      const auto k = static_cast<std::size_t>(spline_k);
      add("weight", k * k * k * c_in, c_in);
      add("root", c_in, c_in);
      add("bias", 1, c_in);
      break;
    }
  }
  return l;
}

namespace {

void require(const Tape& t, Var x, const ConvLayer& layer, ConvKind kind, const GraphBatch& g) {
  if (layer.kind != kind) {
    throw ConfigError(std::string("layer kind is ") + std::string(to_string(layer.kind)) +
                      ", expected " + std::string(to_string(kind)));
  }
  const Mat& v = t.value(x);
  if (v.cols() != layer.c_in || v.rows() != g.num_vertices()) {
    throw ShapeError(std::string(to_string(kind)) + " conv: features are " + v.shape_str() +
                     ", expected " + std::to_string(g.num_vertices()) + "x" +
                     std::to_string(layer.c_in));
  }
}

Var param(Tape& t, nd::ParameterSet& ps, const ConvLayer& layer, std::size_t role) {
  return t.parameter(ps[layer.params.at(role)]);
}

}  // namespace

Var gcn_conv(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer, nd::ParameterSet& ps) {
  require(t, x, layer, ConvKind::gcn, g);
  const std::size_t n = g.num_vertices();
  std::vector<Index> src = g.src, dst = g.dst;
  for (std::size_t i = 0; i < n; ++i) {
    src.push_back(static_cast<Index>(i));
    dst.push_back(static_cast<Index>(i));
  }
  std::vector<double> deg(n, 0.0);
  for (Index d : dst) deg[d] += 1.0;
  std::vector<double> coef(src.size());
  for (std::size_t e = 0; e < src.size(); ++e) coef[e] = 1.0 / std::sqrt(deg[src[e]] * deg[dst[e]]);

  Var msgs = nd::scale_rows(t, nd::gather_rows(t, x, src), std::move(coef));
  Var agg = nd::scatter_reduce(t, msgs, dst, n, nd::Reduce::sum);
  return nd::affine(t, agg, param(t, ps, layer, 0), param(t, ps, layer, 1));
}

Var sage_conv(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer, nd::ParameterSet& ps) {
  require(t, x, layer, ConvKind::sage, g);
  Var nbr_mean = nd::scatter_reduce(t, nd::gather_rows(t, x, g.src), g.dst, g.num_vertices(),
                                    nd::Reduce::mean);
  Var root = nd::affine(t, x, param(t, ps, layer, 0), param(t, ps, layer, 2));
  return nd::add(t, root, nd::matmul(t, nbr_mean, param(t, ps, layer, 1)));
}

Var edge_conv(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer, nd::ParameterSet& ps) {
  require(t, x, layer, ConvKind::edge, g);
  Var xi = nd::gather_rows(t, x, g.dst);
  Var xj = nd::gather_rows(t, x, g.src);
  Var msgs = nd::affine(t, nd::concat_cols(t, xi, nd::sub(t, xj, xi)), param(t, ps, layer, 0),
                        param(t, ps, layer, 1));
  return nd::scatter_reduce(t, msgs, g.dst, g.num_vertices(), nd::Reduce::sum);
}

Var pointnet_conv(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer,
                  nd::ParameterSet& ps) {
  require(t, x, layer, ConvKind::pointnet, g);
  // φ([x_j, p_j - p_i]) = ([x_j, p_j]·W + b) - p_i·W_pos. The second term is
  // constant per destination, so max_j φ = max_j([x_j, p_j]·W + b) - p_i·W_pos
  // for every vertex with at least one in-edge (rounding is monotone, so this
  // is exact in floating point too).
  Var w = param(t, ps, layer, 0);
  Var pos = t.constant(g.positions);
  Var per_src = nd::affine(t, nd::concat_cols(t, x, pos), w, param(t, ps, layer, 1));
  Var pooled = nd::gather_scatter_max(t, per_src, g.src, g.dst, g.num_vertices());
  std::vector<double> has_in(g.num_vertices(), 0.0);
  for (Index d : g.dst) has_in[d] = 1.0;
  Var per_dst = nd::matmul(t, pos, nd::slice_rows(t, w, layer.c_in, 3));
  return nd::sub(t, pooled, nd::scale_rows(t, per_dst, std::move(has_in)));
}

SplineBasis spline_basis(const Mat& attrs, int k) {
  if (k < 2) throw ConfigError("spline kernel needs at least 2 knots per dimension");
  if (attrs.cols() != 3) throw ShapeError("spline pseudo-coordinates must be E x 3");
  SplineBasis b;
  b.cells.resize(attrs.rows());
  b.weights.resize(attrs.rows());
  const auto ku = static_cast<Index>(k);
  for (std::size_t e = 0; e < attrs.rows(); ++e) {
    Index lo[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
      double u = attrs(e, a);
      if (!(u >= 0.0 && u <= 1.0)) {
        ++b.clamped;
        u = std::isnan(u) ? 0.0 : std::clamp(u, 0.0, 1.0);
      }
      const double s = u * (k - 1);
      const auto l = std::min(static_cast<Index>(std::floor(s)), ku - 2);
      lo[a] = l;
      frac[a] = s - l;
    }
    for (int c = 0; c < 8; ++c) {
      Index cell = 0;
      double w = 1.0;
      Index stride = 1;
      for (int a = 0; a < 3; ++a) {
        const bool upper = (c >> a) & 1;
        cell += (lo[a] + (upper ? 1 : 0)) * stride;
        w *= upper ? frac[a] : 1.0 - frac[a];
        stride *= ku;
      }
      b.cells[e][c] = cell;
      b.weights[e][c] = w;
    }
  }
  return b;
}

std::size_t spline_clamp_warnings() { return g_spline_clamps.load(); }

namespace {

// out_e = Σ_c w_ec · x_e · W[cell_ec], with W stacked as (k^3 · Cin) x Cout.
Var spline_messages(Tape& t, Var x_src, std::shared_ptr<const SplineBasis> basis, Var w,
                    std::size_t c_in) {
  const Mat& xv = t.value(x_src);
  const Mat& wv = t.value(w);
  const std::size_t c_out = wv.cols();
  Mat out(xv.rows(), c_out);
  for (std::size_t e = 0; e < xv.rows(); ++e) {
    auto o = out.row(e);
    const auto xe = xv.row(e);
    for (int c = 0; c < 8; ++c) {
      const double we = basis->weights[e][c];
      if (we == 0.0) continue;
      const std::size_t base = basis->cells[e][c] * c_in;
      for (std::size_t r = 0; r < c_in; ++r) {
        const double a = we * xe[r];
        const auto wr = wv.row(base + r);
        for (std::size_t j = 0; j < c_out; ++j) o[j] += a * wr[j];
      }
    }
  }
  return t.record(std::move(out), {x_src, w}, [x_src, w, basis, c_in](Tape& tp, const Mat& g) {
    const Mat& xv = tp.value(x_src);
    const Mat& wv = tp.value(w);
    Mat gx(xv.rows(), xv.cols());
    Mat gw(wv.rows(), wv.cols());
    for (std::size_t e = 0; e < xv.rows(); ++e) {
      const auto ge = g.row(e);
      const auto xe = xv.row(e);
      auto gxe = gx.row(e);
      for (int c = 0; c < 8; ++c) {
        const double we = basis->weights[e][c];
        if (we == 0.0) continue;
        const std::size_t base = basis->cells[e][c] * c_in;
        for (std::size_t r = 0; r < c_in; ++r) {
          const auto wr = wv.row(base + r);
          auto gwr = gw.row(base + r);
          double acc = 0.0;
          const double a = we * xe[r];
          for (std::size_t j = 0; j < ge.size(); ++j) {
            acc += ge[j] * wr[j];
            gwr[j] += a * ge[j];
          }
          gxe[r] += we * acc;
        }
      }
    }
    tp.accumulate(x_src, gx);
    tp.accumulate(w, gw);
  });
}

}  // namespace

Var spline_conv(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer, nd::ParameterSet& ps) {
  require(t, x, layer, ConvKind::spline, g);
  if (!g.edge_attrs) throw ConfigError("spline conv requires edge attributes");
  auto basis = std::make_shared<SplineBasis>(spline_basis(*g.edge_attrs, layer.spline_k));
  g_spline_clamps += basis->clamped;
  Var msgs = spline_messages(t, nd::gather_rows(t, x, g.src), basis, param(t, ps, layer, 0),
                             layer.c_in);
  Var agg = nd::scatter_reduce(t, msgs, g.dst, g.num_vertices(), nd::Reduce::mean);
  Var root = nd::affine(t, x, param(t, ps, layer, 1), param(t, ps, layer, 2));
  return nd::add(t, agg, root);
}

Var conv_forward(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer,
                 nd::ParameterSet& ps) {
  switch (layer.kind) {
    case ConvKind::gcn: return gcn_conv(t, g, x, layer, ps);
    case ConvKind::sage: return sage_conv(t, g, x, layer, ps);
    case ConvKind::edge: return edge_conv(t, g, x, layer, ps);
    case ConvKind::pointnet: return pointnet_conv(t, g, x, layer, ps);
    case ConvKind::spline: return spline_conv(t, g, x, layer, ps);
  }
  throw ConfigError("unknown convolution kind");
}

// ------------------------------------------------------------------ pooling

namespace {

// Attributes normalized separately within each graph of the batch.
Mat per_graph_edge_attrs(const GraphBatch& g) {
  Mat attrs(g.num_edges(), 3);
  std::vector<double> m(g.num_graphs(), 0.0);
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const Index gi = g.graph_of[g.dst[e]];
    for (int a = 0; a < 3; ++a) {
      m[gi] = std::max(m[gi], std::abs(g.positions(g.src[e], a) - g.positions(g.dst[e], a)));
    }
  }
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const double mg = m[g.graph_of[g.dst[e]]];
    for (int a = 0; a < 3; ++a) {
      const double d = g.positions(g.src[e], a) - g.positions(g.dst[e], a);
      attrs(e, a) = mg > 0 ? std::clamp(d / (2.0 * mg) + 0.5, 0.0, 1.0) : 0.5;
    }
  }
  return attrs;
}

}  // namespace

Pooled voxel_max_pool(Tape& t, const GraphBatch& g, Var x, PoolSpec pool) {
  if (!(pool.sx >= 1) || !(pool.sy >= 1)) throw ConfigError("pool cell sides must be at least 1");
  const std::size_t n = g.num_vertices();
  if (t.value(x).rows() != n) throw ShapeError("voxel_max_pool: feature rows do not match vertices");

  using Key = std::tuple<Index, std::int64_t, std::int64_t>;  // (graph, cell y, cell x)
  std::vector<Key> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    keys[i] = {g.graph_of[i], static_cast<std::int64_t>(std::floor(g.positions(i, 1) / pool.sy)),
               static_cast<std::int64_t>(std::floor(g.positions(i, 0) / pool.sx))};
  }
  std::map<Key, Index> cluster_id;
  for (const Key& k : keys) cluster_id.emplace(k, 0);
  Index next = 0;
  for (auto& [k, id] : cluster_id) id = next++;

  std::vector<Index> cluster_of(n);
  for (std::size_t i = 0; i < n; ++i) cluster_of[i] = cluster_id.at(keys[i]);

  Pooled out;
  GraphBatch& c = out.graph;
  c.positions = Mat(next, 3);
  c.graph_of.resize(next);
  c.extents = g.extents;
  std::vector<double> t_sum(next, 0.0);
  std::vector<std::size_t> count(next, 0);
  for (std::size_t i = 0; i < n; ++i) {
    t_sum[cluster_of[i]] += g.positions(i, 2);
    ++count[cluster_of[i]];
  }
  for (const auto& [k, id] : cluster_id) {
    c.graph_of[id] = std::get<0>(k);
    c.positions(id, 0) = (static_cast<double>(std::get<2>(k)) + 0.5) * pool.sx;
    c.positions(id, 1) = (static_cast<double>(std::get<1>(k)) + 0.5) * pool.sy;
    c.positions(id, 2) = t_sum[id] / static_cast<double>(count[id]);
  }

  std::vector<std::pair<Index, Index>> edges;  // (dst, src)
  edges.reserve(g.num_edges());
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const Index s = cluster_of[g.src[e]], d = cluster_of[g.dst[e]];
    if (s != d) edges.emplace_back(d, s);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  c.src.reserve(edges.size());
  c.dst.reserve(edges.size());
  for (const auto& [d, s] : edges) {
    c.src.push_back(s);
    c.dst.push_back(d);
  }
  if (g.edge_attrs) c.edge_attrs = per_graph_edge_attrs(c);

  out.x = nd::scatter_reduce(t, x, cluster_of, next, nd::Reduce::max);
  return out;
}

Var grid_readout(Tape& t, const GraphBatch& g, Var x, int gx, int gy) {
  if (gx < 1 || gy < 1) throw ConfigError("readout grid must be at least 1x1");
  const std::size_t n_rows = t.value(x).rows();
  const std::size_t channels = t.value(x).cols();
  if (n_rows != g.num_vertices()) throw ShapeError("grid_readout: feature rows do not match vertices");
  const std::size_t cells = static_cast<std::size_t>(gx) * static_cast<std::size_t>(gy);
  std::vector<Index> slot(g.num_vertices());
  for (std::size_t i = 0; i < g.num_vertices(); ++i) {
    const SensorExtent ext = g.extents[g.graph_of[i]];
    auto cell = [](double p, int grid, int extent) {
      const auto c = static_cast<std::int64_t>(std::floor(p * grid / extent));
      return static_cast<std::size_t>(std::clamp<std::int64_t>(c, 0, grid - 1));
    };
    const std::size_t cx = cell(g.positions(i, 0), gx, ext.width);
    const std::size_t cy = cell(g.positions(i, 1), gy, ext.height);
    slot[i] = static_cast<Index>(g.graph_of[i] * cells + cy * static_cast<std::size_t>(gx) + cx);
  }
  Var pooled = nd::scatter_reduce(t, x, slot, g.num_graphs() * cells, nd::Reduce::max);
  return nd::reshape(t, pooled, g.num_graphs(), cells * channels);
}

}  // namespace evg::gconv
