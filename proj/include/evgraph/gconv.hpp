#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evgraph/graph.hpp"
#include "evgraph/ndiff/params.hpp"
#include "evgraph/ndiff/tape.hpp"

namespace evg::gconv {

using nd::Index;
using nd::Mat;
using nd::Tape;
using nd::Var;

struct SensorExtent {
  int width = 1;
  int height = 1;
};

// Structure a convolution runs over: one graph, or the disjoint union of
// several with vertex indices offset per graph.
struct GraphBatch {
  Mat positions;  // N x 3
  std::vector<Index> src;
  std::vector<Index> dst;
  std::optional<Mat> edge_attrs;  // E x 3
  std::vector<Index> graph_of;    // owning graph of each vertex
  std::vector<SensorExtent> extents;

  [[nodiscard]] std::size_t num_vertices() const noexcept { return positions.rows(); }
  [[nodiscard]] std::size_t num_edges() const noexcept { return src.size(); }
  [[nodiscard]] std::size_t num_graphs() const noexcept { return extents.size(); }

  static GraphBatch from_graph(const EventGraph& g);
  static GraphBatch collate(std::span<const EventGraph* const> graphs);
};

// Vertex features (N x 1) matching GraphBatch::collate order.
Mat collate_features(std::span<const EventGraph* const> graphs);

enum class ConvKind { gcn, sage, edge, pointnet, spline };

inline constexpr ConvKind kAllConvKinds[] = {ConvKind::gcn, ConvKind::sage, ConvKind::edge,
                                             ConvKind::pointnet, ConvKind::spline};

std::string_view to_string(ConvKind kind);
ConvKind parse_conv_kind(std::string_view name);

// Closed-form trainable parameter count of one layer.
std::size_t conv_parameter_count(ConvKind kind, std::size_t c_in, std::size_t c_out,
                                 int spline_k = 5);

struct ConvLayer {
  ConvKind kind = ConvKind::pointnet;
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  int spline_k = 5;
  std::vector<std::size_t> params;  // indices into the owning ParameterSet, role order

  // Registers `<prefix>.<role>` parameters, uniform in ±1/sqrt(fan_in).
  static ConvLayer create(ConvKind kind, std::size_t c_in, std::size_t c_out,
                          const std::string& prefix, nd::ParameterSet& store,
                          std::mt19937_64& rng, int spline_k = 5);

  // Role names in the order of `params`.
  [[nodiscard]] std::vector<std::string> roles() const;
};

// Symmetric-normalized aggregation over in-neighbors plus a self-loop, then x·W + b.
Var gcn_conv(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer, nd::ParameterSet& ps);
// x_i·W_root + mean_j(x_j)·W_nbr + b.
Var sage_conv(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer, nd::ParameterSet& ps);
// sum_j φ([x_i, x_j - x_i]) with φ a single affine map.
Var edge_conv(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer, nd::ParameterSet& ps);
// max_j φ([x_j, p_j - p_i]) with φ a single affine map and no update function.
Var pointnet_conv(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer,
                  nd::ParameterSet& ps);
// Degree-1 B-spline kernel over edge attributes, mean aggregation, root term.
Var spline_conv(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer, nd::ParameterSet& ps);

Var conv_forward(Tape& t, const GraphBatch& g, Var x, const ConvLayer& layer,
                 nd::ParameterSet& ps);

// Eight active cells of the k^3 kernel grid and their weights for one edge.
struct SplineBasis {
  std::vector<std::array<Index, 8>> cells;
  std::vector<std::array<double, 8>> weights;
  std::size_t clamped = 0;  // attribute components that were outside [0, 1]
};

SplineBasis spline_basis(const Mat& attrs, int k);

// Total attribute components clamped by spline_conv since process start.
std::size_t spline_clamp_warnings();

struct PoolSpec {
  double sx = 1;
  double sy = 1;
};

struct Pooled {
  GraphBatch graph;
  Var x;
};

// One output vertex per occupied (x, y) grid cell; features are max-pooled,
// time is averaged, and edges are remapped without self-loops or duplicates.
Pooled voxel_max_pool(Tape& t, const GraphBatch& g, Var x, PoolSpec pool);

// B x (gx·gy·C): per-cell max over a fixed grid on each graph's sensor extent.
Var grid_readout(Tape& t, const GraphBatch& g, Var x, int gx, int gy);

}  // namespace evg::gconv
