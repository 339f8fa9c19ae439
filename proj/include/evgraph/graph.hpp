#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evgraph/events.hpp"

namespace evg {

enum class TimeMode { norm100, raw_microseconds };

std::string_view to_string(TimeMode mode);
TimeMode parse_time_mode(std::string_view name);

struct GraphParams {
  double radius = 5.0;
  std::size_t max_neighbors = 32;
  std::size_t max_events = 25'000;
  TimeMode time_mode = TimeMode::norm100;
  bool with_edge_attrs = false;

  void validate() const;
};

using Point3 = std::array<float, 3>;

// Directed edge src -> dst; messages flow into dst.
struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;

  auto operator<=>(const Edge&) const = default;
};

struct EventGraph {
  std::vector<Point3> positions;  // (x, y, normalized t)
  std::vector<float> features;    // polarity as -1 / +1
  std::vector<Edge> edges;
  std::optional<std::vector<Point3>> edge_attrs;  // each component in [0, 1]
  int width = 1;
  int height = 1;
  bool empty_input = false;  // set when built from an empty stream

  [[nodiscard]] std::size_t num_vertices() const noexcept { return positions.size(); }
  [[nodiscard]] std::size_t num_edges() const noexcept { return edges.size(); }

  // Compares stored content; the empty_input flag is not part of it.
  bool operator==(const EventGraph& o) const {
    return positions == o.positions && features == o.features && edges == o.edges &&
           edge_attrs == o.edge_attrs && width == o.width && height == o.height;
  }
};

// Throws RangeError describing the first violated invariant.
void check_graph_invariants(const EventGraph& g, double radius, std::size_t max_neighbors);

std::vector<double> normalize_time(std::span<const std::uint64_t> timestamps, TimeMode mode);

// All j != i with |p_j - p_i| <= radius, keeping the `max_neighbors` nearest
// per destination i (smaller j wins ties). Edges come out grouped by
// destination in ascending order, sources ascending within a group.
std::vector<Edge> radius_neighbors(std::span<const Point3> positions, double radius,
                                   std::size_t max_neighbors);

// O(N^2) scan with no cap. Reference for radius_neighbors.
std::vector<Edge> brute_force_neighbors(std::span<const Point3> positions, double radius);

// Normalized Cartesian offsets (p_src - p_dst) / (2m) + 0.5, m = max |offset|.
std::vector<Point3> compute_edge_attrs(std::span<const Point3> positions,
                                       std::span<const Edge> edges);
std::vector<Point3> compute_edge_attrs(const EventGraph& graph);

EventGraph build_graph(const EventStream& stream, const GraphParams& params);

// ------------------------------------------------------------------ memory accounting

struct MemoryProfile {
  std::size_t vertex_feature_bytes = 4;
  std::size_t position_component_bytes = 4;
  std::size_t edge_index_bytes = 8;
  std::size_t attr_component_bytes = 8;
  bool include_attrs = true;

  // 8-byte indices plus three 8-byte attributes: 40 B per edge.
  static MemoryProfile attr64();
  // 4-byte indices and no attributes: 8 B per edge.
  static MemoryProfile lean32();
  static MemoryProfile named(std::string_view name);

  void validate() const;
};

struct GraphSizeReport {
  std::uint64_t n_vertices = 0;
  std::uint64_t n_edges = 0;
  std::uint64_t vertex_bytes = 0;
  std::uint64_t edge_bytes = 0;
  std::uint64_t total_bytes = 0;
  double total_mb = 0.0;  // decimal megabytes
};

GraphSizeReport account_memory(std::uint64_t n_vertices, std::uint64_t n_edges,
                               const MemoryProfile& profile);

struct NamedProfile {
  std::string name;
  MemoryProfile profile;
};

struct ProfileTotal {
  std::string name;
  double mean_bytes = 0.0;  // per graph
  double mean_mb = 0.0;
};

// Memory footprint of a set of graphs under several profiles.
struct CorpusProfile {
  std::size_t n_graphs = 0;
  double mean_vertices = 0.0;
  double mean_edges = 0.0;
  std::vector<ProfileTotal> profiles;
  // profiles[0].mean_bytes / profiles[1].mean_bytes when two or more profiles.
  std::optional<double> ratio;
};

struct GraphCounts {
  std::uint64_t n_vertices = 0;
  std::uint64_t n_edges = 0;
};

CorpusProfile profile_corpus(std::span<const GraphCounts> graphs,
                             std::span<const NamedProfile> profiles);

// Bytes of a dense width x height x channels image of one-byte pixels.
std::uint64_t dense_frame_bytes(int width, int height, int channels);

// ------------------------------------------------------------------ graph cache
//
// Little-endian layout:
//   "EVGR" | u32 version = 1 | u64 N | u64 E | u8 flags (bit0 = has_attrs)
//   positions N*3 f32 | features N f32 | edges E*2 u32 | attrs E*3 f32 (if bit0)
//   u32 width | u32 height

inline constexpr std::uint32_t kGraphCacheVersion = 1;

std::vector<std::uint8_t> serialize_graph(const EventGraph& graph);
EventGraph deserialize_graph(std::span<const std::uint8_t> bytes);
void save_graph(const EventGraph& graph, const std::filesystem::path& path);
EventGraph load_graph(const std::filesystem::path& path);

}  // namespace evg
