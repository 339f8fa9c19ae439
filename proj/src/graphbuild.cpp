#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <unordered_map>

#include "evgraph/error.hpp"
#include "evgraph/graph.hpp"

namespace evg {

std::string_view to_string(TimeMode mode) {
  return mode == TimeMode::norm100 ? "norm100" : "raw_microseconds";
}

TimeMode parse_time_mode(std::string_view name) {
  if (name == "norm100") return TimeMode::norm100;
  if (name == "raw" || name == "raw_microseconds") return TimeMode::raw_microseconds;
  throw ConfigError("unknown time mode '" + std::string(name) + "' (expected norm100 or raw)");
}

void GraphParams::validate() const {
  if (!(radius > 0) || !std::isfinite(radius)) throw ConfigError("graph radius must be positive");
  if (max_neighbors < 1) throw ConfigError("max_neighbors must be at least 1");
  if (max_events < 1) throw ConfigError("max_events must be at least 1");
}

namespace {

double dist2(const Point3& a, const Point3& b) {
  const double dx = double(a[0]) - double(b[0]);
  const double dy = double(a[1]) - double(b[1]);
  const double dz = double(a[2]) - double(b[2]);
  return dx * dx + dy * dy + dz * dz;
}

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (std::int64_t v : {k.x, k.y, k.z}) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ull;
      h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

void check_graph_invariants(const EventGraph& g, double radius, std::size_t max_neighbors) {
  const std::size_t n = g.num_vertices();
  if (g.features.size() != n) throw RangeError("feature count differs from vertex count");
  std::vector<std::size_t> in_degree(n, 0);
  std::set<Edge> seen;
  const double r2 = radius * radius;
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    const Edge& e = g.edges[k];
    if (e.src >= n || e.dst >= n) throw RangeError("edge " + std::to_string(k) + " index out of range");
    if (e.src == e.dst) throw RangeError("edge " + std::to_string(k) + " is a self-loop");
    if (!seen.insert(e).second) throw RangeError("edge " + std::to_string(k) + " is duplicated");
    if (dist2(g.positions[e.src], g.positions[e.dst]) > r2) {
      throw RangeError("edge " + std::to_string(k) + " is longer than the radius");
    }
    if (++in_degree[e.dst] > max_neighbors) {
      throw RangeError("vertex " + std::to_string(e.dst) + " exceeds the in-degree cap");
    }
  }
  if (g.edge_attrs) {
    if (g.edge_attrs->size() != g.edges.size()) throw RangeError("edge attribute count mismatch");
    for (const auto& a : *g.edge_attrs) {
      for (float c : a) {
        if (!(c >= 0.0f && c <= 1.0f)) throw RangeError("edge attribute outside [0, 1]");
      }
    }
  }
}

std::vector<double> normalize_time(std::span<const std::uint64_t> timestamps, TimeMode mode) {
  if (timestamps.empty()) throw ConfigError("normalize_time: empty input");
  const auto [lo_it, hi_it] = std::minmax_element(timestamps.begin(), timestamps.end());
  const double lo = static_cast<double>(*lo_it);
  const double span = static_cast<double>(*hi_it) - lo;
  std::vector<double> out;
  out.reserve(timestamps.size());
  for (std::uint64_t t : timestamps) {
    const double shifted = static_cast<double>(t) - lo;
    if (mode == TimeMode::raw_microseconds) {
      out.push_back(shifted);
    } else {
      out.push_back(span > 0 ? 100.0 * shifted / span : 0.0);
    }
  }
  return out;
}

std::vector<Edge> radius_neighbors(std::span<const Point3> positions, double radius,
                                   std::size_t max_neighbors) {
  if (!(radius > 0)) throw ConfigError("radius must be positive");
  if (max_neighbors < 1) throw ConfigError("max_neighbors must be at least 1");
  const std::size_t n = positions.size();
  std::vector<Edge> edges;
  if (n < 2) return edges;

  Point3 origin = positions[0];
  for (const auto& p : positions) {
    for (int a = 0; a < 3; ++a) origin[a] = std::min(origin[a], p[a]);
  }
  auto cell_of = [&](const Point3& p) {
    return CellKey{static_cast<std::int64_t>(std::floor((double(p[0]) - origin[0]) / radius)),
                   static_cast<std::int64_t>(std::floor((double(p[1]) - origin[1]) / radius)),
                   static_cast<std::int64_t>(std::floor((double(p[2]) - origin[2]) / radius))};
  };

  std::unordered_map<CellKey, std::vector<std::uint32_t>, CellHash> cells;
  cells.reserve(n);
  std::vector<CellKey> key_of(n);
  for (std::size_t i = 0; i < n; ++i) {
    key_of[i] = cell_of(positions[i]);
    cells[key_of[i]].push_back(static_cast<std::uint32_t>(i));
  }

  const double r2 = radius * radius;
  std::vector<std::pair<double, std::uint32_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    const CellKey c = key_of[i];
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = cells.find(CellKey{c.x + dx, c.y + dy, c.z + dz});
          if (it == cells.end()) continue;
          for (std::uint32_t j : it->second) {
            if (j == i) continue;
            const double d2 = dist2(positions[j], positions[i]);
            if (d2 <= r2) cand.emplace_back(d2, j);
          }
        }
      }
    }
    if (cand.size() > max_neighbors) {
      std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(max_neighbors),
                       cand.end());
      cand.resize(max_neighbors);
    }
    std::sort(cand.begin(), cand.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    for (const auto& [d2, j] : cand) edges.push_back(Edge{j, static_cast<std::uint32_t>(i)});
  }
  return edges;
}

std::vector<Edge> brute_force_neighbors(std::span<const Point3> positions, double radius) {
  std::vector<Edge> edges;
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    for (std::size_t j = 0; j < positions.size(); ++j) {
      if (i != j && dist2(positions[j], positions[i]) <= r2) {
        edges.push_back(Edge{static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(i)});
      }
    }
  }
  return edges;
}

std::vector<Point3> compute_edge_attrs(std::span<const Point3> positions,
                                       std::span<const Edge> edges) {
  std::vector<Point3> attrs;
  if (edges.empty()) return attrs;
  double m = 0.0;
  for (const Edge& e : edges) {
    for (int a = 0; a < 3; ++a) {
      m = std::max(m, std::abs(double(positions[e.src][a]) - double(positions[e.dst][a])));
    }
  }
  attrs.reserve(edges.size());
  for (const Edge& e : edges) {
    Point3 out;
    for (int a = 0; a < 3; ++a) {
      const double d = double(positions[e.src][a]) - double(positions[e.dst][a]);
      const double v = m > 0 ? d / (2.0 * m) + 0.5 : 0.5;
      out[a] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    attrs.push_back(out);
  }
  return attrs;
}

std::vector<Point3> compute_edge_attrs(const EventGraph& graph) {
  return compute_edge_attrs(graph.positions, graph.edges);
}

EventGraph build_graph(const EventStream& stream, const GraphParams& params) {
  params.validate();
  EventGraph g;
  g.width = stream.width;
  g.height = stream.height;
  if (stream.empty()) {
    g.empty_input = true;
    if (params.with_edge_attrs) g.edge_attrs.emplace();
    return g;
  }
  const EventStream window = densest_window_select(stream, params.max_events);
  std::vector<std::uint64_t> ts;
  ts.reserve(window.size());
  for (const Event& e : window.events) ts.push_back(e.t);
  const std::vector<double> t_hat = normalize_time(ts, params.time_mode);

  g.positions.reserve(window.size());
  g.features.reserve(window.size());
  for (std::size_t i = 0; i < window.size(); ++i) {
    const Event& e = window.events[i];
    g.positions.push_back(Point3{float(e.x), float(e.y), static_cast<float>(t_hat[i])});
    g.features.push_back(e.p ? 1.0f : -1.0f);
  }
  g.edges = radius_neighbors(g.positions, params.radius, params.max_neighbors);
  if (params.with_edge_attrs) g.edge_attrs = compute_edge_attrs(g);
  return g;
}

// ------------------------------------------------------------------ memory accounting

MemoryProfile MemoryProfile::attr64() { return MemoryProfile{4, 4, 8, 8, true}; }
MemoryProfile MemoryProfile::lean32() { return MemoryProfile{4, 4, 4, 4, false}; }

MemoryProfile MemoryProfile::named(std::string_view name) {
  if (name == "attr64") return attr64();
  if (name == "lean32") return lean32();
  throw ConfigError("unknown memory profile '" + std::string(name) + "' (expected attr64 or lean32)");
}

void MemoryProfile::validate() const {
  if (vertex_feature_bytes < 1 || position_component_bytes < 1 || edge_index_bytes < 1 ||
      attr_component_bytes < 1) {
    throw ConfigError("memory profile widths must be at least 1 byte");
  }
}

GraphSizeReport account_memory(std::uint64_t n_vertices, std::uint64_t n_edges,
                               const MemoryProfile& profile) {
  profile.validate();
  GraphSizeReport r;
  r.n_vertices = n_vertices;
  r.n_edges = n_edges;
  r.vertex_bytes = n_vertices * (profile.vertex_feature_bytes + 3 * profile.position_component_bytes);
  r.edge_bytes = n_edges * (2 * profile.edge_index_bytes +
                            (profile.include_attrs ? 3 * profile.attr_component_bytes : 0));
  r.total_bytes = r.vertex_bytes + r.edge_bytes;
  r.total_mb = static_cast<double>(r.total_bytes) / 1e6;
  return r;
}

CorpusProfile profile_corpus(std::span<const GraphCounts> graphs,
                             std::span<const NamedProfile> profiles) {
  CorpusProfile out;
  out.n_graphs = graphs.size();
  double sum_v = 0.0, sum_e = 0.0;
  for (const auto& g : graphs) {
    sum_v += static_cast<double>(g.n_vertices);
    sum_e += static_cast<double>(g.n_edges);
  }
  const double n = graphs.empty() ? 1.0 : static_cast<double>(graphs.size());
  out.mean_vertices = sum_v / n;
  out.mean_edges = sum_e / n;
  for (const auto& p : profiles) {
    double bytes = 0.0;
    for (const auto& g : graphs) {
      bytes += static_cast<double>(account_memory(g.n_vertices, g.n_edges, p.profile).total_bytes);
    }
    out.profiles.push_back({p.name, bytes / n, bytes / n / 1e6});
  }
  if (out.profiles.size() >= 2 && out.profiles[1].mean_bytes > 0.0) {
    out.ratio = out.profiles[0].mean_bytes / out.profiles[1].mean_bytes;
  }
  return out;
}

std::uint64_t dense_frame_bytes(int width, int height, int channels) {
  if (width < 1 || height < 1 || channels < 1) throw ConfigError("frame dimensions must be positive");
  return std::uint64_t(width) * std::uint64_t(height) * std::uint64_t(channels);
}

// ------------------------------------------------------------------ graph cache

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f32(float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    u32(v);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
  void need(std::size_t n) const {
    if (buf.size() - pos < n) throw FormatError("graph cache is truncated");
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= std::uint32_t{buf[pos++]} << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= std::uint64_t{buf[pos++]} << (8 * k);
    return v;
  }
  float f32() {
    const std::uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_graph(const EventGraph& g) {
  if (g.features.size() != g.positions.size()) throw ShapeError("graph features/positions mismatch");
  if (g.edge_attrs && g.edge_attrs->size() != g.edges.size()) {
    throw ShapeError("graph edge attribute count mismatch");
  }
  Writer w;
  w.bytes("EVGR", 4);
  w.u32(kGraphCacheVersion);
  w.u64(g.num_vertices());
  w.u64(g.num_edges());
  w.u8(g.edge_attrs ? 1 : 0);
  for (const auto& p : g.positions) {
    for (float c : p) w.f32(c);
  }
  for (float f : g.features) w.f32(f);
  for (const Edge& e : g.edges) {
    w.u32(e.src);
    w.u32(e.dst);
  }
  if (g.edge_attrs) {
    for (const auto& a : *g.edge_attrs) {
      for (float c : a) w.f32(c);
    }
  }
  w.u32(static_cast<std::uint32_t>(g.width));
  w.u32(static_cast<std::uint32_t>(g.height));
  return std::move(w.out);
}

EventGraph deserialize_graph(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), "EVGR", 4) != 0) throw FormatError("graph cache has bad magic");
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != kGraphCacheVersion) {
    throw FormatError("unsupported graph cache version " + std::to_string(version));
  }
  const std::uint64_t n = r.u64();
  const std::uint64_t e = r.u64();
  const std::uint8_t flags = r.u8();
  if (flags & ~std::uint8_t{1}) throw FormatError("graph cache has unknown flag bits");
  const bool has_attrs = flags & 1;
  // Check the declared sizes against the buffer before allocating anything.
  const std::uint64_t body = n * 16 + e * 8 + (has_attrs ? e * 12 : 0) + 8;
  if (n > bytes.size() || e > bytes.size() || bytes.size() - r.pos != body) {
    throw FormatError(bytes.size() - r.pos < body ? "graph cache is truncated"
                                                  : "graph cache has trailing bytes");
  }
  EventGraph g;
  g.positions.resize(n);
  for (auto& p : g.positions) {
    for (float& c : p) c = r.f32();
  }
  g.features.resize(n);
  for (float& f : g.features) f = r.f32();
  g.edges.resize(e);
  for (Edge& ed : g.edges) {
    ed.src = r.u32();
    ed.dst = r.u32();
    if (ed.src >= n || ed.dst >= n) throw FormatError("graph cache edge index out of range");
  }
  if (has_attrs) {
    g.edge_attrs.emplace(e);
    for (auto& a : *g.edge_attrs) {
      for (float& c : a) c = r.f32();
    }
  }
  g.width = static_cast<int>(r.u32());
  g.height = static_cast<int>(r.u32());
  return g;
}

void save_graph(const EventGraph& graph, const std::filesystem::path& path) {
  const auto bytes = serialize_graph(graph);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write graph cache " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

EventGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open graph cache " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_graph(bytes);
}

}  // namespace evg
