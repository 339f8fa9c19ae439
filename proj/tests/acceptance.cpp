// Acceptance driver: one PASS / FAIL / SKIP line per criterion, exit 1 on any FAIL.
// Set EVGRAPH_NCALTECH to a dataset directory (or manifest) to run criterion 14.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "evgraph/engine.hpp"
#include "evgraph/error.hpp"
#include "evgraph/gconv.hpp"
#include "evgraph/graph.hpp"
#include "evgraph/models.hpp"
#include "gradient_suite.hpp"
#include "support.hpp"

using namespace evg;
namespace fs = std::filesystem;
using gconv::ConvKind;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict = Verdict::fail;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) {
  return {ok ? Verdict::pass : Verdict::fail, std::move(detail)};
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("evgraph_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ------------------------------------------------------------------ 1-5: counting

Outcome memory_accounting() {
  const auto a = account_memory(24'457, 381'563, MemoryProfile::attr64());
  const auto l = account_memory(24'457, 381'563, MemoryProfile::lean32());
  const auto ar = account_memory(24'457, 756'744, MemoryProfile::attr64());
  const auto lr = account_memory(24'457, 756'744, MemoryProfile::lean32());
  const double ratio = static_cast<double>(a.total_bytes) / static_cast<double>(l.total_bytes);
  const bool ok = a.total_bytes == 15'653'832 && l.total_bytes == 3'443'816 &&
                  ar.total_bytes == 30'661'072 && lr.total_bytes == 6'445'264 && ratio >= 4.5;
  return pass_if(ok, fmt("norm100 %.2f / %.2f MB, raw %.2f / %.2f MB, ratio %.3f", a.total_mb,
                         l.total_mb, ar.total_mb, lr.total_mb, ratio));
}

Outcome dense_baseline() {
  const auto one = dense_frame_bytes(240, 180, 1), three = dense_frame_bytes(240, 180, 3);
  return pass_if(one == 43'200 && three == 129'600,
                 fmt("%.4f MB and %.4f MB", one / 1e6, three / 1e6));
}

std::size_t extractor(ConvKind kind) {
  return models::count_parameters(models::build_classifier(kind, 100)).feature_extraction;
}

Outcome head_count() {
  const auto t = models::count_parameters(models::build_classifier(ConvKind::pointnet, 100));
  return pass_if(t.fully_connected == 204'900, fmt("fully connected %zu", t.fully_connected));
}

Outcome parameter_ratios() {
  const double pn = extractor(ConvKind::pointnet), gcn = extractor(ConvKind::gcn);
  const double edge = extractor(ConvKind::edge), sage = extractor(ConvKind::sage);
  const double spline = extractor(ConvKind::spline);
  const double r1 = spline / pn, r2 = edge / gcn;
  return pass_if(r1 >= 100.0 && r2 >= 1.9 && r2 <= 2.1 && sage == edge,
                 fmt("spline/pointnet %.1f, edge/gcn %.3f, sage %.0f = edge %.0f", r1, r2, sage,
                     edge));
}

Outcome detector_size() {
  const auto t = models::count_parameters(models::build_detector(100));
  return pass_if(t.feature_extraction < 100'000,
                 fmt("extractor %zu parameters", t.feature_extraction));
}

// ------------------------------------------------------------------ 6: gradients

Outcome gradient_suite() {
  auto results = testing::kernel_gradient_suite(20);
  auto convs = testing::conv_gradient_suite(20);
  results.insert(results.end(), convs.begin(), convs.end());
  double worst_d = 0.0, worst_s = 0.0;
  std::string failed;
  for (const auto& r : results) {
    worst_d = std::max(worst_d, r.worst_double);
    if (!std::isnan(r.worst_single)) worst_s = std::max(worst_s, r.worst_single);
    if (!r.passed() || r.instances < 20) failed += " " + r.name;
  }
  return pass_if(failed.empty(), fmt("%zu operators, worst %.2e (double) / %.2e (single)",
                                     results.size(), worst_d, worst_s) +
                                     (failed.empty() ? "" : "; failing:" + failed));
}

// ------------------------------------------------------------------ 7: neighbor oracle

double dist2(const Point3& a, const Point3& b) {
  double s = 0;
  for (int k = 0; k < 3; ++k) {
    const double d = static_cast<double>(a[k]) - b[k];
    s += d * d;
  }
  return s;
}

std::vector<Edge> capped_oracle(const std::vector<Point3>& p, double r, std::size_t k) {
  std::vector<std::vector<std::uint32_t>> by_dst(p.size());
  for (const Edge& e : brute_force_neighbors(p, r)) by_dst[e.dst].push_back(e.src);
  std::vector<Edge> out;
  for (std::uint32_t dst = 0; dst < p.size(); ++dst) {
    auto& srcs = by_dst[dst];
    std::sort(srcs.begin(), srcs.end(), [&](std::uint32_t a, std::uint32_t b) {
      const double da = dist2(p[a], p[dst]), db = dist2(p[b], p[dst]);
      return da != db ? da < db : a < b;
    });
    for (std::size_t i = 0; i < std::min(k, srcs.size()); ++i) out.push_back({srcs[i], dst});
  }
  std::sort(out.begin(), out.end());
  return out;
}

Outcome neighbor_oracle() {
  std::mt19937_64 rng(7);
  const double radii[] = {1, 5, 20};
  const std::size_t caps[] = {1, 4, 32};
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 500;
    std::uniform_real_distribution<float> u(0.0f, 10.0f + static_cast<float>(rng() % 90));
    std::vector<Point3> p(n);
    for (auto& q : p) q = {u(rng), u(rng), u(rng)};
    const double r = radii[trial % 3];
    const std::size_t k = caps[(trial / 3) % 3];
    auto got = radius_neighbors(p, r, k);
    std::sort(got.begin(), got.end());
    if (got != capped_oracle(p, r, k)) ++mismatches;
  }
  return pass_if(mismatches == 0, fmt("100 instances, %d mismatches", mismatches));
}

// ------------------------------------------------------------------ 8: invariances

nd::Mat run_conv(const gconv::ConvLayer& layer, nd::ParameterSet& ps, const EventGraph& g,
                 const nd::Mat& x) {
  nd::Tape t;
  return t.value(gconv::conv_forward(t, gconv::GraphBatch::from_graph(g), t.constant(x), layer, ps));
}

Outcome invariance_suite() {
  std::mt19937_64 rng(8);
  double equiv = 0, logits = 0, translation = 0, unity = 0, isolated = 0;
  for (ConvKind kind : gconv::kAllConvKinds) {
    nd::ParameterSet ps;
    const auto layer = gconv::ConvLayer::create(kind, 2, 3, "c", ps, rng, 5);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t n = 2 + rng() % 19;
      const auto g = testing::random_graph(n, rng() % (3 * n), rng);
      const auto perm = testing::random_permutation(n, rng);
      const auto pg = testing::permute_graph(g, perm);
      const nd::Mat x = testing::random_mat(n, 2, rng);
      nd::Mat px(n, 2);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 2; ++c) px(perm[i], c) = x(i, c);
      const auto out = run_conv(layer, ps, g, x), pout = run_conv(layer, ps, pg, px);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c)
          equiv = std::max(equiv, std::abs(out(i, c) - pout(perm[i], c)));
    }
    // A vertex without in-edges must produce what it would produce alone.
    auto g = testing::random_graph(12, 30, rng);
    std::erase_if(g.edges, [](const Edge& e) { return e.dst == 0; });
    g.edge_attrs = compute_edge_attrs(g);
    const nd::Mat x = testing::random_mat(12, 2, rng);
    EventGraph alone;
    alone.positions = {g.positions[0]};
    alone.features = {g.features[0]};
    alone.edge_attrs = std::vector<Point3>{};
    const auto full = run_conv(layer, ps, g, x);
    const auto solo = run_conv(layer, ps, alone, nd::slice_rows(x, 0, 1));
    for (std::size_t c = 0; c < 3; ++c) {
      isolated = std::max(isolated, std::abs(full(0, c) - solo(0, c)));
      if (kind == ConvKind::edge || kind == ConvKind::pointnet)
        isolated = std::max(isolated, std::abs(full(0, c)));
    }
  }
  for (ConvKind kind : gconv::kAllConvKinds) {
    auto m = models::build_classifier(kind, 5, 1, 3);
    for (int trial = 0; trial < 3; ++trial) {
      auto g = testing::random_graph(80, 320, rng, 64);
      g.width = 64;
      g.height = 64;
      g.edge_attrs = compute_edge_attrs(g);
      const auto pg = testing::permute_graph(g, testing::random_permutation(80, rng));
      const EventGraph* a[] = {&g};
      const EventGraph* b[] = {&pg};
      logits = std::max(logits,
                        testing::max_abs_diff(models::predict(m, a), models::predict(m, b)));
    }
  }
  {
    // Grid-aligned positions and integer shifts keep float storage exact, so
    // the check measures the operator rather than position rounding.
    nd::ParameterSet ps;
    const auto layer = gconv::ConvLayer::create(ConvKind::pointnet, 1, 4, "p", ps, rng, 5);
    for (int trial = 0; trial < 10; ++trial) {
      auto g = testing::random_graph(15, 40, rng);
      for (auto& p : g.positions)
        for (auto& v : p) v = std::round(v * 16.0f) / 16.0f;
      auto moved = g;
      for (auto& p : moved.positions) p = {p[0] + 7.0f, p[1] - 3.0f, p[2] + 11.0f};
      const nd::Mat x = testing::random_mat(15, 1, rng);
      translation = std::max(translation, testing::max_abs_diff(run_conv(layer, ps, g, x),
                                                                run_conv(layer, ps, moved, x)));
    }
  }
  for (int k : {2, 3, 5}) {
    const auto b = gconv::spline_basis(testing::random_mat(500, 3, rng, 0, 1), k);
    for (const auto& ws : b.weights) {
      double s = 0;
      for (double v : ws) s += v;
      unity = std::max(unity, std::abs(s - 1.0));
    }
  }
  const double worst = std::max({equiv, logits, translation, unity, isolated});
  return pass_if(worst <= 1e-6,
                 fmt("equivariance %.1e, logits %.1e, translation %.1e, unity %.1e, isolated %.1e",
                     equiv, logits, translation, unity, isolated));
}

// ------------------------------------------------------------------ 9: time scale

Outcome time_scale() {
  GraphParams norm;
  norm.max_events = 1500;
  GraphParams raw = norm;
  raw.time_mode = TimeMode::raw_microseconds;
  bool monotone = true;
  double edges_norm = 0, edges_raw = 0;
  for (int i = 0; i < 20; ++i) {
    const auto stream = simulate_dvs(class_scene(i % 5, 128, 96, 100 + i), 128, 96, 100 + i);
    const auto g = build_graph(stream, norm);
    edges_norm += static_cast<double>(g.num_edges());
    edges_raw += static_cast<double>(build_graph(stream, raw).num_edges());
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (double s : {1.0, 2.0, 10.0, 1000.0}) {
      auto p = g.positions;
      for (auto& q : p) q[2] = static_cast<float>(q[2] * s);
      const std::size_t n = brute_force_neighbors(p, norm.radius).size();
      monotone = monotone && n <= prev;
      prev = n;
    }
  }
  return pass_if(monotone, fmt("20 streams monotone; mean edges norm100 %.0f, raw %.0f",
                               edges_norm / 20, edges_raw / 20));
}

// ------------------------------------------------------------------ 10-11: training smoke

engine::Dataset smoke_dataset(const std::string& name, std::uint64_t seed,
                              std::size_t max_events) {
  const auto dir = scratch(name);
  const auto manifest = synth_dataset(5, 50, 128, 96, dir, seed);
  GraphParams gp;
  gp.max_events = max_events;
  return engine::load_dataset(manifest, gp, std::nullopt, 1);
}

std::pair<engine::Dataset, engine::Dataset> split(const engine::Dataset& data, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& s : data) labels.push_back(s.label);
  const auto idx = engine::stratified_split(labels, 0.8, seed);
  engine::Dataset train, test;
  for (auto i : idx.train) train.push_back(data[i]);
  for (auto i : idx.test) test.push_back(data[i]);
  return {train, test};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome classification_smoke() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = smoke_dataset("cls", 1, 2000);
  const auto [train, test] = split(data, 1);
  auto cfg = engine::TrainConfig::classification_defaults();
  cfg.epochs = 50;
  cfg.seed = 1;
  cfg.threads = 1;
  auto model = models::build_classifier(ConvKind::pointnet, 5, 1, cfg.seed);
  const auto h = engine::train(model, train, test, cfg);
  const double secs = seconds_since(t0);

  // Two samples of different classes, no decay.
  const engine::Dataset pair = {train.front(), train.back()};
  auto small = models::build_classifier(ConvKind::pointnet, 5, 1, 2);
  auto ocfg = cfg;
  ocfg.epochs = 150;
  ocfg.batch_size = 2;
  ocfg.weight_decay = 0.0;
  const auto oh = engine::train(small, pair, {}, ocfg);
  const double overfit = oh.records.back().loss;

  const bool ok = train.size() == 200 && test.size() == 50 && h.best_metric >= 0.8 &&
                  overfit < 0.05 && secs < 600;
  return pass_if(ok, fmt("%zu/%zu split, best test accuracy %.3f at epoch %zu, 2-sample loss "
                         "%.4f, %.0f s",
                         train.size(), test.size(), h.best_metric, h.best_epoch, overfit, secs));
}

Outcome detection_smoke() {
  const BoundingBox box{0.5, 0.5, 0.2, 0.2}, far{0.1, 0.1, 0.05, 0.05};
  const std::vector<engine::GroundTruth> truth = {{0, box}, {0, box}, {1, box}, {1, box}};
  std::vector<engine::Prediction> perfect;
  for (const auto& g : truth) perfect.push_back({g.class_id, 0.9, g.bbox});
  const std::vector<engine::GroundTruth> one_class = {{0, box}, {0, box}};
  const std::vector<engine::Prediction> half = {{0, 0.9, box}, {0, 0.4, far}};
  const double map_perfect = engine::mean_average_precision(perfect, truth);
  const double map_half = engine::mean_average_precision(half, one_class);

  const auto t0 = std::chrono::steady_clock::now();
  const auto data = smoke_dataset("det", 1, 2000);
  const auto [train, test] = split(data, 1);
  auto cfg = engine::TrainConfig::detection_defaults();
  cfg.epochs = 100;
  cfg.weight_decay = 3e-2;
  cfg.seed = 1;
  cfg.threads = 1;
  auto model = models::build_detector(5, cfg.seed);
  const auto h = engine::train(model, train, test, cfg);
  const double secs = seconds_since(t0);
  const bool ok = map_perfect == 1.0 && map_half == 0.5 && h.best_metric >= 0.5 && secs < 1200;
  return pass_if(ok, fmt("unit cases %.2f / %.2f, best test mAP@0.5 %.3f at epoch %zu, %.0f s",
                         map_perfect, map_half, h.best_metric, h.best_epoch, secs));
}

// ------------------------------------------------------------------ 12: throughput

Outcome throughput() {
  auto model = models::build_classifier(ConvKind::pointnet, 5);
  std::mt19937_64 rng(12);
  std::vector<EventGraph> graphs;
  for (int i = 0; i < 4; ++i) {
    auto g = testing::random_graph(200, 1200, rng, 128);
    g.width = 128;
    g.height = 128;
    graphs.push_back(std::move(g));
  }
  double now = 0;
  std::size_t ticks = 0;
  engine::BenchOptions mock;
  mock.warmup = 3;
  mock.clock = [&] {
    ++ticks;
    const double t = now;
    now += 10.0;
    return t;
  };
  const auto m = engine::bench_throughput(model, graphs, mock);
  engine::BenchOptions real;
  real.warmup = 2;
  const auto r = engine::bench_throughput(model, graphs, real);
  const bool ok = m.mean_ms == 10.0 && m.graphs_per_second == 100.0 && ticks == 2 * m.samples &&
                  r.graphs_per_second > 0.0 && !r.hardware_note.empty();
  return pass_if(ok, fmt("mock %.1f ms -> %.1f GPS; measured %.1f GPS on %s", m.mean_ms,
                         m.graphs_per_second, r.graphs_per_second, r.hardware_note.c_str()));
}

// ------------------------------------------------------------------ 13: round trips

Outcome round_trips() {
  std::mt19937_64 rng(13);
  int codec_bad = 0, cache_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    EventStream s;
    s.width = 240;
    s.height = 180;
    const std::size_t n = rng() % 64;
    std::uniform_int_distribution<std::uint64_t> ut(0, kMaxBinTimestamp);
    for (std::size_t i = 0; i < n; ++i) {
      s.events.push_back({static_cast<std::uint16_t>(rng() % 240),
                          static_cast<std::uint16_t>(rng() % 180), ut(rng),
                          static_cast<std::uint8_t>(rng() & 1)});
    }
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    const auto bytes = encode_bin(s);
    if (decode_bin(bytes, 240, 180).events != s.events || encode_bin(decode_bin(bytes, 240, 180)) != bytes)
      ++codec_bad;

    auto g = testing::random_graph(rng() % 40, rng() % 80, rng, 16 + static_cast<int>(rng() % 200));
    if (trial % 2) g.edge_attrs.reset();
    if (!(deserialize_graph(serialize_graph(g)) == g)) ++cache_bad;
  }
  return pass_if(codec_bad == 0 && cache_bad == 0,
                 fmt("1000 event streams (%d differ), 1000 graphs (%d differ)", codec_bad,
                     cache_bad));
}

// ------------------------------------------------------------------ 14: full dataset

Outcome full_dataset() {
  const char* root = std::getenv("EVGRAPH_NCALTECH");
  if (root == nullptr || !fs::exists(root)) {
    return {Verdict::skip, "EVGRAPH_NCALTECH not set or missing; full-dataset statistics not run"};
  }
  const auto manifest = load_manifest(fs::is_directory(root) ? fs::path(root) / "manifest.json"
                                                             : fs::path(root));
  GraphParams gp;  // max_events 25,000, norm100
  double events = 0, edges = 0;
  for (const auto& s : manifest.samples) {
    const auto stream = read_bin_file(manifest.resolve(s), s.width, s.height);
    events += static_cast<double>(std::min(stream.size(), gp.max_events));
    edges += static_cast<double>(build_graph(stream, gp).num_edges());
  }
  const double n = static_cast<double>(manifest.samples.size());
  events /= n;
  edges /= n;
  const bool ok = std::abs(events / 24'457 - 1) <= 0.1 && std::abs(edges / 381'563 - 1) <= 0.1;
  return pass_if(ok, fmt("%.0f samples: mean events %.0f, mean edges %.0f; accuracy runs go "
                         "through `evgraph train`",
                         n, events, edges));
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"memory accounting", memory_accounting},
      {"dense-frame baseline", dense_baseline},
      {"classifier head parameters", head_count},
      {"extractor parameter ratios", parameter_ratios},
      {"detector size", detector_size},
      {"gradient suite", gradient_suite},
      {"neighbor-search oracle", neighbor_oracle},
      {"invariance suite", invariance_suite},
      {"time-scale monotonicity", time_scale},
      {"classification smoke", classification_smoke},
      {"detection smoke", detection_smoke},
      {"throughput harness", throughput},
      {"round trips", round_trips},
      {"full-dataset statistics", full_dataset},
  };
  int failures = 0;
  int id = 0;
  for (const auto& [name, check] : criteria) {
    ++id;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {Verdict::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::skip ? "SKIP" : "FAIL";
    failures += o.verdict == Verdict::fail;
    std::cout << tag << "  " << id << "  " << name << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
