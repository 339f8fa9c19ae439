#include "evgraph/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "evgraph/error.hpp"
#include "evgraph/models.hpp"

namespace evg::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json opt_path(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

void read_opt_path(const json& j, const char* key, std::optional<fs::path>& dst) {
  if (!j.contains(key)) return;
  if (j[key].is_null()) {
    dst.reset();
  } else {
    dst = j[key].get<std::string>();
  }
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed,
                    const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace

json RunConfig::to_json() const {
  return {{"graph",
           {{"radius", graph.radius},
            {"max_neighbors", graph.max_neighbors},
            {"max_events", graph.max_events},
            {"time_mode", std::string(to_string(graph.time_mode))},
            {"with_edge_attrs", graph.with_edge_attrs}}},
          {"train",
           {{"epochs", train.epochs},
            {"batch_size", train.batch_size},
            {"learning_rate", train.learning_rate},
            {"weight_decay", train.weight_decay},
            {"seed", train.seed},
            {"task", std::string(engine::to_string(train.task))},
            {"parallel_batches", train.parallel_batches},
            {"threads", train.threads},
            {"train_fraction", train_fraction}}},
          {"model", {{"conv", conv}, {"activation", activation}, {"spline_k", spline_k}}},
          {"paths",
           {{"dataset", opt_path(dataset)},
            {"cache", opt_path(cache)},
            {"checkpoint", opt_path(checkpoint)},
            {"report", opt_path(report)},
            {"history", opt_path(history)}}}};
}

void RunConfig::merge(const json& j) {
  try {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    reject_unknown(j, {"graph", "train", "model", "paths"}, "run config");
    if (j.contains("graph")) {
      const json& g = j["graph"];
      reject_unknown(g, {"radius", "max_neighbors", "max_events", "time_mode", "with_edge_attrs"},
                     "graph section");
      graph.radius = g.value("radius", graph.radius);
      graph.max_neighbors = g.value("max_neighbors", graph.max_neighbors);
      graph.max_events = g.value("max_events", graph.max_events);
      if (g.contains("time_mode")) graph.time_mode = parse_time_mode(g["time_mode"].get<std::string>());
      graph.with_edge_attrs = g.value("with_edge_attrs", graph.with_edge_attrs);
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      reject_unknown(t,
                     {"epochs", "batch_size", "learning_rate", "weight_decay", "seed", "task",
                      "parallel_batches", "threads", "train_fraction"},
                     "train section");
      train.epochs = t.value("epochs", train.epochs);
      train.batch_size = t.value("batch_size", train.batch_size);
      train.learning_rate = t.value("learning_rate", train.learning_rate);
      train.weight_decay = t.value("weight_decay", train.weight_decay);
      train.seed = t.value("seed", train.seed);
      if (t.contains("task")) train.task = engine::parse_task(t["task"].get<std::string>());
      train.parallel_batches = t.value("parallel_batches", train.parallel_batches);
      train.threads = t.value("threads", train.threads);
      train_fraction = t.value("train_fraction", train_fraction);
    }
    if (j.contains("model")) {
      const json& m = j["model"];
      reject_unknown(m, {"conv", "activation", "spline_k"}, "model section");
      conv = m.value("conv", conv);
      activation = m.value("activation", activation);
      spline_k = m.value("spline_k", spline_k);
    }
    if (j.contains("paths")) {
      const json& p = j["paths"];
      reject_unknown(p, {"dataset", "cache", "checkpoint", "report", "history"}, "paths section");
      read_opt_path(p, "dataset", dataset);
      read_opt_path(p, "cache", cache);
      read_opt_path(p, "checkpoint", checkpoint);
      read_opt_path(p, "report", report);
      read_opt_path(p, "history", history);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

namespace {

json read_config_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
}

}  // namespace

RunConfig load_run_config(const fs::path& path) {
  RunConfig c;
  c.merge(read_config_json(path));
  return c;
}

fs::path manifest_path(const fs::path& dataset) {
  const fs::path p = fs::is_directory(dataset) ? dataset / "manifest.json" : dataset;
  if (!fs::exists(p)) throw ConfigError("dataset manifest not found: " + p.string());
  return p;
}

namespace {

// Flag values kept unset until the user passes them, so they can override
// config-file values without clobbering them with defaults.
struct Flags {
  std::optional<std::string> config;
  std::optional<double> radius;
  std::optional<std::size_t> max_neighbors, max_events;
  std::optional<std::string> time_mode;
  bool edge_attrs = false;
  std::optional<std::size_t> epochs, batch_size, threads;
  std::optional<double> lr, wd, train_fraction;
  std::optional<std::uint64_t> seed;
  bool parallel_batches = false;
  std::optional<std::string> conv, activation;
  std::optional<int> spline_k;
  std::optional<std::string> dataset, cache, checkpoint, report, history;
};

void add_graph_flags(CLI::App* app, Flags& f) {
  app->add_option("--radius", f.radius, "neighborhood radius R");
  app->add_option("-k,--max-neighbors", f.max_neighbors, "in-degree cap K");
  app->add_option("--max-events", f.max_events, "events kept per sample");
  app->add_option("--time-mode", f.time_mode, "norm100 or raw");
  app->add_flag("--edge-attrs", f.edge_attrs, "store normalized edge attributes");
}

void add_common_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON run config; flags override its values");
  app->add_option("--dataset", f.dataset, "dataset directory or manifest file");
  app->add_option("--cache", f.cache, "graph cache directory");
  app->add_option("--report", f.report, "write the JSON report here");
  app->add_option("--threads", f.threads, "worker threads (default EVGRAPH_THREADS or all cores)");
}

void add_train_flags(CLI::App* app, Flags& f) {
  app->add_option("--epochs", f.epochs);
  app->add_option("--batch-size", f.batch_size);
  app->add_option("--lr", f.lr, "Adam learning rate");
  app->add_option("--wd", f.wd, "weight decay");
  app->add_option("--seed", f.seed, "split, initialization and shuffle seed");
  app->add_option("--train-fraction", f.train_fraction);
  app->add_option("--checkpoint", f.checkpoint, "best-metric model output");
  app->add_option("--history", f.history, "per-epoch CSV output");
  app->add_option("--activation", f.activation, "elu or relu");
  app->add_flag("--parallel-batches", f.parallel_batches,
                "run each batch's graphs on worker threads (not bit-reproducible)");
}

RunConfig assemble(const Flags& f, RunConfig base) {
  if (f.config) base.merge(read_config_json(*f.config));
  if (f.radius) base.graph.radius = *f.radius;
  if (f.max_neighbors) base.graph.max_neighbors = *f.max_neighbors;
  if (f.max_events) base.graph.max_events = *f.max_events;
  if (f.time_mode) base.graph.time_mode = parse_time_mode(*f.time_mode);
  if (f.edge_attrs) base.graph.with_edge_attrs = true;
  if (f.epochs) base.train.epochs = *f.epochs;
  if (f.batch_size) base.train.batch_size = *f.batch_size;
  if (f.lr) base.train.learning_rate = *f.lr;
  if (f.wd) base.train.weight_decay = *f.wd;
  if (f.seed) base.train.seed = *f.seed;
  if (f.threads) base.train.threads = *f.threads;
  if (f.parallel_batches) base.train.parallel_batches = true;
  if (f.train_fraction) base.train_fraction = *f.train_fraction;
  if (f.conv) base.conv = *f.conv;
  if (f.activation) base.activation = *f.activation;
  if (f.spline_k) base.spline_k = *f.spline_k;
  if (f.dataset) base.dataset = *f.dataset;
  if (f.cache) base.cache = *f.cache;
  if (f.checkpoint) base.checkpoint = *f.checkpoint;
  if (f.report) base.report = *f.report;
  if (f.history) base.history = *f.history;
  base.graph.validate();
  base.train.validate();
  return base;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

// Prints the report and, when requested, writes it with the effective config.
void emit_report(std::ostream& out, json report, const RunConfig& cfg) {
  report["config"] = cfg.to_json();
  out << report.dump(2) << '\n';
  if (cfg.report) write_text(*cfg.report, report.dump(2) + "\n");
}

Manifest require_manifest(const RunConfig& cfg) {
  if (!cfg.dataset) throw ConfigError("--dataset is required");
  return load_manifest(manifest_path(*cfg.dataset));
}

std::size_t count_classes(const Manifest& m) {
  int max_id = -1;
  for (const auto& s : m.samples) max_id = std::max(max_id, s.class_id);
  return static_cast<std::size_t>(max_id + 1);
}

json history_json(const engine::History& h) {
  json records = json::array();
  for (const auto& r : h.records) {
    records.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"metric", r.metric},
                       {"seconds", r.seconds}});
  }
  return records;
}

// ------------------------------------------------------------------ commands

void cmd_synth(std::ostream& out, int classes, int per_class, int width, int height,
               const fs::path& dir, std::uint64_t seed) {
  const Manifest m = synth_dataset(classes, per_class, width, height, dir, seed);
  std::map<int, int> per;
  for (const auto& s : m.samples) ++per[s.class_id];
  json counts = json::object();
  for (auto [c, n] : per) counts[std::to_string(c)] = n;
  out << json{{"manifest", (dir / "manifest.json").string()},
              {"samples", m.samples.size()},
              {"per_class", counts},
              {"width", width},
              {"height", height},
              {"seed", seed}}
             .dump(2)
      << '\n';
}

void cmd_ingest(std::ostream& out, const fs::path& dir, int width, int height,
                const std::optional<std::string>& report) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::size_t total = 0, min_n = 0, max_n = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto n = read_bin_file(files[i], width, height).size();
    total += n;
    min_n = i == 0 ? n : std::min(min_n, n);
    max_n = std::max(max_n, n);
  }
  json rep = {{"directory", dir.string()},
              {"files", files.size()},
              {"total_events", total},
              {"mean_events", files.empty() ? 0.0 : double(total) / double(files.size())},
              {"min_events", min_n},
              {"max_events", max_n},
              {"width", width},
              {"height", height}};
  out << rep.dump(2) << '\n';
  if (report) write_text(*report, rep.dump(2) + "\n");
}

void cmd_graph_build(std::ostream& out, const RunConfig& cfg) {
  if (!cfg.cache) throw ConfigError("--cache is required");
  const Manifest m = require_manifest(cfg);
  const auto data = engine::load_dataset(m, cfg.graph, cfg.cache, cfg.train.threads);
  std::vector<GraphCounts> counts;
  json index = json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    counts.push_back({data[i].graph.num_vertices(), data[i].graph.num_edges()});
    index.push_back({{"sample", m.samples[i].path},
                     {"graph", engine::graph_cache_key(cfg.graph, m.samples[i].path) + ".evgr"},
                     {"vertices", data[i].graph.num_vertices()},
                     {"edges", data[i].graph.num_edges()}});
  }
  write_text(*cfg.cache / "index.json", index.dump(2) + "\n");
  const auto prof = profile_corpus(counts, {});
  emit_report(out,
              {{"graphs", data.size()},
               {"mean_vertices", prof.mean_vertices},
               {"mean_edges", prof.mean_edges},
               {"cache", cfg.cache->string()}},
              cfg);
}

void cmd_graph_profile(std::ostream& out, const RunConfig& cfg,
                       const std::vector<std::string>& profile_names,
                       std::optional<std::uint64_t> vertices, std::optional<std::uint64_t> edges) {
  std::vector<NamedProfile> profiles;
  for (const auto& n : profile_names) profiles.push_back({n, MemoryProfile::named(n)});
  if (profiles.empty()) {
    profiles = {{"attr64", MemoryProfile::attr64()}, {"lean32", MemoryProfile::lean32()}};
  }
  std::vector<GraphCounts> counts;
  json source;
  if (vertices || edges) {
    if (!vertices || !edges) throw ConfigError("--vertices and --edges go together");
    counts.push_back({*vertices, *edges});
    source = "explicit counts";
  } else {
    if (!cfg.cache) throw ConfigError("graph profile needs --cache or --vertices/--edges");
    if (!fs::is_directory(*cfg.cache)) throw ConfigError("cache directory not found: " + cfg.cache->string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(*cfg.cache)) {
      if (e.path().extension() == ".evgr") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("no .evgr graphs in " + cfg.cache->string());
    for (const auto& f : files) {
      const auto g = load_graph(f);
      counts.push_back({g.num_vertices(), g.num_edges()});
    }
    source = cfg.cache->string();
  }
  const auto prof = profile_corpus(counts, profiles);
  json totals = json::array();
  for (std::size_t i = 0; i < prof.profiles.size(); ++i) {
    const auto& p = profiles[i].profile;
    totals.push_back({{"profile", prof.profiles[i].name},
                      {"vertex_bytes_each", p.vertex_feature_bytes + 3 * p.position_component_bytes},
                      {"edge_bytes_each",
                       2 * p.edge_index_bytes + (p.include_attrs ? 3 * p.attr_component_bytes : 0)},
                      {"mean_bytes", prof.profiles[i].mean_bytes},
                      {"mean_mb", prof.profiles[i].mean_mb}});
  }
  json rep = {{"source", source},
              {"graphs", prof.n_graphs},
              {"mean_vertices", prof.mean_vertices},
              {"mean_edges", prof.mean_edges},
              {"profiles", totals},
              {"dense_frame_mb",
               {{"240x180x1", double(dense_frame_bytes(240, 180, 1)) / 1e6},
                {"240x180x3", double(dense_frame_bytes(240, 180, 3)) / 1e6}}}};
  rep["ratio"] = prof.ratio ? json(*prof.ratio) : json(nullptr);
  emit_report(out, rep, cfg);
}

void cmd_train(std::ostream& out, RunConfig cfg, engine::Task task) {
  cfg.train.task = task;
  const Manifest all = require_manifest(cfg);
  const std::size_t n_classes = count_classes(all);
  auto [train_m, test_m] = engine::stratified_split(all, cfg.train_fraction, cfg.train.seed);
  const auto train_set = engine::load_dataset(train_m, cfg.graph, cfg.cache, cfg.train.threads);
  const auto test_set = engine::load_dataset(test_m, cfg.graph, cfg.cache, cfg.train.threads);

  const auto act = nd::parse_activation(cfg.activation);
  models::Model model =
      task == engine::Task::classification
          ? models::build_classifier(gconv::parse_conv_kind(cfg.conv), n_classes, 1,
                                     cfg.train.seed, act, cfg.spline_k)
          : models::build_detector(n_classes, cfg.train.seed, act);

  // Create the output directory now so a bad path fails before training.
  if (cfg.checkpoint && cfg.checkpoint->has_parent_path())
    fs::create_directories(cfg.checkpoint->parent_path());
  engine::TrainConfig tc = cfg.train;
  tc.checkpoint = cfg.checkpoint;
  tc.checkpoint_extra = {{"run_config", cfg.to_json()}};
  const auto history = engine::train(model, train_set, test_set, tc, [&](const auto& r) {
    out << "epoch " << r.epoch << '/' << tc.epochs << "  loss " << std::fixed
        << std::setprecision(4) << r.loss << "  "
        << (task == engine::Task::classification ? "acc " : "mAP@0.5 ") << r.metric << "  ("
        << std::setprecision(1) << r.seconds << " s)\n"
        << std::defaultfloat << std::flush;
  });
  if (cfg.history) write_text(*cfg.history, history.to_csv());
  emit_report(out,
              {{"task", std::string(engine::to_string(task))},
               {"model", model.metadata()},
               {"train_samples", train_set.size()},
               {"test_samples", test_set.size()},
               {"best_epoch", history.best_epoch},
               {"best_metric", history.best_metric},
               {"final_loss", history.records.back().loss},
               {"history", history_json(history)}},
              cfg);
}

// Graph and split settings stored in a checkpoint become the base config so
// evaluation rebuilds the same graphs and held-out split.
RunConfig base_from_checkpoint(const std::optional<std::string>& checkpoint) {
  RunConfig base;
  if (!checkpoint) return base;
  json header;
  (void)models::load_model(*checkpoint, &header);
  if (header.contains("run_config")) {
    json stored = header["run_config"];
    stored.erase("paths");
    base.merge(stored);
  }
  base.checkpoint = *checkpoint;
  return base;
}

void cmd_eval(std::ostream& out, const RunConfig& cfg, const std::string& split) {
  if (!cfg.checkpoint) throw ConfigError("--checkpoint is required");
  json header;
  models::Model model = models::load_model(*cfg.checkpoint, &header);
  const Manifest all = require_manifest(cfg);
  Manifest subset = all;
  if (split != "all") {
    auto [tr, te] = engine::stratified_split(all, cfg.train_fraction, cfg.train.seed);
    subset = split == "train" ? tr : te;
  }
  const auto data = engine::load_dataset(subset, cfg.graph, cfg.cache, cfg.train.threads);
  json rep = {{"checkpoint", cfg.checkpoint->string()},
              {"split", split},
              {"samples", data.size()},
              {"model", model.metadata()}};
  if (model.kind == models::ModelKind::detector) {
    rep["map50"] = engine::eval_map50(model, data);
    rep["accuracy"] = engine::eval_accuracy(model, data);
  } else {
    rep["accuracy"] = engine::eval_accuracy(model, data);
  }
  emit_report(out, rep, cfg);
}

void cmd_bench(std::ostream& out, const RunConfig& cfg, const std::string& model_kind,
               std::size_t classes, std::size_t warmup, std::size_t reps,
               std::optional<std::size_t> limit) {
  models::Model model;
  if (cfg.checkpoint) {
    model = models::load_model(*cfg.checkpoint);
  } else if (models::parse_model_kind(model_kind) == models::ModelKind::detector) {
    model = models::build_detector(classes, cfg.train.seed);
  } else {
    model = models::build_classifier(gconv::parse_conv_kind(cfg.conv), classes, 1, cfg.train.seed,
                                     nd::parse_activation(cfg.activation), cfg.spline_k);
  }
  Manifest m = require_manifest(cfg);
  if (limit && *limit < m.samples.size()) m.samples.resize(*limit);
  GraphParams gp = cfg.graph;
  if (model.conv_kind == gconv::ConvKind::spline) gp.with_edge_attrs = true;
  const auto data = engine::load_dataset(m, gp, cfg.cache, cfg.train.threads);
  std::vector<EventGraph> graphs;
  for (const auto& s : data) graphs.push_back(s.graph);
  engine::BenchOptions opt;
  opt.warmup = warmup;
  opt.reps_per_graph = reps;
  const auto rep = engine::bench_throughput(model, graphs, opt);
  json j = rep.to_json();
  j["model"] = model.metadata();
  emit_report(out, j, cfg);
}

void cmd_params(std::ostream& out, const std::string& model_kind, const std::string& conv,
                std::size_t classes, int spline_k) {
  const models::Model model =
      models::parse_model_kind(model_kind) == models::ModelKind::detector
          ? models::build_detector(classes)
          : models::build_classifier(gconv::parse_conv_kind(conv), classes, 1, 0,
                                     nd::Activation::elu, spline_k);
  const auto table = models::count_parameters(model);
  out << "layer,count\n";
  for (const auto& r : table.rows) out << r.layer << ',' << r.count << '\n';
  out << "total," << table.total << '\n';
  out << "feature_extraction," << table.feature_extraction << '\n';
  out << "fully_connected," << table.fully_connected << '\n';
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Event-camera graph toolkit: synthetic data, graph building, memory profiling, "
               "training, evaluation and benchmarks.",
               "evgraph"};
  app.require_subcommand(1);
  Flags f;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic event dataset");
  int classes = 5, per_class = 40, width = 128, height = 96;
  std::uint64_t synth_seed = 0;
  std::string out_dir;
  synth->add_option("--classes", classes)->capture_default_str();
  synth->add_option("--per-class", per_class)->capture_default_str();
  synth->add_option("--width", width)->capture_default_str();
  synth->add_option("--height", height)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--out", out_dir, "output directory")->required();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "decode and summarize a directory of .bin files");
  std::string ingest_dir;
  int in_w = 240, in_h = 180;
  std::optional<std::string> ingest_report;
  ingest->add_option("--dir", ingest_dir)->required();
  ingest->add_option("--width", in_w)->capture_default_str();
  ingest->add_option("--height", in_h)->capture_default_str();
  ingest->add_option("--report", ingest_report);

  // graph build / profile
  auto* graph = app.add_subcommand("graph", "graph construction and memory accounting");
  graph->require_subcommand(1);
  auto* gbuild = graph->add_subcommand("build", "build and cache one graph per sample");
  add_common_flags(gbuild, f);
  add_graph_flags(gbuild, f);
  auto* gprof = graph->add_subcommand("profile", "memory footprint of cached graphs per profile");
  std::vector<std::string> profile_names;
  std::optional<std::uint64_t> prof_v, prof_e;
  gprof->add_option("--config", f.config);
  gprof->add_option("--cache", f.cache);
  gprof->add_option("--report", f.report);
  gprof->add_option("--profile", profile_names, "attr64 or lean32; repeatable");
  gprof->add_option("--vertices", prof_v, "profile one graph of this size instead of a cache");
  gprof->add_option("--edges", prof_e);

  // train cls / det
  auto* train = app.add_subcommand("train", "train a model");
  train->require_subcommand(1);
  auto* tcls = train->add_subcommand("cls", "train the classifier");
  auto* tdet = train->add_subcommand("det", "train the detector");
  for (auto* sub : {tcls, tdet}) {
    add_common_flags(sub, f);
    add_graph_flags(sub, f);
    add_train_flags(sub, f);
  }
  tcls->add_option("--conv", f.conv, "gcn, sage, edge, pointnet or spline");
  tcls->add_option("--spline-k", f.spline_k, "spline knots per dimension");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string split = "test";
  add_common_flags(eval, f);
  add_graph_flags(eval, f);
  eval->add_option("--checkpoint", f.checkpoint)->required();
  eval->add_option("--split", split, "test, train or all")
      ->check(CLI::IsMember({"test", "train", "all"}))
      ->capture_default_str();
  eval->add_option("--seed", f.seed, "split seed (defaults to the checkpoint's)");
  eval->add_option("--train-fraction", f.train_fraction);

  // bench
  auto* bench = app.add_subcommand("bench", "forward-pass throughput");
  std::string bench_model = "cls";
  std::size_t bench_classes = 100, warmup = 10, reps = 1;
  std::optional<std::size_t> limit;
  add_common_flags(bench, f);
  add_graph_flags(bench, f);
  bench->add_option("--checkpoint", f.checkpoint, "trained model (else a fresh one)");
  bench->add_option("--model", bench_model, "cls or det")->capture_default_str();
  bench->add_option("--conv", f.conv);
  bench->add_option("--spline-k", f.spline_k);
  bench->add_option("--classes", bench_classes)->capture_default_str();
  bench->add_option("--seed", f.seed);
  bench->add_option("--warmup", warmup)->capture_default_str();
  bench->add_option("--reps", reps, "timed calls per graph")->capture_default_str();
  bench->add_option("--limit", limit, "use only the first N samples");

  // params
  auto* params = app.add_subcommand("params", "parameter count table (CSV)");
  std::string params_model = "cls", params_conv = "pointnet";
  std::size_t params_classes = 100;
  int params_k = 5;
  params->add_option("--model", params_model, "cls or det")->capture_default_str();
  params->add_option("--conv", params_conv)->capture_default_str();
  params->add_option("--classes", params_classes)->capture_default_str();
  params->add_option("--spline-k", params_k)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      cmd_synth(out, classes, per_class, width, height, out_dir, synth_seed);
    } else if (*ingest) {
      cmd_ingest(out, ingest_dir, in_w, in_h, ingest_report);
    } else if (*gbuild) {
      cmd_graph_build(out, assemble(f, {}));
    } else if (*gprof) {
      cmd_graph_profile(out, assemble(f, {}), profile_names, prof_v, prof_e);
    } else if (*tcls) {
      cmd_train(out, assemble(f, {}), engine::Task::classification);
    } else if (*tdet) {
      RunConfig base;
      base.train = engine::TrainConfig::detection_defaults();
      cmd_train(out, assemble(f, base), engine::Task::detection);
    } else if (*eval) {
      cmd_eval(out, assemble(f, base_from_checkpoint(f.checkpoint)), split);
    } else if (*bench) {
      cmd_bench(out, assemble(f, base_from_checkpoint(f.checkpoint)), bench_model, bench_classes,
                warmup, reps, limit);
    } else if (*params) {
      cmd_params(out, params_model, params_conv, params_classes, params_k);
    }
  } catch (const ConfigError& e) {
    err << "evgraph: configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "evgraph: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace evg::cli
