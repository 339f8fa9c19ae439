#include "evgraph/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "evgraph/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace evg::engine {

using nlohmann::json;
using models::Model;

std::string_view to_string(Task task) {
  return task == Task::classification ? "classification" : "detection";
}

Task parse_task(std::string_view name) {
  if (name == "classification" || name == "cls") return Task::classification;
  if (name == "detection" || name == "det") return Task::detection;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

TrainConfig TrainConfig::classification_defaults() { return {}; }

TrainConfig TrainConfig::detection_defaults() {
  TrainConfig c;
  c.epochs = 1000;
  c.batch_size = 16;
  c.weight_decay = 1e-4;
  c.task = Task::detection;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be a finite non-negative number");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("weight decay must be a finite non-negative number");
  }
}

json TrainConfig::to_json() const {
  json j = {{"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"seed", seed},
            {"task", std::string(to_string(task))},
            {"parallel_batches", parallel_batches},
            {"threads", threads}};
  j["checkpoint"] = checkpoint ? json(checkpoint->string()) : json(nullptr);
  return j;
}

void tune_allocator() {
#if defined(__GLIBC__)
  // A training step allocates and frees the same multi-megabyte buffers every
  // batch. glibc serves those with mmap and returns them on free, so each step
  // page-faults its working set back in. Keeping them in the heap removes that.
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 512 << 20);
    mallopt(M_TRIM_THRESHOLD, 1024 << 20);
  });
#endif
}

std::size_t worker_count() {
  if (const char* env = std::getenv("EVGRAPH_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw ConfigError("EVGRAPH_THREADS must be a positive integer, got '" + std::string(env) +
                        "'");
    }
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

std::size_t resolve_threads(std::size_t requested) {
  return requested == 0 ? worker_count() : requested;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// thrown by any task is rethrown on the caller.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string graph_cache_key(const GraphParams& params, const std::string& sample_path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::uint64_t fields[] = {static_cast<std::uint64_t>(params.max_neighbors),
                                  static_cast<std::uint64_t>(params.max_events),
                                  static_cast<std::uint64_t>(params.time_mode),
                                  params.with_edge_attrs ? 1ULL : 0ULL};
  h = fnv1a(h, &params.radius, sizeof params.radius);
  h = fnv1a(h, fields, sizeof fields);
  h = fnv1a(h, sample_path.data(), sample_path.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Dataset load_dataset(const Manifest& manifest, const GraphParams& params,
                     const std::optional<std::filesystem::path>& cache_dir, std::size_t threads) {
  params.validate();
  if (cache_dir) std::filesystem::create_directories(*cache_dir);
  Dataset out(manifest.samples.size());
  parallel_for(out.size(), resolve_threads(threads), [&](std::size_t i) {
    const SampleRecord& rec = manifest.samples[i];
    Sample& s = out[i];
    s.label = rec.class_id;
    s.bbox = rec.bbox;
    std::filesystem::path cached;
    if (cache_dir) {
      cached = *cache_dir / (graph_cache_key(params, rec.path) + ".evgr");
      if (std::filesystem::exists(cached)) {
        s.graph = load_graph(cached);
        return;
      }
    }
    const auto stream = read_bin_file(manifest.resolve(rec), rec.width, rec.height);
    s.graph = build_graph(stream, params);
    if (cache_dir) save_graph(s.graph, cached);
  });
  return out;
}

SplitIndices stratified_split(std::span<const int> labels, double train_fraction,
                              std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1]");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  SplitIndices out;
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < 2) {
      throw ConfigError("class " + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                        " sample; stratified split needs at least 2 per class");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    // The epsilon keeps exact products such as 0.8 * 5 from rounding up.
    const auto n_train = static_cast<std::size_t>(
        std::ceil(train_fraction * static_cast<double>(idx.size()) - 1e-9));
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::pair<Manifest, Manifest> stratified_split(const Manifest& manifest, double train_fraction,
                                               std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& s : manifest.samples) labels.push_back(s.class_id);
  const auto split = stratified_split(labels, train_fraction, seed);
  Manifest train{manifest.root, {}}, test{manifest.root, {}};
  for (auto i : split.train) train.samples.push_back(manifest.samples[i]);
  for (auto i : split.test) test.samples.push_back(manifest.samples[i]);
  return {std::move(train), std::move(test)};
}

std::string History::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,loss,metric,seconds\n";
  for (const auto& r : records) {
    os << r.epoch << ',' << r.loss << ',' << r.metric << ',' << r.seconds << '\n';
  }
  return os.str();
}

std::array<double, 4> bbox_fractions(const Sample& s) {
  const double w = s.graph.width, h = s.graph.height;
  return {s.bbox.cx / w, s.bbox.cy / h, s.bbox.w / w, s.bbox.h / h};
}

namespace {

std::vector<const EventGraph*> graph_ptrs(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<const EventGraph*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&data[i].graph);
  return out;
}

// Builds the loss for the samples `idx` on tape `t`; returns the scalar node.
nd::Var batch_loss(nd::Tape& t, Model& model, const Dataset& data,
                   std::span<const std::size_t> idx, Task task) {
  const auto graphs = graph_ptrs(data, idx);
  const auto batch = gconv::GraphBatch::collate(graphs);
  const nd::Var raw = models::forward(t, model, batch, t.constant(gconv::collate_features(graphs)));
  std::vector<nd::Index> labels;
  for (auto i : idx) {
    if (data[i].label < 0 || static_cast<std::size_t>(data[i].label) >= model.n_classes) {
      throw IndexError("sample label " + std::to_string(data[i].label) + " is outside the model's " +
                       std::to_string(model.n_classes) + " classes");
    }
    labels.push_back(static_cast<nd::Index>(data[i].label));
  }
  if (task == Task::classification) return nd::softmax_cross_entropy(t, raw, labels);
  if (model.kind != models::ModelKind::detector) {
    throw ConfigError("detection training needs a detector model");
  }
  const auto out = models::split_detector_output(t, raw, model.n_classes);
  nd::Mat target(idx.size(), 4);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto f = bbox_fractions(data[idx[r]]);
    for (std::size_t k = 0; k < 4; ++k) target(r, k) = f[k];
  }
  return nd::weighted_sum(t, nd::softmax_cross_entropy(t, out.logits, labels), 1.0,
                          nd::smooth_l1(t, out.bbox, target), 1.0);
}

double check_finite(double loss, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    throw DivergenceError("training diverged: loss is " + std::to_string(loss) + " at epoch " +
                          std::to_string(epoch) + ", batch " + std::to_string(batch) +
                          "; try a smaller learning rate");
  }
  return loss;
}

// One optimizer step on a batch; returns the batch's mean loss.
double serial_step(Model& model, const Dataset& data, std::span<const std::size_t> idx,
                   Task task) {
  nd::Tape t;
  const nd::Var loss = batch_loss(t, model, data, idx, task);
  const double value = t.value(loss)(0, 0);
  if (std::isfinite(value)) t.backward(loss);
  return value;
}

// Per-graph tapes on worker threads, merged into parameter grads in batch
// order. Each graph's loss is scaled by 1/B so the sum equals the batch mean.
double parallel_step(Model& model, const Dataset& data, std::span<const std::size_t> idx,
                     Task task, std::size_t threads) {
  std::vector<std::unique_ptr<nd::Tape>> tapes(idx.size());
  std::vector<double> losses(idx.size());
  const nd::Mat seed(1, 1, 1.0 / static_cast<double>(idx.size()));
  parallel_for(idx.size(), threads, [&](std::size_t k) {
    tapes[k] = std::make_unique<nd::Tape>(true);
    const nd::Var loss = batch_loss(*tapes[k], model, data, idx.subspan(k, 1), task);
    losses[k] = tapes[k]->value(loss)(0, 0);
    if (std::isfinite(losses[k])) tapes[k]->backward(loss, seed);
  });
  double total = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    tapes[k]->flush_parameter_grads();
    total += losses[k];
  }
  return total / static_cast<double>(idx.size());
}

std::vector<nd::Mat> snapshot(const Model& model) {
  std::vector<nd::Mat> out;
  for (const auto& p : model.params) out.push_back(p.tensor.value);
  return out;
}

void restore(Model& model, const std::vector<nd::Mat>& values) {
  std::size_t i = 0;
  for (auto& p : model.params) p.tensor.value = values[i++];
}

}  // namespace

History train(Model& model, const Dataset& train_set, const Dataset& test_set,
              const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  tune_allocator();
  if (config.task == Task::detection && model.kind != models::ModelKind::detector) {
    throw ConfigError("detection training needs a detector model");
  }
  const std::size_t threads = config.parallel_batches ? resolve_threads(config.threads) : 1;

  nd::AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  adam_cfg.weight_decay = config.weight_decay;
  nd::AdamState adam(adam_cfg);
  model.params.zero_grad();

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  History history;
  std::vector<nd::Mat> best;
  double best_metric = -std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::span<const std::size_t> idx(order.data() + b,
                                             std::min(config.batch_size, order.size() - b));
      const double loss = threads > 1 ? parallel_step(model, train_set, idx, config.task, threads)
                                      : serial_step(model, train_set, idx, config.task);
      check_finite(loss, epoch, ++batch_no);
      nd::adam_step(model.params, adam);
      loss_sum += loss * static_cast<double>(idx.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(train_set.size());
    rec.metric = std::numeric_limits<double>::quiet_NaN();
    if (!test_set.empty()) {
      rec.metric = config.task == Task::classification ? eval_accuracy(model, test_set)
                                                       : eval_map50(model, test_set);
      if (rec.metric > best_metric) {
        best_metric = rec.metric;
        history.best_epoch = epoch;
        history.best_metric = rec.metric;
        best = snapshot(model);
        if (config.checkpoint) {
          json extra = config.checkpoint_extra;
          extra["train_config"] = config.to_json();
          extra["epoch"] = epoch;
          extra["metric"] = rec.metric;
          models::save_model(model, *config.checkpoint, extra);
        }
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  if (!best.empty()) {
    restore(model, best);
  } else if (config.checkpoint) {
    json extra = config.checkpoint_extra;
    extra["train_config"] = config.to_json();
    extra["epoch"] = config.epochs;
    models::save_model(model, *config.checkpoint, extra);
  }
  return history;
}

namespace {

template <class Fn>
void for_each_batch(const Dataset& data, std::size_t batch_size, Fn&& fn) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    idx.clear();
    for (std::size_t i = b; i < std::min(data.size(), b + batch_size); ++i) idx.push_back(i);
    fn(std::span<const std::size_t>(idx));
  }
}

}  // namespace

double evaluate_loss(Model& model, const Dataset& data, Task task, std::size_t batch_size) {
  if (data.empty()) throw ConfigError("evaluation set is empty");
  double sum = 0.0;
  for_each_batch(data, batch_size, [&](std::span<const std::size_t> idx) {
    nd::Tape t;
    sum += t.value(batch_loss(t, model, data, idx, task))(0, 0) * static_cast<double>(idx.size());
  });
  return sum / static_cast<double>(data.size());
}

double eval_accuracy(Model& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw ConfigError("evaluation set is empty");
  std::size_t correct = 0;
  for_each_batch(data, batch_size, [&](std::span<const std::size_t> idx) {
    const auto graphs = graph_ptrs(data, idx);
    const nd::Mat out = models::predict(model, graphs);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto row = out.row(r);
      if (model.kind == models::ModelKind::detector) row = row.first(model.n_classes);
      if (models::argmax(row) == data[idx[r]].label) ++correct;
    }
  });
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) -
                                      std::max(a.cx - a.w / 2, b.cx - b.w / 2));
  const double iy = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) -
                                      std::max(a.cy - a.h / 2, b.cy - b.h / 2));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double mean_average_precision(std::span<const Prediction> predictions,
                              std::span<const GroundTruth> truth, double iou_threshold) {
  if (truth.empty()) throw ConfigError("mAP needs at least one ground truth");
  if (predictions.size() != truth.size()) {
    throw ShapeError("mAP needs one prediction per sample: " + std::to_string(predictions.size()) +
                     " predictions, " + std::to_string(truth.size()) + " ground truths");
  }
  std::map<int, std::size_t> n_truth;
  for (const auto& g : truth) ++n_truth[g.class_id];

  double ap_sum = 0.0;
  for (const auto& [cls, n_gt] : n_truth) {
    std::vector<std::size_t> ranked;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      if (predictions[i].class_id == cls) ranked.push_back(i);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
      return predictions[a].confidence > predictions[b].confidence;
    });
    // One prediction and one ground truth per sample, so a match can never
    // consume a ground truth twice.
    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      const std::size_t i = ranked[k];
      if (truth[i].class_id == cls && iou(predictions[i].bbox, truth[i].bbox) >= iou_threshold) {
        ++tp;
      }
      precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    }
    for (std::size_t k = precision.size(); k-- > 1;) {
      precision[k - 1] = std::max(precision[k - 1], precision[k]);
    }
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < precision.size(); ++k) {
      ap += (recall[k] - prev_recall) * precision[k];
      prev_recall = recall[k];
    }
    ap_sum += ap;
  }
  return ap_sum / static_cast<double>(n_truth.size());
}

double eval_map50(Model& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw ConfigError("evaluation set is empty");
  std::vector<Prediction> preds;
  std::vector<GroundTruth> truth;
  for_each_batch(data, batch_size, [&](std::span<const std::size_t> idx) {
    const auto graphs = graph_ptrs(data, idx);
    const auto dets = models::detect(model, graphs);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& d = dets[r];
      preds.push_back({d.class_id, d.confidence, {d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]}});
      const auto f = bbox_fractions(data[idx[r]]);
      truth.push_back({data[idx[r]].label, {f[0], f[1], f[2], f[3]}});
    }
  });
  return mean_average_precision(preds, truth, 0.5);
}

json BenchReport::to_json() const {
  return {{"mean_ms", mean_ms},
          {"graphs_per_second", graphs_per_second},
          {"samples", samples},
          {"warmup", warmup},
          {"hardware_note", hardware_note},
          {"timing", "forward pass only; graph construction and I/O excluded"}};
}

BenchReport bench_throughput(Model& model, std::span<const EventGraph> graphs,
                             const BenchOptions& options) {
  if (graphs.empty()) throw ConfigError("benchmark needs at least one graph");
  if (options.reps_per_graph < 1) throw ConfigError("reps per graph must be at least 1");
  tune_allocator();
  const auto clock = options.clock ? options.clock : [] {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };
  auto run = [&](const EventGraph& g) {
    const EventGraph* p = &g;
    (void)models::predict(model, std::span<const EventGraph* const>(&p, 1));
  };
  for (std::size_t w = 0; w < options.warmup; ++w) run(graphs[w % graphs.size()]);

  double total_ms = 0.0;
  std::size_t calls = 0;
  for (const auto& g : graphs) {
    for (std::size_t r = 0; r < options.reps_per_graph; ++r) {
      const double t0 = clock();
      run(g);
      total_ms += clock() - t0;
      ++calls;
    }
  }
  BenchReport rep;
  rep.samples = calls;
  rep.warmup = options.warmup;
  rep.mean_ms = total_ms / static_cast<double>(calls);
  rep.graphs_per_second = rep.mean_ms > 0.0 ? 1000.0 / rep.mean_ms : 0.0;
  rep.hardware_note = hardware_note();
  return rep;
}

std::string hardware_note() {
  std::string cpu = "unknown CPU";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      if (auto pos = line.find(':'); pos != std::string::npos && pos + 2 <= line.size()) {
        cpu = line.substr(pos + 2);
      }
      break;
    }
  }
  return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) +
         " hardware threads, single-threaded forward";
}

}  // namespace evg::engine
