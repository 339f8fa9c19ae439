#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "evgraph/events.hpp"
#include "evgraph/graph.hpp"
#include "evgraph/models.hpp"

namespace evg::engine {

enum class Task { classification, detection };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double weight_decay = 5e-3;
  std::uint64_t seed = 0;
  Task task = Task::classification;
  // Runs the graphs of a batch on worker threads. Gradients are merged in
  // batch order, but floating-point sums may differ from the serial path.
  bool parallel_batches = false;
  std::size_t threads = 0;  // 0 = worker_count()
  // Best-test-metric model is written here when set.
  std::optional<std::filesystem::path> checkpoint;
  // Extra JSON merged into every checkpoint header (e.g. the run config).
  nlohmann::json checkpoint_extra = nlohmann::json::object();

  static TrainConfig classification_defaults();  // 150 epochs, batch 8, wd 5e-3
  static TrainConfig detection_defaults();       // 1000 epochs, batch 16, wd 1e-4

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

// Keeps large per-batch buffers in the process heap instead of returning them
// to the OS on every free (glibc only; a no-op elsewhere). train() and
// bench_throughput() call it; it is idempotent.
void tune_allocator();

// Threads for fan-out work: EVGRAPH_THREADS if set, else hardware concurrency.
std::size_t worker_count();

// A built graph with its ground truth. bbox is in pixels.
struct Sample {
  EventGraph graph;
  int label = 0;
  BoundingBox bbox;
};
using Dataset = std::vector<Sample>;

// Stable identifier for a cached graph: a 64-bit FNV-1a hash of the graph
// parameters and the sample path, as 16 hex digits.
std::string graph_cache_key(const GraphParams& params, const std::string& sample_path);

// Builds (or loads from `cache_dir`, when given) one graph per manifest entry.
// Graphs are built on worker threads; the result is in manifest order.
Dataset load_dataset(const Manifest& manifest, const GraphParams& params,
                     const std::optional<std::filesystem::path>& cache_dir = std::nullopt,
                     std::size_t threads = 0);

// Per class (ascending id): shuffle that class's indices with one generator
// seeded by `seed`, send the first ceil(fraction * n_c) to train.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
SplitIndices stratified_split(std::span<const int> labels, double train_fraction,
                              std::uint64_t seed);
std::pair<Manifest, Manifest> stratified_split(const Manifest& manifest, double train_fraction,
                                               std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean training loss over the epoch
  double metric = 0.0;    // test accuracy or mAP@0.5; NaN without a test set
  double seconds = 0.0;
};

struct History {
  std::vector<EpochRecord> records;
  std::size_t best_epoch = 0;  // 0 when no test set was given
  double best_metric = 0.0;

  // `epoch,loss,metric,seconds` with a header line.
  [[nodiscard]] std::string to_csv() const;
};

// Optimizes `model` in place; on return it holds the best-test-metric
// parameters (or the final ones when `test` is empty).
// `on_epoch` is called after each epoch, e.g. for progress output.
History train(models::Model& model, const Dataset& train_set, const Dataset& test_set,
              const TrainConfig& config,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

// Mean loss of the model on `data` without updating anything.
double evaluate_loss(models::Model& model, const Dataset& data, Task task,
                     std::size_t batch_size = 16);

double eval_accuracy(models::Model& model, const Dataset& data, std::size_t batch_size = 16);

// Intersection over union of two center/extent boxes; 0 when disjoint.
double iou(const BoundingBox& a, const BoundingBox& b);

struct Prediction {
  int class_id = 0;
  double confidence = 0.0;
  BoundingBox bbox;  // any consistent unit, same as the ground truth
};
struct GroundTruth {
  int class_id = 0;
  BoundingBox bbox;
};

// Single ground truth and single prediction per sample. AP per class uses
// all-points interpolation; the mean runs over classes with a ground truth.
double mean_average_precision(std::span<const Prediction> predictions,
                              std::span<const GroundTruth> truth, double iou_threshold = 0.5);

double eval_map50(models::Model& model, const Dataset& data, std::size_t batch_size = 16);

// Box of a sample as (cx, cy, w, h) fractions of its sensor.
std::array<double, 4> bbox_fractions(const Sample& s);

struct BenchReport {
  double mean_ms = 0.0;
  double graphs_per_second = 0.0;
  std::size_t samples = 0;  // timed forward calls
  std::size_t warmup = 0;
  std::string hardware_note;

  [[nodiscard]] nlohmann::json to_json() const;
};

struct BenchOptions {
  std::size_t warmup = 10;
  std::size_t reps_per_graph = 1;
  // Milliseconds from an arbitrary origin; defaults to a steady clock.
  std::function<double()> clock;
};

// Times single-graph forward passes only; warmup calls are not averaged.
BenchReport bench_throughput(models::Model& model, std::span<const EventGraph> graphs,
                             const BenchOptions& options = {});

// Short description of the host (CPU model, thread count) for reports.
std::string hardware_note();

}  // namespace evg::engine
