#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "evgraph/gconv.hpp"

namespace evg::models {

enum class ModelKind { classifier, detector };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct ConvStep {
  gconv::ConvLayer layer;
};
struct ActStep {
  nd::Activation kind = nd::Activation::elu;
};
struct PoolStep {
  gconv::PoolSpec spec;
};
// Remembers the current features; the next SkipAdd adds them back.
struct SkipSave {};
struct SkipAdd {};
struct ReadoutStep {
  int gx = 4;
  int gy = 4;
};
struct DenseStep {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

using Layer = std::variant<ConvStep, ActStep, PoolStep, SkipSave, SkipAdd, ReadoutStep, DenseStep>;

struct Model {
  ModelKind kind = ModelKind::classifier;
  gconv::ConvKind conv_kind = gconv::ConvKind::pointnet;
  std::size_t n_classes = 0;
  std::size_t in_features = 1;
  int spline_k = 5;
  nd::Activation activation = nd::Activation::elu;
  std::uint64_t seed = 0;
  std::vector<Layer> layers;
  nd::ParameterSet params;

  // Output width of the affine head.
  [[nodiscard]] std::size_t output_width() const;
  [[nodiscard]] nlohmann::json metadata() const;
};

inline constexpr std::size_t kClassifierChannels[] = {8, 16, 32, 32, 32, 128, 128};
inline constexpr int kReadoutGrid = 4;

// Seven convolutions (8, 16, 32, 32, 32 | pool 16x12 | 128, 128), a 4x4 grid
// readout (2048 features) and one affine layer to n_classes.
Model build_classifier(gconv::ConvKind conv_kind, std::size_t n_classes,
                       std::size_t in_features = 1, std::uint64_t seed = 0,
                       nd::Activation activation = nd::Activation::elu, int spline_k = 5);

// PointNet detector: an input block and three residual blocks with pool
// windows 4, 8, 16; head emits n_classes logits plus 4 box values.
Model build_detector(std::size_t n_classes, std::uint64_t seed = 0,
                     nd::Activation activation = nd::Activation::elu);

// Rebuilds an untrained model from Model::metadata().
Model build_from_metadata(const nlohmann::json& meta);

struct ParamRow {
  std::string layer;
  std::size_t count = 0;
  bool fully_connected = false;
};

struct ParamTable {
  std::vector<ParamRow> rows;
  std::size_t feature_extraction = 0;
  std::size_t fully_connected = 0;
  std::size_t total = 0;
};

ParamTable count_parameters(const Model& model);

// Raw head output, one row per graph in the batch.
nd::Var forward(nd::Tape& t, Model& model, const gconv::GraphBatch& g, nd::Var x);

struct DetectorOutputs {
  nd::Var logits;
  nd::Var bbox;  // sigmoid-squashed (cx, cy, w, h) as sensor fractions
};
DetectorOutputs split_detector_output(nd::Tape& t, nd::Var raw, std::size_t n_classes);

struct Detection {
  std::vector<double> logits;
  std::array<double, 4> bbox{};  // sensor fractions in [0, 1]
  int class_id = 0;              // argmax, lower index on ties
  double confidence = 0.0;       // max softmax probability
};

// Inference helpers; each builds its own tape.
nd::Mat predict(Model& model, std::span<const EventGraph* const> graphs);
std::vector<Detection> detect(Model& model, std::span<const EventGraph* const> graphs);

int argmax(std::span<const double> v);

void save_model(const Model& model, const std::filesystem::path& path,
                const nlohmann::json& extra = nlohmann::json::object());
Model load_model(const std::filesystem::path& path, nlohmann::json* header = nullptr);

}  // namespace evg::models
