#include "evgraph/models.hpp"

#include <cmath>
#include <optional>

#include "evgraph/error.hpp"
#include "evgraph/ndiff/checkpoint.hpp"

namespace evg::models {

using nlohmann::json;

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::classifier ? "classifier" : "detector";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "classifier" || name == "cls") return ModelKind::classifier;
  if (name == "detector" || name == "det") return ModelKind::detector;
  throw ConfigError("unknown model kind '" + std::string(name) + "' (expected cls or det)");
}

std::size_t Model::output_width() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (const auto* d = std::get_if<DenseStep>(&*it)) return d->out;
  }
  return 0;
}

json Model::metadata() const {
  json conv_plan = json::array();
  for (const auto& l : layers) {
    if (const auto* c = std::get_if<ConvStep>(&l)) conv_plan.push_back(c->layer.c_out);
  }
  return {{"model", std::string(to_string(kind))},
          {"conv", std::string(gconv::to_string(conv_kind))},
          {"n_classes", n_classes},
          {"in_features", in_features},
          {"spline_k", spline_k},
          {"activation", std::string(nd::to_string(activation))},
          {"seed", seed},
          {"channels", conv_plan},
          {"grid", {kReadoutGrid, kReadoutGrid}}};
}

namespace {

class Builder {
 public:
  Builder(Model& m) : m_(m), rng_(m.seed) {}

  void conv(std::size_t c_in, std::size_t c_out) {
    const std::string name = "layer" + std::to_string(m_.layers.size());
    m_.layers.push_back(ConvStep{gconv::ConvLayer::create(m_.conv_kind, c_in, c_out, name,
                                                          m_.params, rng_, m_.spline_k)});
  }
  void act() { m_.layers.push_back(ActStep{m_.activation}); }
  void pool(double sx, double sy) { m_.layers.push_back(PoolStep{{sx, sy}}); }
  void save() { m_.layers.push_back(SkipSave{}); }
  void add() { m_.layers.push_back(SkipAdd{}); }
  void readout() { m_.layers.push_back(ReadoutStep{kReadoutGrid, kReadoutGrid}); }

  void dense(std::size_t in, std::size_t out) {
    const std::string name = "layer" + std::to_string(m_.layers.size());
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    nd::Mat w(in, out), b(1, out);
    for (double& v : w.values()) v = dist(rng_);
    for (double& v : b.values()) v = dist(rng_);
    DenseStep d;
    d.weight = m_.params.add(name + ".weight", std::move(w));
    d.bias = m_.params.add(name + ".bias", std::move(b));
    d.in = in;
    d.out = out;
    m_.layers.push_back(d);
  }

 private:
  Model& m_;
  std::mt19937_64 rng_;
};

}  // namespace

Model build_classifier(gconv::ConvKind conv_kind, std::size_t n_classes, std::size_t in_features,
                       std::uint64_t seed, nd::Activation activation, int spline_k) {
  if (n_classes < 1) throw ConfigError("classifier needs at least one class");
  if (in_features < 1) throw ConfigError("classifier needs at least one input feature");
  Model m;
  m.kind = ModelKind::classifier;
  m.conv_kind = conv_kind;
  m.n_classes = n_classes;
  m.in_features = in_features;
  m.spline_k = spline_k;
  m.activation = activation;
  m.seed = seed;
  Builder b(m);
  std::size_t c = in_features;
  const std::size_t n_conv = std::size(kClassifierChannels);
  for (std::size_t i = 0; i < n_conv; ++i) {
    b.conv(c, kClassifierChannels[i]);
    c = kClassifierChannels[i];
    if (i + 1 < n_conv) b.act();
    if (i == 4) b.pool(16, 12);
  }
  b.readout();
  b.dense(static_cast<std::size_t>(kReadoutGrid * kReadoutGrid) * c, n_classes);
  return m;
}

Model build_detector(std::size_t n_classes, std::uint64_t seed, nd::Activation activation) {
  if (n_classes < 1) throw ConfigError("detector needs at least one class");
  Model m;
  m.kind = ModelKind::detector;
  m.conv_kind = gconv::ConvKind::pointnet;
  m.n_classes = n_classes;
  m.activation = activation;
  m.seed = seed;
  Builder b(m);

  b.conv(1, 16);
  b.act();
  b.conv(16, 32);
  b.act();
  b.pool(4, 4);

  struct Block {
    std::size_t in, width;
    double pool;  // 0 = none
  };
  constexpr Block blocks[] = {{32, 32, 8}, {32, 64, 16}, {64, 96, 0}};
  for (std::size_t i = 0; i < std::size(blocks); ++i) {
    const Block& blk = blocks[i];
    const bool last = i + 1 == std::size(blocks);
    b.conv(blk.in, blk.width);
    b.act();
    b.save();
    b.conv(blk.width, blk.width);
    b.act();
    b.conv(blk.width, blk.width);
    b.add();
    if (!last) b.act();
    if (blk.pool > 0) b.pool(blk.pool, blk.pool);
  }
  b.readout();
  b.dense(static_cast<std::size_t>(kReadoutGrid * kReadoutGrid) * 96, n_classes + 4);
  return m;
}

Model build_from_metadata(const json& meta) {
  try {
    const ModelKind kind = parse_model_kind(meta.at("model").get<std::string>());
    const auto n_classes = meta.at("n_classes").get<std::size_t>();
    const auto seed = meta.value("seed", std::uint64_t{0});
    const auto act = nd::parse_activation(meta.value("activation", std::string("elu")));
    if (kind == ModelKind::detector) return build_detector(n_classes, seed, act);
    return build_classifier(gconv::parse_conv_kind(meta.at("conv").get<std::string>()), n_classes,
                            meta.value("in_features", std::size_t{1}), seed, act,
                            meta.value("spline_k", 5));
  } catch (const json::exception& e) {
    throw FormatError(std::string("model metadata: ") + e.what());
  }
}

ParamTable count_parameters(const Model& model) {
  ParamTable t;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    ParamRow row;
    row.layer = "layer" + std::to_string(i);
    if (const auto* c = std::get_if<ConvStep>(&l)) {
      for (std::size_t idx : c->layer.params) row.count += model.params[idx].count();
      row.layer += "." + std::string(gconv::to_string(c->layer.kind));
    } else if (const auto* d = std::get_if<DenseStep>(&l)) {
      row.count = model.params[d->weight].count() + model.params[d->bias].count();
      row.fully_connected = true;
      row.layer += ".dense";
    } else {
      continue;
    }
    (row.fully_connected ? t.fully_connected : t.feature_extraction) += row.count;
    t.rows.push_back(std::move(row));
  }
  t.total = t.feature_extraction + t.fully_connected;
  return t;
}

nd::Var forward(nd::Tape& t, Model& model, const gconv::GraphBatch& batch, nd::Var x) {
  if (t.value(x).cols() != model.in_features) {
    throw ShapeError("model expects " + std::to_string(model.in_features) +
                     " input features per vertex, got " + std::to_string(t.value(x).cols()));
  }
  if (model.conv_kind == gconv::ConvKind::spline && !batch.edge_attrs) {
    throw ConfigError("spline models need graphs built with edge attributes");
  }
  const gconv::GraphBatch* g = &batch;
  std::optional<gconv::GraphBatch> pooled;
  std::optional<nd::Var> skip;
  for (const auto& layer : model.layers) {
    if (const auto* c = std::get_if<ConvStep>(&layer)) {
      x = gconv::conv_forward(t, *g, x, c->layer, model.params);
    } else if (const auto* a = std::get_if<ActStep>(&layer)) {
      x = nd::activation(t, x, a->kind);
    } else if (const auto* p = std::get_if<PoolStep>(&layer)) {
      auto res = gconv::voxel_max_pool(t, *g, x, p->spec);
      pooled = std::move(res.graph);
      g = &*pooled;
      x = res.x;
    } else if (std::holds_alternative<SkipSave>(layer)) {
      skip = x;
    } else if (std::holds_alternative<SkipAdd>(layer)) {
      if (!skip) throw ConfigError("residual add without a saved input");
      x = nd::add(t, *skip, x);
      skip.reset();
    } else if (const auto* r = std::get_if<ReadoutStep>(&layer)) {
      x = gconv::grid_readout(t, *g, x, r->gx, r->gy);
    } else if (const auto* d = std::get_if<DenseStep>(&layer)) {
      x = nd::affine(t, x, t.parameter(model.params[d->weight]), t.parameter(model.params[d->bias]));
    }
  }
  return x;
}

DetectorOutputs split_detector_output(nd::Tape& t, nd::Var raw, std::size_t n_classes) {
  if (t.value(raw).cols() != n_classes + 4) {
    throw ShapeError("detector output has " + std::to_string(t.value(raw).cols()) +
                     " columns, expected " + std::to_string(n_classes + 4));
  }
  return {nd::slice_cols(t, raw, 0, n_classes),
          nd::sigmoid(t, nd::slice_cols(t, raw, n_classes, 4))};
}

int argmax(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

nd::Mat predict(Model& model, std::span<const EventGraph* const> graphs) {
  nd::Tape t;
  const auto batch = gconv::GraphBatch::collate(graphs);
  nd::Var out = forward(t, model, batch, t.constant(gconv::collate_features(graphs)));
  return t.value(out);
}

std::vector<Detection> detect(Model& model, std::span<const EventGraph* const> graphs) {
  if (model.kind != ModelKind::detector) throw ConfigError("detect() needs a detector model");
  const nd::Mat raw = predict(model, graphs);
  const nd::Mat boxes = nd::sigmoid(nd::slice_cols(raw, model.n_classes, 4));
  std::vector<Detection> out;
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    Detection d;
    const auto row = raw.row(i);
    d.logits.assign(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(model.n_classes));
    for (int k = 0; k < 4; ++k) d.bbox[static_cast<std::size_t>(k)] = boxes(i, static_cast<std::size_t>(k));
    d.class_id = argmax(d.logits);
    const double zmax = d.logits[static_cast<std::size_t>(d.class_id)];
    double denom = 0.0;
    for (double z : d.logits) denom += std::exp(z - zmax);
    d.confidence = 1.0 / denom;
    out.push_back(std::move(d));
  }
  return out;
}

void save_model(const Model& model, const std::filesystem::path& path, const json& extra) {
  json header = extra.is_object() ? extra : json::object();
  header["metadata"] = model.metadata();
  nd::save_checkpoint(path, model.params, header);
}

Model load_model(const std::filesystem::path& path, json* header) {
  const nd::Checkpoint ckpt = nd::load_checkpoint(path);
  if (!ckpt.header.contains("metadata")) throw FormatError("checkpoint has no model metadata");
  Model m = build_from_metadata(ckpt.header.at("metadata"));
  nd::apply_checkpoint(ckpt, m.params);
  if (header != nullptr) *header = ckpt.header;
  return m;
}

}  // namespace evg::models
