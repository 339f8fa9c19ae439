#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "evgraph/error.hpp"
#include "evgraph/events.hpp"

namespace evg {

using nlohmann::json;

Manifest load_manifest(const std::filesystem::path& manifest_file) {
  std::ifstream in(manifest_file);
  if (!in) throw IoError("cannot open manifest " + manifest_file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest " + manifest_file.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw FormatError("manifest must be a JSON array");
  Manifest m;
  m.root = manifest_file.parent_path();
  try {
    for (const auto& item : doc) {
      SampleRecord s;
      s.path = item.at("path").get<std::string>();
      s.class_id = item.at("class_id").get<int>();
      const auto& b = item.at("bbox");
      s.bbox = {b.at("cx").get<double>(), b.at("cy").get<double>(), b.at("w").get<double>(),
                b.at("h").get<double>()};
      s.width = item.at("width").get<int>();
      s.height = item.at("height").get<int>();
      m.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest " + manifest_file.string() + ": " + e.what());
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& manifest_file) {
  json doc = json::array();
  for (const auto& s : manifest.samples) {
    doc.push_back({{"path", s.path},
                   {"class_id", s.class_id},
                   {"bbox", {{"cx", s.bbox.cx}, {"cy", s.bbox.cy}, {"w", s.bbox.w}, {"h", s.bbox.h}}},
                   {"width", s.width},
                   {"height", s.height}});
  }
  std::ofstream out(manifest_file);
  if (!out) throw IoError("cannot write manifest " + manifest_file.string());
  out << doc.dump(1) << '\n';
  if (!out) throw IoError("short write to " + manifest_file.string());
}

SceneScript class_scene(int class_id, int width, int height, std::uint64_t seed) {
  if (class_id < 0) throw ConfigError("class id must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  constexpr ShapeKind kinds[] = {ShapeKind::bar, ShapeKind::disk, ShapeKind::rectangle,
                                 ShapeKind::triangle};
  const double side = std::min(width, height);

  SceneScript script;
  script.duration_us = 60'000;
  script.step_us = 500;
  script.background = 0.5;
  script.threshold = 0.3;
  script.label = class_id;

  ShapeSpec shape;
  shape.kind = kinds[class_id % 4];
  // Kind cycles with period 4, size band with 5 and speed band with 3, so the
  // (kind, size, speed) family is unique for the first 60 classes.
  shape.size = side * (0.24 + 0.06 * (class_id % 5)) * (0.92 + 0.16 * unit(rng));
  const double speed = 0.2 + 0.08 * (class_id % 3) + 0.05 * unit(rng);  // px/ms
  // Roughly diagonal motion: an edge moving along itself emits nothing, so an
  // axis-aligned heading would hide half of a bar or rectangle outline.
  const double quadrant = std::floor(4.0 * unit(rng));
  const double angle =
      std::numbers::pi / 4 + quadrant * std::numbers::pi / 2 + (unit(rng) - 0.5) * std::numbers::pi / 6;
  shape.vx = speed * std::cos(angle);
  shape.vy = speed * std::sin(angle);
  shape.contrast = unit(rng) < 0.5 ? 2.5 : 0.4;

  // Keep the whole trajectory on the sensor when possible.
  const double dur_ms = static_cast<double>(script.duration_us) / 1000.0;
  const Extent e0 = shape_extent(shape, 0);
  const double hx = (e0.x1 - e0.x0) / 2, hy = (e0.y1 - e0.y0) / 2;
  const double tx = std::abs(shape.vx) * dur_ms / 2, ty = std::abs(shape.vy) * dur_ms / 2;
  // Trajectory midpoints stay in the central 30% of the admissible range.
  auto pick = [&](double lo, double hi) {
    return lo < hi ? lo + (hi - lo) * (0.35 + 0.3 * unit(rng)) : (lo + hi) / 2;
  };
  const double mid_x = pick(hx + tx, width - hx - tx);
  const double mid_y = pick(hy + ty, height - hy - ty);
  shape.x0 = mid_x - shape.vx * dur_ms / 2;
  shape.y0 = mid_y - shape.vy * dur_ms / 2;
  script.shapes.push_back(shape);
  return script;
}

Manifest synth_dataset(int classes, int samples_per_class, int width, int height,
                       const std::filesystem::path& out_dir, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synth_dataset needs at least 2 classes");
  if (samples_per_class < 1) throw ConfigError("synth_dataset needs at least 1 sample per class");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "samples", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "samples").string() + ": " + ec.message());

  Manifest m;
  m.root = out_dir;
  std::mt19937_64 seeder(seed);
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < samples_per_class; ++i) {
      const std::uint64_t sample_seed = seeder();
      const SceneScript script = class_scene(c, width, height, sample_seed);
      EventStream stream = simulate_dvs(script, width, height, sample_seed);
      char name[64];
      std::snprintf(name, sizeof name, "samples/c%03d_s%05d.bin", c, i);
      write_bin_file(out_dir / name, stream);
      SampleRecord rec;
      rec.path = name;
      rec.class_id = c;
      rec.bbox = stream.bbox.value_or(BoundingBox{width / 2.0, height / 2.0, double(width),
                                                  double(height)});
      rec.width = width;
      rec.height = height;
      m.samples.push_back(std::move(rec));
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace evg
