#include <algorithm>
#include <cmath>
#include <random>

#include "evgraph/error.hpp"
#include "evgraph/events.hpp"

namespace evg {

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::bar: return "bar";
    case ShapeKind::disk: return "disk";
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

ShapeKind parse_shape_kind(std::string_view name) {
  if (name == "bar") return ShapeKind::bar;
  if (name == "disk") return ShapeKind::disk;
  if (name == "rectangle") return ShapeKind::rectangle;
  if (name == "triangle") return ShapeKind::triangle;
  throw ConfigError("unknown shape kind '" + std::string(name) + "'");
}

void SceneScript::validate() const {
  if (!(threshold > 0)) throw ConfigError("scene threshold C must be positive");
  if (duration_us == 0) throw ConfigError("scene duration must be positive");
  if (step_us == 0) throw ConfigError("scene sampling step must be positive");
  if (!(background > 0)) throw ConfigError("scene background intensity must be positive");
  if (threshold_sigma < 0) throw ConfigError("threshold mismatch sigma must be non-negative");
  for (const auto& s : shapes) {
    if (!(s.contrast > 0)) throw ConfigError("shape contrast must be positive");
    if (!(s.size > 0)) throw ConfigError("shape size must be positive");
  }
}

namespace {

struct HalfSize {
  double hx, hy;
};

HalfSize half_size(const ShapeSpec& s) {
  switch (s.kind) {
    case ShapeKind::bar: return {std::max(0.5, s.size / 6.0), s.size / 2.0};
    case ShapeKind::rectangle: return {s.size / 2.0, s.size * 0.3};
    case ShapeKind::disk:
    case ShapeKind::triangle: return {s.size / 2.0, s.size / 2.0};
  }
  return {0, 0};
}

void center_at(const ShapeSpec& s, std::uint64_t t_us, double& cx, double& cy) {
  const double t_ms = static_cast<double>(t_us) / 1000.0;
  cx = s.x0 + s.vx * t_ms;
  cy = s.y0 + s.vy * t_ms;
}

}  // namespace

Extent shape_extent(const ShapeSpec& shape, std::uint64_t t_us) {
  double cx, cy;
  center_at(shape, t_us, cx, cy);
  const auto [hx, hy] = half_size(shape);
  return {cx - hx, cy - hy, cx + hx, cy + hy};
}

bool shape_covers(const ShapeSpec& shape, std::uint64_t t_us, int px, int py) {
  double cx, cy;
  center_at(shape, t_us, cx, cy);
  const double dx = px + 0.5 - cx;
  const double dy = py + 0.5 - cy;
  const auto [hx, hy] = half_size(shape);
  switch (shape.kind) {
    case ShapeKind::bar:
    case ShapeKind::rectangle: return std::abs(dx) <= hx && std::abs(dy) <= hy;
    case ShapeKind::disk: return dx * dx + dy * dy <= hx * hx;
    case ShapeKind::triangle: {
      // apex up, base along the bottom edge of the extent
      if (dy < -hy || dy > hy) return false;
      const double frac = (dy + hy) / (2.0 * hy);
      return std::abs(dx) <= frac * hx;
    }
  }
  return false;
}

std::vector<double> render_log_intensity(const SceneScript& script, int width, int height,
                                         std::uint64_t t_us) {
  const double base = std::log(script.background);
  std::vector<double> frame(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), base);
  for (const auto& shape : script.shapes) {
    const Extent ext = shape_extent(shape, t_us);
    const int x_lo = std::max(0, static_cast<int>(std::floor(ext.x0)) - 1);
    const int x_hi = std::min(width - 1, static_cast<int>(std::ceil(ext.x1)) + 1);
    const int y_lo = std::max(0, static_cast<int>(std::floor(ext.y0)) - 1);
    const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(ext.y1)) + 1);
    const double gain = std::log(shape.contrast);
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        if (shape_covers(shape, t_us, x, y)) {
          frame[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                static_cast<std::size_t>(x)] += gain;
        }
      }
    }
  }
  return frame;
}

DvsSensor::DvsSensor(int width, int height, double threshold, std::vector<double> pixel_scale)
    : width_(width), height_(height), threshold_(threshold), pixel_scale_(std::move(pixel_scale)) {
  if (!(threshold > 0)) throw ConfigError("DVS threshold must be positive");
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (pixel_scale_.empty()) pixel_scale_.assign(n, 1.0);
  if (pixel_scale_.size() != n) throw ShapeError("pixel threshold scale has the wrong size");
}

void DvsSensor::reset(std::span<const double> log_frame) {
  reference_.assign(log_frame.begin(), log_frame.end());
}

void DvsSensor::step(std::span<const double> log_frame, std::uint64_t t_us,
                     std::vector<Event>& out) {
  if (reference_.size() != log_frame.size()) throw ShapeError("DVS frame size changed");
  std::size_t i = 0;
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x, ++i) {
      const double diff = log_frame[i] - reference_[i];
      const double c = threshold_ * pixel_scale_[i];
      if (std::abs(diff) < c) continue;
      const double crossings = std::floor(std::abs(diff) / c);
      reference_[i] += (diff > 0 ? crossings : -crossings) * c;
      out.push_back(Event{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), t_us,
                          static_cast<std::uint8_t>(diff > 0 ? 1 : 0)});
    }
  }
}

EventStream simulate_dvs(const SceneScript& script, int width, int height, std::uint64_t seed) {
  script.validate();
  if (width < 1 || height < 1 || width > 256 || height > 256) {
    throw ConfigError("simulated sensor must be between 1x1 and 256x256");
  }
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  std::vector<double> scale(n, 1.0);
  if (script.threshold_sigma > 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(1.0, script.threshold_sigma);
    for (double& s : scale) s = std::max(0.1, noise(rng));
  }
  DvsSensor sensor(width, height, script.threshold, std::move(scale));
  sensor.reset(render_log_intensity(script, width, height, 0));

  std::vector<Event> events;
  for (std::uint64_t t = script.step_us; t <= script.duration_us; t += script.step_us) {
    sensor.step(render_log_intensity(script, width, height, t), t, events);
  }

  EventStream stream = EventStream::make(std::move(events), width, height);
  stream.label = script.label;
  if (!script.shapes.empty()) {
    // Box swept by the first shape over the scene, clipped to the sensor.
    const ShapeSpec& s = script.shapes.front();
    Extent box = shape_extent(s, 0);
    for (std::uint64_t t = script.step_us; t <= script.duration_us; t += script.step_us) {
      const Extent e = shape_extent(s, t);
      box = {std::min(box.x0, e.x0), std::min(box.y0, e.y0), std::max(box.x1, e.x1),
             std::max(box.y1, e.y1)};
    }
    box = {std::clamp(box.x0, 0.0, double(width)), std::clamp(box.y0, 0.0, double(height)),
           std::clamp(box.x1, 0.0, double(width)), std::clamp(box.y1, 0.0, double(height))};
    if (box.x1 > box.x0 && box.y1 > box.y0) {
      stream.bbox = BoundingBox{(box.x0 + box.x1) / 2, (box.y0 + box.y1) / 2, box.x1 - box.x0,
                                box.y1 - box.y0};
    }
  }
  return stream;
}

}  // namespace evg
