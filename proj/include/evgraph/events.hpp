#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evg {

// Polarity p = 1 encodes a positive log-intensity change.
struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint64_t t = 0;  // microseconds
  std::uint8_t p = 0;

  bool operator==(const Event&) const = default;
};

// Center/extent box in pixel units.
struct BoundingBox {
  double cx = 0, cy = 0, w = 0, h = 0;

  bool operator==(const BoundingBox&) const = default;
};

// Time-ordered events from one sensor. Use make() to validate.
struct EventStream {
  std::vector<Event> events;
  int width = 1;
  int height = 1;
  std::optional<int> label;
  std::optional<BoundingBox> bbox;

  // Validates coordinates against the sensor size and stably sorts by t.
  static EventStream make(std::vector<Event> events, int width, int height);

  [[nodiscard]] std::size_t size() const noexcept { return events.size(); }
  [[nodiscard]] bool empty() const noexcept { return events.empty(); }
};

inline constexpr std::size_t kBinRecordBytes = 5;
inline constexpr std::uint64_t kMaxBinTimestamp = (std::uint64_t{1} << 23) - 1;

// 5-byte big-endian records: x, y, then p in bit 7 of byte 2 and a 23-bit t.
EventStream decode_bin(std::span<const std::uint8_t> bytes, int width, int height);
std::vector<std::uint8_t> encode_bin(const EventStream& stream);

EventStream read_bin_file(const std::filesystem::path& path, int width, int height);
void write_bin_file(const std::filesystem::path& path, const EventStream& stream);

// CSV with header `x,y,t,p`.
EventStream decode_csv(std::string_view text, int width, int height);
std::string encode_csv(const EventStream& stream);

// Returns the contiguous run of exactly `max_events` events with the smallest
// time span (earliest start wins ties), or the stream itself if it is short.
EventStream densest_window_select(const EventStream& stream, std::size_t max_events);

// ------------------------------------------------------------------ simulation

enum class ShapeKind { bar, disk, rectangle, triangle };

std::string_view to_string(ShapeKind kind);
ShapeKind parse_shape_kind(std::string_view name);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::disk;
  double size = 10.0;          // pixels; the shape's characteristic extent
  double vx = 0.0, vy = 0.0;   // pixels per millisecond
  double x0 = 0.0, y0 = 0.0;   // center at t = 0, pixels
  double contrast = 2.0;       // intensity multiplier inside the shape
};

struct SceneScript {
  std::uint64_t duration_us = 50'000;
  std::vector<ShapeSpec> shapes;
  double background = 0.5;
  double threshold = 0.3;  // contrast threshold C on log intensity
  std::uint64_t step_us = 500;
  // Std-dev of per-pixel multiplicative threshold mismatch drawn from the seed.
  double threshold_sigma = 0.0;
  std::optional<int> label;

  void validate() const;
};

// Axis-aligned extent (x0, y0, x1, y1) of a shape at time t.
struct Extent {
  double x0, y0, x1, y1;
};
Extent shape_extent(const ShapeSpec& shape, std::uint64_t t_us);

// Whether the pixel center (px + 0.5, py + 0.5) lies inside the shape at t.
bool shape_covers(const ShapeSpec& shape, std::uint64_t t_us, int px, int py);

// Row-major log-intensity image of the scene at time t.
std::vector<double> render_log_intensity(const SceneScript& script, int width, int height,
                                         std::uint64_t t_us);

// Per-pixel comparator with a stored reference level. Emits at most one event
// per pixel per frame and moves the reference by whole multiples of C.
class DvsSensor {
 public:
  DvsSensor(int width, int height, double threshold, std::vector<double> pixel_scale = {});

  void reset(std::span<const double> log_frame);
  void step(std::span<const double> log_frame, std::uint64_t t_us, std::vector<Event>& out);

 private:
  int width_;
  int height_;
  double threshold_;
  std::vector<double> pixel_scale_;
  std::vector<double> reference_;
};

EventStream simulate_dvs(const SceneScript& script, int width, int height, std::uint64_t seed);

// ------------------------------------------------------------------ datasets

struct SampleRecord {
  std::string path;  // relative to the manifest's directory
  int class_id = 0;
  BoundingBox bbox;
  int width = 0;
  int height = 0;

  bool operator==(const SampleRecord&) const = default;
};

struct Manifest {
  std::filesystem::path root;  // directory the sample paths are relative to
  std::vector<SampleRecord> samples;

  [[nodiscard]] std::filesystem::path resolve(const SampleRecord& s) const { return root / s.path; }
};

Manifest load_manifest(const std::filesystem::path& manifest_file);
void save_manifest(const Manifest& manifest, const std::filesystem::path& manifest_file);

// Class c maps to shape kind c mod 4. Size and speed bands also depend on c,
// and motion runs along a random diagonal from a jittered central start.
SceneScript class_scene(int class_id, int width, int height, std::uint64_t seed);

// Writes <out_dir>/samples/*.bin and <out_dir>/manifest.json.
Manifest synth_dataset(int classes, int samples_per_class, int width, int height,
                       const std::filesystem::path& out_dir, std::uint64_t seed);

}  // namespace evg
