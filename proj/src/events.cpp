#include "evgraph/events.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "evgraph/error.hpp"

namespace evg {

EventStream EventStream::make(std::vector<Event> events, int width, int height) {
  if (width < 1 || height < 1) {
    throw ConfigError("sensor size must be at least 1x1, got " + std::to_string(width) + "x" +
                      std::to_string(height));
  }
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.x >= width || e.y >= height) {
      throw RangeError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + ", " +
                       std::to_string(e.y) + ") lies outside the " + std::to_string(width) + "x" +
                       std::to_string(height) + " sensor");
    }
    if (e.p > 1) throw RangeError("event " + std::to_string(i) + " has polarity > 1");
  }
  if (!std::is_sorted(events.begin(), events.end(),
                      [](const Event& a, const Event& b) { return a.t < b.t; })) {
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
  }
  EventStream s;
  s.events = std::move(events);
  s.width = width;
  s.height = height;
  return s;
}

EventStream decode_bin(std::span<const std::uint8_t> bytes, int width, int height) {
  if (bytes.size() % kBinRecordBytes != 0) {
    throw FormatError("binary event data has " + std::to_string(bytes.size()) +
                      " bytes, not a multiple of 5");
  }
  std::vector<Event> events;
  events.reserve(bytes.size() / kBinRecordBytes);
  for (std::size_t off = 0; off < bytes.size(); off += kBinRecordBytes) {
    const auto* r = bytes.data() + off;
    Event e;
    e.x = r[0];
    e.y = r[1];
    e.p = static_cast<std::uint8_t>(r[2] >> 7);
    e.t = (std::uint64_t{r[2] & 0x7Fu} << 16) | (std::uint64_t{r[3]} << 8) | r[4];
    if (e.x >= width || e.y >= height) {
      throw RangeError("record " + std::to_string(off / kBinRecordBytes) + " decodes to (" +
                       std::to_string(e.x) + ", " + std::to_string(e.y) + "), outside the " +
                       std::to_string(width) + "x" + std::to_string(height) + " sensor");
    }
    events.push_back(e);
  }
  return EventStream::make(std::move(events), width, height);
}

std::vector<std::uint8_t> encode_bin(const EventStream& stream) {
  std::vector<std::uint8_t> out;
  out.reserve(stream.size() * kBinRecordBytes);
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (e.t > kMaxBinTimestamp) {
      throw OverflowError("event " + std::to_string(i) + " timestamp " + std::to_string(e.t) +
                          " does not fit in 23 bits");
    }
    if (e.x > 0xFF || e.y > 0xFF) {
      throw OverflowError("event " + std::to_string(i) + " coordinates do not fit in one byte");
    }
    out.push_back(static_cast<std::uint8_t>(e.x));
    out.push_back(static_cast<std::uint8_t>(e.y));
    out.push_back(static_cast<std::uint8_t>(((e.p & 1u) << 7) | ((e.t >> 16) & 0x7Fu)));
    out.push_back(static_cast<std::uint8_t>((e.t >> 8) & 0xFFu));
    out.push_back(static_cast<std::uint8_t>(e.t & 0xFFu));
  }
  return out;
}

EventStream read_bin_file(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_bin(bytes, width, height);
}

void write_bin_file(const std::filesystem::path& path, const EventStream& stream) {
  const auto bytes = encode_bin(stream);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write event file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

namespace {

std::uint64_t parse_field(std::string_view s, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("CSV line " + std::to_string(line) + ": bad integer field '" +
                      std::string(s) + "'");
  }
  return v;
}

}  // namespace

EventStream decode_csv(std::string_view text, int width, int height) {
  std::vector<Event> events;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "x,y,t,p") throw FormatError("CSV header must be 'x,y,t,p'");
      header_seen = true;
      continue;
    }
    std::uint64_t f[4];
    for (int k = 0; k < 4; ++k) {
      const auto comma = line.find(',');
      if ((k < 3) == (comma == std::string_view::npos)) {
        throw FormatError("CSV line " + std::to_string(line_no) + ": expected 4 fields");
      }
      f[k] = parse_field(line.substr(0, comma), line_no);
      line = k < 3 ? line.substr(comma + 1) : std::string_view{};
    }
    if (f[0] > std::numeric_limits<std::uint16_t>::max() ||
        f[1] > std::numeric_limits<std::uint16_t>::max() || f[3] > 1) {
      throw RangeError("CSV line " + std::to_string(line_no) + ": field out of range");
    }
    events.push_back(Event{static_cast<std::uint16_t>(f[0]), static_cast<std::uint16_t>(f[1]),
                           f[2], static_cast<std::uint8_t>(f[3])});
  }
  if (!header_seen) throw FormatError("CSV input has no header");
  return EventStream::make(std::move(events), width, height);
}

std::string encode_csv(const EventStream& stream) {
  std::ostringstream os;
  os << "x,y,t,p\n";
  for (const Event& e : stream.events) {
    os << e.x << ',' << e.y << ',' << e.t << ',' << static_cast<int>(e.p) << '\n';
  }
  return os.str();
}

EventStream densest_window_select(const EventStream& stream, std::size_t max_events) {
  if (max_events < 1) throw ConfigError("max_events must be at least 1");
  if (stream.size() <= max_events) return stream;
  const auto& ev = stream.events;
  std::size_t best = 0;
  std::uint64_t best_span = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t start = 0; start + max_events <= ev.size(); ++start) {
    const std::uint64_t span = ev[start + max_events - 1].t - ev[start].t;
    if (span < best_span) {
      best_span = span;
      best = start;
    }
  }
  EventStream out = stream;
  out.events.assign(ev.begin() + static_cast<std::ptrdiff_t>(best),
                    ev.begin() + static_cast<std::ptrdiff_t>(best + max_events));
  return out;
}

}  // namespace evg
