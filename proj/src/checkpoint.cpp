#include "evgraph/ndiff/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "evgraph/error.hpp"

namespace evg::nd {

using nlohmann::json;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet& params, const json& extra) {
  json header = extra.is_object() ? extra : json::object();
  json list = json::array();
  for (const auto& p : params) {
    list.push_back({{"name", p.name},
                    {"rows", p.tensor.value.rows()},
                    {"cols", p.tensor.value.cols()},
                    {"trainable", p.trainable}});
  }
  header["parameters"] = std::move(list);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  const std::uint64_t len = text.size();
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(len >> (8 * k)));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : params) {
    for (double v : p.tensor.value.values()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("checkpoint is truncated");
  std::uint64_t len = 0;
  for (int k = 0; k < 8; ++k) len |= std::uint64_t{bytes[k]} << (8 * k);
  if (len > bytes.size() - 8) throw FormatError("checkpoint header length exceeds file size");
  Checkpoint c;
  try {
    c.header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  std::size_t pos = 8 + len;
  try {
    for (const auto& item : c.header.at("parameters")) {
      const auto rows = item.at("rows").get<std::size_t>();
      const auto cols = item.at("cols").get<std::size_t>();
      if (rows != 0 && cols > (bytes.size() - pos) / 4 / rows) {
        throw FormatError("checkpoint data is truncated");
      }
      Matrix<float> m(rows, cols);
      for (float& v : m.values()) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= std::uint32_t{bytes[pos + k]} << (8 * k);
        std::memcpy(&v, &bits, 4);
        pos += 4;
      }
      c.names.push_back(item.at("name").get<std::string>());
      c.arrays.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  if (pos != bytes.size()) throw FormatError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const json& extra) {
  const auto bytes = serialize_checkpoint(params, extra);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

void apply_checkpoint(const Checkpoint& ckpt, ParameterSet& params) {
  for (auto& p : params) {
    std::size_t i = 0;
    while (i < ckpt.names.size() && ckpt.names[i] != p.name) ++i;
    if (i == ckpt.names.size()) throw FormatError("checkpoint is missing parameter '" + p.name + "'");
    const auto& a = ckpt.arrays[i];
    if (a.rows() != p.tensor.value.rows() || a.cols() != p.tensor.value.cols()) {
      throw ShapeError("checkpoint parameter '" + p.name + "' is " + a.shape_str() +
                       ", model expects " + p.tensor.value.shape_str());
    }
    p.tensor.value = a.cast<double>();
    p.tensor.zero_grad();
  }
}

}  // namespace evg::nd
