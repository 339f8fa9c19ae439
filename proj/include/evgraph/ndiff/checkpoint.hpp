#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "evgraph/ndiff/params.hpp"

namespace evg::nd {

// Checkpoint layout (little-endian):
//   u64 header length | JSON header | f32 arrays in header order
// The header holds {"parameters": [{"name", "rows", "cols"}...]} merged with
// whatever the caller passes in `extra` (hyperparameters, model metadata).
std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet& params,
                                               const nlohmann::json& extra);

struct Checkpoint {
  nlohmann::json header;
  std::vector<std::string> names;
  std::vector<Matrix<float>> arrays;
};

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const nlohmann::json& extra);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies arrays into same-named parameters; shapes must match and every
// parameter must be present.
void apply_checkpoint(const Checkpoint& ckpt, ParameterSet& params);

}  // namespace evg::nd
