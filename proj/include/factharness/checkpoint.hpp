#pragma once

#include <cstdint>
#include <string>

#include "factharness/m2trans.hpp"

namespace factharness::checkpoint {

// Binary container: magic, format version, ModelConfig, named tensors as
// 64-bit little-endian payloads, trailing FNV-1a checksum. Save→load is
// bit-exact; the checksum is verified before anything is parsed.
inline constexpr std::uint32_t kFormatVersion = 1;

void save_params(const m2trans::ModelParams& params, const std::string& path);
m2trans::ModelParams load_params(const std::string& path);

// load + reject checkpoints whose config does not match the running one
m2trans::ModelParams load_params(const std::string& path, const m2trans::ModelConfig& expected);

}  // namespace factharness::checkpoint
