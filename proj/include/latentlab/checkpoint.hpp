// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container:
//
//   bytes 0..7   magic "LLCKPT01"
//   bytes 8..15  manifest length N (u64, little-endian)
//   next N bytes JSON manifest {"params": [{"path", "shape", "offset", "trainable"}], "meta": {...}}
//   remainder    f64 little-endian parameter data, offsets counted in doubles
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "latentlab/autodiff.hpp"

namespace latentlab {

struct Checkpoint {
  ad::ParameterStore params;
  nlohmann::json meta;
};

void save_checkpoint(const std::filesystem::path& file, const ad::ParameterStore& params, const nlohmann::json& meta);
Checkpoint load_checkpoint(const std::filesystem::path& file);
/// Reads only the JSON manifest.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& file);

}  // namespace latentlab
