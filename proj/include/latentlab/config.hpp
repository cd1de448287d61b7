// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentlab/dataset.hpp"
#include "latentlab/model.hpp"
#include "latentlab/training.hpp"

namespace latentlab {

/// Everything a run depends on. Serialized as JSON; the vocabulary is
/// rebuilt from the latent count and is not part of the file.
struct RunConfig {
  ModelConfig model;
  std::vector<TaskKind> tasks = {TaskKind::localization};
  SplitSizes sizes;
  GenOptions gen;
  StageSchedule schedule;
  OptimizerConfig optimizer;
  /// livr, direct_sft, latents_only, mask_only or image_twice.
  std::string method = "livr";
  /// best_validation, final, or auto (final for task mixtures).
  std::string selection = "auto";
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string output_dir = "runs/default";

  Selection resolved_selection() const;
  /// Model config with the latent count forced to 0 for no-latent methods.
  ModelConfig effective_model() const;
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Sets a dotted key ("optimizer.lr=0.001"). The value is parsed as JSON
/// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Defaults, then the file, then overrides, then the seed flag.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed);

/// 16 hex digits of FNV-1a over the canonical JSON dump, directories excluded.
std::string config_hash(const RunConfig& c);
std::string fnv1a_hex(std::string_view bytes);

}  // namespace latentlab
