// SPDX-License-Identifier: Apache-2.0
//
// Subcommand implementations behind the latentlab binary.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "latentlab/config.hpp"
#include "latentlab/diagnostics.hpp"

namespace latentlab {

/// Relative paths resolve against $LATENTLAB_OUT when it is set.
std::filesystem::path resolve_output(const std::filesystem::path& p);

struct GenResult {
  std::size_t examples = 0;
  std::size_t verified = 0;
  std::vector<std::filesystem::path> files;
};

/// Writes train/val/test datasets for one task. Throws DataError if any
/// example fails its oracle.
GenResult cmd_gen(TaskKind kind, const SplitSizes& sizes, std::uint64_t seed, const GenOptions& gen,
                  const std::filesystem::path& dir, std::ostream& log);

struct TrainResult {
  RunRecord record;
  std::filesystem::path run_dir;
};

/// Loads train/val splits of every configured task from data_dir and writes
/// run_record.jsonl, checkpoint.llck, config.json and timing.json to output_dir.
TrainResult cmd_train(const RunConfig& config, std::ostream& log);

EvalReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                    const std::string& dataset, const MaskPolicy& policy, std::size_t image_copies,
                    const std::filesystem::path& out);

enum class AblationAxis { schedule, latents, mask, placement, embeddings };
AblationAxis parse_ablation_axis(std::string_view s);
std::string_view to_string(AblationAxis a);

struct AblationCell {
  std::string label;
  RunConfig config;
};

std::vector<AblationCell> ablation_cells(const RunConfig& base, AblationAxis axis);

struct AblationRow {
  std::string label;
  double val_accuracy = 0.0;
  double test_standard = 0.0;
  double test_bottleneck = 0.0;
  double test_drop_latents = 0.0;
};

/// Trains every cell from the same base seed and evaluates on the test split.
/// Writes ablate_<axis>.tsv and .json to the base output_dir.
std::vector<AblationRow> cmd_ablate(const RunConfig& base, AblationAxis axis, std::ostream& log);

void cmd_inspect_attn(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                      const std::string& dataset, std::size_t n, const MaskPolicy& policy,
                      const std::filesystem::path& out_dir, std::ostream& log);

void cmd_export_hidden(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                       const std::vector<std::string>& datasets, std::size_t n_per_task,
                       const std::filesystem::path& out_file);

}  // namespace latentlab
