// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "latentlab/model.hpp"
#include "latentlab/taskgen.hpp"

namespace latentlab {

/// Mean over answer-span positions with a target of -log p(target). Every
/// other position gets weight zero and is never read.
ad::Var answer_nll(ad::Var logits, std::span<const TokenId> targets, const SequenceLayout& layout);
double answer_nll(const Tensor& logits, std::span<const TokenId> targets, const SequenceLayout& layout);

struct OptimizerConfig {
  double lr = 6e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 1;
  std::size_t accumulation_steps = 8;
  double warmup_fraction = 0.05;

  std::size_t effective_batch() const { return batch_size * accumulation_steps; }
  void validate() const;
};

nlohmann::json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

std::size_t updates_per_epoch(std::size_t n_examples, std::size_t effective_batch);
std::size_t warmup_steps(std::size_t total_updates, double warmup_fraction);
/// Learning rate used for update `step` (0-based) of a stage with `total`
/// updates: linear ramp from 0 over the warmup, then half-cosine to 0.
double scheduled_lr(std::size_t step, std::size_t total, std::size_t warmup, double peak);

/// Decoupled-weight-decay Adam over the trainable parameters of a store.
class AdamW {
 public:
  explicit AdamW(OptimizerConfig config) : config_(config) {}
  /// One update from Parameter::grad; frozen parameters are never touched.
  void step(ad::ParameterStore& params, double lr);
  void reset();
  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  OptimizerConfig config_;
  std::size_t t_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

struct StageSchedule {
  std::size_t stage1_epochs = 4;
  std::size_t stage2_epochs = 6;
  MaskVariant stage1_variant = MaskVariant::bottleneck;
  /// Restart AdamW moments at the stage boundary.
  bool reset_optimizer = false;

  std::size_t total_epochs() const { return stage1_epochs + stage2_epochs; }
};

enum class Selection { best_validation, final };
std::string_view to_string(Selection s);
Selection parse_selection(std::string_view s);

struct EpochRecord {
  int stage = 1;
  std::size_t epoch = 0;  // 1-based across stages
  std::string policy;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr_last = 0.0;
  std::size_t updates = 0;

  nlohmann::json to_json() const;
};

struct RunRecord {
  std::string method;
  std::vector<EpochRecord> epochs;
  Selection selection = Selection::best_validation;
  std::size_t selected_epoch = 0;
  double selected_val_accuracy = 0.0;
  /// File name of the selected checkpoint inside TrainOptions::out_dir.
  std::string checkpoint;
  std::string config_hash;

  nlohmann::json summary_json() const;
  /// One line per epoch followed by the summary line.
  std::string to_jsonl() const;
};

struct TrainOptions {
  Selection selection = Selection::best_validation;
  /// Where the selected checkpoint is written; empty disables writing.
  std::filesystem::path out_dir;
  std::string config_hash;
  std::size_t image_copies = 1;
  /// Evaluate on the validation set after every epoch.
  bool validate = true;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains one stage in place. `optimizer` carries state across stages.
/// Epoch numbers continue from `epoch_offset`.
std::vector<EpochRecord> train_stage(Model& model, std::span<const TaskExample> train,
                                     std::span<const TaskExample> val, const MaskPolicy& policy, std::size_t epochs,
                                     const OptimizerConfig& opt, AdamW& optimizer, std::uint64_t seed, int stage_id,
                                     std::size_t epoch_offset, const TrainOptions& options);

RunRecord run_livr(Model& model, std::span<const TaskExample> train, std::span<const TaskExample> val,
                   const StageSchedule& schedule, const OptimizerConfig& opt, std::uint64_t seed,
                   const TrainOptions& options = {});

enum class BaselineKind { direct_sft, latents_only, mask_only, image_twice };
std::string_view to_string(BaselineKind k);
BaselineKind parse_baseline_kind(std::string_view s);

/// `schedule` supplies the total epoch budget and, for mask_only, the stage split.
RunRecord run_baseline(BaselineKind kind, Model& model, std::span<const TaskExample> train,
                       std::span<const TaskExample> val, const StageSchedule& schedule, const OptimizerConfig& opt,
                       std::uint64_t seed, const TrainOptions& options = {});

/// Image-copy count a baseline trains and evaluates with.
std::size_t baseline_image_copies(BaselineKind kind);

/// Paths of parameters outside the TrainabilityMap whose values differ bitwise.
std::vector<std::string> frozen_parameter_changes(const Model& reference, const Model& trained);

}  // namespace latentlab
