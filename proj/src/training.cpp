// SPDX-License-Identifier: Apache-2.0
#include "latentlab/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "latentlab/diagnostics.hpp"
#include "latentlab/error.hpp"
#include "latentlab/rng.hpp"

namespace latentlab {

namespace {

std::vector<double> answer_weights(std::span<const TokenId> targets, const SequenceLayout& layout,
                                   std::vector<TokenId>& safe_targets) {
  if (targets.size() != layout.total_len) throw ShapeError("target count differs from layout length");
  if (layout.answer.empty()) throw ConfigError("answer span is empty");
  std::vector<double> w(layout.total_len, 0.0);
  safe_targets.assign(layout.total_len, 0);
  std::size_t n = 0;
  for (std::size_t i = layout.answer.begin; i < layout.answer.end; ++i) n += targets[i] != kNoTarget ? 1 : 0;
  if (n == 0) throw ConfigError("answer span has no targets");
  for (std::size_t i = layout.answer.begin; i < layout.answer.end; ++i) {
    if (targets[i] == kNoTarget) continue;
    w[i] = 1.0 / static_cast<double>(n);
    safe_targets[i] = targets[i];
  }
  return w;
}

}  // namespace

ad::Var answer_nll(ad::Var logits, std::span<const TokenId> targets, const SequenceLayout& layout) {
  std::vector<TokenId> safe;
  const std::vector<double> w = answer_weights(targets, layout, safe);
  return ad::cross_entropy(logits, safe, w);
}

double answer_nll(const Tensor& logits, std::span<const TokenId> targets, const SequenceLayout& layout) {
  ad::Graph g(false);
  return answer_nll(g.constant(logits), targets, layout).value().item();
}

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("epsilon must be positive");
  if (batch_size == 0 || accumulation_steps == 0) throw ConfigError("batch size and accumulation steps must be >= 1");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw ConfigError("warmup fraction must lie in [0, 1]");
}

nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"batch_size", c.batch_size},
          {"accumulation_steps", c.accumulation_steps},
          {"warmup_fraction", c.warmup_fraction}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.accumulation_steps = j.value("accumulation_steps", c.accumulation_steps);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.validate();
  return c;
}

std::size_t updates_per_epoch(std::size_t n_examples, std::size_t effective_batch) {
  return (n_examples + effective_batch - 1) / effective_batch;
}

std::size_t warmup_steps(std::size_t total_updates, double warmup_fraction) {
  return static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_updates) - 1e-9));
}

double scheduled_lr(std::size_t step, std::size_t total, std::size_t warmup, double peak) {
  if (total == 0) return 0.0;
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  const double denom = static_cast<double>(std::max<std::size_t>(1, total - warmup));
  const double progress = static_cast<double>(step - warmup) / denom;
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(ad::ParameterStore& params, double lr) {
  ++t_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
  const double step_size = lr / bc1;
  const double bc2_sqrt = std::sqrt(bc2);
  for (auto& p : params.all()) {
    if (!p.trainable) continue;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    Moments& s = state_[p.path];
    if (s.m.empty()) {
      s.m.assign(p.value.size(), 0.0);
      s.v.assign(p.value.size(), 0.0);
    }
    auto w = p.value.data();
    auto g = p.grad.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= 1.0 - lr * c.weight_decay;
      s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g[i];
      s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double denom = std::sqrt(s.v[i]) / bc2_sqrt + c.eps;
      w[i] -= step_size * s.m[i] / denom;
    }
    if (!p.value.all_finite()) throw NumericError("non-finite parameter after update: " + p.path);
  }
}

void AdamW::reset() {
  t_ = 0;
  state_.clear();
}

std::string_view to_string(Selection s) { return s == Selection::best_validation ? "best_validation" : "final"; }

Selection parse_selection(std::string_view s) {
  if (s == "best_validation") return Selection::best_validation;
  if (s == "final") return Selection::final;
  throw ConfigError("unknown selection rule: " + std::string(s));
}

nlohmann::json EpochRecord::to_json() const {
  return {{"type", "epoch"}, {"stage", stage}, {"epoch", epoch}, {"policy", policy}, {"train_loss", train_loss},
          {"val_accuracy", val_accuracy}, {"lr_last", lr_last}, {"updates", updates}};
}

nlohmann::json RunRecord::summary_json() const {
  return {{"type", "summary"},      {"method", method},
          {"selection", to_string(selection)}, {"selected_epoch", selected_epoch},
          {"selected_val_accuracy", selected_val_accuracy}, {"checkpoint", checkpoint},
          {"config_hash", config_hash}, {"epochs", epochs.size()}};
}

std::string RunRecord::to_jsonl() const {
  std::ostringstream os;
  for (const auto& e : epochs) {
    nlohmann::json j = e.to_json();
    j["config_hash"] = config_hash;
    os << j.dump() << '\n';
  }
  os << summary_json().dump() << '\n';
  return os.str();
}

std::vector<EpochRecord> train_stage(Model& model, std::span<const TaskExample> train,
                                     std::span<const TaskExample> val, const MaskPolicy& policy, std::size_t epochs,
                                     const OptimizerConfig& opt, AdamW& optimizer, std::uint64_t seed, int stage_id,
                                     std::size_t epoch_offset, const TrainOptions& options) {
  std::vector<EpochRecord> records;
  if (epochs == 0) return records;
  if (train.empty()) throw DataError("training set is empty");
  opt.validate();
  const Vocabulary& vocab = model.vocab();
  const std::size_t eff = opt.effective_batch();
  const std::size_t per_epoch = updates_per_epoch(train.size(), eff);
  const std::size_t total = epochs * per_epoch;
  const std::size_t warmup = warmup_steps(total, opt.warmup_fraction);
  std::size_t update = 0;

  for (std::size_t e = 0; e < epochs; ++e) {
    const std::size_t global_epoch = epoch_offset + e + 1;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(seed, "shuffle", {global_epoch});
    shuffle.shuffle(order);

    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t begin = b * eff, end = std::min(train.size(), begin + eff);
      const double inv_batch = 1.0 / static_cast<double>(end - begin);
      model.params().zero_grad();
      for (std::size_t pos = begin; pos < end; ++pos) {
        const TaskExample& ex = train[order[pos]];
        const Sequence seq = assemble_sequence(vocab, model.sequence_spec(ex.image, policy, options.image_copies),
                                               ex.prompt_tokens(vocab), ex.answer_tokens(vocab));
        const AttentionMask mask = build_mask(policy, seq.layout);
        ForwardOptions fo;
        fo.training = true;
        fo.dropout_seed = derive_seed(seed, "dropout", {global_epoch, pos});
        try {
          ad::Graph g;
          const ForwardTrace trace = model.build(g, g.constant(model.image_embeddings(ex.image)), seq.tokens, mask, fo);
          const ad::Var loss = answer_nll(trace.logits, seq.targets, seq.layout);
          loss_sum += loss.value().item();
          g.backward(ad::scale(loss, inv_batch));
          g.accumulate_parameter_grads();
        } catch (const NumericError& err) {
          throw NumericError("stage " + std::to_string(stage_id) + " epoch " + std::to_string(global_epoch) +
                             " example " + std::to_string(ex.index) + ": " + err.what());
        }
      }
      lr = scheduled_lr(update, total, warmup, opt.lr);
      optimizer.step(model.params(), lr);
      ++update;
    }

    EpochRecord rec;
    rec.stage = stage_id;
    rec.epoch = global_epoch;
    rec.policy = std::string(to_string(policy.variant));
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.lr_last = lr;
    rec.updates = per_epoch;
    if (options.validate && !val.empty()) {
      rec.val_accuracy = evaluate(model, val, MaskPolicy::standard(), options.image_copies).accuracy;
    }
    if (options.on_epoch) options.on_epoch(rec);
    records.push_back(rec);
  }
  model.params().zero_grad();
  return records;
}

namespace {

struct Snapshot {
  std::vector<Tensor> values;
};

Snapshot snapshot(const Model& m) {
  Snapshot s;
  for (const auto& p : m.params().all()) s.values.push_back(p.value);
  return s;
}

void restore(Model& m, const Snapshot& s) {
  std::size_t i = 0;
  for (auto& p : m.params().all()) p.value = s.values[i++];
}

/// Runs the stages and applies checkpoint selection.
RunRecord run_stages(Model& model, std::span<const TaskExample> train, std::span<const TaskExample> val,
                     const std::vector<std::pair<MaskPolicy, std::size_t>>& stages, bool reset_between,
                     const OptimizerConfig& opt, std::uint64_t seed, const TrainOptions& options, std::string method) {
  RunRecord run;
  run.method = std::move(method);
  run.selection = options.selection;
  run.config_hash = options.config_hash;
  AdamW optimizer(opt);
  Snapshot best = snapshot(model);
  double best_acc = -1.0;
  std::size_t offset = 0;
  TrainOptions stage_opts = options;
  stage_opts.on_epoch = nullptr;
  int stage_id = 0;
  for (const auto& [policy, epochs] : stages) {
    ++stage_id;
    if (epochs == 0) continue;
    if (reset_between && offset > 0) optimizer.reset();
    stage_opts.on_epoch = [&](const EpochRecord& rec) {
      if (options.on_epoch) options.on_epoch(rec);
      if (options.selection == Selection::best_validation && rec.val_accuracy > best_acc) {
        best_acc = rec.val_accuracy;
        best = snapshot(model);
        run.selected_epoch = rec.epoch;
        run.selected_val_accuracy = rec.val_accuracy;
      }
    };
    auto recs = train_stage(model, train, val, policy, epochs, opt, optimizer, seed, stage_id, offset, stage_opts);
    run.epochs.insert(run.epochs.end(), recs.begin(), recs.end());
    offset += epochs;
  }
  if (options.selection == Selection::best_validation && !run.epochs.empty()) {
    restore(model, best);
  } else if (!run.epochs.empty()) {
    run.selected_epoch = run.epochs.back().epoch;
    run.selected_val_accuracy = run.epochs.back().val_accuracy;
  }
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    const auto ck = options.out_dir / "checkpoint.llck";
    model.save(ck, {{"method", run.method}, {"selected_epoch", run.selected_epoch}, {"config_hash", run.config_hash}});
    run.checkpoint = ck.filename().string();
  }
  return run;
}

}  // namespace

RunRecord run_livr(Model& model, std::span<const TaskExample> train, std::span<const TaskExample> val,
                   const StageSchedule& schedule, const OptimizerConfig& opt, std::uint64_t seed,
                   const TrainOptions& options) {
  if (model.config().latent.count == 0) throw ConfigError("LIVR needs at least one latent token");
  const std::vector<std::pair<MaskPolicy, std::size_t>> stages = {
      {MaskPolicy{schedule.stage1_variant, false}, schedule.stage1_epochs},
      {MaskPolicy::standard(), schedule.stage2_epochs}};
  return run_stages(model, train, val, stages, schedule.reset_optimizer, opt, seed, options,
                    schedule.stage1_epochs == 0 ? "latents_only" : "livr");
}

std::string_view to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::direct_sft: return "direct_sft";
    case BaselineKind::latents_only: return "latents_only";
    case BaselineKind::mask_only: return "mask_only";
    case BaselineKind::image_twice: return "image_twice";
  }
  return "?";
}

BaselineKind parse_baseline_kind(std::string_view s) {
  for (auto k : {BaselineKind::direct_sft, BaselineKind::latents_only, BaselineKind::mask_only, BaselineKind::image_twice}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown baseline: " + std::string(s));
}

std::size_t baseline_image_copies(BaselineKind kind) { return kind == BaselineKind::image_twice ? 2 : 1; }

RunRecord run_baseline(BaselineKind kind, Model& model, std::span<const TaskExample> train,
                       std::span<const TaskExample> val, const StageSchedule& schedule, const OptimizerConfig& opt,
                       std::uint64_t seed, const TrainOptions& options) {
  const std::size_t K = model.config().latent.count;
  const std::size_t total = schedule.total_epochs();
  switch (kind) {
    case BaselineKind::latents_only: {
      if (K == 0) throw ConfigError("latents_only needs K >= 1");
      StageSchedule s = schedule;
      s.stage1_epochs = 0;
      s.stage2_epochs = total;
      return run_livr(model, train, val, s, opt, seed, options);
    }
    case BaselineKind::direct_sft: {
      if (K != 0) throw ConfigError("direct_sft needs K = 0");
      return run_stages(model, train, val, {{MaskPolicy::standard(), total}}, false, opt, seed, options, "direct_sft");
    }
    case BaselineKind::mask_only: {
      if (K != 0) throw ConfigError("mask_only needs K = 0");
      const std::vector<std::pair<MaskPolicy, std::size_t>> stages = {
          {MaskPolicy{MaskVariant::ans_to_vis_only, false}, schedule.stage1_epochs},
          {MaskPolicy::standard(), schedule.stage2_epochs}};
      return run_stages(model, train, val, stages, schedule.reset_optimizer, opt, seed, options, "mask_only");
    }
    case BaselineKind::image_twice: {
      if (K != 0) throw ConfigError("image_twice needs K = 0");
      TrainOptions o = options;
      o.image_copies = 2;
      return run_stages(model, train, val, {{MaskPolicy::standard(), total}}, false, opt, seed, o, "image_twice");
    }
  }
  throw ConfigError("unknown baseline");
}

std::vector<std::string> frozen_parameter_changes(const Model& reference, const Model& trained) {
  const TrainabilityMap map = trainability_map(trained.config());
  std::vector<std::string> changed;
  for (const auto& p : trained.params().all()) {
    if (map.contains(p.path)) continue;
    if (!reference.params().contains(p.path) || !reference.params().at(p.path).value.bit_equal(p.value)) {
      changed.push_back(p.path);
    }
  }
  return changed;
}

}  // namespace latentlab
