// SPDX-License-Identifier: Apache-2.0
#include "latentlab/commands.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "latentlab/checkpoint.hpp"
#include "latentlab/error.hpp"

namespace latentlab {

std::filesystem::path resolve_output(const std::filesystem::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("LATENTLAB_OUT"); root != nullptr && *root != '\0') return std::filesystem::path(root) / p;
  return p;
}

namespace {

void write_text(const std::filesystem::path& file, const std::string& text) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + file.string());
}

std::vector<TaskExample> load_split(const std::filesystem::path& dir, const std::vector<TaskKind>& tasks, Split split) {
  std::vector<TaskExample> out;
  for (TaskKind k : tasks) {
    auto part = load_dataset(dir, dataset_name(k, split));
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

void check_vocab(const Vocabulary& vocab, std::span<const TaskExample> examples) {
  for (const auto& ex : examples) {
    for (const auto& s : ex.prompt) {
      if (!vocab.contains(s)) throw DataError("vocabulary mismatch: checkpoint lacks symbol '" + s + "'");
    }
  }
}

}  // namespace

GenResult cmd_gen(TaskKind kind, const SplitSizes& sizes, std::uint64_t seed, const GenOptions& gen,
                  const std::filesystem::path& dir, std::ostream& log) {
  GenResult r;
  for (Split split : {Split::train, Split::val, Split::test}) {
    const auto examples = generate_split(kind, seed, sizes, split, gen);
    for (const auto& ex : examples) {
      const OracleResult v = verify_example(ex, gen);
      if (!v.ok) {
        throw DataError(std::string(to_string(kind)) + " example " + std::to_string(ex.index) + " failed oracle: " + v.detail);
      }
      ++r.verified;
    }
    r.examples += examples.size();
    const std::string name = dataset_name(kind, split);
    write_dataset(dir, name, examples);
    r.files.push_back(dir / (name + ".jsonl"));
  }
  log << to_string(kind) << ": " << r.verified << "/" << r.examples << " examples verified by oracle (100%)\n";
  return r;
}

TrainResult cmd_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto data_dir = resolve_output(config.data_dir);
  const auto run_dir = resolve_output(config.output_dir);
  const auto train = load_split(data_dir, config.tasks, Split::train);
  const auto val = load_split(data_dir, config.tasks, Split::val);
  if (train.size() != config.sizes.train * config.tasks.size()) {
    log << "note: dataset holds " << train.size() << " training examples\n";
  }

  const ModelConfig mc = config.effective_model();
  Model model(mc, derive_seed(config.seed, "init"));
  TrainOptions opts;
  opts.selection = config.resolved_selection();
  opts.out_dir = run_dir;
  opts.config_hash = config_hash(config);
  std::vector<double> seconds;
  auto last = std::chrono::steady_clock::now();
  opts.on_epoch = [&](const EpochRecord& e) {
    const auto now = std::chrono::steady_clock::now();
    seconds.push_back(std::chrono::duration<double>(now - last).count());
    last = now;
    log << "stage " << e.stage << " epoch " << e.epoch << " loss " << e.train_loss << " val " << e.val_accuracy << "\n";
  };
  const std::uint64_t train_seed = derive_seed(config.seed, "train");
  RunRecord rec = config.method == "livr"
                      ? run_livr(model, train, val, config.schedule, config.optimizer, train_seed, opts)
                      : run_baseline(parse_baseline_kind(config.method), model, train, val, config.schedule,
                                     config.optimizer, train_seed, opts);
  write_text(run_dir / "run_record.jsonl", rec.to_jsonl());
  write_text(run_dir / "config.json", to_json(config).dump(2) + "\n");
  write_text(run_dir / "timing.json", nlohmann::json{{"epoch_seconds", seconds}}.dump() + "\n");
  log << "selected epoch " << rec.selected_epoch << " (val " << rec.selected_val_accuracy << "), config "
      << rec.config_hash << "\n";
  return {rec, run_dir};
}

EvalReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                    const std::string& dataset, const MaskPolicy& policy, std::size_t image_copies,
                    const std::filesystem::path& out) {
  const Model model = Model::load(checkpoint);
  const auto examples = load_dataset(data_dir, dataset);
  check_vocab(model.vocab(), examples);
  EvalReport r = evaluate(model, examples, policy, image_copies);
  nlohmann::json j = r.to_json();
  j["checkpoint"] = checkpoint.string();
  j["dataset"] = dataset;
  j["config_hash"] = read_checkpoint_manifest(checkpoint).at("meta").at("extra").value("config_hash", "");
  if (!out.empty()) write_text(out, j.dump(2) + "\n");
  return r;
}

AblationAxis parse_ablation_axis(std::string_view s) {
  for (auto a : {AblationAxis::schedule, AblationAxis::latents, AblationAxis::mask, AblationAxis::placement,
                 AblationAxis::embeddings}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("unknown ablation grid: " + std::string(s));
}

std::string_view to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::schedule: return "schedule";
    case AblationAxis::latents: return "latents";
    case AblationAxis::mask: return "mask";
    case AblationAxis::placement: return "placement";
    case AblationAxis::embeddings: return "embeddings";
  }
  return "?";
}

std::vector<AblationCell> ablation_cells(const RunConfig& base, AblationAxis axis) {
  std::vector<AblationCell> cells;
  auto add = [&](std::string label, auto&& mutate) {
    RunConfig c = base;
    c.method = "livr";
    mutate(c);
    c.model.vocab = Vocabulary::standard(c.model.latent.count);
    c.output_dir = (std::filesystem::path(base.output_dir) / std::string(to_string(axis)) / label).string();
    cells.push_back({std::move(label), std::move(c)});
  };
  switch (axis) {
    case AblationAxis::schedule:
      for (auto [s1, s2] : std::vector<std::pair<int, int>>{{0, 10}, {2, 8}, {4, 6}, {6, 4}, {8, 2}}) {
        add("s" + std::to_string(s1) + "_" + std::to_string(s2), [=](RunConfig& c) {
          c.schedule.stage1_epochs = static_cast<std::size_t>(s1);
          c.schedule.stage2_epochs = static_cast<std::size_t>(s2);
        });
      }
      break;
    case AblationAxis::latents:
      for (std::size_t k : {4, 8, 16, 32}) add("k" + std::to_string(k), [=](RunConfig& c) { c.model.latent.count = k; });
      break;
    case AblationAxis::mask:
      for (auto v : {MaskVariant::ans_to_vis_only, MaskVariant::bottleneck, MaskVariant::bottleneck_latent_prompt_block}) {
        add(std::string(to_string(v)), [=](RunConfig& c) { c.schedule.stage1_variant = v; });
      }
      break;
    case AblationAxis::placement:
      add("after_prompt", [](RunConfig& c) { c.model.latent.placement = LatentPlacement::after_prompt; });
      add("before_prompt", [](RunConfig& c) { c.model.latent.placement = LatentPlacement::before_prompt; });
      break;
    case AblationAxis::embeddings:
      add("unshared", [](RunConfig& c) { c.model.latent.embeddings = LatentEmbedding::unshared; });
      add("shared", [](RunConfig& c) { c.model.latent.embeddings = LatentEmbedding::shared; });
      break;
  }
  return cells;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& base, AblationAxis axis, std::ostream& log) {
  std::vector<AblationRow> rows;
  const auto data_dir = resolve_output(base.data_dir);
  const auto test = load_split(data_dir, base.tasks, Split::test);
  for (const AblationCell& cell : ablation_cells(base, axis)) {
    log << "cell " << cell.label << "\n";
    std::ostringstream quiet;
    const TrainResult tr = cmd_train(cell.config, quiet);
    const Model model = Model::load(tr.run_dir / tr.record.checkpoint);
    AblationRow row;
    row.label = cell.label;
    row.val_accuracy = tr.record.selected_val_accuracy;
    row.test_standard = evaluate(model, test, MaskPolicy::standard()).accuracy;
    row.test_bottleneck = evaluate(model, test, MaskPolicy::bottleneck()).accuracy;
    row.test_drop_latents = evaluate(model, test, MaskPolicy{MaskVariant::standard, true}).accuracy;
    log << "  val " << row.val_accuracy << " test " << row.test_standard << "\n";
    rows.push_back(row);
  }
  std::ostringstream tsv;
  tsv << "cell\tval_accuracy\ttest_standard\ttest_bottleneck\ttest_drop_latents\n";
  nlohmann::json j = {{"grid", to_string(axis)}, {"config_hash", config_hash(base)}, {"rows", nlohmann::json::array()}};
  for (const auto& r : rows) {
    tsv << r.label << '\t' << r.val_accuracy << '\t' << r.test_standard << '\t' << r.test_bottleneck << '\t'
        << r.test_drop_latents << '\n';
    j["rows"].push_back({{"cell", r.label}, {"val_accuracy", r.val_accuracy}, {"test_standard", r.test_standard},
                         {"test_bottleneck", r.test_bottleneck}, {"test_drop_latents", r.test_drop_latents}});
  }
  const auto out = resolve_output(base.output_dir);
  write_text(out / ("ablate_" + std::string(to_string(axis)) + ".tsv"), tsv.str());
  write_text(out / ("ablate_" + std::string(to_string(axis)) + ".json"), j.dump(2) + "\n");
  return rows;
}

void cmd_inspect_attn(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                      const std::string& dataset, std::size_t n, const MaskPolicy& policy,
                      const std::filesystem::path& out_dir, std::ostream& log) {
  const Model model = Model::load(checkpoint);
  auto examples = load_dataset(data_dir, dataset);
  check_vocab(model.vocab(), examples);
  if (examples.size() > n) examples.resize(n);
  std::filesystem::create_directories(out_dir);
  std::ofstream dump(out_dir / "attention.jsonl", std::ios::binary);
  std::vector<AttentionCapture> caps;
  for (const auto& ex : examples) {
    caps.push_back(capture_attention(model, ex, policy));
    write_attention_dump(dump, ex.index, caps.back());
  }
  if (model.config().latent.count > 0 && !policy.drop_latents) {
    const AttentionSummary s = summarize_answer_latent(caps);
    write_text(out_dir / "summary.json", s.to_json().dump(2) + "\n");
    log << "mean answer->latent attention " << s.mean_answer_to_latent << " over " << s.examples << " examples\n";
    std::ofstream maps(out_dir / "latent_maps.jsonl", std::ios::binary);
    for (const auto& ex : examples) {
      nlohmann::json j = latent_image_attention_maps(model, ex, policy).to_json(ex.image);
      j["example"] = ex.index;
      j["meta"] = ex.meta;
      maps << j.dump() << '\n';
    }
  }
}

void cmd_export_hidden(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                       const std::vector<std::string>& datasets, std::size_t n_per_task,
                       const std::filesystem::path& out_file) {
  const Model model = Model::load(checkpoint);
  std::vector<TaskExample> examples;
  for (const auto& name : datasets) {
    auto part = load_dataset(data_dir, name);
    check_vocab(model.vocab(), part);
    examples.insert(examples.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (out_file.has_parent_path()) std::filesystem::create_directories(out_file.parent_path());
  std::ofstream out(out_file, std::ios::binary);
  export_hidden_states(model, examples, n_per_task, out);
  if (!out) throw DataError("cannot write " + out_file.string());
}

}  // namespace latentlab
