// SPDX-License-Identifier: Apache-2.0
#include "latentlab/config.hpp"

#include <cstdio>
#include <fstream>

#include "latentlab/error.hpp"

namespace latentlab {

Selection RunConfig::resolved_selection() const {
  if (selection == "auto") return tasks.size() > 1 ? Selection::final : Selection::best_validation;
  return parse_selection(selection);
}

ModelConfig RunConfig::effective_model() const {
  ModelConfig m = model;
  const bool no_latents = method == "direct_sft" || method == "mask_only" || method == "image_twice";
  if (no_latents) m.latent.count = 0;
  m.vocab = Vocabulary::standard(m.latent.count);
  return m;
}

void RunConfig::validate() const {
  if (tasks.empty()) throw ConfigError("config lists no tasks");
  if (method != "livr") parse_baseline_kind(method);
  if (method == "livr" || method == "latents_only") {
    if (model.latent.count == 0) throw ConfigError(method + " needs model.latent.count >= 1");
  }
  (void)resolved_selection();
  effective_model().validate();
  if (model.image_channels != gen.channels()) {
    throw ConfigError("model.image_channels must be " + std::to_string(gen.channels()) + " for gen.color_markers=" +
                      (gen.color_markers ? "true" : "false"));
  }
  optimizer.validate();
  if (sizes.train == 0) throw ConfigError("sizes.train must be >= 1");
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json model = to_json(c.model);
  model.erase("vocab");
  nlohmann::json tasks = nlohmann::json::array();
  for (TaskKind k : c.tasks) tasks.push_back(to_string(k));
  return {{"model", model},
          {"tasks", tasks},
          {"sizes", {{"train", c.sizes.train}, {"val", c.sizes.val}, {"test", c.sizes.test}}},
          {"gen", to_json(c.gen)},
          {"schedule",
           {{"stage1_epochs", c.schedule.stage1_epochs},
            {"stage2_epochs", c.schedule.stage2_epochs},
            {"stage1_variant", to_string(c.schedule.stage1_variant)},
            {"reset_optimizer", c.schedule.reset_optimizer}}},
          {"optimizer", to_json(c.optimizer)},
          {"method", c.method},
          {"selection", c.selection},
          {"seed", c.seed},
          {"data_dir", c.data_dir},
          {"output_dir", c.output_dir}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("model")) {
      nlohmann::json m = j.at("model");
      m.erase("vocab");
      c.model = model_config_from_json(m);
    }
    c.model.vocab = Vocabulary::standard(c.model.latent.count);
    if (j.contains("tasks")) {
      c.tasks.clear();
      for (const auto& t : j.at("tasks")) c.tasks.push_back(parse_task_kind(t.get<std::string>()));
    }
    if (j.contains("sizes")) {
      const auto& s = j.at("sizes");
      c.sizes.train = s.value("train", c.sizes.train);
      c.sizes.val = s.value("val", c.sizes.val);
      c.sizes.test = s.value("test", c.sizes.test);
    }
    if (j.contains("gen")) c.gen = gen_options_from_json(j.at("gen"));
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      c.schedule.stage1_epochs = s.value("stage1_epochs", c.schedule.stage1_epochs);
      c.schedule.stage2_epochs = s.value("stage2_epochs", c.schedule.stage2_epochs);
      c.schedule.stage1_variant =
          parse_mask_variant(s.value("stage1_variant", std::string(to_string(c.schedule.stage1_variant))));
      c.schedule.reset_optimizer = s.value("reset_optimizer", c.schedule.reset_optimizer);
    }
    if (j.contains("optimizer")) c.optimizer = optimizer_config_from_json(j.at("optimizer"));
    c.method = j.value("method", c.method);
    c.selection = j.value("selection", c.selection);
    c.seed = j.value("seed", c.seed);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("empty path component in override: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed) {
  nlohmann::json j = to_json(RunConfig{});
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config " + file->string());
    nlohmann::json f;
    try {
      f = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + file->string() + " is not valid JSON: " + e.what());
    }
    j.merge_patch(f);
  }
  for (const auto& o : overrides) apply_override(j, o);
  if (seed) j["seed"] = *seed;
  RunConfig c = run_config_from_json(j);
  c.validate();
  return c;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("data_dir");
  j.erase("output_dir");
  return fnv1a_hex(j.dump());
}

}  // namespace latentlab
