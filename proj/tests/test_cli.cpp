// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "latentlab/commands.hpp"
#include "latentlab/error.hpp"

using namespace latentlab;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kSmall = {
    "model.d_model=16", "model.n_heads=2",     "model.n_layers=1",         "model.mlp_ratio=2",
    "model.lora.rank=2", "model.latent.count=4", "schedule.stage1_epochs=1", "schedule.stage2_epochs=1",
    "sizes.train=16",    "sizes.val=8",          "sizes.test=8"};

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("latentlab_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig small_config(const fs::path& dir, const std::string& run) {
  auto ov = kSmall;
  ov.push_back("data_dir=" + (dir / "data").string());
  ov.push_back("output_dir=" + (dir / run).string());
  return load_run_config(std::nullopt, ov, std::nullopt);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LATENTLAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("overrides and precedence") {
  nlohmann::json j = {{"a", {{"b", 1}}}};
  apply_override(j, "a.b=2.5");
  apply_override(j, "a.c.d=true");
  apply_override(j, "name=hello");
  CHECK(j.at("a").at("b") == 2.5);
  CHECK(j.at("a").at("c").at("d") == true);
  CHECK(j.at("name") == "hello");
  CHECK_THROWS_AS(apply_override(j, "novalue"), ConfigError);

  const fs::path dir = scratch("precedence");
  const fs::path file = dir / "run.json";
  std::ofstream(file) << R"({"optimizer": {"lr": 0.01}, "seed": 3, "method": "latents_only"})";
  RunConfig c = load_run_config(file, {}, std::nullopt);
  CHECK(c.optimizer.lr == 0.01);
  CHECK(c.seed == 3);
  CHECK(c.method == "latents_only");
  CHECK(c.optimizer.accumulation_steps == 8);
  c = load_run_config(file, {"optimizer.lr=0.02", "seed=4"}, std::nullopt);
  CHECK(c.optimizer.lr == 0.02);
  CHECK(c.seed == 4);
  CHECK(load_run_config(file, {"seed=4"}, 9).seed == 9);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json", {}, std::nullopt), ConfigError);
  CHECK_THROWS_AS(load_run_config(std::nullopt, {"model.n_heads=5"}, std::nullopt), ConfigError);
  CHECK_THROWS_AS(load_run_config(std::nullopt, {"model.image_channels=1"}, std::nullopt), ConfigError);
  CHECK_NOTHROW(load_run_config(std::nullopt, {"model.image_channels=1", "gen.color_markers=false"}, std::nullopt));
  fs::remove_all(dir);
}

TEST_CASE("config hash") {
  const RunConfig a;
  RunConfig b;
  b.data_dir = "/elsewhere";
  b.output_dir = "/other";
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.optimizer.lr = 1e-4;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(run_config_from_json(to_json(a)).optimizer.lr == a.optimizer.lr);
  CHECK(config_hash(run_config_from_json(to_json(a))) == config_hash(a));
}

TEST_CASE("gen writes three verified splits deterministically") {
  const fs::path dir = scratch("gen");
  std::ostringstream log;
  const SplitSizes sizes{20, 5, 8};
  const GenResult r = cmd_gen(TaskKind::counting, sizes, 7, GenOptions{}, dir / "a", log);
  cmd_gen(TaskKind::counting, sizes, 7, GenOptions{}, dir / "b", log);
  CHECK(r.examples == 33);
  CHECK(r.verified == 33);
  REQUIRE(r.files.size() == 3);
  for (const auto& f : r.files) {
    CHECK(fs::exists(f));
    CHECK(slurp(f) == slurp(dir / "b" / f.filename()));
  }
  CHECK(load_dataset(dir / "a", "counting.test").size() == 8);
  CHECK(log.str().find("33/33") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("train is reproducible and writes its artifacts") {
  const fs::path dir = scratch("train");
  std::ostringstream log;
  const RunConfig c1 = small_config(dir, "run1"), c2 = small_config(dir, "run2");
  cmd_gen(TaskKind::localization, c1.sizes, c1.seed, c1.gen, dir / "data", log);
  const TrainResult a = cmd_train(c1, log), b = cmd_train(c2, log);
  for (const char* f : {"run_record.jsonl", "checkpoint.llck", "config.json", "timing.json"}) {
    CHECK(fs::exists(a.run_dir / f));
  }
  CHECK(slurp(a.run_dir / "run_record.jsonl") == slurp(b.run_dir / "run_record.jsonl"));
  CHECK(slurp(a.run_dir / "checkpoint.llck") == slurp(b.run_dir / "checkpoint.llck"));
  CHECK(a.record.config_hash == config_hash(c1));
  CHECK(a.record.epochs.size() == 2);

  const EvalReport r = cmd_eval(a.run_dir / "checkpoint.llck", dir / "data", "localization.test",
                                MaskPolicy::bottleneck(), 1, dir / "report.json");
  CHECK(r.n == 8);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report.at("config_hash") == a.record.config_hash);
  CHECK(report.at("policy") == "bottleneck");

  cmd_inspect_attn(a.run_dir / "checkpoint.llck", dir / "data", "localization.test", 3, MaskPolicy::standard(),
                   dir / "attn", log);
  CHECK(fs::exists(dir / "attn" / "attention.jsonl"));
  CHECK(fs::exists(dir / "attn" / "summary.json"));
  CHECK(fs::exists(dir / "attn" / "latent_maps.jsonl"));
  cmd_export_hidden(a.run_dir / "checkpoint.llck", dir / "data", {"localization.test"}, 2, dir / "hidden.tsv");
  CHECK(fs::file_size(dir / "hidden.tsv") > 0);

  RunConfig missing = c1;
  missing.data_dir = (dir / "nowhere").string();
  CHECK_THROWS_AS(cmd_train(missing, log), DataError);
  fs::remove_all(dir);
}

TEST_CASE("ablation grids") {
  const RunConfig base;
  CHECK(ablation_cells(base, AblationAxis::schedule).size() == 5);
  const auto k = ablation_cells(base, AblationAxis::latents);
  REQUIRE(k.size() == 4);
  CHECK(k[0].config.model.latent.count == 4);
  CHECK(k[3].config.model.latent.count == 32);
  CHECK(k[3].config.model.vocab.total_size() == 96);
  const auto m = ablation_cells(base, AblationAxis::mask);
  REQUIRE(m.size() == 3);
  CHECK(m[2].config.schedule.stage1_variant == MaskVariant::bottleneck_latent_prompt_block);
  CHECK(ablation_cells(base, AblationAxis::placement).size() == 2);
  CHECK(ablation_cells(base, AblationAxis::embeddings)[1].config.model.latent.embeddings == LatentEmbedding::shared);
  CHECK_THROWS_AS(parse_ablation_axis("depth"), ConfigError);
}

TEST_CASE("output root") {
  setenv("LATENTLAB_OUT", "/tmp/root", 1);
  CHECK(resolve_output("runs/a") == fs::path("/tmp/root/runs/a"));
  CHECK(resolve_output("/abs") == fs::path("/abs"));
  unsetenv("LATENTLAB_OUT");
  CHECK(resolve_output("runs/a") == fs::path("runs/a"));
}

TEST_CASE("binary exit codes") {
  const fs::path dir = scratch("exit");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("gen --task art_style --out " + dir.string()) == 2);
  CHECK(run_cli("gen --task counting --train 4 --val 2 --test 2 --out " + dir.string()) == 0);
  CHECK(fs::exists(dir / "counting.train.jsonl"));
  CHECK(run_cli("train --override model.n_heads=5") == 2);
  CHECK(run_cli("train --override data_dir=" + (dir / "nowhere").string() + " --override output_dir=" +
                (dir / "run").string()) == 3);
  CHECK(run_cli("eval --checkpoint " + (dir / "none.llck").string() + " --dataset counting.test --data " +
                dir.string()) == 3);
  fs::remove_all(dir);
}
