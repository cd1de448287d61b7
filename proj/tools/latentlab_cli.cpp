// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "latentlab/commands.hpp"
#include "latentlab/error.hpp"

namespace {

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON run config");
    app->add_option("--override", overrides, "key=value, dotted keys, repeatable");
    app->add_option("--seed", seed, "root seed");
  }
  latentlab::RunConfig load() const {
    return latentlab::load_run_config(config.empty() ? std::nullopt : std::optional<std::filesystem::path>(config),
                                      overrides, seed);
  }
};

latentlab::MaskPolicy policy_from(const std::string& name, bool drop) {
  return {latentlab::parse_mask_variant(name), drop};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latentlab: latent visual reasoning tokens on a toy multimodal decoder"};
  app.require_subcommand(1);

  Common gen_common, train_common, ablate_common;
  std::string gen_task, gen_out;
  std::optional<std::size_t> n_train, n_val, n_test;
  auto* gen = app.add_subcommand("gen", "generate and verify train/val/test datasets");
  gen->add_option("--task", gen_task, "counting|localization|jigsaw|reflectance|correspondence|all")->required();
  gen->add_option("--train", n_train);
  gen->add_option("--val", n_val);
  gen->add_option("--test", n_test);
  gen->add_option("--out", gen_out, "dataset directory (default: config data_dir)");
  gen_common.attach(gen);

  auto* train = app.add_subcommand("train", "run LIVR or a baseline per config");
  train_common.attach(train);

  std::string ck, data_dir = "data", dataset, policy = "standard", out;
  bool drop = false;
  std::size_t copies = 1, n = 20;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", ck)->required();
  eval->add_option("--data", data_dir);
  eval->add_option("--dataset", dataset, "e.g. localization.test")->required();
  eval->add_option("--policy", policy, "standard|bottleneck|ans_to_vis_only|bottleneck_latent_prompt_block");
  eval->add_flag("--drop-latents", drop);
  eval->add_option("--image-copies", copies);
  eval->add_option("--out", out, "report file");

  std::string grid;
  auto* ablate = app.add_subcommand("ablate", "train and evaluate an ablation grid");
  ablate->add_option("--grid", grid, "schedule|latents|mask|placement|embeddings")->required();
  ablate_common.attach(ablate);

  auto* inspect = app.add_subcommand("inspect-attn", "dump attention and latent maps");
  inspect->add_option("--checkpoint", ck)->required();
  inspect->add_option("--data", data_dir);
  inspect->add_option("--dataset", dataset)->required();
  inspect->add_option("--n", n);
  inspect->add_option("--policy", policy);
  inspect->add_option("--out", out, "output directory")->required();

  std::vector<std::string> datasets;
  std::size_t per_task = 50;
  auto* hidden = app.add_subcommand("export-hidden", "export final-layer hidden states");
  hidden->add_option("--checkpoint", ck)->required();
  hidden->add_option("--data", data_dir);
  hidden->add_option("--dataset", datasets)->required();
  hidden->add_option("--n", per_task);
  hidden->add_option("--out", out, "TSV file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  using namespace latentlab;
  try {
    if (gen->parsed()) {
      RunConfig c = gen_common.load();
      if (n_train) c.sizes.train = *n_train;
      if (n_val) c.sizes.val = *n_val;
      if (n_test) c.sizes.test = *n_test;
      const auto dir = resolve_output(gen_out.empty() ? c.data_dir : gen_out);
      std::vector<TaskKind> kinds = gen_task == "all" ? all_task_kinds() : std::vector<TaskKind>{parse_task_kind(gen_task)};
      for (TaskKind k : kinds) cmd_gen(k, c.sizes, c.seed, c.gen, dir, std::cout);
      std::cout << "config " << config_hash(c) << "\n";
    } else if (train->parsed()) {
      cmd_train(train_common.load(), std::cout);
    } else if (eval->parsed()) {
      const EvalReport r = cmd_eval(resolve_output(ck), resolve_output(data_dir), dataset, policy_from(policy, drop),
                                    copies, out.empty() ? std::filesystem::path() : resolve_output(out));
      std::cout << r.task << " " << r.policy << (r.drop_latents ? " drop_latents" : "") << " accuracy " << r.accuracy
                << " (" << r.correct << "/" << r.n << ")\n";
    } else if (ablate->parsed()) {
      cmd_ablate(ablate_common.load(), parse_ablation_axis(grid), std::cout);
    } else if (inspect->parsed()) {
      cmd_inspect_attn(resolve_output(ck), resolve_output(data_dir), dataset, n, policy_from(policy, false),
                       resolve_output(out), std::cout);
    } else if (hidden->parsed()) {
      cmd_export_hidden(resolve_output(ck), resolve_output(data_dir), datasets, per_task, resolve_output(out));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOk;
}
