// SPDX-License-Identifier: Apache-2.0
//
// Toy multimodal decoder. A frozen random patch embedder turns a raster into
// image tokens, which are prepended to embedded text tokens and run through
// pre-LN transformer blocks whose projections carry low-rank adapters.
//
// Parameter paths:
//   patch.weight                       [P*P*C x d]   frozen
//   embed.base                         [V_base x d]
//   embed.latent                       [K x d] (1 row when shared)
//   layers.{l}.ln1.gamma / .beta       [d]
//   layers.{l}.attn.{q,k,v,o}.weight   [d x d]
//   layers.{l}.ln2.gamma / .beta       [d]
//   layers.{l}.mlp.up.weight           [d x m*d]
//   layers.{l}.mlp.down.weight         [m*d x d]
//   <projection>.lora_a                [d_in x r]
//   <projection>.lora_b                [r x d_out]
//   final_ln.gamma / .beta             [d]
//   head.weight                        [d x V_base]
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentlab/autodiff.hpp"
#include "latentlab/masking.hpp"
#include "latentlab/raster.hpp"
#include "latentlab/vocab.hpp"

namespace latentlab {

struct LoraConfig {
  std::size_t rank = 4;
  double alpha = 8.0;
  double dropout = 0.05;
  bool attention = true;
  bool mlp = true;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t image_channels = 3;
  std::size_t patch_size = 8;
  std::size_t max_seq_len = 256;
  double layernorm_eps = 1e-5;
  /// Multiplier on the 1/sqrt(d) init std of the output head.
  double head_scale = 4.0;
  Vocabulary vocab = Vocabulary::standard(16);
  LatentConfig latent;
  LoraConfig lora;
  /// Train every language-side weight directly instead of adapters.
  bool full_finetune = false;

  std::size_t n_image_tokens() const { return (image_height / patch_size) * (image_width / patch_size); }
  /// Throws ConfigError on violated invariants.
  void validate() const;
};

nlohmann::json to_json(const LatentConfig& c);
LatentConfig latent_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LoraConfig& c);
LoraConfig lora_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Parameter paths that receive gradient updates.
struct TrainabilityMap {
  std::set<std::string> paths;
  bool contains(const std::string& path) const { return paths.contains(path); }
};

TrainabilityMap trainability_map(const ModelConfig& config);

struct ForwardOptions {
  bool capture_attention = false;
  /// Enables LoRA dropout.
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

/// Graph handles produced by Model::build.
struct ForwardTrace {
  ad::Var logits;
  ad::Var hidden;
  /// attention[layer][head], each [T x T]; empty unless captured.
  std::vector<std::vector<ad::Var>> attention;
};

struct ForwardResult {
  Tensor logits;
  /// Final-layer (post norm) hidden states [T x d].
  Tensor hidden;
  std::vector<std::vector<Tensor>> attention;
};

class Model {
 public:
  /// Deterministic initialization from (config, seed).
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return config_.vocab; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }

  /// Patch-grid dimensions for a raster; throws ShapeError if not divisible.
  std::pair<std::size_t, std::size_t> patch_grid(const Raster& image) const;
  /// Frozen patch embedding plus 2-D position code, [n_patches x d].
  Tensor image_embeddings(const Raster& image) const;

  SequenceSpec sequence_spec(const Raster& image, const MaskPolicy& policy, std::size_t image_copies = 1) const;

  /// Records the forward pass on `g`. `image_embeddings` holds one copy of the
  /// image tokens; it is repeated per layout.image_copies.
  ForwardTrace build(ad::Graph& g, ad::Var image_embeddings, std::span<const TokenId> tokens,
                     const AttentionMask& mask, const ForwardOptions& options = {}) const;

  ForwardResult forward(const Raster& image, std::span<const TokenId> tokens, const AttentionMask& mask,
                        const ForwardOptions& options = {}) const;

  void save(const std::filesystem::path& file, const nlohmann::json& extra = nlohmann::json::object()) const;
  static Model load(const std::filesystem::path& file);
  /// Throws DataError when the checkpoint's vocabulary differs from `vocab`.
  static Model load(const std::filesystem::path& file, const Vocabulary& vocab);

 private:
  Model() = default;
  void init_parameters();
  void apply_trainability();
  ad::Var project(ad::Graph& g, ad::Var x, const std::string& name, const ForwardOptions& options,
                  std::uint64_t site) const;

  ModelConfig config_;
  std::uint64_t seed_ = 0;
  ad::ParameterStore params_;
};

/// Tokens the decoder may emit: everything except latents and <pad>, <bos>, <img>, <ans>.
std::vector<bool> generatable_tokens(const Vocabulary& vocab);

/// Greedy decoding against an arbitrary next-token scorer. `next_logits`
/// receives the tokens emitted so far and returns base-vocabulary logits.
/// Stops at <eos> (not included) or after max_new tokens. A non-empty
/// `candidates` list replaces the generatable set.
std::vector<TokenId> greedy_decode(const std::function<std::vector<double>(std::span<const TokenId>)>& next_logits,
                                   const Vocabulary& vocab, std::size_t max_new,
                                   std::span<const TokenId> candidates = {});

std::vector<TokenId> generate(const Model& model, const Raster& image, std::span<const TokenId> prompt,
                              const MaskPolicy& policy, std::size_t max_new, std::size_t image_copies = 1,
                              std::span<const TokenId> candidates = {});

struct SubstitutionResult {
  /// Answer-span rows of the logits.
  Tensor logits_a;
  Tensor logits_b;
  double max_abs_diff = 0.0;
};

/// Runs the same prompt/answer against two images and compares answer logits.
SubstitutionResult substitute_image_eval(const Model& model, const Raster& image_a, const Raster& image_b,
                                         std::span<const TokenId> prompt, std::span<const TokenId> answer,
                                         const MaskPolicy& policy, std::size_t image_copies = 1);

}  // namespace latentlab
