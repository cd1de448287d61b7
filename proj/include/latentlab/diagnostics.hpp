// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentlab/model.hpp"
#include "latentlab/taskgen.hpp"

namespace latentlab {

struct ExampleOutcome {
  std::uint64_t index = 0;
  std::string gold;
  std::string predicted;
  bool correct = false;
};

struct EvalReport {
  std::string task;
  std::string policy;
  bool drop_latents = false;
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::vector<ExampleOutcome> outcomes;

  nlohmann::json to_json() const;
};

/// Generated-token budget: one letter for MCQ, up to three digits plus <eos> for counts.
std::size_t max_new_tokens(AnswerFormat format);

/// MCQ: the first emitted token must be the gold letter. Counting: the digit
/// string up to <eos> must equal the gold count.
bool answer_correct(const Vocabulary& vocab, std::span<const TokenId> emitted, const Answer& gold);

/// Option letters a multiple-choice example may be answered with; empty for counts.
std::vector<TokenId> option_candidates(const Vocabulary& vocab, const TaskExample& ex);

using Predictor = std::function<std::vector<TokenId>(const TaskExample&)>;

EvalReport evaluate_with(const Predictor& predict, const Vocabulary& vocab, std::span<const TaskExample> examples,
                         const MaskPolicy& policy);
/// Greedy decoding; multiple-choice answers are decoded over the task's option letters only.
EvalReport evaluate(const Model& model, std::span<const TaskExample> examples, const MaskPolicy& policy,
                    std::size_t image_copies = 1);

/// Captured attention for one teacher-forced example.
struct AttentionCapture {
  SequenceLayout layout;
  /// [layer][head], each [T x T].
  std::vector<std::vector<Tensor>> attention;
};

AttentionCapture capture_attention(const Model& model, const TaskExample& ex, const MaskPolicy& policy,
                                   std::size_t image_copies = 1);

/// Mean attention mass answer-span queries put on the latent span, per
/// [layer][head]. Throws ConfigError when the layout has no latents.
std::vector<std::vector<double>> answer_latent_mass(const AttentionCapture& capture);

struct AttentionSummary {
  double mean_answer_to_latent = 0.0;
  /// [layer][head], averaged over examples.
  std::vector<std::vector<double>> per_head;
  std::size_t examples = 0;

  nlohmann::json to_json() const;
};

AttentionSummary summarize_answer_latent(std::span<const AttentionCapture> captures);
AttentionSummary answer_to_latent_attention(const Model& model, std::span<const TaskExample> examples,
                                            const MaskPolicy& policy = MaskPolicy::standard());

struct LatentImageMaps {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t patch_size = 0;
  /// One [grid_h x grid_w] map per latent position.
  std::vector<Tensor> maps;

  nlohmann::json to_json(const Raster& source) const;
};

/// For each latent query: attention to each image token, averaged over
/// layers and heads, laid out on the patch grid.
LatentImageMaps latent_image_attention_maps(const Model& model, const TaskExample& ex,
                                            const MaskPolicy& policy = MaskPolicy::standard());

/// Attention mass of a patch-grid map inside a pixel box, each patch
/// weighted by its overlap fraction with the box.
double box_mass(const Tensor& map, const Box& box, std::size_t patch_size);

/// Tab-separated: example, task, position, label (latent|image|text), then d values.
void export_hidden_states(const Model& model, std::span<const TaskExample> examples, std::size_t n_per_task,
                          std::ostream& out, const MaskPolicy& policy = MaskPolicy::standard());

/// One JSON object per line holding layout and the rows of the answer and
/// latent queries: entries [layer, head, query, key, weight].
void write_attention_dump(std::ostream& out, std::uint64_t example, const AttentionCapture& capture);
/// Rebuilds captures from a dump; rows that were not dumped are zero.
std::vector<AttentionCapture> read_attention_dump(std::istream& in);

}  // namespace latentlab
