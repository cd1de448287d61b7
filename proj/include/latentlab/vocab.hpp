// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace latentlab {

using TokenId = std::int64_t;
inline constexpr TokenId kNoTarget = -1;

namespace sym {
inline constexpr std::string_view pad = "<pad>";
inline constexpr std::string_view bos = "<bos>";
inline constexpr std::string_view eos = "<eos>";
inline constexpr std::string_view img = "<img>";
inline constexpr std::string_view ans = "<ans>";
}  // namespace sym

/// Base symbols followed by K latent tokens. Latent ids are the contiguous
/// range [base_size, base_size + K).
class Vocabulary {
 public:
  Vocabulary() = default;
  /// Throws ConfigError on duplicate symbols.
  static Vocabulary build(std::vector<std::string> base_symbols, std::size_t latent_count);
  /// The 64-symbol task vocabulary used by every generator.
  static Vocabulary standard(std::size_t latent_count);
  static const std::vector<std::string>& standard_symbols();

  std::size_t base_size() const { return base_.size(); }
  std::size_t latent_count() const { return latent_count_; }
  std::size_t total_size() const { return base_.size() + latent_count_; }

  /// Throws ConfigError for unknown symbols.
  TokenId id(std::string_view symbol) const;
  bool contains(std::string_view symbol) const;
  std::string symbol(TokenId id) const;
  TokenId latent_id(std::size_t k) const;
  bool is_latent(TokenId id) const;

  const std::vector<std::string>& base_symbols() const { return base_; }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  bool operator==(const Vocabulary& other) const {
    return base_ == other.base_ && latent_count_ == other.latent_count_;
  }

 private:
  std::vector<std::string> base_;
  std::size_t latent_count_ = 0;
  std::unordered_map<std::string, TokenId> index_;
};

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end == begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const Span&) const = default;
};

enum class SpanKind { image, prompt, latent, answer, pad };
std::string_view to_string(SpanKind kind);

enum class LatentPlacement { after_prompt, before_prompt };
enum class LatentEmbedding { unshared, shared };

struct LatentConfig {
  std::size_t count = 16;
  LatentPlacement placement = LatentPlacement::after_prompt;
  LatentEmbedding embeddings = LatentEmbedding::unshared;
  bool rows_trainable = true;
};

/// Typed spans over one sequence. Image always comes first; the latent span
/// sits after the prompt by default, before it in the placement ablation.
struct SequenceLayout {
  Span image;
  Span prompt;
  Span latent;
  Span answer;
  Span pad;
  std::size_t total_len = 0;
  /// Number of stacked copies of the image tokens inside `image`.
  std::size_t image_copies = 1;
  LatentPlacement placement = LatentPlacement::after_prompt;

  SpanKind kind_at(std::size_t pos) const;
  /// Spans are disjoint, ordered per placement and cover [0, total_len).
  bool is_partition() const;
  bool operator==(const SequenceLayout&) const = default;
};

SequenceLayout build_layout(std::size_t n_image_tokens, std::size_t n_prompt, std::size_t n_latent,
                            LatentPlacement placement, std::size_t n_answer, std::size_t n_pad = 0,
                            std::size_t image_copies = 1);

/// Copy of `layout` with the latent span physically removed.
SequenceLayout without_latents(const SequenceLayout& layout);

enum class AnswerFormat { option, count };

struct Answer {
  AnswerFormat format = AnswerFormat::option;
  /// Option index (0 = A) or the count.
  int value = 0;

  std::string text() const;
  static Answer option(int index) { return {AnswerFormat::option, index}; }
  static Answer count(int n) { return {AnswerFormat::count, n}; }
  bool operator==(const Answer&) const = default;
};

std::vector<TokenId> encode_symbols(const Vocabulary& vocab, std::span<const std::string> symbols);
std::vector<std::string> decode_symbols(const Vocabulary& vocab, std::span<const TokenId> ids);

/// Option answers are a single letter token; counts are digits (most
/// significant first) followed by <eos>.
std::vector<TokenId> encode_answer(const Vocabulary& vocab, const Answer& answer);

struct EncodedExample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> answer;
};

EncodedExample encode_example(const Vocabulary& vocab, std::span<const std::string> prompt, const Answer& answer);

/// Parses generated tokens back into an answer of the given format. Returns
/// false when the tokens do not spell a well-formed answer.
bool decode_answer(const Vocabulary& vocab, std::span<const TokenId> tokens, AnswerFormat format, Answer& out);

/// A fully assembled model input: token ids per position (image positions
/// hold <img>), its layout, and the next-token target of every position
/// (kNoTarget outside the answer span).
struct Sequence {
  std::vector<TokenId> tokens;
  std::vector<TokenId> targets;
  SequenceLayout layout;
};

struct SequenceSpec {
  std::size_t n_image_tokens = 0;
  std::size_t image_copies = 1;
  /// Latent tokens inserted; 0 for no-latent baselines and drop-latent evaluation.
  std::size_t n_latent = 0;
  LatentPlacement placement = LatentPlacement::after_prompt;
  LatentEmbedding embeddings = LatentEmbedding::unshared;
};

/// Answer span = <ans> followed by `answer`. Each answer-span position predicts
/// the next answer token.
Sequence assemble_sequence(const Vocabulary& vocab, const SequenceSpec& spec, std::span<const TokenId> prompt,
                           std::span<const TokenId> answer);

}  // namespace latentlab
