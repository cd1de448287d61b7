// SPDX-License-Identifier: Apache-2.0
#include "latentlab/vocab.hpp"

#include "latentlab/error.hpp"

namespace latentlab {

const std::vector<std::string>& Vocabulary::standard_symbols() {
  static const std::vector<std::string> symbols = {
      // structure
      "<pad>", "<bos>", "<eos>", "<img>", "<ans>", "<sep>", "?", ":",
      // digits
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
      // options
      "A", "B", "C", "D",
      // task keywords (the last four have templates but no generator)
      "count", "localize", "jigsaw", "reflectance", "correspondence", "art_style", "semantic_correspondence",
      "functional_correspondence", "visual_similarity",
      // words
      "how", "many", "which", "box", "patch", "point", "fits", "object", "completes", "image", "darker", "same",
      "about", "matches", "ref", "options", "shape", "square", "disk", "style", "similar", "reference", "action",
      "is", "the", "left", "right", "more", "in", "of", "best", "or", "and"};
  return symbols;
}

Vocabulary Vocabulary::build(std::vector<std::string> base_symbols, std::size_t latent_count) {
  Vocabulary v;
  v.latent_count_ = latent_count;
  for (std::size_t i = 0; i < base_symbols.size(); ++i) {
    if (!v.index_.emplace(base_symbols[i], static_cast<TokenId>(i)).second) {
      throw ConfigError("duplicate vocabulary symbol: " + base_symbols[i]);
    }
  }
  v.base_ = std::move(base_symbols);
  return v;
}

Vocabulary Vocabulary::standard(std::size_t latent_count) { return build(standard_symbols(), latent_count); }

TokenId Vocabulary::id(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it != index_.end()) return it->second;
  if (symbol.starts_with("<latent_") && symbol.ends_with(">")) {
    const std::string digits(symbol.substr(8, symbol.size() - 9));
    if (!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos) {
      const std::size_t k = std::stoul(digits);
      if (k < latent_count_) return latent_id(k);
    }
  }
  throw ConfigError("unknown symbol: " + std::string(symbol));
}

bool Vocabulary::contains(std::string_view symbol) const {
  try {
    id(symbol);
    return true;
  } catch (const ConfigError&) {
    return false;
  }
}

std::string Vocabulary::symbol(TokenId id) const {
  if (id >= 0 && static_cast<std::size_t>(id) < base_.size()) return base_[static_cast<std::size_t>(id)];
  if (is_latent(id)) return "<latent_" + std::to_string(static_cast<std::size_t>(id) - base_.size()) + ">";
  throw ConfigError("token id out of range: " + std::to_string(id));
}

TokenId Vocabulary::latent_id(std::size_t k) const {
  if (k >= latent_count_) throw ConfigError("latent index " + std::to_string(k) + " >= K");
  return static_cast<TokenId>(base_.size() + k);
}

bool Vocabulary::is_latent(TokenId id) const {
  return id >= static_cast<TokenId>(base_.size()) && id < static_cast<TokenId>(total_size());
}

nlohmann::json Vocabulary::to_json() const { return {{"base", base_}, {"latent_count", latent_count_}}; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  return build(j.at("base").get<std::vector<std::string>>(), j.at("latent_count").get<std::size_t>());
}

std::string_view to_string(SpanKind kind) {
  switch (kind) {
    case SpanKind::image: return "image";
    case SpanKind::prompt: return "prompt";
    case SpanKind::latent: return "latent";
    case SpanKind::answer: return "answer";
    case SpanKind::pad: return "pad";
  }
  return "?";
}

SpanKind SequenceLayout::kind_at(std::size_t pos) const {
  if (image.contains(pos)) return SpanKind::image;
  if (prompt.contains(pos)) return SpanKind::prompt;
  if (latent.contains(pos)) return SpanKind::latent;
  if (answer.contains(pos)) return SpanKind::answer;
  if (pad.contains(pos)) return SpanKind::pad;
  throw ShapeError("position " + std::to_string(pos) + " outside layout of length " + std::to_string(total_len));
}

bool SequenceLayout::is_partition() const {
  std::vector<Span> order;
  if (placement == LatentPlacement::after_prompt) {
    order = {image, prompt, latent, answer, pad};
  } else {
    order = {image, latent, prompt, answer, pad};
  }
  std::size_t cursor = 0;
  for (const Span& s : order) {
    if (s.begin != cursor || s.end < s.begin) return false;
    cursor = s.end;
  }
  return cursor == total_len;
}

SequenceLayout build_layout(std::size_t n_image_tokens, std::size_t n_prompt, std::size_t n_latent,
                            LatentPlacement placement, std::size_t n_answer, std::size_t n_pad,
                            std::size_t image_copies) {
  if (image_copies == 0) throw ConfigError("image_copies must be >= 1");
  SequenceLayout l;
  l.placement = placement;
  l.image_copies = image_copies;
  std::size_t cursor = 0;
  auto take = [&cursor](std::size_t n) {
    Span s{cursor, cursor + n};
    cursor += n;
    return s;
  };
  l.image = take(n_image_tokens * image_copies);
  if (placement == LatentPlacement::after_prompt) {
    l.prompt = take(n_prompt);
    l.latent = take(n_latent);
  } else {
    l.latent = take(n_latent);
    l.prompt = take(n_prompt);
  }
  l.answer = take(n_answer);
  l.pad = take(n_pad);
  l.total_len = cursor;
  return l;
}

SequenceLayout without_latents(const SequenceLayout& layout) {
  return build_layout(layout.image.size() / layout.image_copies, layout.prompt.size(), 0, layout.placement,
                      layout.answer.size(), layout.pad.size(), layout.image_copies);
}

std::string Answer::text() const {
  if (format == AnswerFormat::count) return std::to_string(value);
  return std::string(1, static_cast<char>('A' + value));
}

std::vector<TokenId> encode_symbols(const Vocabulary& vocab, std::span<const std::string> symbols) {
  std::vector<TokenId> out;
  out.reserve(symbols.size());
  for (const auto& s : symbols) out.push_back(vocab.id(s));
  return out;
}

std::vector<std::string> decode_symbols(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(vocab.symbol(id));
  return out;
}

std::vector<TokenId> encode_answer(const Vocabulary& vocab, const Answer& answer) {
  if (answer.format == AnswerFormat::option) {
    if (answer.value < 0 || answer.value > 3) throw ConfigError("option index out of range: " + std::to_string(answer.value));
    return {vocab.id(answer.text())};
  }
  if (answer.value < 0) throw ConfigError("negative count");
  std::vector<TokenId> out;
  for (char c : std::to_string(answer.value)) out.push_back(vocab.id(std::string(1, c)));
  out.push_back(vocab.id(sym::eos));
  return out;
}

EncodedExample encode_example(const Vocabulary& vocab, std::span<const std::string> prompt, const Answer& answer) {
  return {encode_symbols(vocab, prompt), encode_answer(vocab, answer)};
}

bool decode_answer(const Vocabulary& vocab, std::span<const TokenId> tokens, AnswerFormat format, Answer& out) {
  if (tokens.empty()) return false;
  if (format == AnswerFormat::option) {
    const std::string s = vocab.is_latent(tokens[0]) ? "" : vocab.symbol(tokens[0]);
    if (s.size() != 1 || s[0] < 'A' || s[0] > 'D') return false;
    out = Answer::option(s[0] - 'A');
    return true;
  }
  std::string digits;
  for (TokenId t : tokens) {
    if (vocab.is_latent(t)) return false;
    const std::string s = vocab.symbol(t);
    if (s == sym::eos) break;
    if (s.size() != 1 || s[0] < '0' || s[0] > '9') return false;
    digits += s;
  }
  if (digits.empty() || digits.size() > 3) return false;
  out = Answer::count(std::stoi(digits));
  return true;
}

Sequence assemble_sequence(const Vocabulary& vocab, const SequenceSpec& spec, std::span<const TokenId> prompt,
                           std::span<const TokenId> answer) {
  if (spec.n_latent > 0 && spec.n_latent > vocab.latent_count()) {
    throw ConfigError("sequence needs " + std::to_string(spec.n_latent) + " latents but vocabulary has " +
                      std::to_string(vocab.latent_count()));
  }
  Sequence s;
  s.layout = build_layout(spec.n_image_tokens, prompt.size(), spec.n_latent, spec.placement, answer.size() + 1, 0,
                          spec.image_copies);
  s.tokens.assign(s.layout.total_len, vocab.id(sym::img));
  std::copy(prompt.begin(), prompt.end(), s.tokens.begin() + static_cast<std::ptrdiff_t>(s.layout.prompt.begin));
  for (std::size_t k = 0; k < spec.n_latent; ++k) {
    s.tokens[s.layout.latent.begin + k] =
        vocab.latent_id(spec.embeddings == LatentEmbedding::shared ? 0 : k);
  }
  s.tokens[s.layout.answer.begin] = vocab.id(sym::ans);
  std::copy(answer.begin(), answer.end(), s.tokens.begin() + static_cast<std::ptrdiff_t>(s.layout.answer.begin + 1));
  s.targets.assign(s.layout.total_len, kNoTarget);
  for (std::size_t i = 0; i < answer.size(); ++i) s.targets[s.layout.answer.begin + i] = answer[i];
  return s;
}

}  // namespace latentlab
