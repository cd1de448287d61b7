// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "latentlab/vocab.hpp"

namespace latentlab {

enum class MaskVariant {
  /// Plain causal mask.
  standard,
  /// Causal; answer and prompt rows may not read image keys.
  bottleneck,
  /// Causal; only answer rows are cut off from image keys.
  ans_to_vis_only,
  /// Bottleneck plus latent rows cut off from prompt keys.
  bottleneck_latent_prompt_block,
};

std::string_view to_string(MaskVariant v);
MaskVariant parse_mask_variant(std::string_view s);

struct MaskPolicy {
  MaskVariant variant = MaskVariant::standard;
  /// Evaluate with the latent span physically removed from the sequence.
  bool drop_latents = false;

  static MaskPolicy standard() { return {MaskVariant::standard, false}; }
  static MaskPolicy bottleneck() { return {MaskVariant::bottleneck, false}; }
};

/// allowed(i, j): query position i may attend key position j.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(SequenceLayout layout, std::vector<std::uint8_t> allowed);

  std::size_t size() const { return layout_.total_len; }
  const SequenceLayout& layout() const { return layout_; }
  bool allowed(std::size_t i, std::size_t j) const { return allowed_[i * size() + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { allowed_[i * size() + j] = v ? 1 : 0; }
  /// Row-major 1 = blocked, the form masked_fill consumes.
  std::vector<std::uint8_t> blocked() const;
  std::size_t allowed_in_row(std::size_t i) const;
  bool operator==(const AttentionMask&) const = default;

 private:
  SequenceLayout layout_;
  std::vector<std::uint8_t> allowed_;
};

/// The layout a policy actually runs on (latents removed when drop_latents).
SequenceLayout effective_layout(const MaskPolicy& policy, const SequenceLayout& layout);

/// Throws ConfigError for an empty prompt under any bottleneck variant and
/// ShapeError if a row would end up with no allowed key.
AttentionMask build_mask(const MaskPolicy& policy, const SequenceLayout& layout);

/// reach(s, t): information at position s can arrive at position t through
/// any number of attention layers (residual self-loops included).
class Reachability {
 public:
  Reachability(std::size_t n) : n_(n), words_((n + 63) / 64), bits_(n * words_, 0) {}
  std::size_t size() const { return n_; }
  bool reaches(std::size_t s, std::size_t t) const { return (bits_[t * words_ + s / 64] >> (s % 64)) & 1U; }

 private:
  friend Reachability reachability(const AttentionMask&, std::optional<Span>);
  std::size_t n_;
  std::size_t words_;
  /// Row t holds the set of sources reaching t.
  std::vector<std::uint64_t> bits_;
};

/// Transitive closure of key -> query edges after deleting `exclude` nodes.
Reachability reachability(const AttentionMask& mask, std::optional<Span> exclude = std::nullopt);

struct PolicyReport {
  bool pass = true;
  std::size_t mismatch_count = 0;
  /// First ten differing (query, key) coordinates.
  std::vector<std::pair<std::size_t, std::size_t>> first_mismatches;
  std::string summary() const;
};

/// Re-derives the expected matrix from the policy's rules through a separate
/// code path and compares elementwise.
PolicyReport assert_policy(const AttentionMask& mask, const MaskPolicy& policy, const SequenceLayout& layout);

/// Text grid, one row per query: span tag, then 0/1 per key.
std::string dump_mask(const AttentionMask& mask);

}  // namespace latentlab
