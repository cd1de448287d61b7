// SPDX-License-Identifier: Apache-2.0
#include "latentlab/masking.hpp"

#include <array>
#include <sstream>

#include "latentlab/error.hpp"

namespace latentlab {

std::string_view to_string(MaskVariant v) {
  switch (v) {
    case MaskVariant::standard: return "standard";
    case MaskVariant::bottleneck: return "bottleneck";
    case MaskVariant::ans_to_vis_only: return "ans_to_vis_only";
    case MaskVariant::bottleneck_latent_prompt_block: return "bottleneck_latent_prompt_block";
  }
  return "?";
}

MaskVariant parse_mask_variant(std::string_view s) {
  for (auto v : {MaskVariant::standard, MaskVariant::bottleneck, MaskVariant::ans_to_vis_only,
                 MaskVariant::bottleneck_latent_prompt_block}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown mask variant: " + std::string(s));
}

AttentionMask::AttentionMask(SequenceLayout layout, std::vector<std::uint8_t> allowed)
    : layout_(std::move(layout)), allowed_(std::move(allowed)) {
  if (allowed_.size() != layout_.total_len * layout_.total_len) throw ShapeError("mask size does not match layout");
}

std::vector<std::uint8_t> AttentionMask::blocked() const {
  std::vector<std::uint8_t> out(allowed_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = allowed_[i] ? 0 : 1;
  return out;
}

std::size_t AttentionMask::allowed_in_row(std::size_t i) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < size(); ++j) n += allowed(i, j) ? 1 : 0;
  return n;
}

SequenceLayout effective_layout(const MaskPolicy& policy, const SequenceLayout& layout) {
  return policy.drop_latents ? without_latents(layout) : layout;
}

namespace {

constexpr std::size_t kKinds = 5;

std::size_t index_of(SpanKind k) { return static_cast<std::size_t>(k); }

/// visible[query kind][key kind] before causality is applied.
std::array<std::array<bool, kKinds>, kKinds> visibility_table(MaskVariant variant) {
  std::array<std::array<bool, kKinds>, kKinds> t{};
  for (auto& row : t) row.fill(true);
  for (auto& row : t) row[index_of(SpanKind::pad)] = false;
  const auto block = [&t](SpanKind q, SpanKind k) { t[index_of(q)][index_of(k)] = false; };
  switch (variant) {
    case MaskVariant::standard:
      break;
    case MaskVariant::ans_to_vis_only:
      block(SpanKind::answer, SpanKind::image);
      break;
    case MaskVariant::bottleneck_latent_prompt_block:
      block(SpanKind::latent, SpanKind::prompt);
      [[fallthrough]];
    case MaskVariant::bottleneck:
      block(SpanKind::answer, SpanKind::image);
      block(SpanKind::prompt, SpanKind::image);
      break;
  }
  return t;
}

bool is_bottleneck_family(MaskVariant v) {
  return v == MaskVariant::bottleneck || v == MaskVariant::bottleneck_latent_prompt_block;
}

}  // namespace

AttentionMask build_mask(const MaskPolicy& policy, const SequenceLayout& input_layout) {
  const SequenceLayout layout = effective_layout(policy, input_layout);
  if (!layout.is_partition()) throw ConfigError("layout spans do not partition the sequence");
  if (is_bottleneck_family(policy.variant) && layout.prompt.empty()) {
    throw ConfigError("bottleneck masks need a non-empty prompt");
  }
  const auto table = visibility_table(policy.variant);
  const std::size_t n = layout.total_len;
  std::vector<SpanKind> kinds(n);
  for (std::size_t i = 0; i < n; ++i) kinds[i] = layout.kind_at(i);

  std::vector<std::uint8_t> allowed(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (kinds[i] == SpanKind::pad) {
      // Pad rows are never read; they look at position 0 so softmax stays defined.
      allowed[i * n] = 1;
      continue;
    }
    const auto& row = table[index_of(kinds[i])];
    for (std::size_t j = 0; j <= i; ++j) allowed[i * n + j] = row[index_of(kinds[j])] || i == j ? 1 : 0;
  }
  AttentionMask mask(layout, std::move(allowed));
  for (std::size_t i = 0; i < n; ++i) {
    if (mask.allowed_in_row(i) == 0) throw ShapeError("attention row " + std::to_string(i) + " is fully blocked");
  }
  return mask;
}

Reachability reachability(const AttentionMask& mask, std::optional<Span> exclude) {
  const std::size_t n = mask.size();
  Reachability r(n);
  const auto excluded = [&exclude](std::size_t i) { return exclude && exclude->contains(i); };
  for (std::size_t t = 0; t < n; ++t) {
    if (excluded(t)) continue;
    std::uint64_t* row = &r.bits_[t * r.words_];
    row[t / 64] |= std::uint64_t{1} << (t % 64);
    for (std::size_t j = 0; j < t; ++j) {
      if (!mask.allowed(t, j) || excluded(j)) continue;
      const std::uint64_t* src = &r.bits_[j * r.words_];
      for (std::size_t w = 0; w < r.words_; ++w) row[w] |= src[w];
    }
  }
  return r;
}

namespace {

// Independent statement of each variant's rules, written position-wise.
bool expected_allowed(MaskVariant variant, const SequenceLayout& l, std::size_t q, std::size_t k) {
  if (l.pad.contains(q)) return k == 0;
  if (k > q) return false;
  if (q == k) return true;
  if (l.pad.contains(k)) return false;
  const bool key_is_image = l.image.contains(k);
  const bool answer_row = l.answer.contains(q);
  const bool prompt_row = l.prompt.contains(q);
  const bool latent_row = l.latent.contains(q);
  switch (variant) {
    case MaskVariant::standard:
      return true;
    case MaskVariant::ans_to_vis_only:
      return !(answer_row && key_is_image);
    case MaskVariant::bottleneck:
      return !((answer_row || prompt_row) && key_is_image);
    case MaskVariant::bottleneck_latent_prompt_block:
      if ((answer_row || prompt_row) && key_is_image) return false;
      return !(latent_row && l.prompt.contains(k));
  }
  return false;
}

}  // namespace

std::string PolicyReport::summary() const {
  if (pass) return "pass";
  std::ostringstream os;
  os << "fail: " << mismatch_count << " mismatched entries; first:";
  for (auto [i, j] : first_mismatches) os << " (" << i << "," << j << ")";
  return os.str();
}

PolicyReport assert_policy(const AttentionMask& mask, const MaskPolicy& policy, const SequenceLayout& layout) {
  const SequenceLayout l = effective_layout(policy, layout);
  PolicyReport report;
  if (mask.size() != l.total_len) {
    report.pass = false;
    report.mismatch_count = l.total_len * l.total_len;
    return report;
  }
  for (std::size_t q = 0; q < l.total_len; ++q) {
    for (std::size_t k = 0; k < l.total_len; ++k) {
      if (mask.allowed(q, k) != expected_allowed(policy.variant, l, q, k)) {
        report.pass = false;
        ++report.mismatch_count;
        if (report.first_mismatches.size() < 10) report.first_mismatches.emplace_back(q, k);
      }
    }
  }
  return report;
}

std::string dump_mask(const AttentionMask& mask) {
  std::ostringstream os;
  const auto& l = mask.layout();
  os << "# layout image=[" << l.image.begin << "," << l.image.end << ") prompt=[" << l.prompt.begin << ","
     << l.prompt.end << ") latent=[" << l.latent.begin << "," << l.latent.end << ") answer=[" << l.answer.begin
     << "," << l.answer.end << ") pad=[" << l.pad.begin << "," << l.pad.end << ")\n";
  for (std::size_t i = 0; i < mask.size(); ++i) {
    os << to_string(l.kind_at(i)).substr(0, 3) << ' ';
    for (std::size_t j = 0; j < mask.size(); ++j) os << (mask.allowed(i, j) ? '1' : '0');
    os << '\n';
  }
  return os.str();
}

}  // namespace latentlab
