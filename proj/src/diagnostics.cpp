// SPDX-License-Identifier: Apache-2.0
#include "latentlab/diagnostics.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>

#include "latentlab/error.hpp"

namespace latentlab {

nlohmann::json EvalReport::to_json() const {
  nlohmann::json log = nlohmann::json::array();
  for (const auto& o : outcomes) log.push_back({{"index", o.index}, {"gold", o.gold}, {"predicted", o.predicted}, {"correct", o.correct}});
  return {{"task", task}, {"policy", policy}, {"drop_latents", drop_latents}, {"n", n},
          {"correct", correct}, {"accuracy", accuracy}, {"examples", log}};
}

std::size_t max_new_tokens(AnswerFormat format) { return format == AnswerFormat::option ? 1 : 4; }

bool answer_correct(const Vocabulary& vocab, std::span<const TokenId> emitted, const Answer& gold) {
  Answer got;
  if (gold.format == AnswerFormat::option) {
    if (emitted.empty()) return false;
    return decode_answer(vocab, emitted.first(1), AnswerFormat::option, got) && got == gold;
  }
  return decode_answer(vocab, emitted, AnswerFormat::count, got) && got == gold;
}

std::vector<TokenId> option_candidates(const Vocabulary& vocab, const TaskExample& ex) {
  std::vector<TokenId> out;
  if (ex.answer.format != AnswerFormat::option) return out;
  for (int i = 0; i < option_count(ex.kind); ++i) out.push_back(vocab.id(std::string(1, static_cast<char>('A' + i))));
  return out;
}

EvalReport evaluate_with(const Predictor& predict, const Vocabulary& vocab, std::span<const TaskExample> examples,
                         const MaskPolicy& policy) {
  EvalReport r;
  std::set<std::string> kinds;
  for (const auto& ex : examples) kinds.insert(std::string(to_string(ex.kind)));
  for (const auto& k : kinds) r.task += (r.task.empty() ? "" : "+") + k;
  r.policy = std::string(to_string(policy.variant));
  r.drop_latents = policy.drop_latents;
  for (const auto& ex : examples) {
    const std::vector<TokenId> out = predict(ex);
    ExampleOutcome o;
    o.index = ex.index;
    o.gold = ex.answer.text();
    for (TokenId t : out) o.predicted += (o.predicted.empty() ? "" : " ") + vocab.symbol(t);
    o.correct = answer_correct(vocab, out, ex.answer);
    r.correct += o.correct ? 1 : 0;
    r.outcomes.push_back(std::move(o));
  }
  r.n = examples.size();
  r.accuracy = r.n == 0 ? 0.0 : static_cast<double>(r.correct) / static_cast<double>(r.n);
  return r;
}

EvalReport evaluate(const Model& model, std::span<const TaskExample> examples, const MaskPolicy& policy,
                    std::size_t image_copies) {
  const Vocabulary& vocab = model.vocab();
  return evaluate_with(
      [&](const TaskExample& ex) {
        return generate(model, ex.image, ex.prompt_tokens(vocab), policy, max_new_tokens(ex.answer.format), image_copies,
                        option_candidates(vocab, ex));
      },
      vocab, examples, policy);
}

AttentionCapture capture_attention(const Model& model, const TaskExample& ex, const MaskPolicy& policy,
                                   std::size_t image_copies) {
  const Vocabulary& vocab = model.vocab();
  const Sequence seq = assemble_sequence(vocab, model.sequence_spec(ex.image, policy, image_copies),
                                         ex.prompt_tokens(vocab), ex.answer_tokens(vocab));
  const AttentionMask mask = build_mask(policy, seq.layout);
  ForwardOptions fo;
  fo.capture_attention = true;
  AttentionCapture c;
  c.layout = mask.layout();
  c.attention = model.forward(ex.image, seq.tokens, mask, fo).attention;
  return c;
}

std::vector<std::vector<double>> answer_latent_mass(const AttentionCapture& capture) {
  const SequenceLayout& l = capture.layout;
  if (l.latent.empty()) throw ConfigError("answer-to-latent attention needs latent tokens");
  if (l.answer.empty()) throw ConfigError("layout has no answer span");
  std::vector<std::vector<double>> out;
  for (const auto& layer : capture.attention) {
    out.emplace_back();
    for (const Tensor& a : layer) {
      double total = 0.0;
      for (std::size_t q = l.answer.begin; q < l.answer.end; ++q) {
        for (std::size_t k = l.latent.begin; k < l.latent.end; ++k) total += a.at(q, k);
      }
      out.back().push_back(total / static_cast<double>(l.answer.size()));
    }
  }
  return out;
}

nlohmann::json AttentionSummary::to_json() const {
  return {{"mean_answer_to_latent", mean_answer_to_latent}, {"per_head", per_head}, {"examples", examples}};
}

AttentionSummary summarize_answer_latent(std::span<const AttentionCapture> captures) {
  AttentionSummary s;
  if (captures.empty()) return s;
  for (const auto& c : captures) {
    const auto m = answer_latent_mass(c);
    if (s.per_head.empty()) {
      s.per_head.assign(m.size(), std::vector<double>(m.empty() ? 0 : m[0].size(), 0.0));
    }
    for (std::size_t l = 0; l < m.size(); ++l) {
      for (std::size_t h = 0; h < m[l].size(); ++h) s.per_head[l][h] += m[l][h];
    }
  }
  double total = 0.0;
  std::size_t cells = 0;
  for (auto& layer : s.per_head) {
    for (double& v : layer) {
      v /= static_cast<double>(captures.size());
      total += v;
      ++cells;
    }
  }
  s.examples = captures.size();
  s.mean_answer_to_latent = cells == 0 ? 0.0 : total / static_cast<double>(cells);
  return s;
}

AttentionSummary answer_to_latent_attention(const Model& model, std::span<const TaskExample> examples,
                                            const MaskPolicy& policy) {
  if (model.config().latent.count == 0 || policy.drop_latents) throw ConfigError("answer-to-latent attention needs K >= 1");
  std::vector<AttentionCapture> caps;
  caps.reserve(examples.size());
  for (const auto& ex : examples) caps.push_back(capture_attention(model, ex, policy));
  return summarize_answer_latent(caps);
}

nlohmann::json LatentImageMaps::to_json(const Raster& source) const {
  nlohmann::json jm = nlohmann::json::array();
  for (const Tensor& m : maps) jm.push_back(m.storage());
  return {{"grid_h", grid_h}, {"grid_w", grid_w}, {"patch_size", patch_size}, {"maps", jm},
          {"raster", {{"height", source.height}, {"width", source.width}, {"pixels", source.pixels}}}};
}

LatentImageMaps latent_image_attention_maps(const Model& model, const TaskExample& ex, const MaskPolicy& policy) {
  if (model.config().latent.count == 0 || policy.drop_latents) throw ConfigError("latent maps need K >= 1");
  const AttentionCapture c = capture_attention(model, ex, policy);
  const auto [gh, gw] = model.patch_grid(ex.image);
  LatentImageMaps out;
  out.grid_h = gh;
  out.grid_w = gw;
  out.patch_size = model.config().patch_size;
  const SequenceLayout& l = c.layout;
  double count = 0.0;
  for (const auto& layer : c.attention) count += static_cast<double>(layer.size());
  for (std::size_t q = l.latent.begin; q < l.latent.end; ++q) {
    Tensor map({gh, gw});
    for (const auto& layer : c.attention) {
      for (const Tensor& a : layer) {
        for (std::size_t k = 0; k < gh * gw; ++k) map[k] += a.at(q, l.image.begin + k);
      }
    }
    for (double& v : map.data()) v /= count;
    out.maps.push_back(std::move(map));
  }
  return out;
}

double box_mass(const Tensor& map, const Box& box, std::size_t patch_size) {
  const auto ps = static_cast<int>(patch_size);
  double total = 0.0;
  for (std::size_t r = 0; r < map.rows(); ++r) {
    for (std::size_t c = 0; c < map.cols(); ++c) {
      const Box patch{static_cast<int>(c) * ps, static_cast<int>(r) * ps, static_cast<int>(c + 1) * ps,
                      static_cast<int>(r + 1) * ps};
      total += map.at(r, c) * static_cast<double>(intersection_area(patch, box)) / static_cast<double>(ps * ps);
    }
  }
  return total;
}

void export_hidden_states(const Model& model, std::span<const TaskExample> examples, std::size_t n_per_task,
                          std::ostream& out, const MaskPolicy& policy) {
  const Vocabulary& vocab = model.vocab();
  const std::size_t d = model.config().d_model;
  out << "example\ttask\tposition\tlabel";
  for (std::size_t j = 0; j < d; ++j) out << "\th" << j;
  out << '\n';
  out.precision(17);
  std::unordered_map<TaskKind, std::size_t> seen;
  for (const auto& ex : examples) {
    if (seen[ex.kind]++ >= n_per_task) continue;
    const Sequence seq = assemble_sequence(vocab, model.sequence_spec(ex.image, policy), ex.prompt_tokens(vocab),
                                           ex.answer_tokens(vocab));
    const AttentionMask mask = build_mask(policy, seq.layout);
    const Tensor hidden = model.forward(ex.image, seq.tokens, mask).hidden;
    for (std::size_t p = 0; p < seq.layout.total_len; ++p) {
      const SpanKind k = seq.layout.kind_at(p);
      const char* label = k == SpanKind::image ? "image" : (k == SpanKind::latent ? "latent" : "text");
      out << ex.index << '\t' << to_string(ex.kind) << '\t' << p << '\t' << label;
      for (double v : hidden.row(p)) out << '\t' << v;
      out << '\n';
    }
  }
}

namespace {

nlohmann::json span_json(const Span& s) { return nlohmann::json::array({s.begin, s.end}); }
Span span_from(const nlohmann::json& j) { return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()}; }

}  // namespace

void write_attention_dump(std::ostream& out, std::uint64_t example, const AttentionCapture& capture) {
  const SequenceLayout& l = capture.layout;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t li = 0; li < capture.attention.size(); ++li) {
    for (std::size_t h = 0; h < capture.attention[li].size(); ++h) {
      const Tensor& a = capture.attention[li][h];
      for (std::size_t q = 0; q < l.total_len; ++q) {
        if (!l.answer.contains(q) && !l.latent.contains(q)) continue;
        for (std::size_t k = 0; k <= q; ++k) {
          if (a.at(q, k) != 0.0) rows.push_back({li, h, q, k, a.at(q, k)});
        }
      }
    }
  }
  const nlohmann::json rec = {
      {"example", example},
      {"layout",
       {{"image", span_json(l.image)}, {"prompt", span_json(l.prompt)}, {"latent", span_json(l.latent)},
        {"answer", span_json(l.answer)}, {"pad", span_json(l.pad)}, {"total_len", l.total_len},
        {"image_copies", l.image_copies},
        {"placement", l.placement == LatentPlacement::after_prompt ? "after_prompt" : "before_prompt"}}},
      {"layers", capture.attention.size()},
      {"heads", capture.attention.empty() ? 0 : capture.attention[0].size()},
      {"entries", rows}};
  out << rec.dump() << '\n';
}

std::vector<AttentionCapture> read_attention_dump(std::istream& in) {
  std::vector<AttentionCapture> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json rec = nlohmann::json::parse(line);
    AttentionCapture c;
    const auto& jl = rec.at("layout");
    c.layout.image = span_from(jl.at("image"));
    c.layout.prompt = span_from(jl.at("prompt"));
    c.layout.latent = span_from(jl.at("latent"));
    c.layout.answer = span_from(jl.at("answer"));
    c.layout.pad = span_from(jl.at("pad"));
    c.layout.total_len = jl.at("total_len").get<std::size_t>();
    c.layout.image_copies = jl.at("image_copies").get<std::size_t>();
    c.layout.placement = jl.at("placement") == "after_prompt" ? LatentPlacement::after_prompt : LatentPlacement::before_prompt;
    if (!c.layout.is_partition()) throw DataError("attention dump has an invalid layout");
    const std::size_t L = rec.at("layers").get<std::size_t>(), H = rec.at("heads").get<std::size_t>();
    const std::size_t T = c.layout.total_len;
    c.attention.assign(L, std::vector<Tensor>(H, Tensor({T, T})));
    for (const auto& e : rec.at("entries")) {
      c.attention.at(e.at(0).get<std::size_t>()).at(e.at(1).get<std::size_t>()).at(e.at(2).get<std::size_t>(),
                                                                                  e.at(3).get<std::size_t>()) =
          e.at(4).get<double>();
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace latentlab
