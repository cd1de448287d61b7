// SPDX-License-Identifier: Apache-2.0
#include "latentlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "latentlab/checkpoint.hpp"
#include "latentlab/error.hpp"
#include "latentlab/rng.hpp"

namespace latentlab {

namespace {

constexpr double kMaskFill = -1e30;

std::string_view placement_name(LatentPlacement p) {
  return p == LatentPlacement::after_prompt ? "after_prompt" : "before_prompt";
}

LatentPlacement parse_placement(const std::string& s) {
  if (s == "after_prompt") return LatentPlacement::after_prompt;
  if (s == "before_prompt") return LatentPlacement::before_prompt;
  throw ConfigError("unknown latent placement: " + s);
}

std::string layer_prefix(std::size_t l) { return "layers." + std::to_string(l) + "."; }

struct ProjectionSpec {
  std::string name;
  std::size_t d_in;
  std::size_t d_out;
  bool mlp;
};

std::vector<ProjectionSpec> projections(const ModelConfig& c) {
  std::vector<ProjectionSpec> out;
  const std::size_t d = c.d_model, m = c.mlp_ratio * c.d_model;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    for (const char* n : {"attn.q", "attn.k", "attn.v", "attn.o"}) out.push_back({p + n, d, d, false});
    out.push_back({p + "mlp.up", d, m, true});
    out.push_back({p + "mlp.down", m, d, true});
  }
  return out;
}

bool has_lora(const ModelConfig& c, const ProjectionSpec& p) {
  if (c.full_finetune || c.lora.rank == 0) return false;
  return p.mlp ? c.lora.mlp : c.lora.attention;
}

Tensor gaussian(Shape shape, double stddev, std::uint64_t seed, const std::string& path) {
  Rng rng(seed, "init." + path);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

Tensor filled(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (n_layers == 0) throw ConfigError("n_layers must be >= 1");
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be >= 1");
  if (patch_size == 0 || image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw ConfigError("image size must be divisible by patch_size");
  }
  if (image_channels == 0) throw ConfigError("image_channels must be >= 1");
  if ((d_model / 2) % 2 != 0) throw ConfigError("d_model must be a multiple of 4 for the 2-D position code");
  if (vocab.latent_count() != latent.count) throw ConfigError("vocabulary latent count differs from latent.count");
  if (!vocab.contains(sym::eos) || !vocab.contains(sym::ans) || !vocab.contains(sym::img)) {
    throw ConfigError("vocabulary lacks structural symbols");
  }
  if (!full_finetune && lora.rank == 0 && (lora.attention || lora.mlp)) throw ConfigError("LoRA rank must be >= 1");
  if (lora.dropout < 0.0 || lora.dropout >= 1.0) throw ConfigError("LoRA dropout must lie in [0, 1)");
  if (layernorm_eps <= 0.0) throw ConfigError("layernorm_eps must be positive");
  if (!(head_scale > 0.0)) throw ConfigError("head_scale must be positive");
}

nlohmann::json to_json(const LatentConfig& c) {
  return {{"count", c.count},
          {"placement", placement_name(c.placement)},
          {"embeddings", c.embeddings == LatentEmbedding::shared ? "shared" : "unshared"},
          {"rows_trainable", c.rows_trainable}};
}

LatentConfig latent_config_from_json(const nlohmann::json& j) {
  LatentConfig c;
  c.count = j.value("count", c.count);
  c.placement = parse_placement(j.value("placement", std::string(placement_name(c.placement))));
  const std::string emb = j.value("embeddings", std::string("unshared"));
  if (emb != "shared" && emb != "unshared") throw ConfigError("latent.embeddings must be shared or unshared");
  c.embeddings = emb == "shared" ? LatentEmbedding::shared : LatentEmbedding::unshared;
  c.rows_trainable = j.value("rows_trainable", c.rows_trainable);
  return c;
}

nlohmann::json to_json(const LoraConfig& c) {
  return {{"rank", c.rank}, {"alpha", c.alpha}, {"dropout", c.dropout}, {"attention", c.attention}, {"mlp", c.mlp}};
}

LoraConfig lora_config_from_json(const nlohmann::json& j) {
  LoraConfig c;
  c.rank = j.value("rank", c.rank);
  c.alpha = j.value("alpha", c.alpha);
  c.dropout = j.value("dropout", c.dropout);
  c.attention = j.value("attention", c.attention);
  c.mlp = j.value("mlp", c.mlp);
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"mlp_ratio", c.mlp_ratio},
          {"image_height", c.image_height},
          {"image_width", c.image_width},
          {"image_channels", c.image_channels},
          {"patch_size", c.patch_size},
          {"max_seq_len", c.max_seq_len},
          {"layernorm_eps", c.layernorm_eps},
          {"head_scale", c.head_scale},
          {"vocab", c.vocab.to_json()},
          {"latent", to_json(c.latent)},
          {"lora", to_json(c.lora)},
          {"full_finetune", c.full_finetune}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.image_height = j.value("image_height", c.image_height);
  c.image_width = j.value("image_width", c.image_width);
  c.image_channels = j.value("image_channels", c.image_channels);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.layernorm_eps = j.value("layernorm_eps", c.layernorm_eps);
  c.head_scale = j.value("head_scale", c.head_scale);
  if (j.contains("latent")) c.latent = latent_config_from_json(j.at("latent"));
  c.vocab = j.contains("vocab") ? Vocabulary::from_json(j.at("vocab")) : Vocabulary::standard(c.latent.count);
  if (j.contains("lora")) c.lora = lora_config_from_json(j.at("lora"));
  c.full_finetune = j.value("full_finetune", c.full_finetune);
  return c;
}

TrainabilityMap trainability_map(const ModelConfig& c) {
  TrainabilityMap map;
  if (c.latent.count > 0 && c.latent.rows_trainable) map.paths.insert("embed.latent");
  for (const auto& p : projections(c)) {
    if (c.full_finetune) {
      map.paths.insert(p.name + ".weight");
    } else if (has_lora(c, p)) {
      map.paths.insert(p.name + ".lora_a");
      map.paths.insert(p.name + ".lora_b");
    }
  }
  if (c.full_finetune) {
    map.paths.insert("embed.base");
    map.paths.insert("head.weight");
    map.paths.insert("final_ln.gamma");
    map.paths.insert("final_ln.beta");
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      for (const char* n : {"ln1.gamma", "ln1.beta", "ln2.gamma", "ln2.beta"}) map.paths.insert(layer_prefix(l) + n);
    }
  }
  return map;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
  config_.validate();
  init_parameters();
  apply_trainability();
}

void Model::init_parameters() {
  const ModelConfig& c = config_;
  const std::size_t d = c.d_model;
  const std::size_t patch_dim = c.patch_size * c.patch_size * c.image_channels;
  params_.add("patch.weight", gaussian({patch_dim, d}, 1.0 / std::sqrt(static_cast<double>(patch_dim)), seed_, "patch.weight"),
              false);
  params_.add("embed.base", gaussian({c.vocab.base_size(), d}, 1.0, seed_, "embed.base"), false);
  if (c.latent.count > 0) {
    const std::size_t rows = c.latent.embeddings == LatentEmbedding::shared ? 1 : c.latent.count;
    params_.add("embed.latent", gaussian({rows, d}, 1.0, seed_, "embed.latent"), false);
  }
  const auto projs = projections(c);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    params_.add(p + "ln1.gamma", filled({d}, 1.0), false);
    params_.add(p + "ln1.beta", filled({d}, 0.0), false);
    for (const auto& pr : projs) {
      if (!pr.name.starts_with(p)) continue;
      if (pr.name == p + "mlp.up") {
        params_.add(p + "ln2.gamma", filled({d}, 1.0), false);
        params_.add(p + "ln2.beta", filled({d}, 0.0), false);
      }
      const double std_in = 1.0 / std::sqrt(static_cast<double>(pr.d_in));
      params_.add(pr.name + ".weight", gaussian({pr.d_in, pr.d_out}, std_in, seed_, pr.name + ".weight"), false);
      if (has_lora(c, pr)) {
        params_.add(pr.name + ".lora_a", gaussian({pr.d_in, c.lora.rank}, std_in, seed_, pr.name + ".lora_a"), false);
        params_.add(pr.name + ".lora_b", filled({c.lora.rank, pr.d_out}, 0.0), false);
      }
    }
  }
  params_.add("final_ln.gamma", filled({d}, 1.0), false);
  params_.add("final_ln.beta", filled({d}, 0.0), false);
  params_.add("head.weight", gaussian({d, c.vocab.base_size()}, c.head_scale / std::sqrt(static_cast<double>(d)), seed_, "head.weight"),
              false);
}

void Model::apply_trainability() {
  const TrainabilityMap map = trainability_map(config_);
  for (auto& p : params_.all()) p.trainable = map.contains(p.path);
}

std::pair<std::size_t, std::size_t> Model::patch_grid(const Raster& image) const {
  const std::size_t ps = config_.patch_size;
  if (image.channels != config_.image_channels) throw ShapeError("raster channel count differs from model config");
  if (image.height == 0 || image.width == 0 || image.height % ps != 0 || image.width % ps != 0) {
    throw ShapeError("raster " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " not divisible by patch size " + std::to_string(ps));
  }
  return {image.height / ps, image.width / ps};
}

Tensor Model::image_embeddings(const Raster& image) const {
  const auto [gh, gw] = patch_grid(image);
  const std::size_t ps = config_.patch_size, ch = config_.image_channels, d = config_.d_model;
  const Tensor& w = params_.at("patch.weight").value;
  const std::size_t patch_dim = ps * ps * ch;
  Tensor out({gh * gw, d});
  std::vector<double> patch(patch_dim);
  const std::size_t half = d / 2;
  for (std::size_t r = 0; r < gh; ++r) {
    for (std::size_t c = 0; c < gw; ++c) {
      std::size_t k = 0;
      for (std::size_t y = 0; y < ps; ++y) {
        for (std::size_t x = 0; x < ps; ++x) {
          for (std::size_t cc = 0; cc < ch; ++cc) patch[k++] = image.at(r * ps + y, c * ps + x, cc);
        }
      }
      auto row = out.row(r * gw + c);
      for (std::size_t i = 0; i < patch_dim; ++i) {
        const double pv = patch[i];
        if (pv == 0.0) continue;
        auto wr = w.row(i);
        for (std::size_t j = 0; j < d; ++j) row[j] += pv * wr[j];
      }
      for (std::size_t i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
        row[2 * i] += std::sin(static_cast<double>(r) * freq);
        row[2 * i + 1] += std::cos(static_cast<double>(r) * freq);
        row[half + 2 * i] += std::sin(static_cast<double>(c) * freq);
        row[half + 2 * i + 1] += std::cos(static_cast<double>(c) * freq);
      }
    }
  }
  return out;
}

SequenceSpec Model::sequence_spec(const Raster& image, const MaskPolicy& policy, std::size_t image_copies) const {
  const auto [gh, gw] = patch_grid(image);
  SequenceSpec s;
  s.n_image_tokens = gh * gw;
  s.image_copies = image_copies;
  s.n_latent = policy.drop_latents ? 0 : config_.latent.count;
  s.placement = config_.latent.placement;
  s.embeddings = config_.latent.embeddings;
  return s;
}

ad::Var Model::project(ad::Graph& g, ad::Var x, const std::string& name, const ForwardOptions& options,
                       std::uint64_t site) const {
  ad::Var y = ad::matmul(x, g.parameter(params_.at(name + ".weight")));
  if (!params_.contains(name + ".lora_a")) return y;
  ad::Var xin = x;
  const double p = config_.lora.dropout;
  if (options.training && p > 0.0) {
    Rng rng(options.dropout_seed, "lora_dropout", {site});
    Tensor keep(x.shape());
    const double s = 1.0 / (1.0 - p);
    for (double& v : keep.data()) v = rng.bernoulli(p) ? 0.0 : s;
    xin = ad::mul(x, g.constant(std::move(keep)));
  }
  ad::Var delta = ad::matmul(ad::matmul(xin, g.parameter(params_.at(name + ".lora_a"))),
                             g.parameter(params_.at(name + ".lora_b")));
  return ad::add(y, ad::scale(delta, config_.lora.scaling()));
}

ForwardTrace Model::build(ad::Graph& g, ad::Var image_emb, std::span<const TokenId> tokens, const AttentionMask& mask,
                          const ForwardOptions& options) const {
  const ModelConfig& c = config_;
  const SequenceLayout& layout = mask.layout();
  const std::size_t T = tokens.size();
  if (T != layout.total_len) throw ShapeError("token count " + std::to_string(T) + " differs from mask size");
  if (T > c.max_seq_len) throw ShapeError("sequence of " + std::to_string(T) + " exceeds max_seq_len");
  if (layout.image.begin != 0) throw ShapeError("image span must start the sequence");
  const std::size_t n_img = image_emb.shape()[0];
  if (image_emb.value().cols() != c.d_model) throw ShapeError("image embedding width differs from d_model");
  if (n_img * layout.image_copies != layout.image.size()) {
    throw ShapeError("layout holds " + std::to_string(layout.image.size()) + " image positions, embeddings give " +
                     std::to_string(n_img) + " x " + std::to_string(layout.image_copies));
  }

  std::vector<ad::Var> parts(layout.image_copies, image_emb);
  if (layout.image.end < T) {
    ad::Var table = g.parameter(params_.at("embed.base"));
    if (params_.contains("embed.latent")) {
      const std::vector<ad::Var> tables{table, g.parameter(params_.at("embed.latent"))};
      table = ad::concat_rows(tables);
    }
    parts.push_back(ad::embed(table, tokens.subspan(layout.image.end)));
  }
  ad::Var x = parts.size() == 1 ? parts[0] : ad::concat_rows(parts);

  const std::vector<std::uint8_t> blocked = mask.blocked();
  const std::size_t dh = c.d_model / c.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  ForwardTrace trace;
  std::uint64_t site = 0;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    ad::Var h = ad::layernorm_rows(x, g.parameter(params_.at(p + "ln1.gamma")), g.parameter(params_.at(p + "ln1.beta")),
                                   c.layernorm_eps);
    ad::Var q = project(g, h, p + "attn.q", options, site++);
    ad::Var k = project(g, h, p + "attn.k", options, site++);
    ad::Var v = project(g, h, p + "attn.v", options, site++);
    std::vector<ad::Var> heads;
    if (options.capture_attention) trace.attention.emplace_back();
    for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
      ad::Var qh = ad::slice_cols(q, hd * dh, dh);
      ad::Var kh = ad::slice_cols(k, hd * dh, dh);
      ad::Var vh = ad::slice_cols(v, hd * dh, dh);
      ad::Var scores = ad::masked_fill(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), blocked, kMaskFill);
      ad::Var attn = ad::softmax_rows(scores);
      if (options.capture_attention) trace.attention.back().push_back(attn);
      heads.push_back(ad::matmul(attn, vh));
    }
    x = ad::add(x, project(g, ad::concat_cols(heads), p + "attn.o", options, site++));
    ad::Var h2 = ad::layernorm_rows(x, g.parameter(params_.at(p + "ln2.gamma")),
                                    g.parameter(params_.at(p + "ln2.beta")), c.layernorm_eps);
    ad::Var up = ad::gelu(project(g, h2, p + "mlp.up", options, site++));
    x = ad::add(x, project(g, up, p + "mlp.down", options, site++));
  }
  trace.hidden = ad::layernorm_rows(x, g.parameter(params_.at("final_ln.gamma")),
                                    g.parameter(params_.at("final_ln.beta")), c.layernorm_eps);
  trace.logits = ad::matmul(trace.hidden, g.parameter(params_.at("head.weight")));
  return trace;
}

ForwardResult Model::forward(const Raster& image, std::span<const TokenId> tokens, const AttentionMask& mask,
                             const ForwardOptions& options) const {
  ad::Graph g(false);
  ad::Var emb = g.constant(image_embeddings(image));
  ForwardTrace trace = build(g, emb, tokens, mask, options);
  ForwardResult out;
  out.logits = trace.logits.value();
  out.hidden = trace.hidden.value();
  for (const auto& layer : trace.attention) {
    out.attention.emplace_back();
    for (const auto& a : layer) out.attention.back().push_back(a.value());
  }
  return out;
}

void Model::save(const std::filesystem::path& file, const nlohmann::json& extra) const {
  nlohmann::json meta = {{"model_config", to_json(config_)}, {"seed", seed_}, {"extra", extra}};
  save_checkpoint(file, params_, meta);
}

Model Model::load(const std::filesystem::path& file) {
  Checkpoint ck = load_checkpoint(file);
  Model m;
  m.config_ = model_config_from_json(ck.meta.at("model_config"));
  m.config_.validate();
  m.seed_ = ck.meta.at("seed").get<std::uint64_t>();
  Model fresh(m.config_, m.seed_);
  for (const auto& p : fresh.params_.all()) {
    if (!ck.params.contains(p.path)) throw DataError("checkpoint lacks parameter " + p.path);
    const auto& src = ck.params.at(p.path);
    if (src.value.shape() != p.value.shape()) throw DataError("checkpoint shape mismatch for " + p.path);
    m.params_.add(p.path, src.value, p.trainable);
  }
  if (ck.params.all().size() != fresh.params_.all().size()) throw DataError("checkpoint has unexpected parameters");
  return m;
}

Model Model::load(const std::filesystem::path& file, const Vocabulary& vocab) {
  const nlohmann::json manifest = read_checkpoint_manifest(file);
  const Vocabulary stored = Vocabulary::from_json(manifest.at("meta").at("model_config").at("vocab"));
  if (!(stored == vocab)) throw DataError("checkpoint vocabulary does not match the dataset vocabulary");
  return load(file);
}

std::vector<bool> generatable_tokens(const Vocabulary& vocab) {
  std::vector<bool> ok(vocab.base_size(), true);
  for (auto s : {sym::pad, sym::bos, sym::img, sym::ans}) {
    if (vocab.contains(s)) ok[static_cast<std::size_t>(vocab.id(s))] = false;
  }
  return ok;
}

std::vector<TokenId> greedy_decode(const std::function<std::vector<double>(std::span<const TokenId>)>& next_logits,
                                   const Vocabulary& vocab, std::size_t max_new,
                                   std::span<const TokenId> candidates) {
  std::vector<bool> ok = generatable_tokens(vocab);
  if (!candidates.empty()) {
    std::fill(ok.begin(), ok.end(), false);
    for (TokenId t : candidates) {
      if (t < 0 || static_cast<std::size_t>(t) >= ok.size()) throw ConfigError("decode candidate outside the base vocabulary");
      ok[static_cast<std::size_t>(t)] = true;
    }
  }
  const TokenId eos = vocab.id(sym::eos);
  std::vector<TokenId> out;
  while (out.size() < max_new) {
    const std::vector<double> logits = next_logits(out);
    if (logits.size() < ok.size()) throw ShapeError("decoder scorer returned too few logits");
    TokenId best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < ok.size(); ++t) {
      if (ok[t] && (best < 0 || logits[t] > best_v)) {
        best = static_cast<TokenId>(t);
        best_v = logits[t];
      }
    }
    if (best == eos) break;
    out.push_back(best);
  }
  return out;
}

std::vector<TokenId> generate(const Model& model, const Raster& image, std::span<const TokenId> prompt,
                              const MaskPolicy& policy, std::size_t max_new, std::size_t image_copies,
                              std::span<const TokenId> candidates) {
  const SequenceSpec spec = model.sequence_spec(image, policy, image_copies);
  const Tensor emb = model.image_embeddings(image);
  auto step = [&](std::span<const TokenId> so_far) {
    const Sequence seq = assemble_sequence(model.vocab(), spec, prompt, so_far);
    const AttentionMask mask = build_mask(policy, seq.layout);
    ad::Graph g(false);
    ForwardTrace t = model.build(g, g.constant(emb), seq.tokens, mask);
    auto row = t.logits.value().row(seq.layout.total_len - 1);
    return std::vector<double>(row.begin(), row.end());
  };
  return greedy_decode(step, model.vocab(), max_new, candidates);
}

SubstitutionResult substitute_image_eval(const Model& model, const Raster& image_a, const Raster& image_b,
                                         std::span<const TokenId> prompt, std::span<const TokenId> answer,
                                         const MaskPolicy& policy, std::size_t image_copies) {
  if (image_a.height != image_b.height || image_a.width != image_b.width || image_a.channels != image_b.channels) {
    throw ShapeError("substitute_image_eval needs equally sized images");
  }
  const Sequence seq = assemble_sequence(model.vocab(), model.sequence_spec(image_a, policy, image_copies), prompt, answer);
  const AttentionMask mask = build_mask(policy, seq.layout);
  const Span ans = mask.layout().answer;
  auto answer_rows = [&](const Raster& img) {
    const Tensor logits = model.forward(img, seq.tokens, mask).logits;
    Tensor out({ans.size(), logits.cols()});
    for (std::size_t i = 0; i < ans.size(); ++i) {
      std::copy(logits.row(ans.begin + i).begin(), logits.row(ans.begin + i).end(), out.row(i).begin());
    }
    return out;
  };
  SubstitutionResult r;
  r.logits_a = answer_rows(image_a);
  r.logits_b = answer_rows(image_b);
  r.max_abs_diff = max_abs_diff(r.logits_a, r.logits_b);
  return r;
}

}  // namespace latentlab
