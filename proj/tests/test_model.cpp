// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "latentlab/error.hpp"
#include "latentlab/model.hpp"
#include "latentlab/taskgen.hpp"
#include "latentlab/training.hpp"

using namespace latentlab;

namespace {

struct Prepared {
  Sequence seq;
  AttentionMask mask;
};

Prepared prepare(const Model& m, const TaskExample& ex, const MaskPolicy& policy, std::size_t copies = 1) {
  const auto prompt = ex.prompt_tokens(m.vocab());
  const auto answer = ex.answer_tokens(m.vocab());
  Sequence seq = assemble_sequence(m.vocab(), m.sequence_spec(ex.image, policy, copies), prompt, answer);
  AttentionMask mask = build_mask(policy, seq.layout);
  return {std::move(seq), std::move(mask)};
}

TaskExample example(std::uint64_t index, TaskKind kind = TaskKind::localization) {
  return generate_example(kind, 0, index);
}

bool same_parameters(const Model& a, const Model& b) {
  if (a.params().all().size() != b.params().all().size()) return false;
  for (const auto& p : a.params().all()) {
    if (!b.params().contains(p.path) || !p.value.bit_equal(b.params().at(p.path).value)) return false;
  }
  return true;
}

/// Independent count: every adapted projection contributes r*d_in + d_out*r.
std::size_t closed_form_trainable(const ModelConfig& c) {
  const std::size_t d = c.d_model, m = c.mlp_ratio * d, r = c.lora.rank;
  std::size_t per_layer = 0;
  if (c.lora.attention) per_layer += 4 * (r * d + d * r);
  if (c.lora.mlp) per_layer += (r * d + m * r) + (r * m + d * r);
  return c.n_layers * per_layer + c.latent.count * d;
}

}  // namespace

TEST_CASE("initialization is deterministic") {
  const ModelConfig c;
  CHECK(same_parameters(Model(c, 5), Model(c, 5)));
  CHECK_FALSE(same_parameters(Model(c, 5), Model(c, 6)));
}

TEST_CASE("trainable parameters match the closed form") {
  ModelConfig c;
  const Model m(c, 1);
  CHECK(m.params().trainable_scalar_count() == closed_form_trainable(c));
  CHECK(m.params().trainable_scalar_count() == 10240);
  CHECK(m.params().at("embed.latent").value.shape() == Shape{16, 64});
  CHECK(m.params().at("embed.latent").trainable);
  CHECK_FALSE(m.params().at("patch.weight").trainable);
  CHECK_FALSE(m.params().at("embed.base").trainable);
  CHECK_FALSE(m.params().at("head.weight").trainable);

  const TrainabilityMap map = trainability_map(c);
  for (const auto& p : m.params().all()) CHECK(p.trainable == map.contains(p.path));

  c.lora.mlp = false;
  CHECK(Model(c, 1).params().trainable_scalar_count() == closed_form_trainable(c));
  c.latent.rows_trainable = false;
  CHECK(Model(c, 1).params().trainable_scalar_count() == closed_form_trainable(c) - 16 * 64);
}

TEST_CASE("shared latent embeddings use one row") {
  ModelConfig c;
  c.latent.embeddings = LatentEmbedding::shared;
  const Model m(c, 1);
  CHECK(m.params().at("embed.latent").value.shape() == Shape{1, 64});
}

TEST_CASE("full finetune trains the language side directly") {
  ModelConfig c;
  c.full_finetune = true;
  const Model m(c, 1);
  CHECK(m.params().at("head.weight").trainable);
  CHECK(m.params().at("layers.0.attn.q.weight").trainable);
  CHECK_FALSE(m.params().at("patch.weight").trainable);
  CHECK_FALSE(m.params().contains("layers.0.attn.q.lora_a"));
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.n_heads = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.patch_size = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  CHECK(model_config_from_json(to_json(c)).d_model == c.d_model);
  const Model m(ModelConfig{}, 0);
  CHECK_THROWS_AS(m.patch_grid(Raster(30, 32, 3)), ShapeError);
  CHECK_THROWS_AS(m.image_embeddings(Raster(32, 32, 1)), ShapeError);
  CHECK(m.patch_grid(Raster(32, 64, 3)) == std::pair<std::size_t, std::size_t>{4, 8});
}

TEST_CASE("attention rows are normalized and blocked entries are zero") {
  const Model m(ModelConfig{}, 3);
  for (const MaskPolicy& policy : {MaskPolicy::standard(), MaskPolicy::bottleneck()}) {
    const Prepared p = prepare(m, example(1), policy);
    ForwardOptions opt;
    opt.capture_attention = true;
    const ForwardResult r = m.forward(example(1).image, p.seq.tokens, p.mask, opt);
    CHECK(r.logits.all_finite());
    CHECK(r.logits.shape() == Shape{p.seq.tokens.size(), 64});
    REQUIRE(r.attention.size() == 2);
    for (const auto& layer : r.attention) {
      REQUIRE(layer.size() == 4);
      for (const Tensor& a : layer) {
        for (std::size_t i = 0; i < a.rows(); ++i) {
          double s = 0;
          for (std::size_t j = 0; j < a.cols(); ++j) {
            if (!p.mask.allowed(i, j)) CHECK(a.at(i, j) == 0.0);
            s += a.at(i, j);
          }
          CHECK(std::abs(s - 1.0) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("LoRA is the identity at init") {
  ModelConfig base;
  base.lora.attention = false;
  base.lora.mlp = false;
  const Model with(ModelConfig{}, 4), without(base, 4);
  const TaskExample ex = example(2);
  const Prepared p = prepare(with, ex, MaskPolicy::standard());
  const Tensor a = with.forward(ex.image, p.seq.tokens, p.mask).logits;
  const Tensor b = without.forward(ex.image, p.seq.tokens, p.mask).logits;
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("image substitution") {
  const Model m(ModelConfig{}, 8);
  const TaskExample a = example(3), b = example(4);
  const auto prompt = a.prompt_tokens(m.vocab());
  const auto answer = a.answer_tokens(m.vocab());
  CHECK(substitute_image_eval(m, a.image, b.image, prompt, answer, {MaskVariant::bottleneck, true}).max_abs_diff == 0.0);
  CHECK(substitute_image_eval(m, a.image, b.image, prompt, answer, MaskPolicy::bottleneck()).max_abs_diff > 1e-9);
  CHECK(substitute_image_eval(m, a.image, b.image, prompt, answer, MaskPolicy::standard()).max_abs_diff > 1e-9);
  CHECK(substitute_image_eval(m, a.image, a.image, prompt, answer, MaskPolicy::standard()).max_abs_diff == 0.0);
  CHECK_THROWS_AS(substitute_image_eval(m, a.image, Raster(32, 64, 3), prompt, answer, MaskPolicy::standard()),
                  ShapeError);
}

TEST_CASE("gradient to the image is blocked without latents") {
  const Model m(ModelConfig{}, 9);
  const TaskExample ex = example(5);
  for (bool drop : {true, false}) {
    const Prepared p = prepare(m, ex, {MaskVariant::bottleneck, drop});
    ad::Graph g;
    const ad::Var img = g.input(m.image_embeddings(ex.image));
    const ForwardTrace t = m.build(g, img, p.seq.tokens, p.mask);
    g.backward(answer_nll(t.logits, p.seq.targets, p.mask.layout()));
    double max_grad = 0.0;
    for (double v : g.grad(img).data()) max_grad = std::max(max_grad, std::abs(v));
    if (drop) {
      CHECK(max_grad == 0.0);
    } else {
      CHECK(max_grad > 0.0);
    }
  }
}

TEST_CASE("image copies repeat the image span") {
  const Model m(ModelConfig{}, 1);
  const TaskExample ex = example(6);
  const Prepared p = prepare(m, ex, MaskPolicy::standard(), 2);
  CHECK(p.seq.layout.image.size() == 32);
  CHECK(p.seq.layout.image_copies == 2);
  CHECK(m.forward(ex.image, p.seq.tokens, p.mask).logits.all_finite());
}

TEST_CASE("greedy decoding contract") {
  const Vocabulary v = Vocabulary::standard(16);
  const auto one_hot = [&v](std::string_view s) {
    std::vector<double> l(v.base_size(), 0.0);
    l[static_cast<std::size_t>(v.id(s))] = 10.0;
    return l;
  };
  const auto b = greedy_decode([&](std::span<const TokenId>) { return one_hot("B"); }, v, 1);
  CHECK(b == std::vector<TokenId>{v.id("B")});

  const auto digits = greedy_decode(
      [&](std::span<const TokenId> so_far) {
        static const char* seq[] = {"1", "0", "<eos>", "7"};
        return one_hot(seq[so_far.size()]);
      },
      v, 4);
  CHECK(digits == std::vector<TokenId>{v.id("1"), v.id("0")});

  // Structural symbols are never emitted even when they score highest.
  const auto skip = greedy_decode(
      [&](std::span<const TokenId>) {
        auto l = one_hot("<ans>");
        l[static_cast<std::size_t>(v.id("C"))] = 5.0;
        return l;
      },
      v, 1);
  CHECK(skip == std::vector<TokenId>{v.id("C")});

  const auto gen = generatable_tokens(v);
  CHECK(gen.size() == v.base_size());
  CHECK_FALSE(gen[static_cast<std::size_t>(v.id("<pad>"))]);
  CHECK(gen[static_cast<std::size_t>(v.id("<eos>"))]);
}

TEST_CASE("generate never emits latents and respects max_new") {
  const Model m(ModelConfig{}, 2);
  const TaskExample ex = example(7);
  const auto out = generate(m, ex.image, ex.prompt_tokens(m.vocab()), MaskPolicy::standard(), 3);
  CHECK(out.size() <= 3);
  for (TokenId t : out) CHECK_FALSE(m.vocab().is_latent(t));
}

TEST_CASE("checkpoint round trip") {
  const Model m(ModelConfig{}, 12);
  const auto file = std::filesystem::temp_directory_path() / "latentlab_model_test.llck";
  m.save(file);
  const Model back = Model::load(file);
  CHECK(same_parameters(m, back));
  CHECK(back.config().latent.count == 16);
  const TaskExample ex = example(8);
  const Prepared p = prepare(m, ex, MaskPolicy::standard());
  CHECK(m.forward(ex.image, p.seq.tokens, p.mask).logits.bit_equal(back.forward(ex.image, p.seq.tokens, p.mask).logits));
  for (const auto& param : m.params().all()) CHECK(back.params().at(param.path).trainable == param.trainable);

  CHECK_NOTHROW(Model::load(file, Vocabulary::standard(16)));
  CHECK_THROWS_AS(Model::load(file, Vocabulary::standard(8)), DataError);
  std::filesystem::remove(file);
}
