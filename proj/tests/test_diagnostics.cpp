// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <sstream>

#include "latentlab/dataset.hpp"
#include "latentlab/diagnostics.hpp"
#include "latentlab/error.hpp"

using namespace latentlab;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.mlp_ratio = 2;
  c.latent.count = 4;
  c.vocab = Vocabulary::standard(4);
  c.lora.rank = 2;
  return c;
}

/// Uniform attention over the allowed keys of each row.
AttentionCapture uniform_capture(const SequenceLayout& l, const MaskPolicy& policy, std::size_t layers,
                                 std::size_t heads) {
  const AttentionMask mask = build_mask(policy, l);
  Tensor a({l.total_len, l.total_len});
  for (std::size_t q = 0; q < l.total_len; ++q) {
    const double n = static_cast<double>(mask.allowed_in_row(q));
    for (std::size_t k = 0; k < l.total_len; ++k) a.at(q, k) = mask.allowed(q, k) ? 1.0 / n : 0.0;
  }
  AttentionCapture c;
  c.layout = l;
  c.attention.assign(layers, std::vector<Tensor>(heads, a));
  return c;
}

}  // namespace

TEST_CASE("oracle predictor scores 1.0") {
  for (TaskKind k : all_task_kinds()) {
    const auto ex = generate_split(k, 1, {0, 0, 40}, Split::test);
    const Vocabulary v = Vocabulary::standard(16);
    const EvalReport r = evaluate_with([&](const TaskExample& e) { return e.answer_tokens(v); }, v, ex,
                                       MaskPolicy::standard());
    CHECK(r.accuracy == 1.0);
    CHECK(r.correct == r.n);
    CHECK(r.outcomes.size() == 40);
    CHECK(r.task == to_string(k));
  }
}

TEST_CASE("accuracy is correct over n") {
  const auto ex = generate_split(TaskKind::reflectance, 2, {0, 0, 30}, Split::test);
  const Vocabulary v = Vocabulary::standard(16);
  const EvalReport r = evaluate_with([&](const TaskExample&) { return std::vector<TokenId>{v.id("A")}; }, v, ex,
                                     MaskPolicy::bottleneck());
  std::size_t a = 0;
  for (const auto& e : ex) a += e.answer.value == 0 ? 1 : 0;
  CHECK(r.correct == a);
  CHECK(r.accuracy == static_cast<double>(a) / 30.0);
  CHECK(r.policy == "bottleneck");
  CHECK(r.to_json().at("examples").size() == 30);
}

TEST_CASE("answer matching") {
  const Vocabulary v = Vocabulary::standard(0);
  const Answer c{AnswerFormat::count, 10};
  CHECK(answer_correct(v, std::vector<TokenId>{v.id("1"), v.id("0")}, c));
  CHECK_FALSE(answer_correct(v, std::vector<TokenId>{v.id("1")}, c));
  CHECK_FALSE(answer_correct(v, std::vector<TokenId>{v.id("1"), v.id("0"), v.id("0")}, c));
  const Answer b{AnswerFormat::option, 1};
  CHECK(answer_correct(v, std::vector<TokenId>{v.id("B"), v.id("A")}, b));
  CHECK_FALSE(answer_correct(v, std::vector<TokenId>{}, b));
  CHECK(max_new_tokens(AnswerFormat::option) == 1);
  CHECK(max_new_tokens(AnswerFormat::count) == 4);
}

TEST_CASE("untrained model is at chance on a two-way task") {
  const auto ex = generate_split(TaskKind::localization, 0, {0, 0, 1000}, Split::test);
  const Model m(small_model(), 1);
  const EvalReport r = evaluate(m, ex, MaskPolicy::standard());
  CHECK(r.accuracy >= 0.45);
  CHECK(r.accuracy <= 0.55);
  for (const auto& o : r.outcomes) CHECK((o.predicted == "A" || o.predicted == "B"));
  const EvalReport blind = evaluate(m, ex, {MaskVariant::bottleneck, true});
  CHECK(blind.accuracy >= 0.45);
  CHECK(blind.accuracy <= 0.55);
  CHECK(blind.drop_latents);
}

TEST_CASE("uniform attention gives K over the visible keys") {
  const SequenceLayout l = build_layout(6, 4, 3, LatentPlacement::after_prompt, 2);
  for (const MaskPolicy& p : {MaskPolicy::standard(), MaskPolicy::bottleneck()}) {
    const AttentionCapture c = uniform_capture(l, p, 2, 3);
    const AttentionMask mask = build_mask(p, l);
    double expected = 0.0;
    for (std::size_t q = l.answer.begin; q < l.answer.end; ++q) {
      expected += 3.0 / static_cast<double>(mask.allowed_in_row(q));
    }
    expected /= 2.0;
    for (const auto& layer : answer_latent_mass(c)) {
      for (double v : layer) CHECK(v == doctest::Approx(expected).epsilon(1e-14));
    }
    const AttentionSummary s = summarize_answer_latent(std::vector<AttentionCapture>{c, c});
    CHECK(s.mean_answer_to_latent == doctest::Approx(expected).epsilon(1e-14));
    CHECK(s.examples == 2);
  }
  // Bottleneck answer rows see 4 prompt, 3 latent and the causal answer prefix.
  const AttentionCapture c = uniform_capture(l, MaskPolicy::bottleneck(), 1, 1);
  CHECK(answer_latent_mass(c)[0][0] == doctest::Approx((3.0 / 8.0 + 3.0 / 9.0) / 2.0));

  AttentionCapture none = c;
  none.layout = build_layout(6, 4, 0, LatentPlacement::after_prompt, 2);
  CHECK_THROWS_AS(answer_latent_mass(none), ConfigError);
}

TEST_CASE("bottleneck answer rows put no mass on the image") {
  const Model m(ModelConfig{}, 2);
  const TaskExample ex = generate_example(TaskKind::localization, 0, 1);
  const AttentionCapture c = capture_attention(m, ex, MaskPolicy::bottleneck());
  for (const auto& layer : c.attention) {
    for (const Tensor& a : layer) {
      for (std::size_t q = c.layout.answer.begin; q < c.layout.answer.end; ++q) {
        double lat = 0.0;
        for (std::size_t k = c.layout.image.begin; k < c.layout.image.end; ++k) CHECK(a.at(q, k) == 0.0);
        for (std::size_t k = c.layout.latent.begin; k < c.layout.latent.end; ++k) lat += a.at(q, k);
        CHECK(lat > 0.0);
      }
    }
  }
  ModelConfig k0 = ModelConfig{};
  k0.latent.count = 0;
  k0.vocab = Vocabulary::standard(0);
  const std::vector<TaskExample> one = {ex};
  CHECK_THROWS_AS(answer_to_latent_attention(Model(k0, 1), one), ConfigError);
}

TEST_CASE("attention dumps round trip") {
  const Model m(small_model(), 3);
  std::vector<AttentionCapture> caps;
  std::stringstream ss;
  for (std::uint64_t i = 0; i < 5; ++i) {
    caps.push_back(capture_attention(m, generate_example(TaskKind::correspondence, 0, i), MaskPolicy::standard()));
    write_attention_dump(ss, i, caps.back());
  }
  const auto back = read_attention_dump(ss);
  REQUIRE(back.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back[i].layout.answer == caps[i].layout.answer);
    CHECK(back[i].layout.latent == caps[i].layout.latent);
  }
  const AttentionSummary a = summarize_answer_latent(caps), b = summarize_answer_latent(back);
  CHECK(a.mean_answer_to_latent == b.mean_answer_to_latent);
  CHECK(a.per_head == b.per_head);
}

TEST_CASE("latent-to-image maps") {
  const Model m(ModelConfig{}, 4);
  for (TaskKind k : {TaskKind::localization, TaskKind::correspondence}) {
    const TaskExample ex = generate_example(k, 0, 2);
    const LatentImageMaps maps = latent_image_attention_maps(m, ex);
    CHECK(maps.grid_h == ex.image.height / 8);
    CHECK(maps.grid_w == ex.image.width / 8);
    REQUIRE(maps.maps.size() == 16);
    for (const Tensor& t : maps.maps) {
      CHECK(t.shape() == Shape{maps.grid_h, maps.grid_w});
      double s = 0.0;
      for (double v : t.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        s += v;
      }
      CHECK(s <= 1.0 + 1e-12);
    }
    const nlohmann::json j = maps.to_json(ex.image);
    CHECK(j.at("maps").size() == 16);
    CHECK(j.at("raster").at("pixels").size() == ex.image.pixels.size());
  }
  CHECK_THROWS_AS(latent_image_attention_maps(m, generate_example(TaskKind::counting, 0, 0), {MaskVariant::standard, true}),
                  ConfigError);
}

TEST_CASE("box mass weights patches by overlap") {
  Tensor map({4, 4});
  map.at(0, 0) = 0.5;
  map.at(1, 1) = 0.25;
  CHECK(box_mass(map, Box{0, 0, 8, 8}, 8) == 0.5);
  CHECK(box_mass(map, Box{4, 4, 12, 12}, 8) == doctest::Approx(0.5 / 4 + 0.25 / 4));
  CHECK(box_mass(map, Box{0, 0, 32, 32}, 8) == 0.75);
}

TEST_CASE("hidden state export") {
  const Model m(small_model(), 5);
  std::vector<TaskExample> ex;
  for (TaskKind k : {TaskKind::counting, TaskKind::localization}) {
    for (const auto& e : generate_split(k, 0, {0, 0, 3}, Split::test)) ex.push_back(e);
  }
  std::stringstream ss;
  export_hidden_states(m, ex, 2, ss);
  std::string line;
  std::getline(ss, line);
  CHECK(line.starts_with("example\ttask\tposition\tlabel"));
  std::set<std::string> labels, tasks;
  std::size_t rows = 0;
  while (std::getline(ss, line)) {
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    REQUIRE(cols.size() == 4 + 16);
    tasks.insert(cols[1]);
    labels.insert(cols[3]);
    ++rows;
  }
  CHECK(labels == std::set<std::string>{"latent", "image", "text"});
  CHECK(tasks == std::set<std::string>{"counting", "localization"});
  CHECK(rows > 0);
}
