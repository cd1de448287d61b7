// SPDX-License-Identifier: Apache-2.0
//
// Random single-block pre-LN transformers built directly from autodiff ops,
// used for gradient checking.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "latentlab/autodiff.hpp"
#include "latentlab/rng.hpp"

namespace latentlab::testing {

struct TinyTransformerCase {
  std::size_t d = 0;
  std::size_t heads = 0;
  std::size_t seq = 0;
  std::size_t vocab = 0;
  std::vector<std::uint8_t> blocked;
  std::vector<std::int64_t> targets;
  std::vector<double> weights;
  /// x, ln gamma, ln beta, wq, wk, wv, wo, up, down, head.
  std::vector<Tensor> leaves;

  ad::Var build(ad::Graph& g, std::span<const ad::Var> v) const {
    using namespace ad;
    const Var x = v[0];
    const Var h = layernorm_rows(x, v[1], v[2], 1e-5);
    const Var q = matmul(h, v[3]), k = matmul(h, v[4]), val = matmul(h, v[5]);
    const std::size_t hd = d / heads;
    std::vector<Var> outs;
    for (std::size_t i = 0; i < heads; ++i) {
      const Var qi = slice_cols(q, i * hd, hd), ki = slice_cols(k, i * hd, hd), vi = slice_cols(val, i * hd, hd);
      const Var scores = scale(matmul_nt(qi, ki), 1.0 / std::sqrt(static_cast<double>(hd)));
      outs.push_back(matmul(softmax_rows(masked_fill(scores, blocked, -1e30)), vi));
    }
    const Var attn = add(x, matmul(concat_cols(outs), v[6]));
    const Var mlp = matmul(gelu(matmul(attn, v[7])), v[8]);
    const Var y = add(attn, mlp);
    return cross_entropy(matmul(y, v[9]), targets, weights);
  }
};

inline Tensor random_tensor(Rng& rng, Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = stddev * rng.normal();
  return t;
}

/// d in {8, 16, 24, 32}, 1-4 heads, causal mask plus a few random blocked keys,
/// some zero-weight target rows.
inline TinyTransformerCase random_tiny_transformer(Rng& rng) {
  TinyTransformerCase c;
  const std::size_t head_options[] = {1, 2, 4};
  c.d = 8 * static_cast<std::size_t>(rng.uniform_int(1, 4));
  do {
    c.heads = head_options[rng.uniform_int(0, 2)];
  } while (c.d % c.heads != 0);
  c.seq = static_cast<std::size_t>(rng.uniform_int(3, 7));
  c.vocab = static_cast<std::size_t>(rng.uniform_int(5, 12));
  c.blocked.assign(c.seq * c.seq, 0);
  for (std::size_t i = 0; i < c.seq; ++i) {
    for (std::size_t j = 0; j < c.seq; ++j) {
      if (j > i || (j != i && rng.bernoulli(0.2))) c.blocked[i * c.seq + j] = 1;
    }
  }
  for (std::size_t i = 0; i < c.seq; ++i) {
    c.targets.push_back(rng.uniform_int(0, static_cast<std::int64_t>(c.vocab) - 1));
    c.weights.push_back(rng.bernoulli(0.25) ? 0.0 : 1.0 / static_cast<double>(c.seq));
  }
  c.weights.back() = 1.0;
  const double s = 1.0 / std::sqrt(static_cast<double>(c.d));
  const std::size_t m = 2 * c.d;
  c.leaves = {random_tensor(rng, {c.seq, c.d}, 1.0),
              random_tensor(rng, {c.d}, 0.3),
              random_tensor(rng, {c.d}, 0.3),
              random_tensor(rng, {c.d, c.d}, s),
              random_tensor(rng, {c.d, c.d}, s),
              random_tensor(rng, {c.d, c.d}, s),
              random_tensor(rng, {c.d, c.d}, s),
              random_tensor(rng, {c.d, m}, s),
              random_tensor(rng, {m, c.d}, 1.0 / std::sqrt(static_cast<double>(m))),
              random_tensor(rng, {c.d, c.vocab}, s)};
  for (double& g : c.leaves[1].data()) g += 1.0;
  return c;
}

/// Worst relative error over `count` random transformers.
inline double tiny_transformer_grad_error(std::uint64_t seed, std::size_t count, std::size_t coords_per_tensor,
                                          ad::GradCheckOptions opt = {}) {
  Rng rng(seed, "tiny-transformer");
  double worst = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const TinyTransformerCase c = random_tiny_transformer(rng);
    opt.coords_per_tensor = coords_per_tensor;
    opt.seed = i;
    const double err = ad::grad_check([&c](ad::Graph& g, std::span<const ad::Var> v) { return c.build(g, v); },
                                      c.leaves, opt);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace latentlab::testing
