// SPDX-License-Identifier: Apache-2.0
#include "latentlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "latentlab/error.hpp"

namespace latentlab::ad {

// ---- ParameterStore ----------------------------------------------------------

Parameter& ParameterStore::add(std::string path, Tensor value, bool trainable) {
  if (index_.contains(path)) throw ConfigError("duplicate parameter path: " + path);
  index_.emplace(path, params_.size());
  Tensor grad(value.shape());
  params_.push_back(Parameter{std::move(path), std::move(value), std::move(grad), trainable});
  return params_.back();
}

Parameter& ParameterStore::at(const std::string& path) {
  auto it = index_.find(path);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + path);
  return params_[it->second];
}

const Parameter& ParameterStore::at(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + path);
  return params_[it->second];
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    p.grad.fill(0.0);
  }
}

std::size_t ParameterStore::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

std::vector<std::string> ParameterStore::trainable_paths() const {
  std::vector<std::string> out;
  for (const auto& p : params_) {
    if (p.trainable) out.push_back(p.path);
  }
  return out;
}

// ---- Graph -------------------------------------------------------------------

const Tensor& Var::value() const { return graph_->value(*this); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  n.is_leaf = true;
  return push(std::move(n));
}

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.is_leaf = true;
  n.requires_grad = requires_grad && grad_enabled_;
  return push(std::move(n));
}

Var Graph::parameter(const Parameter& p) { return parameter(p, p.trainable); }

Var Graph::parameter(const Parameter& p, bool requires_grad) {
  Node n;
  n.op = "parameter";
  n.external = &p.value;
  n.param = &p;
  n.is_leaf = true;
  n.requires_grad = requires_grad && grad_enabled_;
  return push(std::move(n));
}

const Tensor& Graph::value(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.external ? *n.external : n.value;
}

const Tensor& Graph::grad(Var v) const {
  if (!backward_done_) throw Error("grad() requested before backward()");
  return nodes_[v.id()].grad;
}

Var Graph::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Graph::record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (!value.all_finite()) throw NumericError("non-finite output from op '" + std::string(op) + "'");
  if (backward_done_) throw Error("graph already differentiated; build a new graph");
  Node n;
  n.op = op;
  n.value = std::move(value);
  if (grad_enabled_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](Var v) { return nodes_[v.id()].requires_grad; });
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Tensor* Graph::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(value(v).shape());
  return &n.grad;
}

void Graph::backward(Var loss) {
  if (backward_done_) throw Error("backward() called twice on the same graph; re-run forward");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_string(lv.shape()));
  if (nodes_.empty()) throw Error("backward() on an empty graph");
  backward_done_ = true;

  Node& root = nodes_[loss.id()];
  if (root.requires_grad) {
    root.grad = Tensor(lv.shape());
    root.grad[0] = 1.0;
  }
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.value, n.grad);
  }
  for (Node& n : nodes_) {
    if (n.is_leaf && n.requires_grad && n.grad.empty()) n.grad = Tensor(value(Var(this, &n - nodes_.data())).shape());
  }
}

void Graph::accumulate_parameter_grads() const {
  if (!backward_done_) throw Error("accumulate_parameter_grads() before backward()");
  for (const Node& n : nodes_) {
    if (!n.param || !n.requires_grad) continue;
    auto& dst = const_cast<Parameter*>(n.param)->grad;
    if (dst.shape() != n.grad.shape()) dst = Tensor(n.grad.shape());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  }
}

// ---- helpers -----------------------------------------------------------------

namespace {

void require_matrix(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// c[m x n] += a[m x k] . b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m x n] += a[m x k] . b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// c[k x n] += a[m x k]^T . b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

// ---- ops -----------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  if (bv.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(av.shape()) + " . " + shape_string(bv.shape()));
  }
  Tensor out({m, n});
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return g.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Graph& g, const Tensor&, const Tensor& dy) {
    if (Tensor* ga = g.grad_buffer(a)) gemm_nt(dy.data().data(), g.value(b).data().data(), ga->data().data(), m, n, k);
    if (Tensor* gb = g.grad_buffer(b)) gemm_tn(g.value(a).data().data(), dy.data().data(), gb->data().data(), m, k, n);
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[0];
  if (bv.shape()[1] != k) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_string(av.shape()) + " . " +
                     shape_string(bv.shape()) + "^T");
  }
  Tensor out({m, n});
  gemm_nt(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return g.record("matmul_nt", std::move(out), {a, b}, [a, b, m, k, n](Graph& g, const Tensor&, const Tensor& dy) {
    // da[m x k] = dy[m x n] . b[n x k];  db[n x k] = dy^T . a
    if (Tensor* ga = g.grad_buffer(a)) gemm_nn(dy.data().data(), g.value(b).data().data(), ga->data().data(), m, n, k);
    if (Tensor* gb = g.grad_buffer(b)) gemm_tn(dy.data().data(), g.value(a).data().data(), gb->data().data(), m, n, k);
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph().record("add", std::move(out), {a, b}, [a, b](Graph& g, const Tensor&, const Tensor& dy) {
    for (Var v : {a, b}) {
      if (Tensor* gv = g.grad_buffer(v)) {
        for (std::size_t i = 0; i < dy.size(); ++i) (*gv)[i] += dy[i];
      }
    }
  });
}

Var add_row(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  require_matrix(av, "add_row");
  const std::size_t m = av.rows(), n = av.cols();
  if (rv.size() != n) throw ShapeError("add_row: row of " + std::to_string(rv.size()) + " for width " + std::to_string(n));
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += rv[j];
  }
  return a.graph().record("add_row", std::move(out), {a, row}, [a, row, m, n](Graph& g, const Tensor&, const Tensor& dy) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < dy.size(); ++i) (*ga)[i] += dy[i];
    }
    if (Tensor* gr = g.grad_buffer(row)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) (*gr)[j] += dy.at(i, j);
      }
    }
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph().record("mul", std::move(out), {a, b}, [a, b](Graph& g, const Tensor&, const Tensor& dy) {
    if (Tensor* ga = g.grad_buffer(a)) {
      const Tensor& bv = g.value(b);
      for (std::size_t i = 0; i < dy.size(); ++i) (*ga)[i] += dy[i] * bv[i];
    }
    if (Tensor* gb = g.grad_buffer(b)) {
      const Tensor& av = g.value(a);
      for (std::size_t i = 0; i < dy.size(); ++i) (*gb)[i] += dy[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.storage()) v *= s;
  return a.graph().record("scale", std::move(out), {a}, [a, s](Graph& g, const Tensor&, const Tensor& dy) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < dy.size(); ++i) (*ga)[i] += dy[i] * s;
    }
  });
}

Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < m; ++i) {
    auto x = av.row(i);
    auto y = out.row(i);
    const double mx = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return a.graph().record("softmax", std::move(out), {a}, [a, m, n](Graph& g, const Tensor& y, const Tensor& dy) {
    Tensor* ga = g.grad_buffer(a);
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i) {
      auto yi = y.row(i);
      auto dyi = dy.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += yi[j] * dyi[j];
      auto gi = ga->row(i);
      for (std::size_t j = 0; j < n; ++j) gi[j] += yi[j] * (dyi[j] - dot);
    }
  });
}

Var masked_fill(Var a, const std::vector<std::uint8_t>& mask, double fill) {
  const Tensor& av = a.value();
  if (mask.size() != av.size()) {
    throw ShapeError("masked_fill: mask of " + std::to_string(mask.size()) + " entries for " + shape_string(av.shape()));
  }
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i) {
    bool any_open = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[i * n + j]) {
        out.at(i, j) = fill;
      } else {
        any_open = true;
      }
    }
    if (!any_open) throw ShapeError("masked_fill: row " + std::to_string(i) + " is fully masked");
  }
  return a.graph().record("masked_fill", std::move(out), {a}, [a, mask](Graph& g, const Tensor&, const Tensor& dy) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (!mask[i]) (*ga)[i] += dy[i];
      }
    }
  });
}

Var layernorm_rows(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gamma.value().size() != n || beta.value().size() != n) throw ShapeError("layernorm: affine width mismatch");
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto xi = xv.row(i);
    double mu = 0.0;
    for (double v : xi) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xi) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat.at(i, j) = (xi[j] - mu) * rstd[i];
      out.at(i, j) = xhat.at(i, j) * gv[j] + bv[j];
    }
  }
  return x.graph().record(
      "layernorm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, const Tensor&, const Tensor& dy) {
        const Tensor& gv = g.value(gamma);
        if (Tensor* gg = g.grad_buffer(gamma)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) (*gg)[j] += dy.at(i, j) * xhat.at(i, j);
          }
        }
        if (Tensor* gb = g.grad_buffer(beta)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += dy.at(i, j);
          }
        }
        if (Tensor* gx = g.grad_buffer(x)) {
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = dy.at(i, j) * gv[j];
              sum_dxh += dxh;
              sum_dxh_xh += dxh * xhat.at(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = dy.at(i, j) * gv[j];
              gx->at(i, j) += rstd[i] * (dxh - inv_n * sum_dxh - xhat.at(i, j) * inv_n * sum_dxh_xh);
            }
          }
        }
      });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.storage()) {
    const double u = kGeluC * (v + 0.044715 * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  return x.graph().record("gelu", std::move(out), {x}, [x](Graph& g, const Tensor&, const Tensor& dy) {
    Tensor* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor& xv = g.value(x);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const double v = xv[i];
      const double u = kGeluC * (v + 0.044715 * v * v * v);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
      (*gx)[i] += dy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
}

Var embed(Var table, std::span<const std::int64_t> ids) {
  const Tensor& tv = table.value();
  require_matrix(tv, "embed");
  const std::size_t vocab = tv.shape()[0], d = tv.shape()[1];
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ShapeError("embed: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab));
    }
    auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::int64_t> saved(ids.begin(), ids.end());
  return table.graph().record("embed", std::move(out), {table},
                              [table, saved = std::move(saved), d](Graph& g, const Tensor&, const Tensor& dy) {
                                Tensor* gt = g.grad_buffer(table);
                                if (!gt) return;
                                for (std::size_t i = 0; i < saved.size(); ++i) {
                                  auto dst = gt->row(static_cast<std::size_t>(saved[i]));
                                  for (std::size_t j = 0; j < d; ++j) dst[j] += dy.at(i, j);
                                }
                              });
}

Var cross_entropy(Var logits, std::span<const std::int64_t> targets, std::span<const double> weights) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "cross_entropy");
  const std::size_t m = lv.rows(), n = lv.cols();
  if (targets.size() != m || weights.size() != m) throw ShapeError("cross_entropy: targets/weights length mismatch");
  double loss = 0.0;
  // Softmax rows are cached only for rows that contribute.
  std::vector<std::size_t> used;
  std::vector<double> probs;
  for (std::size_t i = 0; i < m; ++i) {
    if (weights[i] == 0.0) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= n) {
      throw ShapeError("cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary");
    }
    auto x = lv.row(i);
    const double mx = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (double v : x) z += std::exp(v - mx);
    const double logz = mx + std::log(z);
    loss += weights[i] * (logz - x[static_cast<std::size_t>(targets[i])]);
    used.push_back(i);
    for (double v : x) probs.push_back(std::exp(v - logz));
  }
  std::vector<std::int64_t> tsaved(targets.begin(), targets.end());
  std::vector<double> wsaved(weights.begin(), weights.end());
  return logits.graph().record(
      "cross_entropy", Tensor::scalar(loss), {logits},
      [logits, n, used = std::move(used), probs = std::move(probs), tsaved = std::move(tsaved),
       wsaved = std::move(wsaved)](Graph& g, const Tensor&, const Tensor& dy) {
        Tensor* gl = g.grad_buffer(logits);
        if (!gl) return;
        const double up = dy[0];
        for (std::size_t u = 0; u < used.size(); ++u) {
          const std::size_t i = used[u];
          auto gi = gl->row(i);
          const double w = wsaved[i] * up;
          for (std::size_t j = 0; j < n; ++j) gi[j] += w * probs[u * n + j];
          gi[static_cast<std::size_t>(tsaved[i])] -= w;
        }
      });
}

Var slice_cols(Var a, std::size_t start, std::size_t len) {
  const Tensor& av = a.value();
  require_matrix(av, "slice_cols");
  const std::size_t m = av.rows(), n = av.cols();
  if (start + len > n) throw ShapeError("slice_cols: range exceeds width " + std::to_string(n));
  Tensor out({m, len});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < len; ++j) out.at(i, j) = av.at(i, start + j);
  }
  return a.graph().record("slice_cols", std::move(out), {a}, [a, start, len, m](Graph& g, const Tensor&, const Tensor& dy) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < len; ++j) ga->at(i, start + j) += dy.at(i, j);
      }
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != m) throw ShapeError("concat_cols: row count mismatch");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, off + j) = pv.at(i, j);
    }
    off += widths[k];
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts[0].graph().record(
      "concat_cols", std::move(out), parts,
      [saved, widths, m](Graph& g, const Tensor&, const Tensor& dy) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < saved.size(); ++k) {
          if (Tensor* gp = g.grad_buffer(saved[k])) {
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t j = 0; j < widths[k]; ++j) gp->at(i, j) += dy.at(i, off + j);
            }
          }
          off += widths[k];
        }
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0].value().cols();
  std::size_t total = 0;
  std::vector<std::size_t> heights;
  for (Var p : parts) {
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != n) throw ShapeError("concat_rows: column count mismatch");
    heights.push_back(p.value().rows());
    total += heights.back();
  }
  Tensor out({total, n});
  std::size_t off = 0;
  for (Var p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(off * n));
    off += p.value().rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts[0].graph().record("concat_rows", std::move(out), parts,
                                 [saved, heights, n](Graph& g, const Tensor&, const Tensor& dy) {
                                   std::size_t off = 0;
                                   for (std::size_t k = 0; k < saved.size(); ++k) {
                                     if (Tensor* gp = g.grad_buffer(saved[k])) {
                                       for (std::size_t i = 0; i < heights[k] * n; ++i) (*gp)[i] += dy[off * n + i];
                                     }
                                     off += heights[k];
                                   }
                                 });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  require_matrix(av, "gather_rows");
  const std::size_t n = av.cols();
  Tensor out({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) throw ShapeError("gather_rows: row index out of range");
    auto src = av.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return a.graph().record("gather_rows", std::move(out), {a}, [a, saved = std::move(saved), n](Graph& g, const Tensor&, const Tensor& dy) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (std::size_t i = 0; i < saved.size(); ++i) {
        auto dst = ga->row(saved[i]);
        for (std::size_t j = 0; j < n; ++j) dst[j] += dy.at(i, j);
      }
    }
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  return a.graph().record("sum", Tensor::scalar(s), {a}, [a](Graph& g, const Tensor&, const Tensor& dy) {
    if (Tensor* ga = g.grad_buffer(a)) {
      for (double& v : ga->storage()) v += dy[0];
    }
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// ---- gradient check ------------------------------------------------------------

double grad_check(const GraphBuilder& f, std::span<const Tensor> leaves, const GradCheckOptions& options) {
  if (options.step <= 0.0) throw ConfigError("grad_check: step must be positive");
  if (options.points != 2 && options.points != 4) throw ConfigError("grad_check: points must be 2 or 4");
  std::vector<Tensor> work(leaves.begin(), leaves.end());

  auto evaluate = [&f](const std::vector<Tensor>& inputs) {
    Graph g(false);
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.input(t, false));
    return f(g, vars).value().item();
  };

  Graph g(true);
  std::vector<Var> vars;
  for (const Tensor& t : work) vars.push_back(g.input(t, true));
  Var loss = f(g, vars);
  const double base = loss.value().item();
  if (const double again = evaluate(work); std::memcmp(&base, &again, sizeof base) != 0) {
    throw NumericError("grad_check: builder is not deterministic");
  }
  g.backward(loss);

  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < work.size(); ++t) {
    const Tensor analytic = g.grad(vars[t]);
    std::vector<std::size_t> coords(work[t].size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.coords_per_tensor && options.coords_per_tensor < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_tensor);
    }
    for (std::size_t c : coords) {
      const double orig = work[t][c];
      const auto at = [&](double offset) {
        work[t][c] = orig + offset;
        const double v = evaluate(work);
        work[t][c] = orig;
        return v;
      };
      const double h = options.step;
      const double d1 = at(h) - at(-h);
      const double numeric = options.points == 2 ? d1 / (2.0 * h) : (8.0 * d1 - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      const double a = analytic[c];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace latentlab::ad
