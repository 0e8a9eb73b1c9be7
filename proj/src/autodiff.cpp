// SPDX-License-Identifier: Apache-2.0
#include "psfl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "psfl/errors.hpp"
#include "psfl/kernels.hpp"

namespace psfl::ad {

namespace {

void check_same_graph(Value a, Value b) {
  if (a.graph == nullptr || a.graph != b.graph)
    throw std::invalid_argument("autodiff: operands belong to different graphs");
}

void check_rank(const Tensor& t, int64_t rank, const char* op) {
  if (t.rank() != rank)
    throw std::invalid_argument(std::string(op) + ": unexpected rank for shape " +
                                shape_string(t));
}

}  // namespace

const Tensor& Value::val() const { return graph->value(id); }

Value Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad || n.value.requires_grad();
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Value Graph::param(const std::string& name, const Tensor& value) {
  if (params_.count(name))
    throw std::invalid_argument("Graph::param: duplicate parameter name " + name);
  Value v = leaf(value, true);
  params_[name] = v.id;
  return v;
}

Value Graph::make_node(Tensor value, const std::vector<Value>& inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Value& in : inputs)
    if (in.graph != this)
      throw std::invalid_argument("Graph::make_node: input from another graph");
  n.requires_grad = false;
  for (const Value& in : inputs)
    n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(in.id)].requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(int id, const Tensor& g) {
  auto& node = nodes_[static_cast<size_t>(id)];
  if (!node.requires_grad) return;
  if (!g.same_shape(node.value))
    throw std::invalid_argument("Graph::accumulate: gradient shape mismatch");
  if (!has_grad_[static_cast<size_t>(id)]) {
    grads_[static_cast<size_t>(id)] = g;
    has_grad_[static_cast<size_t>(id)] = 1;
  } else {
    Tensor& acc = grads_[static_cast<size_t>(id)];
    for (int64_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
  }
}

void Graph::backward(Value loss) {
  if (loss.graph != this) throw std::invalid_argument("Graph::backward: foreign value");
  if (value(loss).numel() != 1)
    throw std::invalid_argument("Graph::backward: loss must be scalar");
  grads_.assign(nodes_.size(), Tensor());
  has_grad_.assign(nodes_.size(), 0);
  grads_[static_cast<size_t>(loss.id)] = Tensor::ones(value(loss).shape());
  has_grad_[static_cast<size_t>(loss.id)] = 1;
  for (int id = loss.id; id >= 0; --id) {
    auto& node = nodes_[static_cast<size_t>(id)];
    if (!has_grad_[static_cast<size_t>(id)] || !node.requires_grad || !node.backward) continue;
    node.backward(*this, grads_[static_cast<size_t>(id)]);
  }
}

Tensor Graph::grad(Value v) const {
  if (v.graph != this) throw std::invalid_argument("Graph::grad: foreign value");
  if (!has_grad_.empty() && has_grad_[static_cast<size_t>(v.id)])
    return grads_[static_cast<size_t>(v.id)];
  return Tensor::zeros(value(v).shape());
}

GradientMap Graph::param_grads() const {
  GradientMap out;
  for (const auto& [name, id] : params_) out[name] = grad(Value{const_cast<Graph*>(this), id});
  return out;
}

// ---- ops -----------------------------------------------------------------

Value add(Value a, Value b) {
  check_same_graph(a, b);
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  if (!ta.same_shape(tb))
    throw std::invalid_argument("add: shape mismatch " + shape_string(ta) + " vs " +
                                shape_string(tb));
  Tensor out = ta;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
  return a.graph->make_node(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a.id, go);
    g.accumulate(b.id, go);
  });
}

Value add_bias(Value a, Value bias) {
  check_same_graph(a, bias);
  const Tensor& ta = a.val();
  const Tensor& tb = bias.val();
  check_rank(ta, 2, "add_bias");
  if (tb.rank() != 1 || tb.dim(0) != ta.dim(1))
    throw std::invalid_argument("add_bias: bias shape mismatch");
  Tensor out = ta;
  const int64_t m = ta.dim(0), n = ta.dim(1);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.at(i, j) += tb[j];
  return a.graph->make_node(std::move(out), {a, bias}, [a, bias, m, n](Graph& g, const Tensor& go) {
    g.accumulate(a.id, go);
    Tensor db({n});
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) db[j] += go.at(i, j);
    g.accumulate(bias.id, db);
  });
}

Value scale(Value a, double c) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return a.graph->make_node(std::move(out), {a}, [a, c](Graph& g, const Tensor& go) {
    Tensor da = go;
    for (int64_t i = 0; i < da.numel(); ++i) da[i] *= c;
    g.accumulate(a.id, da);
  });
}

Value matmul(Value a, Value b) {
  check_same_graph(a, b);
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  check_rank(ta, 2, "matmul");
  check_rank(tb, 2, "matmul");
  if (ta.dim(1) != tb.dim(0))
    throw std::invalid_argument("matmul: inner dimension mismatch " + shape_string(ta) +
                                " vs " + shape_string(tb));
  const int64_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
  Tensor out({m, n});
  kernels::matmul(ta.data(), tb.data(), out.data(), m, k, n);
  return a.graph->make_node(std::move(out), {a, b}, [a, b, m, k, n](Graph& g, const Tensor& go) {
    if (g.node_requires_grad(a.id)) {
      Tensor da({m, k});
      kernels::matmul(go.data(), g.value(b.id).data(), da.data(), m, n, k, false, true);
      g.accumulate(a.id, da);
    }
    if (g.node_requires_grad(b.id)) {
      Tensor db({k, n});
      kernels::matmul(g.value(a.id).data(), go.data(), db.data(), k, m, n, true, false);
      g.accumulate(b.id, db);
    }
  });
}

Value matmul_nt(Value a, Value b) {
  check_same_graph(a, b);
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  check_rank(ta, 2, "matmul_nt");
  check_rank(tb, 2, "matmul_nt");
  if (ta.dim(1) != tb.dim(1))
    throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  const int64_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(0);
  Tensor out({m, n});
  kernels::matmul(ta.data(), tb.data(), out.data(), m, k, n, false, true);
  return a.graph->make_node(std::move(out), {a, b}, [a, b, m, k, n](Graph& g, const Tensor& go) {
    if (g.node_requires_grad(a.id)) {
      Tensor da({m, k});
      kernels::matmul(go.data(), g.value(b.id).data(), da.data(), m, n, k, false, false);
      g.accumulate(a.id, da);
    }
    if (g.node_requires_grad(b.id)) {
      Tensor db({n, k});
      kernels::matmul(go.data(), g.value(a.id).data(), db.data(), n, m, k, true, false);
      g.accumulate(b.id, db);
    }
  });
}

Value relu(Value a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return a.graph->make_node(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    const Tensor& x = g.value(a.id);
    Tensor da(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) da[i] = x[i] > 0.0 ? go[i] : 0.0;
    g.accumulate(a.id, da);
  });
}

Value conv2d(Value x, Value w, Value bias, int64_t stride, int64_t pad) {
  check_same_graph(x, w);
  check_same_graph(x, bias);
  const Tensor& tx = x.val();
  const Tensor& tw = w.val();
  const Tensor& tb = bias.val();
  check_rank(tx, 3, "conv2d");
  if (tw.rank() != 4 || tw.dim(1) != tx.dim(0))
    throw std::invalid_argument("conv2d: weight shape mismatch");
  const int64_t ci = tx.dim(0), h = tx.dim(1), wd = tx.dim(2);
  const int64_t co = tw.dim(0), kh = tw.dim(2), kw = tw.dim(3);
  if (tb.rank() != 1 || tb.dim(0) != co) throw std::invalid_argument("conv2d: bias mismatch");
  const int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const int64_t wo = (wd + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");
  Tensor out({co, ho, wo});
  kernels::conv2d(tx.data(), tw.data(), tb.data(), out.data(), ci, h, wd, co, kh, kw, stride,
                  pad);
  return x.graph->make_node(
      std::move(out), {x, w, bias},
      [x, w, bias, ci, h, wd, co, kh, kw, ho, wo, stride, pad](Graph& g, const Tensor& go) {
        if (g.node_requires_grad(x.id)) {
          Tensor dx({ci, h, wd});
          kernels::conv_transpose2d(go.data(), g.value(w.id).data(), nullptr, dx.data(), co, ho,
                                    wo, ci, kh, kw, stride, pad, h, wd);
          g.accumulate(x.id, dx);
        }
        if (g.node_requires_grad(w.id)) {
          Tensor dw({co, ci, kh, kw});
          kernels::conv2d_weight_grad(go.data(), g.value(x.id).data(), dw.data(), co, ho, wo,
                                      ci, h, wd, kh, kw, stride, pad);
          g.accumulate(w.id, dw);
        }
        if (g.node_requires_grad(bias.id)) {
          Tensor db({co});
          for (int64_t o = 0; o < co; ++o) {
            double acc = 0.0;
            for (int64_t i = 0; i < ho * wo; ++i) acc += go[o * ho * wo + i];
            db[o] = acc;
          }
          g.accumulate(bias.id, db);
        }
      });
}

Value conv_transpose2d(Value x, Value w, Value bias, int64_t stride, int64_t pad, int64_t out_h,
                       int64_t out_w) {
  check_same_graph(x, w);
  check_same_graph(x, bias);
  const Tensor& tx = x.val();
  const Tensor& tw = w.val();
  const Tensor& tb = bias.val();
  check_rank(tx, 3, "conv_transpose2d");
  if (tw.rank() != 4 || tw.dim(0) != tx.dim(0))
    throw std::invalid_argument("conv_transpose2d: weight shape mismatch");
  const int64_t ci = tx.dim(0), h = tx.dim(1), wd = tx.dim(2);
  const int64_t co = tw.dim(1), kh = tw.dim(2), kw = tw.dim(3);
  if (tb.rank() != 1 || tb.dim(0) != co)
    throw std::invalid_argument("conv_transpose2d: bias mismatch");
  // The stated output size must be consistent with the adjoint convolution.
  if (out_h + 2 * pad - kh < 0 || (out_h + 2 * pad - kh) / stride + 1 != h ||
      out_w + 2 * pad - kw < 0 || (out_w + 2 * pad - kw) / stride + 1 != wd)
    throw std::invalid_argument("conv_transpose2d: inconsistent output size");
  Tensor out({co, out_h, out_w});
  kernels::conv_transpose2d(tx.data(), tw.data(), tb.data(), out.data(), ci, h, wd, co, kh, kw,
                            stride, pad, out_h, out_w);
  return x.graph->make_node(
      std::move(out), {x, w, bias},
      [x, w, bias, ci, h, wd, co, kh, kw, out_h, out_w, stride, pad](Graph& g,
                                                                     const Tensor& go) {
        if (g.node_requires_grad(x.id)) {
          Tensor dx({ci, h, wd});
          kernels::conv2d(go.data(), g.value(w.id).data(), nullptr, dx.data(), co, out_h, out_w,
                          ci, kh, kw, stride, pad);
          g.accumulate(x.id, dx);
        }
        if (g.node_requires_grad(w.id)) {
          Tensor dw({ci, co, kh, kw});
          kernels::conv2d_weight_grad(g.value(x.id).data(), go.data(), dw.data(), ci, h, wd, co,
                                      out_h, out_w, kh, kw, stride, pad);
          g.accumulate(w.id, dw);
        }
        if (g.node_requires_grad(bias.id)) {
          Tensor db({co});
          for (int64_t o = 0; o < co; ++o) {
            double acc = 0.0;
            for (int64_t i = 0; i < out_h * out_w; ++i) acc += go[o * out_h * out_w + i];
            db[o] = acc;
          }
          g.accumulate(bias.id, db);
        }
      });
}

Value layer_norm(Value x, Value gain, Value bias, double eps) {
  check_same_graph(x, gain);
  check_same_graph(x, bias);
  const Tensor& tx = x.val();
  check_rank(tx, 2, "layer_norm");
  const int64_t n = tx.dim(0), d = tx.dim(1);
  const Tensor& tg = gain.val();
  const Tensor& tb = bias.val();
  if (tg.rank() != 1 || tg.dim(0) != d || tb.rank() != 1 || tb.dim(0) != d)
    throw std::invalid_argument("layer_norm: gain/bias shape mismatch");
  Tensor out({n, d});
  for (int64_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += tx.at(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = tx.at(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j) out.at(i, j) = (tx.at(i, j) - mu) * inv * tg[j] + tb[j];
  }
  return x.graph->make_node(
      std::move(out), {x, gain, bias}, [x, gain, bias, n, d, eps](Graph& g, const Tensor& go) {
        const Tensor& tx = g.value(x.id);
        const Tensor& tg = g.value(gain.id);
        Tensor dx({n, d}), dgain({d}), dbias({d});
        std::vector<double> xhat(static_cast<size_t>(d));
        for (int64_t i = 0; i < n; ++i) {
          double mu = 0.0;
          for (int64_t j = 0; j < d; ++j) mu += tx.at(i, j);
          mu /= static_cast<double>(d);
          double var = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double c = tx.at(i, j) - mu;
            var += c * c;
          }
          var /= static_cast<double>(d);
          const double inv = 1.0 / std::sqrt(var + eps);
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            xhat[static_cast<size_t>(j)] = (tx.at(i, j) - mu) * inv;
            const double dxh = go.at(i, j) * tg[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[static_cast<size_t>(j)];
          }
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          for (int64_t j = 0; j < d; ++j) {
            const double dxh = go.at(i, j) * tg[j];
            dx.at(i, j) =
                inv * (dxh - mean_dxhat - xhat[static_cast<size_t>(j)] * mean_dxhat_xhat);
            dgain[j] += go.at(i, j) * xhat[static_cast<size_t>(j)];
            dbias[j] += go.at(i, j);
          }
        }
        g.accumulate(x.id, dx);
        g.accumulate(gain.id, dgain);
        g.accumulate(bias.id, dbias);
      });
}

Value reshape(Value x, std::vector<int64_t> shape) {
  const Tensor& tx = x.val();
  Tensor out = tx.reshaped(shape);
  return x.graph->make_node(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    g.accumulate(x.id, go.reshaped(g.value(x.id).shape()));
  });
}

Value concat_cols(const std::vector<Value>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int64_t m = xs[0].val().dim(0);
  int64_t total = 0;
  for (const Value& v : xs) {
    check_same_graph(xs[0], v);
    check_rank(v.val(), 2, "concat_cols");
    if (v.val().dim(0) != m) throw std::invalid_argument("concat_cols: row count mismatch");
    total += v.val().dim(1);
  }
  Tensor out({m, total});
  int64_t off = 0;
  for (const Value& v : xs) {
    const Tensor& t = v.val();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < t.dim(1); ++j) out.at(i, off + j) = t.at(i, j);
    off += t.dim(1);
  }
  std::vector<Value> inputs = xs;
  return xs[0].graph->make_node(std::move(out), inputs,
                                [inputs, m](Graph& g, const Tensor& go) {
                                  int64_t off = 0;
                                  for (const Value& v : inputs) {
                                    const int64_t w = g.value(v.id).dim(1);
                                    Tensor dv({m, w});
                                    for (int64_t i = 0; i < m; ++i)
                                      for (int64_t j = 0; j < w; ++j)
                                        dv.at(i, j) = go.at(i, off + j);
                                    g.accumulate(v.id, dv);
                                    off += w;
                                  }
                                });
}

Value softmax_rows(Value x) {
  const Tensor& tx = x.val();
  const bool vec = tx.rank() == 1;
  const int64_t n = vec ? 1 : tx.dim(0);
  const int64_t d = vec ? tx.dim(0) : tx.dim(1);
  Tensor out(tx.shape());
  for (int64_t i = 0; i < n; ++i) {
    double mx = tx[i * d];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, tx[i * d + j]);
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double e = std::exp(tx[i * d + j] - mx);
      out[i * d + j] = e;
      sum += e;
    }
    for (int64_t j = 0; j < d; ++j) out[i * d + j] /= sum;
  }
  return x.graph->make_node(std::move(out), {x}, [x, n, d](Graph& g, const Tensor& go) {
    // Recompute the softmax from the input (cheap at these sizes).
    const Tensor& tx = g.value(x.id);
    Tensor dx(tx.shape());
    std::vector<double> sm(static_cast<size_t>(d));
    for (int64_t i = 0; i < n; ++i) {
      double mx = tx[i * d];
      for (int64_t j = 1; j < d; ++j) mx = std::max(mx, tx[i * d + j]);
      double sum = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        sm[static_cast<size_t>(j)] = std::exp(tx[i * d + j] - mx);
        sum += sm[static_cast<size_t>(j)];
      }
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        sm[static_cast<size_t>(j)] /= sum;
        dot += go[i * d + j] * sm[static_cast<size_t>(j)];
      }
      for (int64_t j = 0; j < d; ++j)
        dx[i * d + j] = sm[static_cast<size_t>(j)] * (go[i * d + j] - dot);
    }
    g.accumulate(x.id, dx);
  });
}

namespace {
// patchify index map: patch row r = pr*(W/P)+pc, inner = (u*P+v)*C + c.
inline int64_t patch_src_index(int64_t r, int64_t inner, int64_t p, int64_t w, int64_t c) {
  const int64_t patches_per_row = w / p;
  const int64_t pr = r / patches_per_row, pc = r % patches_per_row;
  const int64_t uv = inner / c, ch = inner % c;
  const int64_t u = uv / p, v = uv % p;
  return ((pr * p + u) * w + (pc * p + v)) * c + ch;
}
}  // namespace

Value patchify(Value image, int64_t patch) {
  const Tensor& t = image.val();
  check_rank(t, 3, "patchify");
  const int64_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
  if (h % patch != 0 || w % patch != 0)
    throw ConfigError("patchify: image " + shape_string(t) +
                      " not divisible by patch size " + std::to_string(patch));
  const int64_t n = (h / patch) * (w / patch);
  const int64_t row_len = patch * patch * c;
  Tensor out({n, row_len});
  for (int64_t r = 0; r < n; ++r)
    for (int64_t i = 0; i < row_len; ++i) out.at(r, i) = t[patch_src_index(r, i, patch, w, c)];
  return image.graph->make_node(std::move(out), {image},
                                [image, patch, h, w, c, n, row_len](Graph& g, const Tensor& go) {
                                  Tensor dx({h, w, c});
                                  for (int64_t r = 0; r < n; ++r)
                                    for (int64_t i = 0; i < row_len; ++i)
                                      dx[patch_src_index(r, i, patch, w, c)] = go.at(r, i);
                                  g.accumulate(image.id, dx);
                                });
}

Value unpatchify(Value rows, int64_t patch, int64_t h, int64_t w, int64_t c) {
  const Tensor& t = rows.val();
  check_rank(t, 2, "unpatchify");
  const int64_t n = (h / patch) * (w / patch);
  const int64_t row_len = patch * patch * c;
  if (t.dim(0) != n || t.dim(1) != row_len)
    throw std::invalid_argument("unpatchify: row tensor shape mismatch");
  Tensor out({h, w, c});
  for (int64_t r = 0; r < n; ++r)
    for (int64_t i = 0; i < row_len; ++i) out[patch_src_index(r, i, patch, w, c)] = t.at(r, i);
  return rows.graph->make_node(std::move(out), {rows},
                               [rows, patch, w, c, n, row_len](Graph& g, const Tensor& go) {
                                 Tensor dr({n, row_len});
                                 for (int64_t r = 0; r < n; ++r)
                                   for (int64_t i = 0; i < row_len; ++i)
                                     dr.at(r, i) = go[patch_src_index(r, i, patch, w, c)];
                                 g.accumulate(rows.id, dr);
                               });
}

Value hwc_to_chw(Value image) {
  const Tensor& t = image.val();
  check_rank(t, 3, "hwc_to_chw");
  const int64_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
  Tensor out({c, h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t k = 0; k < c; ++k) out.at3(k, i, j) = t.at3(i, j, k);
  return image.graph->make_node(std::move(out), {image},
                                [image, h, w, c](Graph& g, const Tensor& go) {
                                  Tensor dx({h, w, c});
                                  for (int64_t i = 0; i < h; ++i)
                                    for (int64_t j = 0; j < w; ++j)
                                      for (int64_t k = 0; k < c; ++k)
                                        dx.at3(i, j, k) = go.at3(k, i, j);
                                  g.accumulate(image.id, dx);
                                });
}

Value chw_to_hwc(Value image) {
  const Tensor& t = image.val();
  check_rank(t, 3, "chw_to_hwc");
  const int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor out({h, w, c});
  for (int64_t k = 0; k < c; ++k)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) out.at3(i, j, k) = t.at3(k, i, j);
  return image.graph->make_node(std::move(out), {image},
                                [image, h, w, c](Graph& g, const Tensor& go) {
                                  Tensor dx({c, h, w});
                                  for (int64_t k = 0; k < c; ++k)
                                    for (int64_t i = 0; i < h; ++i)
                                      for (int64_t j = 0; j < w; ++j)
                                        dx.at3(k, i, j) = go.at3(i, j, k);
                                  g.accumulate(image.id, dx);
                                });
}

Value mse(Value a, Value b) {
  check_same_graph(a, b);
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  if (!ta.same_shape(tb))
    throw std::invalid_argument("mse: shape mismatch " + shape_string(ta) + " vs " +
                                shape_string(tb));
  const int64_t n = ta.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = ta[i] - tb[i];
    acc += d * d;
  }
  acc /= static_cast<double>(n);
  return a.graph->make_node(Tensor::scalar(acc), {a, b}, [a, b, n](Graph& g, const Tensor& go) {
    const Tensor& ta = g.value(a.id);
    const Tensor& tb = g.value(b.id);
    const double s = 2.0 * go[0] / static_cast<double>(n);
    if (g.node_requires_grad(a.id)) {
      Tensor da(ta.shape());
      for (int64_t i = 0; i < n; ++i) da[i] = s * (ta[i] - tb[i]);
      g.accumulate(a.id, da);
    }
    if (g.node_requires_grad(b.id)) {
      Tensor db(tb.shape());
      for (int64_t i = 0; i < n; ++i) db[i] = -s * (ta[i] - tb[i]);
      g.accumulate(b.id, db);
    }
  });
}

Value cross_entropy(Value onehot, Value probs) {
  check_same_graph(onehot, probs);
  const Tensor& ty = onehot.val();
  const Tensor& tq = probs.val();
  if (ty.numel() != tq.numel())
    throw std::invalid_argument("cross_entropy: label/probability length mismatch");
  const int64_t n = ty.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i)
    if (ty[i] != 0.0) acc -= ty[i] * std::log(std::max(tq[i], kLogFloor));
  return onehot.graph->make_node(
      Tensor::scalar(acc), {onehot, probs}, [onehot, probs, n](Graph& g, const Tensor& go) {
        if (!g.node_requires_grad(probs.id)) return;
        const Tensor& ty = g.value(onehot.id);
        const Tensor& tq = g.value(probs.id);
        Tensor dq(tq.shape());
        for (int64_t i = 0; i < n; ++i)
          dq[i] = (ty[i] != 0.0 && tq[i] > kLogFloor) ? -go[0] * ty[i] / tq[i] : 0.0;
        g.accumulate(probs.id, dq);
      });
}

Value kl_divergence(Value p, Value q) {
  check_same_graph(p, q);
  const Tensor& tp = p.val();
  const Tensor& tq = q.val();
  if (tp.numel() != tq.numel())
    throw std::invalid_argument("kl_divergence: length mismatch");
  const int64_t n = tp.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (tp[i] <= 0.0) continue;
#ifndef NDEBUG
    if (tq[i] < kLogFloor)
      std::fprintf(stderr, "kl_divergence: clamping q[%lld]=%g to floor\n",
                   static_cast<long long>(i), tq[i]);
#endif
    acc += tp[i] * (std::log(std::max(tp[i], kLogFloor)) - std::log(std::max(tq[i], kLogFloor)));
  }
  return p.graph->make_node(
      Tensor::scalar(acc), {p, q}, [p, q, n](Graph& g, const Tensor& go) {
        const Tensor& tp = g.value(p.id);
        const Tensor& tq = g.value(q.id);
        if (g.node_requires_grad(p.id)) {
          Tensor dp(tp.shape());
          for (int64_t i = 0; i < n; ++i) {
            if (tp[i] <= 0.0) {
              dp[i] = 0.0;
              continue;
            }
            const double lp = std::log(std::max(tp[i], kLogFloor));
            const double lq = std::log(std::max(tq[i], kLogFloor));
            dp[i] = go[0] * (lp - lq + (tp[i] > kLogFloor ? 1.0 : 0.0));
          }
          g.accumulate(p.id, dp);
        }
        if (g.node_requires_grad(q.id)) {
          Tensor dq(tq.shape());
          for (int64_t i = 0; i < n; ++i)
            dq[i] = (tp[i] > 0.0 && tq[i] > kLogFloor) ? -go[0] * tp[i] / tq[i] : 0.0;
          g.accumulate(q.id, dq);
        }
      });
}

// ---- finite differences ----------------------------------------------------

namespace {

bool grads_identical(const GradientMap& a, const GradientMap& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !ia->second.same_shape(ib->second)) return false;
    for (int64_t i = 0; i < ia->second.numel(); ++i)
      if (ia->second[i] != ib->second[i]) return false;
  }
  return true;
}

double central_difference(const LossFn& fn, const ParameterSet& params, const std::string& name,
                          int64_t idx, double eps) {
  ParameterSet plus = params;
  plus.value(name)[idx] += eps;
  ParameterSet minus = params;
  minus.value(name)[idx] -= eps;
  return (fn(plus).loss - fn(minus).loss) / (2.0 * eps);
}

}  // namespace

double finite_difference_check(const LossFn& fn, const ParameterSet& params, double epsilon,
                               int samples, Rng& rng) {
  if (!(epsilon > 0.0) || epsilon > 1e-2)
    throw std::invalid_argument("finite_difference_check: epsilon outside (0, 1e-2]");
  LossEval base = fn(params);
  LossEval again = fn(params);
  if (base.loss != again.loss || !grads_identical(base.grads, again.grads))
    throw ProtocolError(
        "finite_difference_check: loss_fn is not deterministic under a fixed seed");

  const int64_t total = params.total_count();
  if (total == 0) throw std::invalid_argument("finite_difference_check: empty parameter set");

  double max_rel = 0.0;
  for (int s = 0; s < samples; ++s) {
    int64_t coord = rng.uniform_int(total);
    std::string name;
    int64_t idx = 0;
    for (const auto& [k, e] : params) {
      if (coord < e.value.numel()) {
        name = k;
        idx = coord;
        break;
      }
      coord -= e.value.numel();
    }
    const double analytic = base.grads.at(name)[idx];
    double numeric = central_difference(fn, params, name, idx, epsilon);
    double rel = std::abs(analytic - numeric) /
                 std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    if (rel > 1e-3) {
      numeric = central_difference(fn, params, name, idx, epsilon / 8.0);
      rel = std::min(rel, std::abs(analytic - numeric) /
                              std::max({std::abs(analytic), std::abs(numeric), 1e-8}));
    }
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace psfl::ad
