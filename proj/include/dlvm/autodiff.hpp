// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dlvm/params.hpp"
#include "dlvm/tensor.hpp"

namespace dlvm {

using NodeId = std::int32_t;

namespace detail {

// Shared kernels for strided 1-D convolution and its adjoint. Geometry:
// q is the short side [A x Lq], p the long side [B x Lp], filters f are
// [A x B x W] and Lq = (Lp - W) / stride + 1.

// q[a,t] += sum_{b,w} f[a,b,w] * p[b, t*stride + w]
inline void conv_acc(const double* p, int B, int Lp, const double* f, int A, int W, int stride,
                     double* q, int Lq) {
  for (int a = 0; a < A; ++a) {
    const double* fa = f + static_cast<std::size_t>(a) * B * W;
    for (int t = 0; t < Lq; ++t) {
      double acc = 0.0;
      const int base = t * stride;
      for (int b = 0; b < B; ++b) {
        const double* fb = fa + static_cast<std::size_t>(b) * W;
        const double* pb = p + static_cast<std::size_t>(b) * Lp + base;
        for (int w = 0; w < W; ++w) acc += fb[w] * pb[w];
      }
      q[static_cast<std::size_t>(a) * Lq + t] += acc;
    }
  }
}

// p[b, t*stride + w] += sum_a f[a,b,w] * q[a,t]   (overlap-add scatter)
inline void scatter_acc(const double* q, int A, int Lq, const double* f, int B, int W, int stride,
                        double* p, int Lp) {
  for (int a = 0; a < A; ++a) {
    const double* fa = f + static_cast<std::size_t>(a) * B * W;
    for (int t = 0; t < Lq; ++t) {
      const double qa = q[static_cast<std::size_t>(a) * Lq + t];
      if (qa == 0.0) continue;
      const int base = t * stride;
      for (int b = 0; b < B; ++b) {
        const double* fb = fa + static_cast<std::size_t>(b) * W;
        double* pb = p + static_cast<std::size_t>(b) * Lp + base;
        for (int w = 0; w < W; ++w) pb[w] += fb[w] * qa;
      }
    }
  }
}

// gf[a,b,w] += sum_t q[a,t] * p[b, t*stride + w]
inline void filter_grad_acc(const double* q, int A, int Lq, const double* p, int B, int Lp, int W,
                            int stride, double* gf) {
  for (int a = 0; a < A; ++a) {
    for (int t = 0; t < Lq; ++t) {
      const double qa = q[static_cast<std::size_t>(a) * Lq + t];
      if (qa == 0.0) continue;
      const int base = t * stride;
      for (int b = 0; b < B; ++b) {
        const double* pb = p + static_cast<std::size_t>(b) * Lp + base;
        double* g = gf + (static_cast<std::size_t>(a) * B + b) * W;
        for (int w = 0; w < W; ++w) g[w] += qa * pb[w];
      }
    }
  }
}

}  // namespace detail

// Reverse-mode tape. Every operation evaluates its value eagerly on
// insertion; backward() replays the tape in exact reverse insertion order,
// so every node's inputs precede it and gradients are bitwise reproducible.
// Leaves bound to parameters accumulate into the parameter's grad slot.
class Graph {
 public:
  struct Node {
    const char* op;
    std::vector<NodeId> inputs;
    Tensor value;
    std::vector<double> grad;
    Tensor* bound = nullptr;
    std::function<void(Graph&)> backward;
  };

  NodeId leaf(Tensor value) { return push("leaf", {}, std::move(value)); }

  // One leaf per parameter per graph; reusing the parameter reuses the node.
  NodeId param(Tensor& p) {
    if (!p.has_grad()) throw ContractError("param leaf requires a tensor with a grad slot");
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    NodeId id = push("param", {}, Tensor(p.shape, p.data));
    nodes_[static_cast<std::size_t>(id)].bound = &p;
    bound_.emplace(&p, id);
    return id;
  }

  const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  double scalar_value(NodeId id) const { return value(id).data[0]; }
  std::vector<double>& grad(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::size_t size() const { return nodes_.size(); }

  template <class F>
  void for_each_node(F&& fn) const {
    for (const Node& n : nodes_) fn(n);
  }

  // ---- arithmetic ----

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.extent(1) != tb.extent(0))
      throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape) + " and " +
                       shape_str(tb.shape));
    const int r = ta.extent(0), k = ta.extent(1), c = tb.extent(1);
    Tensor out = Tensor::zeros({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        double acc = 0.0;
        for (int t = 0; t < k; ++t) acc += ta.at(i, t) * tb.at(t, j);
        out.at(i, j) = acc;
      }
    NodeId id = push("matmul", {a, b}, std::move(out));
    node(id).backward = [id, a, b, r, k, c](Graph& g) {
      const auto& go = g.grad(id);
      const Tensor& va = g.value(a);
      const Tensor& vb = g.value(b);
      auto& ga = g.grad(a);
      auto& gb = g.grad(b);
      for (int i = 0; i < r; ++i)
        for (int t = 0; t < k; ++t) {
          double acc = 0.0;
          for (int j = 0; j < c; ++j) acc += go[static_cast<std::size_t>(i) * c + j] * vb.at(t, j);
          ga[static_cast<std::size_t>(i) * k + t] += acc;
        }
      for (int t = 0; t < k; ++t)
        for (int j = 0; j < c; ++j) {
          double acc = 0.0;
          for (int i = 0; i < r; ++i) acc += va.at(i, t) * go[static_cast<std::size_t>(i) * c + j];
          gb[static_cast<std::size_t>(t) * c + j] += acc;
        }
    };
    return id;
  }

  // y[r] = W[r x k] * x[k] + b[r]
  NodeId affine(NodeId x, NodeId w, NodeId b) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(b);
    if (tw.rank() != 2 || tw.extent(1) != tx.size() || tb.size() != tw.extent(0))
      throw ShapeError("affine: incompatible shapes " + shape_str(tw.shape) + ", " +
                       shape_str(tx.shape) + ", " + shape_str(tb.shape));
    const int r = tw.extent(0), k = tw.extent(1);
    Tensor out = Tensor::zeros({r});
    for (int i = 0; i < r; ++i) {
      double acc = tb.at(i);
      for (int t = 0; t < k; ++t) acc += tw.at(i, t) * tx.at(t);
      out.at(i) = acc;
    }
    NodeId id = push("affine", {x, w, b}, std::move(out));
    node(id).backward = [id, x, w, b, r, k](Graph& g) {
      const auto& go = g.grad(id);
      const Tensor& vx = g.value(x);
      const Tensor& vw = g.value(w);
      auto& gx = g.grad(x);
      auto& gw = g.grad(w);
      auto& gb = g.grad(b);
      for (int i = 0; i < r; ++i) {
        const double gi = go[static_cast<std::size_t>(i)];
        gb[static_cast<std::size_t>(i)] += gi;
        for (int t = 0; t < k; ++t) {
          gw[static_cast<std::size_t>(i) * k + t] += gi * vx.at(t);
          gx[static_cast<std::size_t>(t)] += gi * vw.at(i, t);
        }
      }
    };
    return id;
  }

  // Valid (no padding) strided convolution.
  // input [C_in x L_in], filters [C_out x C_in x W] -> [C_out x L_out]
  NodeId conv1d(NodeId x, NodeId f, int stride) {
    const Tensor& tx = value(x);
    const Tensor& tf = value(f);
    if (tx.rank() != 2 || tf.rank() != 3 || tf.extent(1) != tx.extent(0))
      throw ShapeError("conv1d: incompatible shapes " + shape_str(tx.shape) + " and " +
                       shape_str(tf.shape));
    const int cin = tx.extent(0), lin = tx.extent(1);
    const int cout = tf.extent(0), w = tf.extent(2);
    if (lin < w)
      throw ShapeError("conv1d: input length " + std::to_string(lin) + " shorter than window " +
                       std::to_string(w));
    const int lout = (lin - w) / stride + 1;
    Tensor out = Tensor::zeros({cout, lout});
    detail::conv_acc(tx.data.data(), cin, lin, tf.data.data(), cout, w, stride, out.data.data(),
                     lout);
    NodeId id = push("conv1d", {x, f}, std::move(out));
    node(id).backward = [id, x, f, cin, lin, cout, w, lout, stride](Graph& g) {
      const auto& go = g.grad(id);
      detail::scatter_acc(go.data(), cout, lout, g.value(f).data.data(), cin, w, stride,
                          g.grad(x).data(), lin);
      detail::filter_grad_acc(go.data(), cout, lout, g.value(x).data.data(), cin, lin, w, stride,
                              g.grad(f).data());
    };
    return id;
  }

  // Adjoint of conv1d with the same filter tensor layout:
  // input [C_in x L_in], filters [C_in x C_out x W] -> [C_out x (L_in-1)*stride + W]
  NodeId conv1d_transpose(NodeId x, NodeId f, int stride) {
    const Tensor& tx = value(x);
    const Tensor& tf = value(f);
    if (tx.rank() != 2 || tf.rank() != 3 || tf.extent(0) != tx.extent(0))
      throw ShapeError("conv1d_transpose: incompatible shapes " + shape_str(tx.shape) + " and " +
                       shape_str(tf.shape));
    const int cin = tx.extent(0), lin = tx.extent(1);
    const int cout = tf.extent(1), w = tf.extent(2);
    const int lout = (lin - 1) * stride + w;
    Tensor out = Tensor::zeros({cout, lout});
    detail::scatter_acc(tx.data.data(), cin, lin, tf.data.data(), cout, w, stride, out.data.data(),
                        lout);
    NodeId id = push("conv1d_transpose", {x, f}, std::move(out));
    node(id).backward = [id, x, f, cin, lin, cout, w, lout, stride](Graph& g) {
      const auto& go = g.grad(id);
      detail::conv_acc(go.data(), cout, lout, g.value(f).data.data(), cin, w, stride,
                       g.grad(x).data(), lin);
      detail::filter_grad_acc(g.value(x).data.data(), cin, lin, go.data(), cout, lout, w, stride,
                              g.grad(f).data());
    };
    return id;
  }

  // x [C x L] plus one bias per channel.
  NodeId add_channel_bias(NodeId x, NodeId b) {
    const Tensor& tx = value(x);
    const Tensor& tb = value(b);
    if (tx.rank() != 2 || tb.size() != tx.extent(0))
      throw ShapeError("add_channel_bias: incompatible shapes " + shape_str(tx.shape) + " and " +
                       shape_str(tb.shape));
    const int c = tx.extent(0), l = tx.extent(1);
    Tensor out = tx;
    for (int i = 0; i < c; ++i)
      for (int t = 0; t < l; ++t) out.at(i, t) += tb.at(i);
    NodeId id = push("add_channel_bias", {x, b}, std::move(out));
    node(id).backward = [id, x, b, c, l](Graph& g) {
      const auto& go = g.grad(id);
      auto& gx = g.grad(x);
      auto& gb = g.grad(b);
      for (int i = 0; i < c; ++i) {
        double acc = 0.0;
        for (int t = 0; t < l; ++t) {
          const double v = go[static_cast<std::size_t>(i) * l + t];
          gx[static_cast<std::size_t>(i) * l + t] += v;
          acc += v;
        }
        gb[static_cast<std::size_t>(i)] += acc;
      }
    };
    return id;
  }

  NodeId relu(NodeId x) {
    Tensor out = value(x);
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    NodeId id = push("relu", {x}, std::move(out));
    node(id).backward = [id, x](Graph& g) {
      const auto& go = g.grad(id);
      const auto& vx = g.value(x).data;
      auto& gx = g.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (vx[i] > 0.0) gx[i] += go[i];  // subgradient at 0 is 0
    };
    return id;
  }

  NodeId add(NodeId a, NodeId b) { return binary_elementwise("add", a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary_elementwise("sub", a, b); }
  NodeId hadamard(NodeId a, NodeId b) { return binary_elementwise("hadamard", a, b); }

  NodeId add_n(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ContractError("add_n: empty operand list");
    Tensor out = value(xs[0]);
    for (std::size_t i = 1; i < xs.size(); ++i) {
      const Tensor& t = value(xs[i]);
      if (!same_shape(t, out))
        throw ShapeError("add_n: mismatched shapes " + shape_str(out.shape) + " and " +
                         shape_str(t.shape));
      for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += t.data[k];
    }
    NodeId id = push("add_n", xs, std::move(out));
    node(id).backward = [id, xs](Graph& g) {
      const auto& go = g.grad(id);
      for (NodeId x : xs) {
        auto& gx = g.grad(x);
        for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += go[k];
      }
    };
    return id;
  }

  NodeId scale(NodeId x, double c) {
    Tensor out = value(x);
    for (auto& v : out.data) v *= c;
    NodeId id = push("scale", {x}, std::move(out));
    node(id).backward = [id, x, c](Graph& g) {
      const auto& go = g.grad(id);
      auto& gx = g.grad(x);
      for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += c * go[k];
    };
    return id;
  }

  NodeId exp(NodeId x) {
    Tensor out = value(x);
    for (auto& v : out.data) v = std::exp(v);
    NodeId id = push("exp", {x}, std::move(out));
    node(id).backward = [id, x](Graph& g) {
      const auto& go = g.grad(id);
      const auto& vy = g.value(id).data;
      auto& gx = g.grad(x);
      for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += go[k] * vy[k];
    };
    return id;
  }

  // Gradient is passed through on the open interval only.
  NodeId clamp(NodeId x, double lo, double hi) {
    Tensor out = value(x);
    for (auto& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
    NodeId id = push("clamp", {x}, std::move(out));
    node(id).backward = [id, x, lo, hi](Graph& g) {
      const auto& go = g.grad(id);
      const auto& vx = g.value(x).data;
      auto& gx = g.grad(x);
      for (std::size_t k = 0; k < gx.size(); ++k)
        if (vx[k] > lo && vx[k] < hi) gx[k] += go[k];
    };
    return id;
  }

  NodeId reshape(NodeId x, Shape s) {
    const Tensor& tx = value(x);
    if (shape_size(s) != tx.size())
      throw ShapeError("reshape: size mismatch " + shape_str(tx.shape) + " -> " + shape_str(s));
    Tensor out(std::move(s), tx.data);
    NodeId id = push("reshape", {x}, std::move(out));
    node(id).backward = [id, x](Graph& g) {
      const auto& go = g.grad(id);
      auto& gx = g.grad(x);
      for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += go[k];
    };
    return id;
  }

  NodeId concat(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ContractError("concat: empty operand list");
    std::vector<double> data;
    for (NodeId x : xs) {
      const auto& v = value(x).data;
      data.insert(data.end(), v.begin(), v.end());
    }
    const int n = static_cast<int>(data.size());
    Tensor out({n}, std::move(data));
    NodeId id = push("concat", xs, std::move(out));
    node(id).backward = [id, xs](Graph& g) {
      const auto& go = g.grad(id);
      std::size_t off = 0;
      for (NodeId x : xs) {
        auto& gx = g.grad(x);
        for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += go[off + k];
        off += gx.size();
      }
    };
    return id;
  }

  NodeId sum(NodeId x) {
    double acc = 0.0;
    for (double v : value(x).data) acc += v;
    NodeId id = push("sum", {x}, Tensor::scalar(acc));
    node(id).backward = [id, x](Graph& g) {
      const double go = g.grad(id)[0];
      auto& gx = g.grad(x);
      for (auto& v : gx) v += go;
    };
    return id;
  }

  NodeId sum_squares(NodeId x) {
    double acc = 0.0;
    for (double v : value(x).data) acc += v * v;
    NodeId id = push("sum_squares", {x}, Tensor::scalar(acc));
    node(id).backward = [id, x](Graph& g) {
      const double go = g.grad(id)[0];
      const auto& vx = g.value(x).data;
      auto& gx = g.grad(x);
      for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += 2.0 * go * vx[k];
    };
    return id;
  }

  NodeId pick(NodeId x, int index) {
    const Tensor& tx = value(x);
    if (index < 0 || index >= tx.size())
      throw ShapeError("pick: index " + std::to_string(index) + " out of range for " +
                       shape_str(tx.shape));
    NodeId id = push("pick", {x}, Tensor::scalar(tx.at(index)));
    node(id).backward = [id, x, index](Graph& g) {
      g.grad(x)[static_cast<std::size_t>(index)] += g.grad(id)[0];
    };
    return id;
  }

  // Columns of E [d x V] gathered by token index -> [d x T]. Duplicate
  // indices accumulate their gradients.
  NodeId lookup_columns(NodeId e, std::vector<int> cols) {
    const Tensor& te = value(e);
    if (te.rank() != 2) throw ShapeError("lookup_columns: embedding must be 2-D");
    const int d = te.extent(0), v = te.extent(1);
    const int t = static_cast<int>(cols.size());
    for (int c : cols)
      if (c < 0 || c >= v)
        throw DataError("lookup_columns: token index " + std::to_string(c) +
                        " outside vocabulary of size " + std::to_string(v));
    Tensor out = Tensor::zeros({d, t});
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < t; ++j) out.at(i, j) = te.at(i, cols[static_cast<std::size_t>(j)]);
    NodeId id = push("lookup_columns", {e}, std::move(out));
    node(id).backward = [id, e, cols = std::move(cols), d, v, t](Graph& g) {
      const auto& go = g.grad(id);
      auto& ge = g.grad(e);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < t; ++j)
          ge[static_cast<std::size_t>(i) * v + cols[static_cast<std::size_t>(j)]] +=
              go[static_cast<std::size_t>(i) * t + j];
    };
    return id;
  }

  // Cosine similarity between a [d] and every column of B [d x V].
  // norm_eps > 0 guards zero norms; with norm_eps == 0 a zero-norm vector
  // is a numeric-domain error. The cosine is not differentiable where a
  // vector is exactly zero; such vectors receive no gradient.
  NodeId cosine_rows(NodeId a, NodeId b, double norm_eps = 1e-8) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (tb.rank() != 2 || ta.size() != tb.extent(0))
      throw ShapeError("cosine_rows: incompatible shapes " + shape_str(ta.shape) + " and " +
                       shape_str(tb.shape));
    const int d = tb.extent(0), v = tb.extent(1);
    const double na = norm_of(ta.data.data(), d, 1);
    if (norm_eps == 0.0 && na == 0.0) throw NumericError("cosine_rows: zero-norm input vector");
    std::vector<double> nb(static_cast<std::size_t>(v));
    for (int s = 0; s < v; ++s) {
      nb[static_cast<std::size_t>(s)] = norm_of(tb.data.data() + s, d, v);
      if (norm_eps == 0.0 && nb[static_cast<std::size_t>(s)] == 0.0)
        throw NumericError("cosine_rows: zero-norm column " + std::to_string(s));
    }
    Tensor out = Tensor::zeros({v});
    for (int s = 0; s < v; ++s) {
      double dot = 0.0;
      for (int i = 0; i < d; ++i) dot += ta.at(i) * tb.at(i, s);
      out.at(s) = dot / ((na + norm_eps) * (nb[static_cast<std::size_t>(s)] + norm_eps));
    }
    NodeId id = push("cosine_rows", {a, b}, std::move(out));
    node(id).backward = [id, a, b, d, v, na, nb = std::move(nb), norm_eps](Graph& g) {
      const auto& go = g.grad(id);
      const auto& c = g.value(id).data;
      const Tensor& va = g.value(a);
      const Tensor& vb = g.value(b);
      auto& ga = g.grad(a);
      auto& gb = g.grad(b);
      const double nag = na + norm_eps;
      for (int s = 0; s < v; ++s) {
        const double gs = go[static_cast<std::size_t>(s)];
        if (gs == 0.0) continue;
        const double nbs = nb[static_cast<std::size_t>(s)];
        const double nbg = nbs + norm_eps;
        for (int i = 0; i < d; ++i) {
          if (na > 0.0) {
            const double da = vb.at(i, s) / (nag * nbg) -
                              c[static_cast<std::size_t>(s)] * va.at(i) / (nag * na);
            ga[static_cast<std::size_t>(i)] += gs * da;
          }
          if (nbs > 0.0) {
            const double db = va.at(i) / (nag * nbg) -
                              c[static_cast<std::size_t>(s)] * vb.at(i, s) / (nbg * nbs);
            gb[static_cast<std::size_t>(i) * v + s] += gs * db;
          }
        }
      }
    };
    return id;
  }

  NodeId log_softmax(NodeId x) {
    const Tensor& tx = value(x);
    const int n = static_cast<int>(tx.size());
    Tensor out = tx;
    log_softmax_inplace(out.data);
    NodeId id = push("log_softmax", {x}, std::move(out));
    node(id).backward = [id, x, n](Graph& g) {
      const auto& go = g.grad(id);
      const auto& vy = g.value(id).data;
      auto& gx = g.grad(x);
      double gsum = 0.0;
      for (int k = 0; k < n; ++k) gsum += go[static_cast<std::size_t>(k)];
      for (int k = 0; k < n; ++k)
        gx[static_cast<std::size_t>(k)] +=
            go[static_cast<std::size_t>(k)] - std::exp(vy[static_cast<std::size_t>(k)]) * gsum;
    };
    return id;
  }

  // -log softmax(logits)[label]
  NodeId softmax_cross_entropy(NodeId logits, int label) {
    const Tensor& tl = value(logits);
    const int n = static_cast<int>(tl.size());
    if (label < 0 || label >= n)
      throw DataError("softmax_cross_entropy: label " + std::to_string(label) +
                      " outside class count " + std::to_string(n));
    std::vector<double> logp = tl.data;
    log_softmax_inplace(logp);
    NodeId id = push("softmax_cross_entropy", {logits},
                     Tensor::scalar(-logp[static_cast<std::size_t>(label)]));
    node(id).backward = [id, logits, label, logp = std::move(logp), n](Graph& g) {
      const double go = g.grad(id)[0];
      auto& gx = g.grad(logits);
      for (int k = 0; k < n; ++k) {
        double p = std::exp(logp[static_cast<std::size_t>(k)]);
        gx[static_cast<std::size_t>(k)] += go * (p - (k == label ? 1.0 : 0.0));
      }
    };
    return id;
  }

  // Closed-form KL(N(mu, diag(sigma^2)) || N(0, I)) with sigma = exp(log_sigma).
  NodeId gaussian_kl(NodeId mu, NodeId log_sigma) {
    const Tensor& tm = value(mu);
    const Tensor& ts = value(log_sigma);
    if (!same_shape(tm, ts))
      throw ShapeError("gaussian_kl: mismatched shapes " + shape_str(tm.shape) + " and " +
                       shape_str(ts.shape));
    double acc = 0.0;
    for (std::size_t k = 0; k < tm.data.size(); ++k) {
      const double m = tm.data[k], ls = ts.data[k];
      acc += 0.5 * (m * m + std::exp(2.0 * ls) - 1.0 - 2.0 * ls);
    }
    NodeId id = push("gaussian_kl", {mu, log_sigma}, Tensor::scalar(acc));
    node(id).backward = [id, mu, log_sigma](Graph& g) {
      const double go = g.grad(id)[0];
      const auto& vm = g.value(mu).data;
      const auto& vs = g.value(log_sigma).data;
      auto& gm = g.grad(mu);
      auto& gs = g.grad(log_sigma);
      for (std::size_t k = 0; k < vm.size(); ++k) {
        gm[k] += go * vm[k];
        gs[k] += go * (std::exp(2.0 * vs[k]) - 1.0);
      }
    };
    return id;
  }

  // Negative reconstruction log-likelihood of a token sequence under the
  // temperature-scaled cosine softmax: sum_i -log p(w_i), positions beyond
  // tokens.size() (padding) are not scored. Computed in log space. As with
  // cosine_rows, exactly zero-norm columns receive no gradient.
  NodeId recon_nll(NodeId z3, NodeId e, std::vector<int> tokens, double tau,
                   double norm_eps = 1e-8) {
    if (tau <= 0.0) throw ConfigError("recon_nll: temperature must be positive");
    const Tensor& tz = value(z3);
    const Tensor& te = value(e);
    if (tz.rank() != 2 || te.rank() != 2 || tz.extent(0) != te.extent(0))
      throw ShapeError("recon_nll: incompatible shapes " + shape_str(tz.shape) + " and " +
                       shape_str(te.shape));
    const int d = te.extent(0), v = te.extent(1);
    const int n = static_cast<int>(tokens.size());
    if (n > tz.extent(1))
      throw ShapeError("recon_nll: " + std::to_string(n) + " positions but output width " +
                       std::to_string(tz.extent(1)));
    for (int c : tokens)
      if (c < 0 || c >= v)
        throw DataError("recon_nll: token index " + std::to_string(c) +
                        " outside vocabulary of size " + std::to_string(v));

    std::vector<double> col_norm(static_cast<std::size_t>(v));
    for (int s = 0; s < v; ++s) col_norm[static_cast<std::size_t>(s)] = norm_of(te.data.data() + s, d, v);
    const int width = tz.extent(1);
    std::vector<double> z_norm(static_cast<std::size_t>(n));
    // cached per position: cosines and log-probabilities over the vocabulary
    std::vector<double> cos_cache(static_cast<std::size_t>(n) * v);
    std::vector<double> logp_cache(static_cast<std::size_t>(n) * v);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* zi = tz.data.data() + i;
      const double nz = norm_of(zi, d, width);
      z_norm[static_cast<std::size_t>(i)] = nz;
      double* ci = cos_cache.data() + static_cast<std::size_t>(i) * v;
      double* li = logp_cache.data() + static_cast<std::size_t>(i) * v;
      for (int s = 0; s < v; ++s) {
        double dot = 0.0;
        for (int r = 0; r < d; ++r)
          dot += zi[static_cast<std::size_t>(r) * width] * te.at(r, s);
        ci[s] = dot / ((nz + norm_eps) * (col_norm[static_cast<std::size_t>(s)] + norm_eps));
        li[s] = ci[s] / tau;
      }
      double mx = li[0];
      for (int s = 1; s < v; ++s) mx = std::max(mx, li[s]);
      double lse = 0.0;
      for (int s = 0; s < v; ++s) lse += std::exp(li[s] - mx);
      lse = mx + std::log(lse);
      for (int s = 0; s < v; ++s) li[s] -= lse;
      total -= li[tokens[static_cast<std::size_t>(i)]];
    }
    NodeId id = push("recon_nll", {z3, e}, Tensor::scalar(total));
    if (n == 0) return id;
    node(id).backward = [id, z3, e, tokens = std::move(tokens), tau, norm_eps, d, v, n, width,
                         col_norm = std::move(col_norm), z_norm = std::move(z_norm),
                         cos_cache = std::move(cos_cache),
                         logp_cache = std::move(logp_cache)](Graph& g) {
      const double go = g.grad(id)[0];
      const Tensor& vz = g.value(z3);
      const Tensor& ve = g.value(e);
      auto& gz = g.grad(z3);
      auto& ge = g.grad(e);
      for (int i = 0; i < n; ++i) {
        const double* ci = cos_cache.data() + static_cast<std::size_t>(i) * v;
        const double* li = logp_cache.data() + static_cast<std::size_t>(i) * v;
        const double nz = z_norm[static_cast<std::size_t>(i)];
        const double nzg = nz + norm_eps;
        const int wi = tokens[static_cast<std::size_t>(i)];
        // dL/dcos_s = (softmax_s - [s == w_i]) / tau, scaled by upstream go
        double along = 0.0;  // sum_s q_s * cos_s, coefficient of the radial term
        for (int s = 0; s < v; ++s) {
          const double q = go * (std::exp(li[s]) - (s == wi ? 1.0 : 0.0)) / tau;
          if (q == 0.0) continue;
          const double nbs = col_norm[static_cast<std::size_t>(s)];
          if (nbs == 0.0) continue;
          const double nbg = nbs + norm_eps;
          const double ca = q / (nzg * nbg);
          if (nz > 0.0) {
            for (int r = 0; r < d; ++r)
              gz[static_cast<std::size_t>(r) * width + i] += ca * ve.at(r, s);
            along += q * ci[s];
          }
          const double cb = q * ci[s] / (nbg * nbs);
          for (int r = 0; r < d; ++r)
            ge[static_cast<std::size_t>(r) * v + s] += ca * vz.at(r, i) - cb * ve.at(r, s);
        }
        if (nz > 0.0 && along != 0.0) {
          const double cr = along / (nzg * nz);
          for (int r = 0; r < d; ++r)
            gz[static_cast<std::size_t>(r) * width + i] -= cr * vz.at(r, i);
        }
      }
    };
    return id;
  }

  // Seeds d(loss)/d(loss) = 1 and replays the tape backwards. Parameter
  // leaves accumulate into their bound tensor's grad slot.
  void backward(NodeId loss) {
    if (value(loss).size() != 1) throw ContractError("backward: loss node must be scalar");
    for (auto& nd : nodes_) nd.grad.assign(nd.value.data.size(), 0.0);
    nodes_[static_cast<std::size_t>(loss)].grad[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& nd = nodes_[i];
      if (nd.backward) nd.backward(*this);
      if (nd.bound) {
        auto& pg = nd.bound->grad;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += nd.grad[k];
      }
    }
  }

 private:
  Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }

  NodeId push(const char* op, std::vector<NodeId> inputs, Tensor value) {
    Node nd;
    nd.op = op;
    nd.inputs = std::move(inputs);
    nd.value = std::move(value);
    nodes_.push_back(std::move(nd));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId binary_elementwise(const char* op, NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!same_shape(ta, tb))
      throw ShapeError(std::string(op) + ": mismatched shapes " + shape_str(ta.shape) + " and " +
                       shape_str(tb.shape));
    Tensor out = ta;
    const bool is_add = op[0] == 'a';
    const bool is_sub = op[0] == 's';
    for (std::size_t k = 0; k < out.data.size(); ++k)
      out.data[k] = is_add ? ta.data[k] + tb.data[k]
                           : (is_sub ? ta.data[k] - tb.data[k] : ta.data[k] * tb.data[k]);
    NodeId id = push(op, {a, b}, std::move(out));
    if (is_add || is_sub) {
      const double sb = is_sub ? -1.0 : 1.0;
      node(id).backward = [id, a, b, sb](Graph& g) {
        const auto& go = g.grad(id);
        auto& ga = g.grad(a);
        auto& gb = g.grad(b);
        for (std::size_t k = 0; k < go.size(); ++k) {
          ga[k] += go[k];
          gb[k] += sb * go[k];
        }
      };
    } else {
      node(id).backward = [id, a, b](Graph& g) {
        const auto& go = g.grad(id);
        const auto& va = g.value(a).data;
        const auto& vb = g.value(b).data;
        auto& ga = g.grad(a);
        auto& gb = g.grad(b);
        for (std::size_t k = 0; k < go.size(); ++k) {
          ga[k] += go[k] * vb[k];
          gb[k] += go[k] * va[k];
        }
      };
    }
    return id;
  }

  static double norm_of(const double* base, int n, int stride) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = base[static_cast<std::size_t>(i) * stride];
      acc += v * v;
    }
    return std::sqrt(acc);
  }

  static void log_softmax_inplace(std::vector<double>& x) {
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    double lse = 0.0;
    for (double v : x) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    for (auto& v : x) v -= lse;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, NodeId> bound_;
};

// Populates grads of every tensor in `params`: zero for parameters the loss
// does not reach, d(loss)/d(tensor) for the rest.
inline void backward(Graph& g, NodeId loss, ParameterStore& params) {
  params.zero_grad();
  g.backward(loss);
}

}  // namespace dlvm
