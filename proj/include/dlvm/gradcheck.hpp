// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <limits>
#include <string_view>
#include <string>
#include <vector>

#include "dlvm/trainer.hpp"

namespace dlvm {

// Central finite-difference verification of every differentiable operation
// and of the full joint model. The numeric side only ever reruns forward
// passes, so it stays independent of the backward implementation it checks.

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double threshold = 0.0;
  bool passed() const { return max_rel_err < threshold; }
};

namespace gradcheck_detail {

inline double rel_err(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

// Forward builder: constructs the loss graph from current parameter values.
using LossBuilder = std::function<double(ParameterStore&, bool want_grad)>;

inline double max_param_rel_err(ParameterStore& params, const LossBuilder& build, double h) {
  build(params, true);  // populate analytic grads
  std::vector<std::vector<double>> analytic;
  for (const auto& name : params.names()) analytic.push_back(params.get(name).grad);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.names().size(); ++pi) {
    Tensor& p = params.get(params.names()[pi]);
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      const double orig = p.data[k];
      p.data[k] = orig + h;
      const double up = build(params, false);
      p.data[k] = orig - h;
      const double down = build(params, false);
      p.data[k] = orig;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[pi][k], numeric));
    }
  }
  return worst;
}

// loss = <op output, fixed weights>; varies the output gradient entrywise.
inline NodeId weighted_sum(Graph& g, NodeId out, const Tensor& weights) {
  return g.sum(g.hadamard(out, g.leaf(weights)));
}

inline Tensor signed_uniform(Shape s, double lo, double hi, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return t;
}

}  // namespace gradcheck_detail

// Every elementary operation on small random shapes, step 1e-5.
inline std::vector<GradCheckEntry> run_op_gradchecks(std::uint64_t seed) {
  using namespace gradcheck_detail;
  std::vector<GradCheckEntry> out;
  const double h = 1e-5;
  const double tol = 1e-6;

  auto check = [&](const std::string& name,
                   const std::function<void(Rng&, ParameterStore&)>& init,
                   const std::function<NodeId(Graph&, ParameterStore&, Rng&)>& forward) {
    ParameterStore params;
    Rng init_rng(seed);
    init(init_rng, params);
    auto build = [&](ParameterStore& ps, bool want_grad) {
      Rng rng(seed + 1);
      Graph g;
      NodeId loss = forward(g, ps, rng);
      const double v = g.scalar_value(loss);
      if (want_grad) backward(g, loss, ps);
      return v;
    };
    out.push_back({name, max_param_rel_err(params, build, h), tol});
  };

  check("matmul",
        [](Rng& r, ParameterStore& p) {
          p.add("a", r.normal_tensor({3, 4}));
          p.add("b", r.normal_tensor({4, 2}));
        },
        [](Graph& g, ParameterStore& p, Rng& r) {
          return weighted_sum(g, g.matmul(g.param(p.get("a")), g.param(p.get("b"))),
                              r.normal_tensor({3, 2}));
        });
  check("affine",
        [](Rng& r, ParameterStore& p) {
          p.add("x", r.normal_tensor({5}));
          p.add("w", r.normal_tensor({4, 5}));
          p.add("b", r.normal_tensor({4}));
        },
        [](Graph& g, ParameterStore& p, Rng& r) {
          return weighted_sum(
              g, g.affine(g.param(p.get("x")), g.param(p.get("w")), g.param(p.get("b"))),
              r.normal_tensor({4}));
        });
  check("conv1d",
        [](Rng& r, ParameterStore& p) {
          p.add("x", r.normal_tensor({3, 15}));
          p.add("f", r.normal_tensor({4, 3, 5}));
        },
        [](Graph& g, ParameterStore& p, Rng& r) {
          return weighted_sum(g, g.conv1d(g.param(p.get("x")), g.param(p.get("f")), 2),
                              r.normal_tensor({4, 6}));
        });
  check("conv1d_transpose",
        [](Rng& r, ParameterStore& p) {
          p.add("x", r.normal_tensor({3, 4}));
          p.add("f", r.normal_tensor({3, 2, 5}));
        },
        [](Graph& g, ParameterStore& p, Rng& r) {
          return weighted_sum(g, g.conv1d_transpose(g.param(p.get("x")), g.param(p.get("f")), 2),
                              r.normal_tensor({2, 11}));
        });
  check("add_channel_bias",
        [](Rng& r, ParameterStore& p) {
          p.add("x", r.normal_tensor({3, 7}));
          p.add("b", r.normal_tensor({3}));
        },
        [](Graph& g, ParameterStore& p, Rng& r) {
          return weighted_sum(g, g.add_channel_bias(g.param(p.get("x")), g.param(p.get("b"))),
                              r.normal_tensor({3, 7}));
        });
  check("relu",  // inputs kept away from the kink
        [](Rng& r, ParameterStore& p) { p.add("x", signed_uniform({20}, 0.1, 1.0, r)); },
        [](Graph& g, ParameterStore& p, Rng& r) {
          return weighted_sum(g, g.relu(g.param(p.get("x"))), r.normal_tensor({20}));
        });
  check("add_sub_hadamard",
        [](Rng& r, ParameterStore& p) {
          p.add("a", r.normal_tensor({7}));
          p.add("b", r.normal_tensor({7}));
        },
        [](Graph& g, ParameterStore& p, Rng& r) {
          NodeId a = g.param(p.get("a")), b = g.param(p.get("b"));
          NodeId y = g.hadamard(g.add(a, b), g.sub(a, b));
          return weighted_sum(g, y, r.normal_tensor({7}));
        });
  check("scale_exp",
        [](Rng& r, ParameterStore& p) { p.add("x", signed_uniform({6}, 0.0, 1.0, r)); },
        [](Graph& g, ParameterStore& p, Rng& r) {
          return weighted_sum(g, g.exp(g.scale(g.param(p.get("x")), 0.7)), r.normal_tensor({6}));
        });
  check("clamp",  // interior of the clamp range only
        [](Rng& r, ParameterStore& p) { p.add("x", signed_uniform({6}, 0.0, 1.0, r)); },
        [](Graph& g, ParameterStore& p, Rng& r) {
          return weighted_sum(g, g.clamp(g.param(p.get("x")), -5.0, 5.0), r.normal_tensor({6}));
        });
  check("concat_reshape_pick",
        [](Rng& r, ParameterStore& p) {
          p.add("a", r.normal_tensor({3}));
          p.add("b", r.normal_tensor({4}));
        },
        [](Graph& g, ParameterStore& p, Rng& r) {
          NodeId cat = g.concat({g.param(p.get("a")), g.param(p.get("b"))});
          NodeId mat = g.reshape(cat, {7, 1});
          return g.add(g.pick(g.reshape(mat, {7}), 2),
                       weighted_sum(g, mat, r.normal_tensor({7, 1})));
        });
  check("sum_squares",
        [](Rng& r, ParameterStore& p) { p.add("x", r.normal_tensor({8})); },
        [](Graph& g, ParameterStore& p, Rng&) { return g.sum_squares(g.param(p.get("x"))); });
  check("lookup_columns",
        [](Rng& r, ParameterStore& p) { p.add("e", r.normal_tensor({4, 9})); },
        [](Graph& g, ParameterStore& p, Rng& r) {
          return weighted_sum(g, g.lookup_columns(g.param(p.get("e")), {1, 3, 3, 0, 8}),
                              r.normal_tensor({4, 5}));
        });
  check("cosine_rows",
        [](Rng& r, ParameterStore& p) {
          p.add("a", signed_uniform({5}, 0.2, 1.0, r));
          p.add("b", signed_uniform({5, 7}, 0.2, 1.0, r));
        },
        [](Graph& g, ParameterStore& p, Rng& r) {
          return weighted_sum(g, g.cosine_rows(g.param(p.get("a")), g.param(p.get("b"))),
                              r.normal_tensor({7}));
        });
  check("log_softmax",
        [](Rng& r, ParameterStore& p) { p.add("x", r.normal_tensor({9})); },
        [](Graph& g, ParameterStore& p, Rng& r) {
          return weighted_sum(g, g.log_softmax(g.param(p.get("x"))), r.normal_tensor({9}));
        });
  check("softmax_cross_entropy",
        [](Rng& r, ParameterStore& p) { p.add("x", r.normal_tensor({5})); },
        [](Graph& g, ParameterStore& p, Rng&) {
          return g.softmax_cross_entropy(g.param(p.get("x")), 2);
        });
  check("gaussian_kl",
        [](Rng& r, ParameterStore& p) {
          p.add("mu", r.normal_tensor({6}));
          p.add("ls", signed_uniform({6}, 0.0, 1.0, r));
        },
        [](Graph& g, ParameterStore& p, Rng&) {
          return g.gaussian_kl(g.param(p.get("mu")), g.param(p.get("ls")));
        });
  check("recon_nll",
        [](Rng& r, ParameterStore& p) {
          p.add("z3", signed_uniform({4, 6}, 0.2, 1.0, r));
          p.add("e", signed_uniform({4, 9}, 0.2, 1.0, r));
        },
        [](Graph& g, ParameterStore& p, Rng&) {
          return g.recon_nll(g.param(p.get("z3")), g.param(p.get("e")), {1, 3, 3, 0}, 0.1);
        });
  return out;
}

namespace gradcheck_detail {

// Smallest |x| feeding any ReLU in the graph. Central differences are only
// valid away from kinks, so the full-model check requires this margin to
// exceed the FD step by a wide factor.
inline double min_relu_margin(const Graph& g) {
  double margin = std::numeric_limits<double>::infinity();
  g.for_each_node([&](const Graph::Node& n) {
    if (std::string_view(n.op) != "relu") return;
    for (double v : g.value(n.inputs[0]).data) margin = std::min(margin, std::abs(v));
  });
  return margin;
}

}  // namespace gradcheck_detail

// Configuration pinned by the acceptance gate: M = 4, |V| = 12, T_max = 29,
// one labeled and one unlabeled pair, every parameter perturbed, step 1e-4.
// tau is 0.5 here: the check verifies the backward pass, and at tau = 0.01
// the cosine-softmax curvature (~1/tau^3) swamps a 1e-4 central difference
// with truncation error regardless of gradient correctness. The seed is
// advanced deterministically until every ReLU input clears the kink margin,
// and the PAD embedding column is randomized because the cosine is not
// differentiable at an exactly-zero column.
inline GradCheckEntry run_full_model_gradcheck(std::uint64_t seed) {
  using namespace gradcheck_detail;
  ModelConfig cfg;
  cfg.mode = TrainingMode::SemiLvm;
  cfg.t_max = 29;
  cfg.window = 5;
  cfg.stride = 2;
  cfg.k = {4, 5, 6};
  cfg.m = 4;
  cfg.d_emb = 5;
  cfg.tau = 0.5;
  cfg.dropout = 0.3;
  cfg.lambda_l2 = 1e-3;
  cfg.anneal_steps = 1000;
  cfg.labels = {"same", "diff"};

  const int vocab = 12;
  Batch batch;
  batch.size = 2;
  batch.t_max = cfg.t_max;
  Rng data_rng(seed + 7);
  batch.lengths = {9, 13};
  batch.second_lengths = {11, 7};
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < cfg.t_max; ++t)
      batch.tokens.push_back(t < batch.lengths[static_cast<std::size_t>(i)]
                                 ? static_cast<std::int32_t>(2 + data_rng.uniform_int(vocab - 2))
                                 : 0);
    for (int t = 0; t < cfg.t_max; ++t)
      batch.second_tokens.push_back(
          t < batch.second_lengths[static_cast<std::size_t>(i)]
              ? static_cast<std::int32_t>(2 + data_rng.uniform_int(vocab - 2))
              : 0);
  }
  batch.labels = {1, -1};
  batch.label_mask = {1, 0};

  // alpha = 0.5: both the generative and matching terms carry gradient
  const std::int64_t step = 500;
  const double h = 1e-4;

  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    cfg.seed = seed + attempt;
    Session s = make_session(cfg, vocab, true);
    {
      // Larger activations than the training init: preactivations must sit
      // well clear of the ReLU kinks for the FD step, and the PAD column
      // must not be exactly zero (the cosine is not differentiable there).
      Rng scale_rng(cfg.seed + 13);
      Tensor& emb = s.params.get("embedding");
      for (auto& v : emb.data) v = scale_rng.uniform(0.1, 0.5) * (scale_rng.uniform() < 0.5 ? -1 : 1);
      for (const auto& name : s.params.names())
        if (name != "embedding" && name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0)
          for (auto& v : s.params.get(name).data) v *= 2.0;
    }
    const std::uint64_t noise_seed = cfg.seed + 99;
    auto build = [&](ParameterStore& ps, bool want_grad) {
      Rng rng(noise_seed);  // same dropout masks and eps draws on every call
      Graph g;
      BatchLoss loss = build_match_loss(g, ps, cfg, batch, rng, true, step);
      if (want_grad) backward(g, loss.total, ps);
      return loss.parts.total;
    };
    {
      Rng rng(noise_seed);
      Graph g;
      build_match_loss(g, s.params, cfg, batch, rng, true, step);
      if (min_relu_margin(g) < 5.0 * h) continue;
    }
    return {"full_model", max_param_rel_err(s.params, build, h), 1e-4};
  }
  return {"full_model (no kink-free seed found)", 1.0, 1e-4};
}

inline std::vector<GradCheckEntry> run_gradcheck(std::uint64_t seed) {
  std::vector<GradCheckEntry> out = run_op_gradchecks(seed);
  out.push_back(run_full_model_gradcheck(seed));
  return out;
}

}  // namespace dlvm
