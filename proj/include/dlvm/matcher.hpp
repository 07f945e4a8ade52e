// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "dlvm/autodiff.hpp"
#include "dlvm/config.hpp"
#include "dlvm/encoder.hpp"

namespace dlvm {

// Heuristic matching layer plus the classification head p(y|z_p, z_h):
// m = [z_p; z_h; z_p - z_h; z_p * z_h] through a two-hidden-layer ReLU MLP
// and an affine softmax output. Dropout hits the matching features (the
// latent-variable layer input) in train mode.

inline void init_matcher_params(ParameterStore& params, const ModelConfig& cfg, Rng& rng) {
  const int dh = cfg.matcher_width();
  const int c = cfg.num_classes();
  params.add("match.h1.w", glorot_tensor({dh, 4 * cfg.m}, 4 * cfg.m, dh, rng));
  params.add("match.h1.b", Tensor::zeros({dh}));
  params.add("match.h2.w", glorot_tensor({dh, dh}, dh, dh, rng));
  params.add("match.h2.b", Tensor::zeros({dh}));
  params.add("match.out.w", glorot_tensor({c, dh}, dh, c, rng));
  params.add("match.out.b", Tensor::zeros({c}));
}

// [z_p; z_h; z_p - z_h; z_p element* z_h], width exactly 4M.
inline NodeId match_features(Graph& g, NodeId z_p, NodeId z_h) {
  if (g.value(z_p).size() != g.value(z_h).size())
    throw ShapeError("match_features: latent widths differ, " + shape_str(g.value(z_p).shape) +
                     " vs " + shape_str(g.value(z_h).shape));
  return g.concat({z_p, z_h, g.sub(z_p, z_h), g.hadamard(z_p, z_h)});
}

inline NodeId classify(Graph& g, ParameterStore& params, const ModelConfig& cfg, NodeId m,
                       bool train, Rng& rng) {
  NodeId x = m;
  if (train && cfg.dropout > 0.0)
    x = g.hadamard(x, g.leaf(dropout_mask({static_cast<int>(g.value(m).size())}, cfg.dropout, rng)));
  x = g.relu(g.affine(x, g.param(params.get("match.h1.w")), g.param(params.get("match.h1.b"))));
  x = g.relu(g.affine(x, g.param(params.get("match.h2.w")), g.param(params.get("match.h2.b"))));
  return g.affine(x, g.param(params.get("match.out.w")), g.param(params.get("match.out.b")));
}

}  // namespace dlvm
