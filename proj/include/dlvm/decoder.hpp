// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dlvm/autodiff.hpp"
#include "dlvm/config.hpp"
#include "dlvm/encoder.hpp"

namespace dlvm {

// Generative network p(x|z): three transposed convolutions expand z [M]
// through temporal extents 1 -> 5 -> 13 -> 29 (mirroring the encoder chain)
// down to an embedding-space matrix [d_emb x T_max]. ReLU follows the two
// upper layers; the final layer stays linear so output columns can match
// embedding directions of either sign. Word probabilities come from the
// temperature-scaled cosine softmax against the shared embedding matrix.

inline constexpr double kNormEps = 1e-8;  // zero-norm guard for cosines

inline void init_decoder_params(ParameterStore& params, const ModelConfig& cfg, Rng& rng) {
  // channel chain M -> K2 -> K1 -> d_emb
  const int widths[4] = {cfg.m, cfg.k[1], cfg.k[0], cfg.d_emb};
  for (int l = 0; l < 3; ++l) {
    const int cin = widths[l], cout = widths[l + 1];
    const std::string base = "dec.deconv" + std::to_string(3 - l);
    params.add(base + ".w", glorot_tensor({cin, cout, cfg.window}, cin * cfg.window,
                                          cout * cfg.window, rng));
    params.add(base + ".b", Tensor::zeros({cout}));
  }
}

// z [M] -> z''' [d_emb x T_max]
inline NodeId decode(Graph& g, ParameterStore& params, const ModelConfig& cfg, NodeId z) {
  if (g.value(z).size() != cfg.m)
    throw ConfigError("decode: latent width " + std::to_string(g.value(z).size()) +
                      " does not match configured M " + std::to_string(cfg.m));
  NodeId x = g.reshape(z, {cfg.m, 1});
  for (int l = 3; l >= 1; --l) {
    const std::string base = "dec.deconv" + std::to_string(l);
    x = g.conv1d_transpose(x, g.param(params.get(base + ".w")), cfg.stride);
    x = g.add_channel_bias(x, g.param(params.get(base + ".b")));
    if (l > 1) x = g.relu(x);
  }
  return x;
}

// Probability that position's word is each vocabulary entry: softmax over
// cos(z3_col, E[s]) / tau, computed in log space with max subtraction.
inline Tensor word_distribution(const Tensor& z3_col, const Tensor& embedding, double tau,
                                double norm_eps = kNormEps) {
  if (tau <= 0.0) throw ConfigError("word_distribution: temperature must be positive");
  if (embedding.rank() != 2 || z3_col.size() != embedding.extent(0))
    throw ShapeError("word_distribution: incompatible shapes " + shape_str(z3_col.shape) +
                     " and " + shape_str(embedding.shape));
  const int d = embedding.extent(0), v = embedding.extent(1);
  double nz = 0.0;
  for (int r = 0; r < d; ++r) nz += z3_col.at(r) * z3_col.at(r);
  nz = std::sqrt(nz);
  if (norm_eps == 0.0 && nz == 0.0)
    throw NumericError("word_distribution: zero-norm decoder column");
  Tensor logits = Tensor::zeros({v});
  for (int s = 0; s < v; ++s) {
    double dot = 0.0, ns = 0.0;
    for (int r = 0; r < d; ++r) {
      dot += z3_col.at(r) * embedding.at(r, s);
      ns += embedding.at(r, s) * embedding.at(r, s);
    }
    ns = std::sqrt(ns);
    if (norm_eps == 0.0 && ns == 0.0)
      throw NumericError("word_distribution: zero-norm embedding column " + std::to_string(s));
    logits.at(s) = dot / ((nz + norm_eps) * (ns + norm_eps)) / tau;
  }
  double mx = logits.at(0);
  for (int s = 1; s < v; ++s) mx = std::max(mx, logits.at(s));
  double lse = 0.0;
  for (int s = 0; s < v; ++s) lse += std::exp(logits.at(s) - mx);
  lse = mx + std::log(lse);
  for (int s = 0; s < v; ++s) logits.at(s) = std::exp(logits.at(s) - lse);
  return logits;
}

// Index of the most likely word for one decoder output column (softmax is
// monotone in the cosine, so the argmax needs no temperature).
inline int argmax_word(const Tensor& z3, int col, const Tensor& embedding,
                       const std::vector<double>& col_norms, double norm_eps = kNormEps) {
  const int d = embedding.extent(0), v = embedding.extent(1);
  double nz = 0.0;
  for (int r = 0; r < d; ++r) nz += z3.at(r, col) * z3.at(r, col);
  nz = std::sqrt(nz) + norm_eps;
  int best = 0;
  double best_cos = -2.0;
  for (int s = 0; s < v; ++s) {
    double dot = 0.0;
    for (int r = 0; r < d; ++r) dot += z3.at(r, col) * embedding.at(r, s);
    const double c = dot / (nz * (col_norms[static_cast<std::size_t>(s)] + norm_eps));
    if (c > best_cos) {
      best_cos = c;
      best = s;
    }
  }
  return best;
}

inline std::vector<double> embedding_column_norms(const Tensor& embedding) {
  const int d = embedding.extent(0), v = embedding.extent(1);
  std::vector<double> norms(static_cast<std::size_t>(v), 0.0);
  for (int s = 0; s < v; ++s) {
    double acc = 0.0;
    for (int r = 0; r < d; ++r) acc += embedding.at(r, s) * embedding.at(r, s);
    norms[static_cast<std::size_t>(s)] = std::sqrt(acc);
  }
  return norms;
}

// Sum over scored positions of log p(w_i); positions past `length` are
// excluded unless score_pad is set. Value-only companion of the graph-side
// recon_nll (returns the log-likelihood, i.e. the negation).
inline double reconstruction_log_likelihood(const Tensor& z3, const Tensor& embedding,
                                            const std::int32_t* tokens, int length, double tau,
                                            bool score_pad = false, int t_max = -1) {
  const int n = score_pad ? (t_max > 0 ? t_max : z3.extent(1)) : length;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    Tensor col = Tensor::zeros({z3.extent(0)});
    for (int r = 0; r < z3.extent(0); ++r) col.at(r) = z3.at(r, i);
    Tensor probs = word_distribution(col, embedding, tau);
    total += std::log(probs.at(tokens[i]));
  }
  return total;
}

// Positions the reconstruction loss scores for one sentence.
inline std::vector<int> scored_tokens(const std::int32_t* tokens, int length, int t_max,
                                      bool score_pad) {
  const int n = score_pad ? t_max : length;
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = tokens[i];
  return out;
}

}  // namespace dlvm
