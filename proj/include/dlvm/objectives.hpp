// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "dlvm/autodiff.hpp"
#include "dlvm/config.hpp"
#include "dlvm/decoder.hpp"
#include "dlvm/encoder.hpp"
#include "dlvm/matcher.hpp"
#include "dlvm/text.hpp"

namespace dlvm {

// Training objectives. A labeled pair contributes its two VAE losses plus
// alpha times the matching cross-entropy; an unlabeled pair contributes the
// VAE losses alone. The joint objective is the mean over labeled pairs plus
// the mean over unlabeled pairs, one Monte Carlo sample of z per sentence
// per step. Losses are per sentence, not per token.

// alpha(0) = 0, linear ramp to 1 over anneal_steps, then constant.
struct AlphaSchedule {
  int anneal_steps = 5000;
  double at(std::int64_t step) const {
    if (anneal_steps <= 0) return 1.0;
    return std::min(1.0, static_cast<double>(step) / static_cast<double>(anneal_steps));
  }
};

struct LossBreakdown {
  double recon_p = 0.0, recon_h = 0.0;  // negative reconstruction log-likelihoods
  double kl_p = 0.0, kl_h = 0.0;
  double match = 0.0;  // unweighted matching cross-entropy
  double l2 = 0.0;
  double alpha = 0.0;
  double total = 0.0;

  double recon() const { return recon_p + recon_h; }
  double kl() const { return kl_p + kl_h; }
  double kl_fraction() const {
    const double denom = kl() + recon();
    return denom > 0.0 ? kl() / denom : 0.0;
  }
};

struct BatchLoss {
  NodeId total = -1;
  LossBreakdown parts;
  int labeled = 0, unlabeled = 0;
};

// Closed form KL(N(mu, sigma^2) || N(0, I)) with sigma = exp(log_sigma).
inline double gaussian_kl(const std::vector<double>& mu, const std::vector<double>& log_sigma) {
  if (mu.size() != log_sigma.size())
    throw ShapeError("gaussian_kl: mu and log_sigma lengths differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double s2 = std::exp(2.0 * log_sigma[i]);
    acc += 0.5 * (mu[i] * mu[i] + s2 - 1.0 - 2.0 * log_sigma[i]);
  }
  return acc;
}

// Mean over masked-in rows of -log softmax(logits)[label]; zero when no row
// is labeled.
inline double matching_loss(const Tensor& logits, const std::vector<int>& labels,
                            const std::vector<std::uint8_t>& mask) {
  const int b = logits.extent(0), c = logits.extent(1);
  double acc = 0.0;
  int n = 0;
  for (int i = 0; i < b; ++i) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c)
      throw DataError("matching_loss: label " + std::to_string(y) + " outside class count " +
                      std::to_string(c));
    double mx = logits.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    double lse = 0.0;
    for (int j = 0; j < c; ++j) lse += std::exp(logits.at(i, j) - mx);
    acc += mx + std::log(lse) - logits.at(i, y);
    ++n;
  }
  return n > 0 ? acc / n : 0.0;
}

namespace detail {

// Sum of squared entries of every weight matrix (names ending in ".w");
// biases and the embedding matrix are exempt.
inline NodeId l2_penalty(Graph& g, ParameterStore& params) {
  std::vector<NodeId> terms;
  for (const auto& name : params.names()) {
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0)
      terms.push_back(g.sum_squares(g.param(params.get(name))));
  }
  if (terms.empty()) return g.leaf(Tensor::scalar(0.0));
  return g.add_n(terms);
}

inline NodeId group_mean(Graph& g, const std::vector<NodeId>& terms, int group_size) {
  return g.scale(g.add_n(terms), 1.0 / group_size);
}

}  // namespace detail

// Negated ELBO for a single-sentence batch: mean(recon NLL) plus, in
// sampling modes, mean(KL). DECONV_AE uses z = mu and drops the KL term.
inline BatchLoss build_unsup_loss(Graph& g, ParameterStore& params, const ModelConfig& cfg,
                                  const Batch& batch, Rng& rng, bool train,
                                  bool include_l2 = true) {
  EncodeOptions opt{train, train && mode_uses_sampling(cfg.mode)};
  EncodeResult enc = encode(g, params, cfg, batch, rng, opt);
  NodeId emb = g.param(params.get("embedding"));

  std::vector<NodeId> recon_terms, kl_terms;
  for (int i = 0; i < batch.size; ++i) {
    NodeId z3 = decode(g, params, cfg, enc.codes[static_cast<std::size_t>(i)].z);
    recon_terms.push_back(g.recon_nll(
        z3, emb, scored_tokens(batch.row(i), batch.lengths[static_cast<std::size_t>(i)],
                               cfg.t_max, cfg.score_pad),
        cfg.tau));
    if (mode_uses_sampling(cfg.mode))
      kl_terms.push_back(g.gaussian_kl(enc.codes[static_cast<std::size_t>(i)].mu,
                                       enc.codes[static_cast<std::size_t>(i)].log_sigma));
  }

  BatchLoss out;
  std::vector<NodeId> total_terms;
  NodeId recon_mean = detail::group_mean(g, recon_terms, batch.size);
  total_terms.push_back(recon_mean);
  out.parts.recon_p = g.scalar_value(recon_mean);
  if (!kl_terms.empty()) {
    NodeId kl_mean = detail::group_mean(g, kl_terms, batch.size);
    total_terms.push_back(kl_mean);
    out.parts.kl_p = g.scalar_value(kl_mean);
  }
  if (include_l2 && cfg.lambda_l2 > 0.0) {
    NodeId l2 = detail::l2_penalty(g, params);
    out.parts.l2 = g.scalar_value(l2);
    total_terms.push_back(g.scale(l2, cfg.lambda_l2));
  }
  out.total = total_terms.size() == 1 ? total_terms[0] : g.add_n(total_terms);
  out.parts.total = g.scalar_value(out.total);
  out.unlabeled = batch.size;
  return out;
}

// Joint objective for a pair batch, mixing labeled and unlabeled rows via
// the label mask. ENCODER_ONLY pins alpha to 1 and drops all VAE terms.
inline BatchLoss build_match_loss(Graph& g, ParameterStore& params, const ModelConfig& cfg,
                                  const Batch& batch, Rng& rng, bool train, std::int64_t step,
                                  bool include_l2 = true) {
  if (!batch.has_pairs()) throw ContractError("build_match_loss: batch carries no pairs");
  EncodeOptions opt{train, train && mode_uses_sampling(cfg.mode)};
  auto [enc_p, enc_h] = encode_pair(g, params, cfg, batch, rng, opt);
  NodeId emb = g.param(params.get("embedding"));

  const bool decode_side = mode_uses_decoder(cfg.mode);
  const bool kl_side = mode_uses_sampling(cfg.mode);
  BatchLoss out;
  // per-group accumulators: [0] labeled, [1] unlabeled
  std::vector<NodeId> vae_terms[2];
  double recon_p_sum[2] = {0, 0}, recon_h_sum[2] = {0, 0};
  double kl_p_sum[2] = {0, 0}, kl_h_sum[2] = {0, 0};
  int group_n[2] = {0, 0};
  std::vector<NodeId> ce_terms;

  for (int i = 0; i < batch.size; ++i) {
    const int grp = batch.labeled(i) ? 0 : 1;
    ++group_n[grp];
    if (decode_side) {
      NodeId z3p = decode(g, params, cfg, enc_p.codes[static_cast<std::size_t>(i)].z);
      NodeId z3h = decode(g, params, cfg, enc_h.codes[static_cast<std::size_t>(i)].z);
      NodeId rp = g.recon_nll(
          z3p, emb, scored_tokens(batch.row(i), batch.lengths[static_cast<std::size_t>(i)],
                                  cfg.t_max, cfg.score_pad),
          cfg.tau);
      NodeId rh = g.recon_nll(z3h, emb,
                              scored_tokens(batch.second_row(i),
                                            batch.second_lengths[static_cast<std::size_t>(i)],
                                            cfg.t_max, cfg.score_pad),
                              cfg.tau);
      vae_terms[grp].push_back(rp);
      vae_terms[grp].push_back(rh);
      recon_p_sum[grp] += g.scalar_value(rp);
      recon_h_sum[grp] += g.scalar_value(rh);
    }
    if (kl_side) {
      NodeId kp = g.gaussian_kl(enc_p.codes[static_cast<std::size_t>(i)].mu,
                                enc_p.codes[static_cast<std::size_t>(i)].log_sigma);
      NodeId kh = g.gaussian_kl(enc_h.codes[static_cast<std::size_t>(i)].mu,
                                enc_h.codes[static_cast<std::size_t>(i)].log_sigma);
      vae_terms[grp].push_back(kp);
      vae_terms[grp].push_back(kh);
      kl_p_sum[grp] += g.scalar_value(kp);
      kl_h_sum[grp] += g.scalar_value(kh);
    }
    if (batch.labeled(i)) {
      NodeId m = match_features(g, enc_p.codes[static_cast<std::size_t>(i)].z,
                                enc_h.codes[static_cast<std::size_t>(i)].z);
      NodeId logits = classify(g, params, cfg, m, train, rng);
      ce_terms.push_back(
          g.softmax_cross_entropy(logits, batch.labels[static_cast<std::size_t>(i)]));
    }
  }

  out.labeled = group_n[0];
  out.unlabeled = group_n[1];
  const double alpha =
      cfg.mode == TrainingMode::EncoderOnly ? 1.0 : AlphaSchedule{cfg.anneal_steps}.at(step);
  out.parts.alpha = alpha;

  std::vector<NodeId> total_terms;
  for (int grp = 0; grp < 2; ++grp) {
    if (vae_terms[grp].empty()) continue;
    total_terms.push_back(detail::group_mean(g, vae_terms[grp], group_n[grp]));
    out.parts.recon_p += recon_p_sum[grp] / group_n[grp];
    out.parts.recon_h += recon_h_sum[grp] / group_n[grp];
    out.parts.kl_p += kl_p_sum[grp] / group_n[grp];
    out.parts.kl_h += kl_h_sum[grp] / group_n[grp];
  }
  if (!ce_terms.empty()) {
    NodeId ce_mean = detail::group_mean(g, ce_terms, static_cast<int>(ce_terms.size()));
    out.parts.match = g.scalar_value(ce_mean);
    if (alpha != 0.0) total_terms.push_back(g.scale(ce_mean, alpha));
  }
  if (include_l2 && cfg.lambda_l2 > 0.0) {
    NodeId l2 = detail::l2_penalty(g, params);
    out.parts.l2 = g.scalar_value(l2);
    total_terms.push_back(g.scale(l2, cfg.lambda_l2));
  }
  if (total_terms.empty()) total_terms.push_back(g.leaf(Tensor::scalar(0.0)));
  out.total = total_terms.size() == 1 ? total_terms[0] : g.add_n(total_terms);
  out.parts.total = g.scalar_value(out.total);
  return out;
}

inline BatchLoss build_training_loss(Graph& g, ParameterStore& params, const ModelConfig& cfg,
                                     const Batch& batch, Rng& rng, bool train, std::int64_t step,
                                     bool include_l2 = true) {
  return batch.has_pairs() ? build_match_loss(g, params, cfg, batch, rng, train, step, include_l2)
                           : build_unsup_loss(g, params, cfg, batch, rng, train, include_l2);
}

// Deterministic evaluation: z = mu, no dropout, argmax of the classifier.
inline double matching_accuracy(ParameterStore& params, const ModelConfig& cfg,
                                const PairDataset& ds, int batch_size) {
  Rng dead(0);  // never drawn from in eval mode
  std::int64_t correct = 0, counted = 0;
  for (const auto& idx : batch_indices(ds.size(), batch_size)) {
    Batch batch = ds.make_batch(idx);
    Graph g;
    EncodeOptions opt{false, false};
    auto [enc_p, enc_h] = encode_pair(g, params, cfg, batch, dead, opt);
    for (int i = 0; i < batch.size; ++i) {
      if (!batch.labeled(i)) continue;
      NodeId m = match_features(g, enc_p.codes[static_cast<std::size_t>(i)].z,
                                enc_h.codes[static_cast<std::size_t>(i)].z);
      NodeId logits = classify(g, params, cfg, m, false, dead);
      const auto& lv = g.value(logits).data;
      int best = 0;
      for (std::size_t j = 1; j < lv.size(); ++j)
        if (lv[j] > lv[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
      correct += best == batch.labels[static_cast<std::size_t>(i)];
      ++counted;
    }
  }
  return counted > 0 ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
}

// Mean per-sentence validation loss (recon + KL, no L2) in eval mode.
inline double unsup_validation_loss(ParameterStore& params, const ModelConfig& cfg,
                                    const SentenceDataset& ds, int batch_size) {
  Rng dead(0);
  double acc = 0.0;
  for (const auto& idx : batch_indices(ds.size(), batch_size)) {
    Batch batch = ds.make_batch(idx);
    Graph g;
    BatchLoss loss = build_unsup_loss(g, params, cfg, batch, dead, false, false);
    acc += loss.parts.total * batch.size;
  }
  return ds.size() > 0 ? acc / ds.size() : 0.0;
}

// Greedy per-position argmax accuracy of the reconstruction, eval mode.
inline double token_reconstruction_accuracy(ParameterStore& params, const ModelConfig& cfg,
                                            const SentenceDataset& ds, int batch_size) {
  Rng dead(0);
  const Tensor& emb = params.get("embedding");
  const auto norms = embedding_column_norms(emb);
  std::int64_t correct = 0, total = 0;
  for (const auto& idx : batch_indices(ds.size(), batch_size)) {
    Batch batch = ds.make_batch(idx);
    Graph g;
    EncodeOptions opt{false, false};
    EncodeResult enc = encode(g, params, cfg, batch, dead, opt);
    for (int i = 0; i < batch.size; ++i) {
      NodeId z3 = decode(g, params, cfg, enc.codes[static_cast<std::size_t>(i)].z);
      const Tensor& zv = g.value(z3);
      const int n = cfg.score_pad ? cfg.t_max : batch.lengths[static_cast<std::size_t>(i)];
      for (int t = 0; t < n; ++t) {
        correct += argmax_word(zv, t, emb, norms) == batch.row(i)[t];
        ++total;
      }
    }
  }
  return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace dlvm
