// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dlvm/autodiff.hpp"
#include "dlvm/config.hpp"
#include "dlvm/rng.hpp"
#include "dlvm/text.hpp"

namespace dlvm {

// Inference network q(z|x): embedding lookup -> three strided valid
// convolutions with ReLU -> flatten (final temporal extent is 1) -> affine
// heads for mu and log sigma -> reparameterized z = mu + exp(log sigma) * eps.
//
// log sigma is clamped to [-8, 8] before exponentiation.
//
// RNG draw order per sentence in train mode: embedding dropout mask
// (row-major over [d_emb x T]) first, then eps [M]. Sentences are processed
// in batch order; pairs encode the full premise side before the hypothesis
// side.

inline double glorot_limit(int fan_in, int fan_out) {
  return std::sqrt(6.0 / (fan_in + fan_out));
}

inline Tensor glorot_tensor(Shape s, int fan_in, int fan_out, Rng& rng) {
  const double lim = glorot_limit(fan_in, fan_out);
  return rng.uniform_tensor(std::move(s), -lim, lim);
}

inline void init_encoder_params(ParameterStore& params, const ModelConfig& cfg, Rng& rng) {
  int cin = cfg.d_emb;
  for (int l = 0; l < 3; ++l) {
    const int cout = cfg.k[static_cast<std::size_t>(l)];
    const std::string base = "enc.conv" + std::to_string(l + 1);
    params.add(base + ".w", glorot_tensor({cout, cin, cfg.window}, cin * cfg.window,
                                          cout * cfg.window, rng));
    params.add(base + ".b", Tensor::zeros({cout}));
    cin = cout;
  }
  params.add("enc.mu.w", glorot_tensor({cfg.m, cfg.k[2]}, cfg.k[2], cfg.m, rng));
  params.add("enc.mu.b", Tensor::zeros({cfg.m}));
  if (mode_uses_sampling(cfg.mode)) {
    params.add("enc.logsigma.w", glorot_tensor({cfg.m, cfg.k[2]}, cfg.k[2], cfg.m, rng));
    params.add("enc.logsigma.b", Tensor::zeros({cfg.m}));
  }
}

struct EncodeOptions {
  bool train = false;   // enables dropout and (in sampling modes) eps draws
  bool sample = false;  // z = mu + sigma * eps instead of z = mu
};

struct SentenceCode {
  NodeId mu = -1;
  NodeId log_sigma = -1;  // -1 when the variance head is absent
  NodeId z = -1;
  Tensor eps;  // zeros when not sampled
};

// mu, log_sigma, z, eps snapshots as [B x M] plus the per-sentence graph
// nodes feeding the decoder and matcher.
struct PosteriorSample {
  Tensor mu, log_sigma, z, eps;
};

struct EncodeResult {
  std::vector<SentenceCode> codes;
  PosteriorSample sample;
};

inline Tensor dropout_mask(Shape s, double rate, Rng& rng) {
  Tensor mask = Tensor::zeros(std::move(s));
  const double keep = 1.0 - rate;
  for (auto& v : mask.data) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mask;
}

inline SentenceCode encode_one(Graph& g, ParameterStore& params, const ModelConfig& cfg,
                               const std::int32_t* tokens, Rng& rng, const EncodeOptions& opt) {
  std::vector<int> cols(static_cast<std::size_t>(cfg.t_max));
  for (int i = 0; i < cfg.t_max; ++i) cols[static_cast<std::size_t>(i)] = tokens[i];
  NodeId x = g.lookup_columns(g.param(params.get("embedding")), std::move(cols));
  if (opt.train && cfg.dropout > 0.0)
    x = g.hadamard(x, g.leaf(dropout_mask({cfg.d_emb, cfg.t_max}, cfg.dropout, rng)));
  for (int l = 1; l <= 3; ++l) {
    const std::string base = "enc.conv" + std::to_string(l);
    x = g.conv1d(x, g.param(params.get(base + ".w")), cfg.stride);
    x = g.relu(g.add_channel_bias(x, g.param(params.get(base + ".b"))));
  }
  NodeId flat = g.reshape(x, {cfg.k[2]});

  SentenceCode code;
  code.mu = g.affine(flat, g.param(params.get("enc.mu.w")), g.param(params.get("enc.mu.b")));
  code.eps = Tensor::zeros({cfg.m});
  if (mode_uses_sampling(cfg.mode)) {
    code.log_sigma = g.clamp(
        g.affine(flat, g.param(params.get("enc.logsigma.w")), g.param(params.get("enc.logsigma.b"))),
        -8.0, 8.0);
    if (opt.sample) {
      code.eps = rng.normal_tensor({cfg.m});
      code.z = g.add(code.mu, g.hadamard(g.exp(code.log_sigma), g.leaf(code.eps)));
    } else {
      code.z = code.mu;
    }
  } else {
    code.z = code.mu;
  }
  return code;
}

namespace detail {
inline void fill_sample_row(Tensor& dst, int row, const std::vector<double>& src) {
  for (std::size_t j = 0; j < src.size(); ++j) dst.at(row, static_cast<int>(j)) = src[j];
}
}  // namespace detail

// Encodes one side of a batch; `second` selects the hypothesis sentences.
inline EncodeResult encode(Graph& g, ParameterStore& params, const ModelConfig& cfg,
                           const Batch& batch, Rng& rng, const EncodeOptions& opt,
                           bool second = false) {
  EncodeResult res;
  const int b = batch.size;
  res.sample.mu = Tensor::zeros({b, cfg.m});
  res.sample.log_sigma = Tensor::zeros({b, cfg.m});
  res.sample.z = Tensor::zeros({b, cfg.m});
  res.sample.eps = Tensor::zeros({b, cfg.m});
  for (int i = 0; i < b; ++i) {
    const std::int32_t* tokens = second ? batch.second_row(i) : batch.row(i);
    SentenceCode code = encode_one(g, params, cfg, tokens, rng, opt);
    detail::fill_sample_row(res.sample.mu, i, g.value(code.mu).data);
    if (code.log_sigma >= 0)
      detail::fill_sample_row(res.sample.log_sigma, i, g.value(code.log_sigma).data);
    detail::fill_sample_row(res.sample.z, i, g.value(code.z).data);
    detail::fill_sample_row(res.sample.eps, i, code.eps.data);
    res.codes.push_back(std::move(code));
  }
  return res;
}

// Shared-parameter encoding of both sides of a pair batch. The premise side
// is encoded first; both sides reuse the same parameter leaves, so gradients
// w.r.t. shared filters accumulate across the two sentences.
inline std::pair<EncodeResult, EncodeResult> encode_pair(Graph& g, ParameterStore& params,
                                                         const ModelConfig& cfg,
                                                         const Batch& batch, Rng& rng,
                                                         const EncodeOptions& opt) {
  if (!batch.has_pairs()) throw ContractError("encode_pair: batch carries no second sentences");
  EncodeResult p = encode(g, params, cfg, batch, rng, opt, false);
  EncodeResult h = encode(g, params, cfg, batch, rng, opt, true);
  return {std::move(p), std::move(h)};
}

}  // namespace dlvm
