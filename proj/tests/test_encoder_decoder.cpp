// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dlvm/decoder.hpp"
#include "dlvm/encoder.hpp"
#include "dlvm/objectives.hpp"
#include "dlvm/trainer.hpp"

using namespace dlvm;

namespace {

// small valid chain: 15 -> 7 -> 3 -> 1 under window 3, stride 2
ModelConfig tiny_config(TrainingMode mode = TrainingMode::UnsupLvm) {
  ModelConfig cfg;
  cfg.mode = mode;
  cfg.t_max = 15;
  cfg.window = 3;
  cfg.stride = 2;
  cfg.k = {3, 4, 5};
  cfg.m = 3;
  cfg.d_emb = 4;
  cfg.dropout = 0.0;
  cfg.labels = {"same", "diff"};
  cfg.seed = 11;
  return cfg;
}

Batch single_sentence_batch(const ModelConfig& cfg, std::vector<std::int32_t> tokens, int len) {
  Batch b;
  b.size = 1;
  b.t_max = cfg.t_max;
  tokens.resize(static_cast<std::size_t>(cfg.t_max), 0);
  b.tokens = std::move(tokens);
  b.lengths = {len};
  return b;
}

}  // namespace

TEST_CASE("zero weights give zero posterior and z equal to eps") {
  ModelConfig cfg = tiny_config();
  Session s = make_session(cfg, 9, false);
  for (const auto& name : s.params.names())
    for (auto& v : s.params.get(name).data) v = 0.0;

  Batch b = single_sentence_batch(cfg, {2, 3, 4}, 3);
  Rng rng(5);
  Graph g;
  EncodeResult enc = encode(g, s.params, cfg, b, rng, EncodeOptions{true, true});
  for (int j = 0; j < cfg.m; ++j) {
    CHECK(enc.sample.mu.at(0, j) == 0.0);
    CHECK(enc.sample.log_sigma.at(0, j) == 0.0);
    CHECK(enc.sample.z.at(0, j) == enc.sample.eps.at(0, j));
  }
}

TEST_CASE("deterministic eval sets z exactly to mu") {
  ModelConfig cfg = tiny_config();
  Session s = make_session(cfg, 9, false);
  Batch b = single_sentence_batch(cfg, {2, 3, 4, 5}, 4);
  Rng rng(5);
  Graph g;
  EncodeResult enc = encode(g, s.params, cfg, b, rng, EncodeOptions{false, false});
  for (int j = 0; j < cfg.m; ++j) CHECK(enc.sample.z.at(0, j) == enc.sample.mu.at(0, j));
}

TEST_CASE("same seed and batch reproduce z bitwise") {
  ModelConfig cfg = tiny_config();
  Session s = make_session(cfg, 9, false);
  Batch b = single_sentence_batch(cfg, {2, 3}, 2);
  auto run = [&] {
    Rng rng(77);
    Graph g;
    return encode(g, s.params, cfg, b, rng, EncodeOptions{true, true}).sample.z.data;
  };
  CHECK(run() == run());
}

TEST_CASE("encode_pair shares parameters between the two sides") {
  ModelConfig cfg = tiny_config(TrainingMode::SemiLvm);
  Session s = make_session(cfg, 9, true);
  Batch b;
  b.size = 2;
  b.t_max = cfg.t_max;
  std::vector<std::int32_t> s1{2, 3, 4}, s2{5, 6, 7, 8};
  s1.resize(static_cast<std::size_t>(cfg.t_max), 0);
  s2.resize(static_cast<std::size_t>(cfg.t_max), 0);
  // row 0: (s1, s1) identical sentences; row 1: (s1, s2)
  b.tokens.insert(b.tokens.end(), s1.begin(), s1.end());
  b.tokens.insert(b.tokens.end(), s1.begin(), s1.end());
  b.second_tokens.insert(b.second_tokens.end(), s1.begin(), s1.end());
  b.second_tokens.insert(b.second_tokens.end(), s2.begin(), s2.end());
  b.lengths = {3, 3};
  b.second_lengths = {3, 4};
  b.labels = {0, 1};
  b.label_mask = {1, 1};

  Rng rng(5);
  Graph g;
  auto [p, h] = encode_pair(g, s.params, cfg, b, rng, EncodeOptions{false, false});
  for (int j = 0; j < cfg.m; ++j) {
    CHECK(p.sample.mu.at(0, j) == h.sample.mu.at(0, j));           // identical sentences
    CHECK(p.sample.mu.at(1, j) == p.sample.mu.at(0, j));           // same premise
    CHECK(h.sample.mu.at(1, j) != doctest::Approx(p.sample.mu.at(1, j)).epsilon(1e-12));
  }

  // swapping premise and hypothesis swaps the posteriors exactly
  Batch swapped = b;
  std::swap(swapped.tokens, swapped.second_tokens);
  std::swap(swapped.lengths, swapped.second_lengths);
  Rng rng2(5);
  Graph g2;
  auto [p2, h2] = encode_pair(g2, s.params, cfg, swapped, rng2, EncodeOptions{false, false});
  CHECK(p2.sample.mu.data == h.sample.mu.data);
  CHECK(h2.sample.mu.data == p.sample.mu.data);
}

TEST_CASE("pair gradient on a shared filter sums both sentence paths") {
  ModelConfig cfg = tiny_config(TrainingMode::SemiLvm);
  cfg.lambda_l2 = 0.0;
  Session s = make_session(cfg, 9, true);
  Batch b;
  b.size = 1;
  b.t_max = cfg.t_max;
  std::vector<std::int32_t> s1{2, 3, 4, 5}, s2{6, 7, 8};
  s1.resize(static_cast<std::size_t>(cfg.t_max), 0);
  s2.resize(static_cast<std::size_t>(cfg.t_max), 0);
  b.tokens = s1;
  b.second_tokens = s2;
  b.lengths = {4};
  b.second_lengths = {3};
  b.labels = {-1};
  b.label_mask = {0};  // unlabeled: loss = vae(p) + vae(h)

  // loss built on the pair
  Rng rng(5);
  Graph g;
  BatchLoss pair_loss = build_match_loss(g, s.params, cfg, b, rng, false, 0);
  backward(g, pair_loss.total, s.params);
  const auto pair_grad = s.params.get("enc.conv1.w").grad;

  // the same two sentences as separate unsup batches
  auto side_grad = [&](const std::vector<std::int32_t>& toks, int len) {
    Batch sb = single_sentence_batch(cfg, std::vector<std::int32_t>(toks), len);
    Rng r2(5);
    Graph g2;
    BatchLoss l = build_unsup_loss(g2, s.params, cfg, sb, r2, false, false);
    backward(g2, l.total, s.params);
    return s.params.get("enc.conv1.w").grad;
  };
  const auto gp = side_grad(s1, 4);
  const auto gh = side_grad(s2, 3);
  // the pair groups both sentences into one mean, so terms add at weight 1
  for (std::size_t i = 0; i < pair_grad.size(); ++i)
    CHECK(pair_grad[i] == doctest::Approx(gp[i] + gh[i]).epsilon(1e-9));
}

TEST_CASE("decode of zero latent with zero biases is zero") {
  ModelConfig cfg = tiny_config();
  Session s = make_session(cfg, 9, false);
  Graph g;
  NodeId z = g.leaf(Tensor::zeros({cfg.m}));
  NodeId z3 = decode(g, s.params, cfg, z);
  CHECK(g.value(z3).shape == Shape{cfg.d_emb, cfg.t_max});
  for (double v : g.value(z3).data) CHECK(v == 0.0);
}

TEST_CASE("decode restores the configured temporal extent") {
  ModelConfig cfg;  // default 29 -> 13 -> 5 -> 1 chain
  cfg.k = {4, 5, 6};
  cfg.m = 3;
  cfg.d_emb = 4;
  cfg.seed = 2;
  Session s = make_session(cfg, 9, false);
  Rng rng(1);
  Graph g;
  NodeId z3 = decode(g, s.params, cfg, g.leaf(rng.normal_tensor({cfg.m})));
  CHECK(g.value(z3).extent(1) == 29);
}

TEST_CASE("word distribution is symmetric for equidistant columns") {
  Tensor emb({2, 2}, {1, 0, 0, 1});
  Tensor col({2}, {1, 1});
  for (double tau : {1.0, 0.01}) {
    Tensor p = word_distribution(col, emb, tau);
    CHECK(p.at(0) == doctest::Approx(0.5));
    CHECK(p.at(1) == doctest::Approx(0.5));
  }
}

TEST_CASE("word distribution matches hand softmax at tau 1") {
  Tensor emb({2, 2}, {1, 0, 0, 1});
  Tensor col({2}, {1, 0});
  Tensor p = word_distribution(col, emb, 1.0, 0.0);
  CHECK(p.at(0) == doctest::Approx(0.73105857863).epsilon(1e-9));
  CHECK(p.at(1) == doctest::Approx(0.26894142137).epsilon(1e-9));
}

TEST_CASE("word distribution saturates at tau 0.01") {
  Tensor emb({2, 2}, {1, 0, 0, 1});
  Tensor col({2}, {1, 0});
  Tensor p = word_distribution(col, emb, 0.01, 0.0);
  CHECK(p.at(0) >= 1.0 - 1e-40);
  CHECK(p.at(1) < 1e-40);
  CHECK(p.at(1) > 0.0);
}

TEST_CASE("word distribution rejects non-positive temperature") {
  Tensor emb({2, 2}, {1, 0, 0, 1});
  Tensor col({2}, {1, 0});
  CHECK_THROWS_AS(word_distribution(col, emb, 0.0), ConfigError);
  CHECK_THROWS_AS(word_distribution(col, emb, -1.0), ConfigError);
}

TEST_CASE("word distribution rows are valid probabilities") {
  Rng rng(4);
  Tensor emb = rng.normal_tensor({5, 11});
  for (int trial = 0; trial < 20; ++trial) {
    Tensor col = rng.normal_tensor({5});
    Tensor p = word_distribution(col, emb, 0.01);
    double sum = 0.0;
    for (double v : p.data) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("word distribution is invariant to positive column scaling") {
  Rng rng(6);
  Tensor emb = rng.normal_tensor({4, 7});
  Tensor col = rng.normal_tensor({4});
  Tensor scaled = col;
  for (auto& v : scaled.data) v *= 37.5;
  // the strict (eps = 0) cosine is exactly scale invariant
  Tensor p1 = word_distribution(col, emb, 0.05, 0.0);
  Tensor p2 = word_distribution(scaled, emb, 0.05, 0.0);
  for (int s = 0; s < 7; ++s) CHECK(p1.at(s) == doctest::Approx(p2.at(s)).epsilon(1e-12));
}

TEST_CASE("reconstruction log likelihood basics") {
  Rng rng(8);
  Tensor emb = rng.uniform_tensor({3, 6}, -1.0, 1.0);
  Tensor z3 = rng.normal_tensor({3, 5});
  std::int32_t tokens[5] = {2, 4, 1, 3, 5};

  CHECK(reconstruction_log_likelihood(z3, emb, tokens, 0, 0.01) == 0.0);

  // each extra scored position can only lower the total
  double prev = 0.0;
  for (int len = 1; len <= 5; ++len) {
    const double ll = reconstruction_log_likelihood(z3, emb, tokens, len, 0.5);
    CHECK(ll <= prev + 1e-12);
    prev = ll;
  }
}

TEST_CASE("perfect decoder columns score near certainty") {
  Rng rng(9);
  Tensor emb = rng.uniform_tensor({4, 8}, -1.0, 1.0);
  std::int32_t tokens[3] = {2, 5, 7};
  Tensor z3 = Tensor::zeros({4, 3});
  for (int i = 0; i < 3; ++i)
    for (int r = 0; r < 4; ++r) z3.at(r, i) = emb.at(r, tokens[i]);
  const double ll = reconstruction_log_likelihood(z3, emb, tokens, 3, 0.01);
  CHECK(ll / 3.0 > std::log(0.999));
}

TEST_CASE("decoder sees no ground-truth tokens") {
  // decode consumes only z and decoder parameters; changing the batch
  // tokens must not change z3 for a fixed z
  ModelConfig cfg = tiny_config();
  Session s = make_session(cfg, 9, false);
  Rng rng(3);
  Tensor z = rng.normal_tensor({cfg.m});
  Graph g1, g2;
  NodeId a = decode(g1, s.params, cfg, g1.leaf(z));
  NodeId b = decode(g2, s.params, cfg, g2.leaf(z));
  CHECK(g1.value(a).data == g2.value(b).data);
}

TEST_CASE("gradient of reconstruction loss w.r.t. z passes finite differences") {
  ModelConfig cfg = tiny_config();
  cfg.tau = 0.5;
  Session sess = make_session(cfg, 9, false);
  ParameterStore zp;
  Rng rng(21);
  Tensor& z = zp.add("z", rng.normal_tensor({cfg.m}));
  std::vector<int> tokens{2, 4, 3};

  auto forward = [&](bool want_grad) {
    Graph g;
    NodeId z3 = decode(g, sess.params, cfg, g.param(z));
    NodeId loss = g.recon_nll(z3, g.leaf(Tensor(sess.params.get("embedding").shape,
                                                sess.params.get("embedding").data)),
                              std::vector<int>(tokens), cfg.tau);
    if (want_grad) backward(g, loss, zp);
    return g.scalar_value(loss);
  };
  forward(true);
  const auto analytic = z.grad;
  const double h = 1e-5;
  for (int i = 0; i < cfg.m; ++i) {
    const double orig = z.at(i);
    z.at(i) = orig + h;
    const double up = forward(false);
    z.at(i) = orig - h;
    const double down = forward(false);
    z.at(i) = orig;
    const double numeric = (up - down) / (2 * h);
    CHECK(std::abs(numeric - analytic[static_cast<std::size_t>(i)]) /
              std::max({1.0, std::abs(numeric), std::abs(analytic[static_cast<std::size_t>(i)])}) <
          1e-4);
  }
}
