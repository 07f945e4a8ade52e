// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dlvm/rng.hpp"
#include "dlvm/tensor.hpp"

namespace dlvm {

// Synthetic corpora: two content vocabularies ("a#" and "b#" words), one per
// style, sharing a pool of function words ("fw#"). Style is recoverable from
// which content words appear, with difficulty tuned by the vocabulary sizes,
// sentence lengths and the function-word ratio.

struct SyntheticVocab {
  int function_words = 20;
  int style_words = 90;  // per style
  int total() const { return function_words + 2 * style_words; }
};

namespace synth_detail {

// Each sentence draws its content from a small per-sentence topic set, so a
// latent code that captures the topic explains most of its tokens. topic_words
// of 0 falls back to drawing uniformly from the whole style vocabulary.
inline std::string sentence(Rng& rng, const SyntheticVocab& v, int style, int len_min, int len_max,
                            double function_ratio, int topic_words) {
  const int len = len_min + static_cast<int>(rng.uniform_int(len_max - len_min + 1));
  std::vector<std::int64_t> topic;
  if (topic_words > 0)
    for (int i = 0; i < topic_words; ++i) topic.push_back(rng.uniform_int(v.style_words));
  std::string out;
  for (int i = 0; i < len; ++i) {
    if (!out.empty()) out += ' ';
    if (rng.uniform() < function_ratio) {
      out += "fw" + std::to_string(rng.uniform_int(v.function_words));
    } else {
      const std::int64_t w = topic.empty()
                                 ? rng.uniform_int(v.style_words)
                                 : topic[static_cast<std::size_t>(rng.uniform_int(
                                       static_cast<std::int64_t>(topic.size())))];
      out += (style == 0 ? "a" : "b") + std::to_string(w);
    }
  }
  return out;
}

inline std::ofstream open_out(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir + "/" + name, std::ios::trunc);
  if (!f) throw IoError("cannot write corpus file '" + dir + "/" + name + "'");
  return f;
}

}  // namespace synth_detail

struct StyleCorpusSpec {
  std::uint64_t seed = 1;
  int train_per_style = 1000;
  int test_per_style = 500;
  SyntheticVocab vocab;  // defaults give 20 + 2*90 = 200 word types
  int len_min = 6, len_max = 12;
  double function_ratio = 0.3;
  int topic_words = 3;
};

// train.tsv / test.tsv, lines "sentence TAB style0|style1", styles interleaved.
inline void write_style_corpus(const StyleCorpusSpec& spec, const std::string& dir) {
  Rng rng(spec.seed);
  auto emit = [&](const std::string& name, int per_style) {
    auto f = synth_detail::open_out(dir, name);
    for (int i = 0; i < per_style; ++i)
      for (int style = 0; style < 2; ++style)
        f << synth_detail::sentence(rng, spec.vocab, style, spec.len_min, spec.len_max,
                                    spec.function_ratio, spec.topic_words)
          << '\t' << (style == 0 ? "style0" : "style1") << "\n";
  };
  emit("train.tsv", spec.train_per_style);
  emit("test.tsv", spec.test_per_style);
}

struct MatchCorpusSpec {
  std::uint64_t seed = 1;
  int train_pairs = 5000;
  int val_pairs = 500;
  int test_pairs = 1000;
  SyntheticVocab vocab = {20, 150};
  int len_min = 5, len_max = 9;
  double function_ratio = 0.25;
  int topic_words = 3;
};

// train.tsv / val.tsv / test.tsv, lines "premise TAB hypothesis TAB same|diff".
// Label "same" when both sentences draw from the same style vocabulary.
inline void write_match_corpus(const MatchCorpusSpec& spec, const std::string& dir) {
  Rng rng(spec.seed);
  auto emit = [&](const std::string& name, int pairs) {
    auto f = synth_detail::open_out(dir, name);
    for (int i = 0; i < pairs; ++i) {
      const int sp = static_cast<int>(rng.uniform_int(2));
      const bool same = rng.uniform_int(2) == 0;
      const int sh = same ? sp : 1 - sp;
      f << synth_detail::sentence(rng, spec.vocab, sp, spec.len_min, spec.len_max,
                                  spec.function_ratio, spec.topic_words)
        << '\t'
        << synth_detail::sentence(rng, spec.vocab, sh, spec.len_min, spec.len_max,
                                  spec.function_ratio, spec.topic_words)
        << '\t' << (same ? "same" : "diff") << "\n";
    }
  };
  emit("train.tsv", spec.train_pairs);
  emit("val.tsv", spec.val_pairs);
  emit("test.tsv", spec.test_pairs);
}

}  // namespace dlvm
