// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dlvm/rng.hpp"
#include "dlvm/tensor.hpp"

namespace dlvm {

// Lowercased whitespace split with every ASCII punctuation character
// detached as its own token. Bytes outside ASCII pass through unchanged.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      flush();
    } else if (ch < 128 && std::ispunct(ch)) {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    } else {
      cur.push_back(ch < 128 ? static_cast<char>(std::tolower(ch)) : static_cast<char>(ch));
    }
  }
  flush();
  return out;
}

// Token <-> index map with reserved PAD=0 and UNK=1. Built from a training
// split only: the max_size most frequent tokens survive, ties broken
// lexicographically.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() : tokens_{"<pad>", "<unk>"} {
    index_[tokens_[0]] = kPad;
    index_[tokens_[1]] = kUnk;
  }

  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus, int max_size) {
    std::map<std::string, std::int64_t> counts;  // ordered: lexicographic tie-break for free
    for (const auto& sent : corpus)
      for (const auto& tok : sent) ++counts[tok];
    std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [tok, n] : ranked) {
      if (static_cast<int>(v.tokens_.size()) - 2 >= max_size) break;
      v.index_[tok] = static_cast<int>(v.tokens_.size());
      v.tokens_.push_back(tok);
    }
    return v;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int lookup(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }
  const std::string& token(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Known tokens map to their index, unknown to UNK, right-padded with PAD
// and truncated at t_max.
inline std::pair<std::vector<std::int32_t>, int> encode_pad(const std::vector<std::string>& tokens,
                                                            const Vocabulary& vocab, int t_max) {
  std::vector<std::int32_t> ids(static_cast<std::size_t>(t_max), Vocabulary::kPad);
  const int len = std::min<int>(static_cast<int>(tokens.size()), t_max);
  for (int i = 0; i < len; ++i) ids[static_cast<std::size_t>(i)] = vocab.lookup(tokens[static_cast<std::size_t>(i)]);
  return {std::move(ids), len};
}

// Padded token-index matrices with lengths; optionally a second sentence
// per row (pairs) and per-row labels with a semi-supervised mask.
struct Batch {
  int size = 0;
  int t_max = 0;
  std::vector<std::int32_t> tokens;  // size * t_max, row-major
  std::vector<int> lengths;
  std::vector<std::int32_t> second_tokens;
  std::vector<int> second_lengths;
  std::vector<int> labels;              // -1 where absent
  std::vector<std::uint8_t> label_mask;  // empty for unlabeled corpora

  bool has_pairs() const { return !second_tokens.empty(); }
  const std::int32_t* row(int b) const { return tokens.data() + static_cast<std::size_t>(b) * t_max; }
  const std::int32_t* second_row(int b) const {
    return second_tokens.data() + static_cast<std::size_t>(b) * t_max;
  }
  bool labeled(int b) const {
    return !label_mask.empty() && label_mask[static_cast<std::size_t>(b)] != 0;
  }
};

struct SentenceRow {
  std::vector<std::int32_t> tokens;
  int length = 0;
  int tag = -1;  // optional class tag
  std::string tag_text;
};

struct SentenceDataset {
  int t_max = 0;
  std::vector<SentenceRow> rows;
  std::vector<std::string> tag_names;
  double oov_rate = 0.0;

  int size() const { return static_cast<int>(rows.size()); }

  Batch make_batch(const std::vector<int>& indices) const {
    Batch b;
    b.size = static_cast<int>(indices.size());
    b.t_max = t_max;
    b.tokens.reserve(static_cast<std::size_t>(b.size) * t_max);
    for (int idx : indices) {
      const auto& r = rows[static_cast<std::size_t>(idx)];
      b.tokens.insert(b.tokens.end(), r.tokens.begin(), r.tokens.end());
      b.lengths.push_back(r.length);
    }
    return b;
  }
};

struct PairRow {
  std::vector<std::int32_t> p_tokens, h_tokens;
  int p_length = 0, h_length = 0;
  int label = -1;
  bool labeled = false;
};

struct PairDataset {
  int t_max = 0;
  std::vector<PairRow> rows;
  std::vector<std::string> label_names;
  double oov_rate = 0.0;

  int size() const { return static_cast<int>(rows.size()); }
  int labeled_count() const {
    int n = 0;
    for (const auto& r : rows) n += r.labeled ? 1 : 0;
    return n;
  }

  Batch make_batch(const std::vector<int>& indices) const {
    Batch b;
    b.size = static_cast<int>(indices.size());
    b.t_max = t_max;
    for (int idx : indices) {
      const auto& r = rows[static_cast<std::size_t>(idx)];
      b.tokens.insert(b.tokens.end(), r.p_tokens.begin(), r.p_tokens.end());
      b.lengths.push_back(r.p_length);
      b.second_tokens.insert(b.second_tokens.end(), r.h_tokens.begin(), r.h_tokens.end());
      b.second_lengths.push_back(r.h_length);
      b.labels.push_back(r.label);
      b.label_mask.push_back(r.labeled ? 1 : 0);
    }
    return b;
  }
};

inline std::vector<std::vector<int>> batch_indices(int n, int batch_size) {
  std::vector<std::vector<int>> out;
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    out.push_back(std::move(idx));
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!cols.empty() && !cols.back().empty() && cols.back().back() == '\r') cols.back().pop_back();
  return cols;
}

struct OovCounter {
  std::int64_t total = 0, unk = 0;
  void count(const std::vector<std::int32_t>& ids, int len) {
    total += len;
    for (int i = 0; i < len; ++i) unk += ids[static_cast<std::size_t>(i)] == Vocabulary::kUnk;
  }
  double rate() const { return total == 0 ? 0.0 : static_cast<double>(unk) / static_cast<double>(total); }
};

}  // namespace detail

// Reads raw token lists from a TSV corpus, one sentence (pair) per line.
// Used to build the vocabulary from the training split.
inline std::vector<std::vector<std::string>> read_corpus_tokens(const std::string& path,
                                                                bool pairs) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file '" + path + "'");
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cols = detail::split_tabs(line);
    out.push_back(tokenize(cols[0]));
    if (pairs && cols.size() > 1) out.push_back(tokenize(cols[1]));
  }
  return out;
}

// One sentence per line, optional TAB-separated style/class tag.
inline SentenceDataset load_sentences(const std::string& path, const Vocabulary& vocab,
                                      int t_max) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  SentenceDataset ds;
  ds.t_max = t_max;
  detail::OovCounter oov;
  std::string line;
  int line_no = 0;
  std::unordered_map<std::string, int> tag_index;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cols = detail::split_tabs(line);
    SentenceRow row;
    auto [ids, len] = encode_pad(tokenize(cols[0]), vocab, t_max);
    row.tokens = std::move(ids);
    row.length = len;
    if (cols.size() > 1 && !cols[1].empty()) {
      row.tag_text = cols[1];
      auto [it, inserted] = tag_index.emplace(cols[1], static_cast<int>(ds.tag_names.size()));
      if (inserted) ds.tag_names.push_back(cols[1]);
      row.tag = it->second;
    }
    oov.count(row.tokens, row.length);
    ds.rows.push_back(std::move(row));
  }
  ds.oov_rate = oov.rate();
  return ds;
}

// TSV rows "sentence1 TAB sentence2 TAB label". A seeded subset of
// ceil(labeled_fraction * N) rows keeps its labels; the rest are masked out.
inline PairDataset load_pairs(const std::string& path, const Vocabulary& vocab, int t_max,
                              const std::vector<std::string>& label_names,
                              double labeled_fraction, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  std::unordered_map<std::string, int> label_index;
  for (std::size_t i = 0; i < label_names.size(); ++i)
    label_index[label_names[i]] = static_cast<int>(i);
  PairDataset ds;
  ds.t_max = t_max;
  ds.label_names = label_names;
  detail::OovCounter oov;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cols = detail::split_tabs(line);
    if (cols.size() != 3)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected 3 tab-separated columns, got " +
                      std::to_string(cols.size()));
    auto it = label_index.find(cols[2]);
    if (it == label_index.end()) {
      std::string allowed;
      for (const auto& l : label_names) allowed += (allowed.empty() ? "" : ", ") + l;
      throw DataError(path + ":" + std::to_string(line_no) + ": unknown label '" + cols[2] +
                      "' (allowed: " + allowed + ")");
    }
    PairRow row;
    auto [p_ids, p_len] = encode_pad(tokenize(cols[0]), vocab, t_max);
    auto [h_ids, h_len] = encode_pad(tokenize(cols[1]), vocab, t_max);
    row.p_tokens = std::move(p_ids);
    row.p_length = p_len;
    row.h_tokens = std::move(h_ids);
    row.h_length = h_len;
    row.label = it->second;
    oov.count(row.p_tokens, row.p_length);
    oov.count(row.h_tokens, row.h_length);
    ds.rows.push_back(std::move(row));
  }
  ds.oov_rate = oov.rate();

  const int n = ds.size();
  const int keep = static_cast<int>(std::ceil(labeled_fraction * n));
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);
  for (int i = 0; i < keep && i < n; ++i) ds.rows[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].labeled = true;
  return ds;
}

// Word-embedding matrix [d_emb x |V|]; column PAD is zero-initialized.
struct EmbeddingMatrix {
  Tensor matrix;
  int d_emb = 0;
  bool trainable = true;
};

inline EmbeddingMatrix random_embedding(int d_emb, int vocab_size, Rng& rng) {
  EmbeddingMatrix e;
  e.d_emb = d_emb;
  e.matrix = rng.uniform_tensor({d_emb, vocab_size}, -0.1, 0.1);
  for (int r = 0; r < d_emb; ++r) e.matrix.at(r, Vocabulary::kPad) = 0.0;
  return e;
}

// Overlays vectors from a "token v1 v2 ... vd" text file onto a random
// initialization. Returns the number of vocabulary tokens matched.
inline int load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab,
                                      EmbeddingMatrix& emb) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file '" + path + "'");
  std::string line;
  int line_no = 0, matched = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string tok;
    is >> tok;
    std::vector<double> vec;
    double v;
    while (is >> v) vec.push_back(v);
    if (static_cast<int>(vec.size()) != emb.d_emb)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(emb.d_emb) + " values, got " + std::to_string(vec.size()));
    const int idx = vocab.lookup(tok);
    if (idx == Vocabulary::kUnk || idx == Vocabulary::kPad) continue;
    for (int r = 0; r < emb.d_emb; ++r) emb.matrix.at(r, idx) = vec[static_cast<std::size_t>(r)];
    ++matched;
  }
  return matched;
}

}  // namespace dlvm
