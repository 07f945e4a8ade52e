// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dlvm/text.hpp"

using namespace dlvm;

namespace {

struct TempDir {
  std::string path;
  TempDir() {
    path = (std::filesystem::temp_directory_path() / "dlvm_text_test").string();
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    const std::string p = path + "/" + name;
    std::ofstream f(p, std::ios::trunc);
    f << content;
    return p;
  }
};

}  // namespace

TEST_CASE("tokenize lowers case and detaches punctuation") {
  CHECK(tokenize("A man sleeps.") == std::vector<std::string>{"a", "man", "sleeps", "."});
  CHECK(tokenize("").empty());
  CHECK(tokenize("don't stop") == std::vector<std::string>{"don", "'", "t", "stop"});
  CHECK(tokenize("  spaced\tout  ") == std::vector<std::string>{"spaced", "out"});
}

TEST_CASE("vocabulary keeps most frequent tokens with lexicographic ties") {
  std::vector<std::vector<std::string>> corpus{{"b", "b", "a", "a", "c", "d", "d"}};
  Vocabulary v = Vocabulary::build(corpus, 3);
  // a, b, d all occur twice; ties resolve lexicographically, c is cut
  CHECK(v.size() == 5);
  CHECK(v.lookup("a") == 2);
  CHECK(v.lookup("b") == 3);
  CHECK(v.lookup("d") == 4);
  CHECK(v.lookup("c") == Vocabulary::kUnk);
  CHECK(v.token(0) == "<pad>");
  CHECK(v.token(1) == "<unk>");
}

TEST_CASE("vocabulary construction is deterministic") {
  std::vector<std::vector<std::string>> corpus{{"x", "y"}, {"y", "z", "x", "x"}};
  Vocabulary a = Vocabulary::build(corpus, 10);
  Vocabulary b = Vocabulary::build(corpus, 10);
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) CHECK(a.token(i) == b.token(i));
}

TEST_CASE("encode_pad maps, pads and truncates") {
  std::vector<std::vector<std::string>> corpus{{"a", "a", "b"}};
  Vocabulary v = Vocabulary::build(corpus, 10);
  REQUIRE(v.lookup("a") == 2);
  REQUIRE(v.lookup("b") == 3);

  auto [ids, len] = encode_pad({"a", "b", "a"}, v, 5);
  CHECK(ids == std::vector<std::int32_t>{2, 3, 2, 0, 0});
  CHECK(len == 3);

  auto [empty_ids, empty_len] = encode_pad({}, v, 4);
  CHECK(empty_ids == std::vector<std::int32_t>{0, 0, 0, 0});
  CHECK(empty_len == 0);

  std::vector<std::string> forty(40, "a");
  auto [long_ids, long_len] = encode_pad(forty, v, 29);
  CHECK(long_len == 29);
  CHECK(static_cast<int>(long_ids.size()) == 29);
  for (auto id : long_ids) CHECK(id == 2);

  auto [unk_ids, unk_len] = encode_pad({"zzz"}, v, 2);
  CHECK(unk_ids[0] == Vocabulary::kUnk);
  CHECK(unk_len == 1);
}

TEST_CASE("encode then decode is identity for in-vocabulary lists") {
  std::vector<std::vector<std::string>> corpus{{"red", "green", "blue", "cyan"}};
  Vocabulary v = Vocabulary::build(corpus, 10);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> words;
    const int n = 1 + static_cast<int>(rng.uniform_int(4));
    for (int i = 0; i < n; ++i)
      words.push_back(corpus[0][static_cast<std::size_t>(rng.uniform_int(4))]);
    auto [ids, len] = encode_pad(words, v, 8);
    REQUIRE(len == n);
    for (int i = 0; i < n; ++i)
      CHECK(v.token(ids[static_cast<std::size_t>(i)]) == words[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("load_pairs labels every row at fraction 1 and none at 0") {
  TempDir tmp;
  std::string p = tmp.file("pairs.tsv",
                           "a b\tc d\tsame\n"
                           "c a\tb b\tdiff\n"
                           "b\ta c\tsame\n");
  std::vector<std::vector<std::string>> corpus{{"a", "b", "c", "d"}};
  Vocabulary v = Vocabulary::build(corpus, 10);

  PairDataset all = load_pairs(p, v, 6, {"same", "diff"}, 1.0, 9);
  CHECK(all.size() == 3);
  CHECK(all.labeled_count() == 3);
  CHECK(all.rows[0].label == 0);
  CHECK(all.rows[1].label == 1);

  PairDataset none = load_pairs(p, v, 6, {"same", "diff"}, 0.0, 9);
  CHECK(none.labeled_count() == 0);
}

TEST_CASE("labeled subset is seeded and stable") {
  TempDir tmp;
  std::string content;
  for (int i = 0; i < 100; ++i) content += "a b\tc d\tsame\n";
  std::string p = tmp.file("many.tsv", content);
  std::vector<std::vector<std::string>> corpus{{"a", "b", "c", "d"}};
  Vocabulary v = Vocabulary::build(corpus, 10);

  auto labeled_rows = [&](std::uint64_t seed) {
    PairDataset ds = load_pairs(p, v, 6, {"same", "diff"}, 0.1, seed);
    std::vector<int> rows;
    for (int i = 0; i < ds.size(); ++i)
      if (ds.rows[static_cast<std::size_t>(i)].labeled) rows.push_back(i);
    return rows;
  };
  auto first = labeled_rows(42);
  CHECK(first.size() == 10);  // ceil(0.1 * 100)
  CHECK(labeled_rows(42) == first);
  CHECK(labeled_rows(43) != first);
}

TEST_CASE("malformed pair rows report the line number") {
  TempDir tmp;
  std::string p = tmp.file("bad.tsv", "a\tb\tsame\nonly one column\n");
  Vocabulary v = Vocabulary::build({{"a", "b"}}, 10);
  CHECK_THROWS_WITH_AS(load_pairs(p, v, 4, {"same", "diff"}, 1.0, 1), doctest::Contains(":2:"),
                       DataError);
}

TEST_CASE("unknown labels list the allowed set") {
  TempDir tmp;
  std::string p = tmp.file("lab.tsv", "a\tb\tmaybe\n");
  Vocabulary v = Vocabulary::build({{"a", "b"}}, 10);
  CHECK_THROWS_WITH_AS(load_pairs(p, v, 4, {"same", "diff"}, 1.0, 1),
                       doctest::Contains("allowed: same, diff"), DataError);
}

TEST_CASE("sentence loader reads optional tags and reports oov") {
  TempDir tmp;
  std::string p = tmp.file("sents.tsv", "a b zzz\tstyle0\nb a\tstyle1\nc\n");
  Vocabulary v = Vocabulary::build({{"a", "b", "c"}}, 10);
  SentenceDataset ds = load_sentences(p, v, 5);
  CHECK(ds.size() == 3);
  CHECK(ds.tag_names == std::vector<std::string>{"style0", "style1"});
  CHECK(ds.rows[0].tag == 0);
  CHECK(ds.rows[1].tag == 1);
  CHECK(ds.rows[2].tag == -1);
  CHECK(ds.oov_rate == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("random embedding zeroes the PAD column") {
  Rng rng(5);
  EmbeddingMatrix em = random_embedding(4, 7, rng);
  for (int r = 0; r < 4; ++r) CHECK(em.matrix.at(r, Vocabulary::kPad) == 0.0);
  bool any_nonzero = false;
  for (int r = 0; r < 4; ++r) any_nonzero = any_nonzero || em.matrix.at(r, 2) != 0.0;
  CHECK(any_nonzero);
  for (double vv : em.matrix.data) {
    CHECK(vv <= 0.1);
    CHECK(vv >= -0.1);
  }
}

TEST_CASE("pretrained embeddings overlay matching tokens only") {
  TempDir tmp;
  Vocabulary v = Vocabulary::build({{"cat", "dog"}}, 10);
  Rng rng(5);

  SUBCASE("empty file leaves the random init, matched 0") {
    std::string p = tmp.file("empty.vec", "");
    EmbeddingMatrix em = random_embedding(2, v.size(), rng);
    const auto before = em.matrix.data;
    CHECK(load_pretrained_embeddings(p, v, em) == 0);
    CHECK(em.matrix.data == before);
  }
  SUBCASE("file covering the vocabulary matches |V| - 2") {
    std::string p = tmp.file("full.vec", "cat 1 2\ndog 3 4\nextra 5 6\n");
    EmbeddingMatrix em = random_embedding(2, v.size(), rng);
    CHECK(load_pretrained_embeddings(p, v, em) == v.size() - 2);
    CHECK(em.matrix.at(0, v.lookup("cat")) == 1.0);
    CHECK(em.matrix.at(1, v.lookup("dog")) == 4.0);
    for (int r = 0; r < 2; ++r) CHECK(em.matrix.at(r, Vocabulary::kPad) == 0.0);
  }
  SUBCASE("single known word copies its column") {
    std::string p = tmp.file("one.vec", "cat 0.1 0.2\n");
    EmbeddingMatrix em = random_embedding(2, v.size(), rng);
    CHECK(load_pretrained_embeddings(p, v, em) == 1);
    CHECK(em.matrix.at(0, v.lookup("cat")) == doctest::Approx(0.1));
    CHECK(em.matrix.at(1, v.lookup("cat")) == doctest::Approx(0.2));
  }
  SUBCASE("dimension mismatch reports the line number") {
    std::string p = tmp.file("bad.vec", "cat 1 2\ndog 3\n");
    EmbeddingMatrix em = random_embedding(2, v.size(), rng);
    CHECK_THROWS_WITH_AS(load_pretrained_embeddings(p, v, em), doctest::Contains(":2:"),
                         DataError);
  }
}

TEST_CASE("batches carry pairs, labels and masks") {
  TempDir tmp;
  std::string p = tmp.file("pairs.tsv", "a b\tb\tsame\nb\ta a\tdiff\n");
  Vocabulary v = Vocabulary::build({{"a", "b"}}, 10);
  PairDataset ds = load_pairs(p, v, 4, {"same", "diff"}, 1.0, 1);
  Batch b = ds.make_batch({1, 0});
  CHECK(b.size == 2);
  CHECK(b.has_pairs());
  CHECK(b.row(0)[0] == v.lookup("b"));
  CHECK(b.second_row(0)[0] == v.lookup("a"));
  CHECK(b.labels == std::vector<int>{1, 0});
  CHECK(b.labeled(0));
  CHECK(b.lengths == std::vector<int>{1, 2});
}
