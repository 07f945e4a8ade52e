// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dlvm/evaluation.hpp"
#include "dlvm/synthetic.hpp"

using namespace dlvm;

namespace {

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) {
    path = (std::filesystem::temp_directory_path() / name).string();
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

// independent top-eigenpair oracle: power iteration with deflation
std::pair<double, std::vector<double>> power_top(std::vector<double> a, int n) {
  std::vector<double> v(static_cast<std::size_t>(n), 1.0 / std::sqrt(n));
  double lambda = 0.0;
  for (int iter = 0; iter < 20000; ++iter) {
    std::vector<double> w(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        w[static_cast<std::size_t>(i)] += a[static_cast<std::size_t>(i) * n + j] * v[static_cast<std::size_t>(j)];
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    for (auto& x : w) x /= norm;
    lambda = norm;
    v = w;
  }
  return {lambda, v};
}

}  // namespace

TEST_CASE("linear probe separates linear blobs perfectly") {
  Rng rng(3);
  const int n = 100, m = 4;
  Tensor train_x = Tensor::zeros({n, m});
  Tensor test_x = Tensor::zeros({n, m});
  std::vector<int> train_y, test_y;
  for (int i = 0; i < n; ++i) {
    const int cls = i % 2;
    for (int j = 0; j < m; ++j) {
      train_x.at(i, j) = rng.normal() * 0.2 + (cls ? 3.0 : -3.0);
      test_x.at(i, j) = rng.normal() * 0.2 + (i % 2 ? 3.0 : -3.0);
    }
    train_y.push_back(cls);
    test_y.push_back(i % 2);
  }
  ProbeResult res = linear_probe(train_x, train_y, test_x, test_y, 40, 7, 2);
  CHECK(res.accuracy == doctest::Approx(1.0));
  CHECK(res.train_size == 40);
  REQUIRE(res.per_class.size() == 2);
  CHECK(res.per_class[0] == doctest::Approx(1.0));
  CHECK(res.per_class[1] == doctest::Approx(1.0));
}

TEST_CASE("probe on shuffled labels sits at chance level") {
  Rng rng(5);
  const int n_train = 400, n_test = 2000, m = 6;
  Tensor train_x = rng.normal_tensor({n_train, m});
  Tensor test_x = rng.normal_tensor({n_test, m});
  std::vector<int> train_y, test_y;
  for (int i = 0; i < n_train; ++i) train_y.push_back(static_cast<int>(rng.uniform_int(2)));
  for (int i = 0; i < n_test; ++i) test_y.push_back(static_cast<int>(rng.uniform_int(2)));
  ProbeResult res = linear_probe(train_x, train_y, test_x, test_y, 400, 7, 2);
  CHECK(res.accuracy > 0.45);
  CHECK(res.accuracy < 0.55);
}

TEST_CASE("single-class probe subsets are rejected") {
  Tensor x = Tensor::zeros({10, 3});
  std::vector<int> y(10, 1);
  CHECK_THROWS_AS(linear_probe(x, y, x, y, 5, 1, 2), DataError);
  CHECK_THROWS_AS(linear_probe(x, y, x, y, 50, 1, 2), DataError);  // n_train > N
}

TEST_CASE("pca top-2 matches an independent eigensolver on a 10x4 matrix") {
  Rng rng(11);
  Tensor x = Tensor::zeros({10, 4});
  for (int i = 0; i < 10; ++i) {
    const double t = rng.normal(), u = rng.normal();
    x.at(i, 0) = 3.0 * t;
    x.at(i, 1) = -2.0 * t + 0.5 * u;
    x.at(i, 2) = u + 0.1 * rng.normal();
    x.at(i, 3) = 0.05 * rng.normal();
  }
  PcaResult pca = pca_top2(x);

  // covariance for the oracle
  const int n = 10, m = 4;
  std::vector<double> mean(4, 0.0), cov(16, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) mean[static_cast<std::size_t>(j)] += x.at(i, j) / n;
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        cov[static_cast<std::size_t>(a) * m + b] +=
            (x.at(i, a) - mean[static_cast<std::size_t>(a)]) *
            (x.at(i, b) - mean[static_cast<std::size_t>(b)]) / n;

  auto [l1, v1] = power_top(cov, m);
  CHECK(pca.variance[0] == doctest::Approx(l1).epsilon(1e-6));
  // component equals the oracle eigenvector up to sign
  double dot = 0.0;
  for (int j = 0; j < m; ++j) dot += pca.components.at(0, j) * v1[static_cast<std::size_t>(j)];
  CHECK(std::abs(dot) == doctest::Approx(1.0).epsilon(1e-6));

  // top-2 projected variance beats 200 random 2-D projections
  const double top2 = pca.variance[0] + pca.variance[1];
  Rng prng(13);
  for (int trial = 0; trial < 200; ++trial) {
    // random orthonormal pair via Gram-Schmidt
    std::vector<double> a(4), b(4);
    for (int j = 0; j < 4; ++j) {
      a[static_cast<std::size_t>(j)] = prng.normal();
      b[static_cast<std::size_t>(j)] = prng.normal();
    }
    double na = 0.0;
    for (double v : a) na += v * v;
    na = std::sqrt(na);
    for (auto& v : a) v /= na;
    double ab = 0.0;
    for (int j = 0; j < 4; ++j) ab += a[static_cast<std::size_t>(j)] * b[static_cast<std::size_t>(j)];
    for (int j = 0; j < 4; ++j) b[static_cast<std::size_t>(j)] -= ab * a[static_cast<std::size_t>(j)];
    double nb = 0.0;
    for (double v : b) nb += v * v;
    nb = std::sqrt(nb);
    for (auto& v : b) v /= nb;
    double var = 0.0;
    for (const auto& dir : {a, b})
      for (int p = 0; p < 4; ++p)
        for (int q = 0; q < 4; ++q)
          var += dir[static_cast<std::size_t>(p)] * cov[static_cast<std::size_t>(p) * 4 + q] *
                 dir[static_cast<std::size_t>(q)];
    CHECK(var <= top2 + 1e-9);
  }
}

TEST_CASE("pca sign convention makes the largest loading positive") {
  Rng rng(17);
  Tensor x = rng.normal_tensor({20, 5});
  PcaResult pca = pca_top2(x);
  for (int c = 0; c < 2; ++c) {
    int lead = 0;
    for (int j = 1; j < 5; ++j)
      if (std::abs(pca.components.at(c, j)) > std::abs(pca.components.at(c, lead))) lead = j;
    CHECK(pca.components.at(c, lead) > 0.0);
  }
}

TEST_CASE("embedding export writes one identical row per identical sentence") {
  TempDir tmp("dlvm_embed_test");
  ModelConfig cfg;
  cfg.t_max = 15;
  cfg.window = 3;
  cfg.stride = 2;
  cfg.k = {3, 4, 5};
  cfg.m = 3;
  cfg.d_emb = 4;
  cfg.seed = 9;
  Session s = make_session(cfg, 9, false);

  SentenceDataset ds;
  ds.t_max = cfg.t_max;
  for (int i = 0; i < 6; ++i) {
    SentenceRow row;
    row.tokens.assign(static_cast<std::size_t>(cfg.t_max), 0);
    row.tokens[0] = 2;
    row.tokens[1] = 3;
    row.length = 2;
    row.tag_text = "only";
    ds.rows.push_back(std::move(row));
  }
  const std::string out = tmp.path + "/emb.csv";
  export_embeddings_2d(s.params, cfg, ds, out);
  std::ifstream f(out);
  std::string header, first, line;
  std::getline(f, header);
  CHECK(header == "id,tag,pc1,pc2");
  std::getline(f, first);
  int rows = 1;
  const std::string first_coords = first.substr(first.find(',', 2));
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    CHECK(line.substr(line.find(',', 2)) == first_coords);
    ++rows;
  }
  CHECK(rows == 6);
}

TEST_CASE("sweep emits one row per fraction seed and mode, reproducibly") {
  TempDir tmp("dlvm_sweep_test");
  MatchCorpusSpec spec;
  spec.seed = 4;
  spec.train_pairs = 12;
  spec.val_pairs = 6;
  spec.test_pairs = 6;
  spec.len_min = 2;
  spec.len_max = 4;
  spec.vocab = {4, 10};
  write_match_corpus(spec, tmp.path);

  ModelConfig cfg;
  cfg.t_max = 15;
  cfg.window = 3;
  cfg.stride = 2;
  cfg.k = {3, 4, 4};
  cfg.m = 3;
  cfg.d_emb = 4;
  cfg.batch_size = 6;
  cfg.max_epochs = 1;
  cfg.labels = {"same", "diff"};
  cfg.task = "match";
  cfg.seed = 2;

  auto run = [&] {
    return labeled_fraction_sweep(cfg, tmp.path + "/train.tsv", tmp.path + "/val.tsv",
                                  tmp.path + "/test.tsv", {0.5, 1.0}, {1, 2});
  };
  auto cells = run();
  CHECK(cells.size() == 2 * 2 * 3);
  int idx = 0;
  for (double fraction : {0.5, 1.0})
    for (int seed = 1; seed <= 2; ++seed)
      for (TrainingMode mode : kSweepModes) {
        CHECK(cells[static_cast<std::size_t>(idx)].fraction == fraction);
        CHECK(cells[static_cast<std::size_t>(idx)].mode == mode);
        ++idx;
      }
  auto again = run();
  for (std::size_t i = 0; i < cells.size(); ++i)
    CHECK(cells[i].test_accuracy == again[i].test_accuracy);

  write_sweep_csv(cells, tmp.path + "/sweep.csv");
  std::ifstream f(tmp.path + "/sweep.csv");
  std::string header;
  std::getline(f, header);
  CHECK(header == "fraction,seed,mode,test_accuracy");
  int rows = 0;
  for (std::string line; std::getline(f, line);) rows += !line.empty();
  CHECK(rows == 12);
}

TEST_CASE("sweep rejects fractions outside the unit interval") {
  ModelConfig cfg;
  cfg.task = "match";
  CHECK_THROWS_AS(labeled_fraction_sweep(cfg, "x", "y", "z", {0.0}, {1}), ConfigError);
  CHECK_THROWS_AS(labeled_fraction_sweep(cfg, "x", "y", "z", {1.5}, {1}), ConfigError);
}

TEST_CASE("style corpus generator is seeded and balanced") {
  TempDir tmp("dlvm_style_test");
  StyleCorpusSpec spec;
  spec.seed = 6;
  spec.train_per_style = 10;
  spec.test_per_style = 5;
  write_style_corpus(spec, tmp.path);
  std::ifstream f(tmp.path + "/train.tsv");
  int s0 = 0, s1 = 0;
  for (std::string line; std::getline(f, line);) {
    const auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    const std::string sent = line.substr(0, tab);
    const bool style0 = line.substr(tab + 1) == "style0";
    (style0 ? s0 : s1)++;
    // content vocabularies are disjoint: no b-words in style0, no a-words in style1
    std::istringstream words(sent);
    for (std::string w; words >> w;) {
      if (w.rfind("fw", 0) == 0) continue;
      CHECK(w[0] == (style0 ? 'a' : 'b'));
    }
  }
  CHECK(s0 == 10);
  CHECK(s1 == 10);

  // same seed, same bytes
  TempDir tmp2("dlvm_style_test2");
  write_style_corpus(spec, tmp2.path);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  };
  CHECK(slurp(tmp.path + "/train.tsv") == slurp(tmp2.path + "/train.tsv"));
  CHECK(slurp(tmp.path + "/test.tsv") == slurp(tmp2.path + "/test.tsv"));
}
