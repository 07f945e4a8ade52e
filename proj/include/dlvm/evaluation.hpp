// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <string>
#include <thread>
#include <vector>

#include "dlvm/trainer.hpp"

namespace dlvm {

// Post-hoc analyses on frozen sentence codes: a linear probe over style
// tags, a deterministic PCA export for 2-D plots, and the labeled-fraction
// sweep comparing ENCODER_ONLY / DECONV_AE / SEMI_LVM.

// mu vectors of every sentence in the dataset, eval mode, [N x M].
inline Tensor encode_corpus(ParameterStore& params, const ModelConfig& cfg,
                            const SentenceDataset& ds, int batch_size = 64) {
  Rng dead(0);
  Tensor out = Tensor::zeros({std::max(ds.size(), 1), cfg.m});
  int row = 0;
  for (const auto& idx : batch_indices(ds.size(), batch_size)) {
    Batch batch = ds.make_batch(idx);
    Graph g;
    EncodeResult enc = encode(g, params, cfg, batch, dead, EncodeOptions{false, false});
    for (int i = 0; i < batch.size; ++i, ++row)
      for (int j = 0; j < cfg.m; ++j) out.at(row, j) = enc.sample.mu.at(i, j);
  }
  return out;
}

struct ProbeResult {
  int train_size = 0;
  double accuracy = 0.0;
  std::vector<double> per_class;
};

// Single affine layer + softmax trained with Adam on frozen embeddings
// (full batch, lr 0.1, 500 iterations, zero init); reports accuracy on the
// held-out test embeddings. The seed only drives the training-subset draw.
inline ProbeResult linear_probe(const Tensor& train_x, const std::vector<int>& train_y,
                                const Tensor& test_x, const std::vector<int>& test_y,
                                int n_train, std::uint64_t seed, int num_classes) {
  const int n_all = train_x.extent(0), m = train_x.extent(1);
  if (n_train > n_all)
    throw DataError("linear_probe: n_train " + std::to_string(n_train) + " exceeds train size " +
                    std::to_string(n_all));
  std::vector<int> order(static_cast<std::size_t>(n_all));
  for (int i = 0; i < n_all; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(static_cast<std::size_t>(n_train));

  std::vector<int> class_seen(static_cast<std::size_t>(num_classes), 0);
  for (int i : order) class_seen[static_cast<std::size_t>(train_y[static_cast<std::size_t>(i)])] = 1;
  int distinct = 0;
  for (int c : class_seen) distinct += c;
  if (distinct < 2) throw DataError("linear_probe: training subset contains a single class");

  ParameterStore ps;
  ps.add("w", Tensor::zeros({num_classes, m}));
  ps.add("b", Tensor::zeros({num_classes}));
  AdamState adam;
  adam.init(ps);

  std::vector<double> probs(static_cast<std::size_t>(num_classes));
  auto logits_for = [&](const Tensor& x, int row) {
    const Tensor& w = ps.get("w");
    const Tensor& b = ps.get("b");
    for (int c = 0; c < num_classes; ++c) {
      double acc = b.at(c);
      for (int j = 0; j < m; ++j) acc += w.at(c, j) * x.at(row, j);
      probs[static_cast<std::size_t>(c)] = acc;
    }
  };
  auto softmax_inplace = [&]() {
    double mx = probs[0];
    for (double v : probs) mx = std::max(mx, v);
    double z = 0.0;
    for (auto& v : probs) z += (v = std::exp(v - mx));
    for (auto& v : probs) v /= z;
  };

  for (int iter = 0; iter < 500; ++iter) {
    ps.zero_grad();
    Tensor& w = ps.get("w");
    Tensor& b = ps.get("b");
    for (int i : order) {
      logits_for(train_x, i);
      softmax_inplace();
      const int y = train_y[static_cast<std::size_t>(i)];
      for (int c = 0; c < num_classes; ++c) {
        const double d = (probs[static_cast<std::size_t>(c)] - (c == y ? 1.0 : 0.0)) / n_train;
        b.grad[static_cast<std::size_t>(c)] += d;
        for (int j = 0; j < m; ++j)
          w.grad[static_cast<std::size_t>(c) * m + j] += d * train_x.at(i, j);
      }
    }
    adam_step(ps, adam, 0.1);
  }

  ProbeResult res;
  res.train_size = n_train;
  std::vector<double> class_total(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<double> class_hit(static_cast<std::size_t>(num_classes), 0.0);
  int hit = 0;
  const int n_test = test_x.extent(0);
  for (int i = 0; i < n_test; ++i) {
    logits_for(test_x, i);
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (probs[static_cast<std::size_t>(c)] > probs[static_cast<std::size_t>(best)]) best = c;
    const int y = test_y[static_cast<std::size_t>(i)];
    class_total[static_cast<std::size_t>(y)] += 1.0;
    if (best == y) {
      ++hit;
      class_hit[static_cast<std::size_t>(y)] += 1.0;
    }
  }
  res.accuracy = n_test > 0 ? static_cast<double>(hit) / n_test : 0.0;
  for (int c = 0; c < num_classes; ++c)
    res.per_class.push_back(class_total[static_cast<std::size_t>(c)] > 0.0
                                ? class_hit[static_cast<std::size_t>(c)] /
                                      class_total[static_cast<std::size_t>(c)]
                                : 0.0);
  return res;
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

// Cyclic Jacobi eigendecomposition of a symmetric matrix; deterministic
// rotation order. Columns of `vecs` are the eigenvectors.
inline void jacobi_symmetric(std::vector<double>& a, int n, std::vector<double>& vecs) {
  vecs.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) vecs[static_cast<std::size_t>(i) * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[static_cast<std::size_t>(p) * n + q] *
                                              a[static_cast<std::size_t>(p) * n + q];
    if (off < 1e-24) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<std::size_t>(p) * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta =
            (a[static_cast<std::size_t>(q) * n + q] - a[static_cast<std::size_t>(p) * n + p]) /
            (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[static_cast<std::size_t>(k) * n + p];
          const double akq = a[static_cast<std::size_t>(k) * n + q];
          a[static_cast<std::size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<std::size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[static_cast<std::size_t>(p) * n + k];
          const double aqk = a[static_cast<std::size_t>(q) * n + k];
          a[static_cast<std::size_t>(p) * n + k] = c * apk - s * aqk;
          a[static_cast<std::size_t>(q) * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = vecs[static_cast<std::size_t>(k) * n + p];
          const double vkq = vecs[static_cast<std::size_t>(k) * n + q];
          vecs[static_cast<std::size_t>(k) * n + p] = c * vkp - s * vkq;
          vecs[static_cast<std::size_t>(k) * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
}

struct PcaResult {
  Tensor coords;                     // [N x 2]
  std::array<double, 2> variance{};  // eigenvalues of the two components
  Tensor components;                 // [2 x M]
};

// Top-2 principal components of the rows of X. Sign convention: the
// largest-|loading| coordinate of each component is made positive (first
// such index on ties), so the projection is fully deterministic.
inline PcaResult pca_top2(const Tensor& x) {
  const int n = x.extent(0), m = x.extent(1);
  std::vector<double> mean(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) mean[static_cast<std::size_t>(j)] += x.at(i, j) / n;
  std::vector<double> cov(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < m; ++a) {
      const double da = x.at(i, a) - mean[static_cast<std::size_t>(a)];
      for (int b = a; b < m; ++b)
        cov[static_cast<std::size_t>(a) * m + b] +=
            da * (x.at(i, b) - mean[static_cast<std::size_t>(b)]) / n;
    }
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < a; ++b)
      cov[static_cast<std::size_t>(a) * m + b] = cov[static_cast<std::size_t>(b) * m + a];

  std::vector<double> vecs;
  jacobi_symmetric(cov, m, vecs);
  std::vector<int> idx(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return cov[static_cast<std::size_t>(a) * m + a] > cov[static_cast<std::size_t>(b) * m + b];
  });

  PcaResult res;
  res.components = Tensor::zeros({2, m});
  for (int c = 0; c < 2 && c < m; ++c) {
    const int e = idx[static_cast<std::size_t>(c)];
    res.variance[static_cast<std::size_t>(c)] = cov[static_cast<std::size_t>(e) * m + e];
    int lead = 0;
    for (int j = 1; j < m; ++j)
      if (std::abs(vecs[static_cast<std::size_t>(j) * m + e]) >
          std::abs(vecs[static_cast<std::size_t>(lead) * m + e]))
        lead = j;
    const double sign = vecs[static_cast<std::size_t>(lead) * m + e] < 0.0 ? -1.0 : 1.0;
    for (int j = 0; j < m; ++j)
      res.components.at(c, j) = sign * vecs[static_cast<std::size_t>(j) * m + e];
  }
  res.coords = Tensor::zeros({n, 2});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (int j = 0; j < m; ++j)
        acc += (x.at(i, j) - mean[static_cast<std::size_t>(j)]) * res.components.at(c, j);
      res.coords.at(i, c) = acc;
    }
  return res;
}

// CSV rows "id,tag,pc1,pc2" for every corpus sentence.
inline void export_embeddings_2d(ParameterStore& params, const ModelConfig& cfg,
                                 const SentenceDataset& ds, const std::string& out_path) {
  Tensor codes = encode_corpus(params, cfg, ds);
  PcaResult pca = pca_top2(codes);
  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw IoError("cannot write embedding export '" + out_path + "'");
  f << "id,tag,pc1,pc2\n";
  for (int i = 0; i < ds.size(); ++i)
    f << i << ',' << ds.rows[static_cast<std::size_t>(i)].tag_text << ','
      << detail::format_double(pca.coords.at(i, 0)) << ','
      << detail::format_double(pca.coords.at(i, 1)) << "\n";
}

// ---------------------------------------------------------------------------
// Labeled-fraction sweep
// ---------------------------------------------------------------------------

struct SweepCell {
  double fraction = 0.0;
  std::uint64_t seed = 0;
  TrainingMode mode = TrainingMode::SemiLvm;
  double test_accuracy = 0.0;
};

inline constexpr TrainingMode kSweepModes[3] = {TrainingMode::EncoderOnly, TrainingMode::DeconvAe,
                                                TrainingMode::SemiLvm};

// Trains one sweep cell from scratch and returns its test accuracy. Every
// cell owns an RNG stream derived from (master seed, cell index), so cells
// are order independent.
inline SweepCell run_sweep_cell(const ModelConfig& base, const Vocabulary& vocab,
                                const std::string& train_path, const std::string& val_path,
                                const std::string& test_path, double fraction,
                                std::uint64_t cell_seed, TrainingMode mode,
                                std::ostream* log = nullptr) {
  ModelConfig cfg = base;
  cfg.mode = mode;
  cfg.labeled_fraction = fraction;
  cfg.seed = cell_seed;
  cfg.out_dir.clear();

  PairDataset train = load_pairs(train_path, vocab, cfg.t_max, cfg.labels, fraction, cell_seed);
  if (mode == TrainingMode::EncoderOnly) {
    // unlabeled pairs carry no loss terms in this mode; drop them up front
    PairDataset only;
    only.t_max = train.t_max;
    only.label_names = train.label_names;
    for (auto& r : train.rows)
      if (r.labeled) only.rows.push_back(std::move(r));
    train = std::move(only);
  }
  PairDataset val = load_pairs(val_path, vocab, cfg.t_max, cfg.labels, 1.0, cell_seed);
  PairDataset test = load_pairs(test_path, vocab, cfg.t_max, cfg.labels, 1.0, cell_seed);

  Session s = make_session(cfg, vocab.size(), true);
  train_loop(s, train, &val, "", log);

  SweepCell cell;
  cell.fraction = fraction;
  cell.seed = cell_seed;
  cell.mode = mode;
  cell.test_accuracy = matching_accuracy(s.params, cfg, test, cfg.batch_size);
  return cell;
}

// Full grid: fractions x seeds x {ENCODER_ONLY, DECONV_AE, SEMI_LVM}, rows
// in that nesting order. Cells are independent; with threads > 1 they run
// in parallel and, because every cell derives its own RNG stream from
// (seed, cell index), the table is identical to a serial run.
inline std::vector<SweepCell> labeled_fraction_sweep(const ModelConfig& base,
                                                     const std::string& train_path,
                                                     const std::string& val_path,
                                                     const std::string& test_path,
                                                     const std::vector<double>& fractions,
                                                     const std::vector<std::uint64_t>& seeds,
                                                     std::ostream* log = nullptr,
                                                     int threads = 1) {
  for (double f : fractions)
    if (f <= 0.0 || f > 1.0)
      throw ConfigError("sweep fraction " + detail::format_double(f) + " outside (0, 1]");
  Vocabulary vocab =
      Vocabulary::build(read_corpus_tokens(train_path, true), base.vocab_size);

  struct CellSpec {
    double fraction;
    std::uint64_t cell_seed;
    TrainingMode mode;
  };
  std::vector<CellSpec> specs;
  std::uint64_t index = 0;
  for (double fraction : fractions)
    for (std::uint64_t seed : seeds)
      for (TrainingMode mode : kSweepModes) {
        specs.push_back({fraction, Rng::derive_seed(seed, index), mode});
        ++index;
      }

  std::vector<SweepCell> cells(specs.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < specs.size(); ++i)
      cells[i] = run_sweep_cell(base, vocab, train_path, val_path, test_path, specs[i].fraction,
                                specs[i].cell_seed, specs[i].mode, log);
    return cells;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < specs.size(); i = next.fetch_add(1))
      cells[i] = run_sweep_cell(base, vocab, train_path, val_path, test_path, specs[i].fraction,
                                specs[i].cell_seed, specs[i].mode, nullptr);
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return cells;
}

inline void write_sweep_csv(const std::vector<SweepCell>& cells, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write sweep results '" + path + "'");
  f << "fraction,seed,mode,test_accuracy\n";
  for (const auto& c : cells)
    f << detail::format_double(c.fraction) << ',' << c.seed << ',' << to_string(c.mode) << ','
      << detail::format_double(c.test_accuracy) << "\n";
}

}  // namespace dlvm
