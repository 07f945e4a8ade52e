// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dlvm/evaluation.hpp"
#include "dlvm/gradcheck.hpp"
#include "dlvm/synthetic.hpp"

namespace dlvm {

// Command-line surface. Configuration precedence, lowest to highest:
// built-in defaults, checkpoint metadata (--resume), --preset, --config
// file, explicit flags. Every run writes a manifest of the resolved
// configuration to its output directory; rerunning a command with
// `--config <out-dir>/manifest.txt` reproduces its outputs bitwise.
//
// Exit codes: 0 success, 1 configuration/data error, 2 numeric divergence.

namespace cli_detail {

struct CommonFlags {
  std::string config_path, preset, out_dir, resume, mode;
  std::uint64_t seed = 0;
  double labeled_fraction = 1.0;
  int max_epochs = 0;
  CLI::Option *o_config = nullptr, *o_preset = nullptr, *o_out = nullptr, *o_resume = nullptr,
              *o_mode = nullptr, *o_seed = nullptr, *o_frac = nullptr, *o_epochs = nullptr;

  void add_to(CLI::App* sub, bool with_resume = true) {
    o_config = sub->add_option("--config", config_path, "key = value configuration file");
    o_preset = sub->add_option("--preset", preset, "architecture preset: desk or paper");
    o_seed = sub->add_option("--seed", seed, "master seed");
    o_out = sub->add_option("--out-dir", out_dir, "output directory");
    o_frac = sub->add_option("--labeled-fraction", labeled_fraction,
                             "fraction of training pairs that keep labels");
    o_mode = sub->add_option("--mode", mode, "training mode");
    o_epochs = sub->add_option("--max-epochs", max_epochs, "training epoch budget");
    if (with_resume) o_resume = sub->add_option("--resume", resume, "checkpoint to resume from");
  }

  ModelConfig resolve(const std::string* base_text = nullptr) const {
    ModelConfig cfg;
    if (base_text) apply_config_text(cfg, *base_text, "checkpoint");
    if (o_preset && o_preset->count()) cfg.apply_preset(preset);
    if (o_config && o_config->count()) apply_config_file(cfg, config_path);
    if (o_seed && o_seed->count()) cfg.seed = seed;
    if (o_out && o_out->count()) cfg.out_dir = out_dir;
    if (o_frac && o_frac->count()) cfg.labeled_fraction = labeled_fraction;
    if (o_mode && o_mode->count()) cfg.mode = parse_mode(mode);
    if (o_epochs && o_epochs->count()) cfg.max_epochs = max_epochs;
    return cfg;
  }
};

inline void write_manifest(const ModelConfig& cfg, const std::string& command) {
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream f(cfg.out_dir + "/manifest.txt", std::ios::trunc);
  if (!f) throw IoError("cannot write manifest in '" + cfg.out_dir + "'");
  f << "# command: " << command << "\n";
  f << "# format.checkpoint = " << kCheckpointVersion << "\n";
  f << "# format.manifest = 1\n";
  f << serialize_config(cfg);
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

inline void check_vocab_fit(const Session& s, const Vocabulary& vocab) {
  const int cols = s.params.get("embedding").extent(1);
  if (cols != vocab.size())
    throw ConfigError("checkpoint vocabulary size " + std::to_string(cols) +
                      " does not match corpus vocabulary " + std::to_string(vocab.size()) +
                      " rebuilt from train_path");
}

inline void overlay_pretrained(Session& s, const Vocabulary& vocab, const ModelConfig& cfg) {
  EmbeddingMatrix em;
  em.d_emb = cfg.d_emb;
  em.trainable = cfg.emb_trainable;
  Tensor& p = s.params.get("embedding");
  em.matrix = Tensor(p.shape, p.data);
  const int matched = load_pretrained_embeddings(cfg.embeddings_path, vocab, em);
  p.data = em.matrix.data;
  std::cout << "pretrained embeddings: matched " << matched << " of " << vocab.size() - 2
            << " vocabulary entries\n";
}

inline std::vector<double> parse_fraction_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : detail::split_commas(s))
    out.push_back(detail::parse_double("sweep_fractions", detail::trim(part)));
  return out;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& part : detail::split_commas(s))
    out.push_back(static_cast<std::uint64_t>(detail::parse_int("sweep_seeds", detail::trim(part))));
  return out;
}

inline int run_train_unsup(const CommonFlags& flags) {
  std::optional<Checkpoint> ckpt;
  if (flags.o_resume && flags.o_resume->count()) ckpt = load_checkpoint(flags.resume);
  ModelConfig cfg = flags.resolve(ckpt ? &ckpt->config_text : nullptr);
  cfg.task = "unsup";
  require(cfg.mode == TrainingMode::UnsupLvm || cfg.mode == TrainingMode::DeconvAe,
          "train-unsup supports modes unsup_lvm and deconv_ae");
  require(!cfg.train_path.empty(), "train_path is required (config key train_path)");
  require(!cfg.out_dir.empty(), "--out-dir is required");
  cfg.validate();

  Vocabulary vocab = Vocabulary::build(read_corpus_tokens(cfg.train_path, false), cfg.vocab_size);
  SentenceDataset train = load_sentences(cfg.train_path, vocab, cfg.t_max);
  std::optional<SentenceDataset> val;
  if (!cfg.val_path.empty()) val = load_sentences(cfg.val_path, vocab, cfg.t_max);
  std::cout << "vocab " << vocab.size() << ", train " << train.size() << " sentences, oov rate "
            << detail::format_double(train.oov_rate) << "\n";

  Session s = ckpt ? session_from_checkpoint(*ckpt, false, &cfg)
                   : make_session(cfg, vocab.size(), false);
  check_vocab_fit(s, vocab);
  if (!ckpt && !cfg.embeddings_path.empty()) overlay_pretrained(s, vocab, cfg);
  write_manifest(cfg, "train-unsup");
  TrainReport rep = train_loop(s, train, val ? &*val : nullptr, cfg.out_dir, &std::cout);
  std::cout << "done: " << rep.rows.size() << " epochs, checkpoint " << cfg.out_dir
            << "/last.ckpt\n";
  return 0;
}

inline int run_train_match(const CommonFlags& flags) {
  std::optional<Checkpoint> ckpt;
  if (flags.o_resume && flags.o_resume->count()) ckpt = load_checkpoint(flags.resume);
  ModelConfig cfg = flags.resolve(ckpt ? &ckpt->config_text : nullptr);
  cfg.task = "match";
  require(cfg.mode != TrainingMode::UnsupLvm,
          "train-match supports modes sup_lvm, semi_lvm, deconv_ae and encoder_only");
  require(!cfg.train_path.empty(), "train_path is required (config key train_path)");
  require(!cfg.out_dir.empty(), "--out-dir is required");
  cfg.validate();

  Vocabulary vocab = Vocabulary::build(read_corpus_tokens(cfg.train_path, true), cfg.vocab_size);
  PairDataset train = load_pairs(cfg.train_path, vocab, cfg.t_max, cfg.labels,
                                 cfg.labeled_fraction, cfg.seed);
  std::optional<PairDataset> val;
  if (!cfg.val_path.empty())
    val = load_pairs(cfg.val_path, vocab, cfg.t_max, cfg.labels, 1.0, cfg.seed);
  std::cout << "vocab " << vocab.size() << ", train " << train.size() << " pairs ("
            << train.labeled_count() << " labeled), oov rate "
            << detail::format_double(train.oov_rate) << "\n";

  Session s =
      ckpt ? session_from_checkpoint(*ckpt, true, &cfg) : make_session(cfg, vocab.size(), true);
  check_vocab_fit(s, vocab);
  if (!ckpt && !cfg.embeddings_path.empty()) overlay_pretrained(s, vocab, cfg);
  write_manifest(cfg, "train-match");
  TrainReport rep = train_loop(s, train, val ? &*val : nullptr, cfg.out_dir, &std::cout);
  std::cout << "done: " << rep.rows.size() << " epochs, best val accuracy "
            << detail::format_double(rep.best_metric) << "\n";
  if (!cfg.test_path.empty()) {
    PairDataset test = load_pairs(cfg.test_path, vocab, cfg.t_max, cfg.labels, 1.0, cfg.seed);
    std::cout << "test accuracy "
              << detail::format_double(matching_accuracy(s.params, cfg, test, cfg.batch_size))
              << "\n";
  }
  return 0;
}

// Restores a session for post-hoc commands and rebuilds the vocabulary the
// checkpoint was trained with (deterministic from its recorded train_path).
inline std::pair<Session, Vocabulary> restore(const std::string& ckpt_path,
                                              const CommonFlags& flags) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  ModelConfig cfg = flags.resolve(&ckpt.config_text);
  require(!cfg.train_path.empty(), "checkpoint lacks train_path; cannot rebuild vocabulary");
  Vocabulary vocab =
      Vocabulary::build(read_corpus_tokens(cfg.train_path, cfg.pair_task()), cfg.vocab_size);
  Session s = session_from_checkpoint(ckpt, cfg.pair_task(), &cfg);
  check_vocab_fit(s, vocab);
  return {std::move(s), std::move(vocab)};
}

inline int run_embed(const CommonFlags& flags, const std::string& ckpt_path,
                     const std::string& data_path) {
  auto [s, vocab] = restore(ckpt_path, flags);
  require(!s.cfg.out_dir.empty(), "--out-dir is required");
  SentenceDataset data = load_sentences(data_path, vocab, s.cfg.t_max);
  std::filesystem::create_directories(s.cfg.out_dir);
  write_manifest(s.cfg, "embed");
  export_embeddings_2d(s.params, s.cfg, data, s.cfg.out_dir + "/embeddings.csv");
  std::cout << "wrote " << data.size() << " rows to " << s.cfg.out_dir << "/embeddings.csv\n";
  return 0;
}

inline int run_probe(const CommonFlags& flags, const std::string& ckpt_path,
                     const std::string& train_data, const std::string& test_data, int n_train) {
  auto [s, vocab] = restore(ckpt_path, flags);
  require(!s.cfg.out_dir.empty(), "--out-dir is required");
  SentenceDataset train = load_sentences(train_data, vocab, s.cfg.t_max);
  SentenceDataset test = load_sentences(test_data, vocab, s.cfg.t_max);
  require(!train.tag_names.empty(), "probe training corpus has no class tags");

  std::vector<int> train_y, test_y;
  for (const auto& r : train.rows) train_y.push_back(r.tag);
  for (const auto& r : test.rows) {
    int tag = -1;
    for (std::size_t i = 0; i < train.tag_names.size(); ++i)
      if (train.tag_names[i] == r.tag_text) tag = static_cast<int>(i);
    if (tag < 0) throw DataError("probe test corpus tag '" + r.tag_text + "' unseen in training");
    test_y.push_back(tag);
  }

  Tensor train_x = encode_corpus(s.params, s.cfg, train);
  Tensor test_x = encode_corpus(s.params, s.cfg, test);
  ProbeResult res = linear_probe(train_x, train_y, test_x, test_y, n_train, s.cfg.seed,
                                 static_cast<int>(train.tag_names.size()));

  std::filesystem::create_directories(s.cfg.out_dir);
  write_manifest(s.cfg, "probe");
  std::ofstream f(s.cfg.out_dir + "/probe.csv", std::ios::trunc);
  if (!f) throw IoError("cannot write probe results in '" + s.cfg.out_dir + "'");
  f << "n_train,test_accuracy";
  for (const auto& t : train.tag_names) f << ",acc_" << t;
  f << "\n" << res.train_size << ',' << detail::format_double(res.accuracy);
  for (double a : res.per_class) f << ',' << detail::format_double(a);
  f << "\n";
  std::cout << "probe accuracy " << detail::format_double(res.accuracy) << " (" << n_train
            << " training sentences)\n";
  return 0;
}

inline int run_sweep(const CommonFlags& flags, const std::string& fractions_flag,
                     const std::string& seeds_flag, int threads) {
  ModelConfig cfg = flags.resolve();
  cfg.task = "match";
  if (!fractions_flag.empty()) cfg.sweep_fractions = fractions_flag;
  if (!seeds_flag.empty()) cfg.sweep_seeds = seeds_flag;
  require(!cfg.train_path.empty() && !cfg.val_path.empty() && !cfg.test_path.empty(),
          "sweep requires train_path, val_path and test_path");
  require(!cfg.out_dir.empty(), "--out-dir is required");
  cfg.validate();
  write_manifest(cfg, "sweep");
  auto cells = labeled_fraction_sweep(cfg, cfg.train_path, cfg.val_path, cfg.test_path,
                                      parse_fraction_list(cfg.sweep_fractions),
                                      parse_seed_list(cfg.sweep_seeds), nullptr, threads);
  write_sweep_csv(cells, cfg.out_dir + "/sweep.csv");
  for (const auto& c : cells)
    std::cout << "fraction " << detail::format_double(c.fraction) << " seed " << c.seed << " "
              << to_string(c.mode) << " accuracy " << detail::format_double(c.test_accuracy)
              << "\n";
  return 0;
}

struct GenFlags {
  std::string kind = "style";
  std::uint64_t seed = 1;
  int train_size = -1, val_size = -1, test_size = -1;
  int style_words = -1, function_words = -1;
  int len_min = -1, len_max = -1;
  double function_ratio = -1.0;
  int topic_words = -1;
  std::string out_dir, config_path;
};

inline void apply_gen_kv(GenFlags& g, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "kind") g.kind = value;
  else if (key == "seed") g.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "train_size") g.train_size = static_cast<int>(parse_int(key, value));
  else if (key == "val_size") g.val_size = static_cast<int>(parse_int(key, value));
  else if (key == "test_size") g.test_size = static_cast<int>(parse_int(key, value));
  else if (key == "style_words") g.style_words = static_cast<int>(parse_int(key, value));
  else if (key == "function_words") g.function_words = static_cast<int>(parse_int(key, value));
  else if (key == "len_min") g.len_min = static_cast<int>(parse_int(key, value));
  else if (key == "len_max") g.len_max = static_cast<int>(parse_int(key, value));
  else if (key == "function_ratio") g.function_ratio = parse_double(key, value);
  else if (key == "topic_words") g.topic_words = static_cast<int>(parse_int(key, value));
  else if (key == "out_dir") g.out_dir = value;
  else throw ConfigError("unknown gen-corpus config key '" + key + "'");
}

inline int run_gen_corpus(GenFlags g, const CLI::App* sub) {
  if (!g.config_path.empty()) {
    GenFlags from_file;
    std::ifstream in(g.config_path);
    if (!in) throw ConfigError("cannot open config file '" + g.config_path + "'");
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(g.config_path + ":" + std::to_string(line_no) + ": expected key = value");
      apply_gen_kv(from_file, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    // explicit flags override file values
    if (!sub->get_option("--kind")->count()) g.kind = from_file.kind;
    if (!sub->get_option("--seed")->count()) g.seed = from_file.seed;
    if (!sub->get_option("--train-size")->count()) g.train_size = from_file.train_size;
    if (!sub->get_option("--val-size")->count()) g.val_size = from_file.val_size;
    if (!sub->get_option("--test-size")->count()) g.test_size = from_file.test_size;
    if (!sub->get_option("--style-words")->count()) g.style_words = from_file.style_words;
    if (!sub->get_option("--function-words")->count()) g.function_words = from_file.function_words;
    if (!sub->get_option("--len-min")->count()) g.len_min = from_file.len_min;
    if (!sub->get_option("--len-max")->count()) g.len_max = from_file.len_max;
    if (!sub->get_option("--function-ratio")->count()) g.function_ratio = from_file.function_ratio;
    if (!sub->get_option("--topic-words")->count()) g.topic_words = from_file.topic_words;
    if (!sub->get_option("--out-dir")->count()) g.out_dir = from_file.out_dir;
  }
  require(!g.out_dir.empty(), "--out-dir is required");
  require(g.kind == "style" || g.kind == "match", "gen-corpus kind must be style or match");

  if (g.kind == "style") {
    StyleCorpusSpec spec;
    spec.seed = g.seed;
    if (g.train_size >= 0) spec.train_per_style = g.train_size;
    if (g.test_size >= 0) spec.test_per_style = g.test_size;
    if (g.style_words >= 0) spec.vocab.style_words = g.style_words;
    if (g.function_words >= 0) spec.vocab.function_words = g.function_words;
    if (g.len_min >= 0) spec.len_min = g.len_min;
    if (g.len_max >= 0) spec.len_max = g.len_max;
    if (g.function_ratio >= 0.0) spec.function_ratio = g.function_ratio;
    if (g.topic_words >= 0) spec.topic_words = g.topic_words;
    write_style_corpus(spec, g.out_dir);
    g.topic_words = spec.topic_words;
    g.train_size = spec.train_per_style;
    g.val_size = -1;
    g.test_size = spec.test_per_style;
    g.style_words = spec.vocab.style_words;
    g.function_words = spec.vocab.function_words;
    g.len_min = spec.len_min;
    g.len_max = spec.len_max;
    g.function_ratio = spec.function_ratio;
  } else {
    MatchCorpusSpec spec;
    spec.seed = g.seed;
    if (g.train_size >= 0) spec.train_pairs = g.train_size;
    if (g.val_size >= 0) spec.val_pairs = g.val_size;
    if (g.test_size >= 0) spec.test_pairs = g.test_size;
    if (g.style_words >= 0) spec.vocab.style_words = g.style_words;
    if (g.function_words >= 0) spec.vocab.function_words = g.function_words;
    if (g.len_min >= 0) spec.len_min = g.len_min;
    if (g.len_max >= 0) spec.len_max = g.len_max;
    if (g.function_ratio >= 0.0) spec.function_ratio = g.function_ratio;
    if (g.topic_words >= 0) spec.topic_words = g.topic_words;
    write_match_corpus(spec, g.out_dir);
    g.topic_words = spec.topic_words;
    g.train_size = spec.train_pairs;
    g.val_size = spec.val_pairs;
    g.test_size = spec.test_pairs;
    g.style_words = spec.vocab.style_words;
    g.function_words = spec.vocab.function_words;
    g.len_min = spec.len_min;
    g.len_max = spec.len_max;
    g.function_ratio = spec.function_ratio;
  }

  std::ofstream f(g.out_dir + "/manifest.txt", std::ios::trunc);
  if (!f) throw IoError("cannot write manifest in '" + g.out_dir + "'");
  f << "# command: gen-corpus\n# format.manifest = 1\n";
  f << "kind = " << g.kind << "\nseed = " << g.seed << "\ntrain_size = " << g.train_size
    << "\nval_size = " << g.val_size << "\ntest_size = " << g.test_size
    << "\nstyle_words = " << g.style_words << "\nfunction_words = " << g.function_words
    << "\nlen_min = " << g.len_min << "\nlen_max = " << g.len_max
    << "\nfunction_ratio = " << detail::format_double(g.function_ratio)
    << "\ntopic_words = " << g.topic_words << "\nout_dir = " << g.out_dir << "\n";
  std::cout << "wrote " << g.kind << " corpus to " << g.out_dir << "\n";
  return 0;
}

inline int run_gradcheck_cmd(std::uint64_t seed) {
  auto entries = run_gradcheck(seed);
  double worst = 0.0;
  bool ok = true;
  for (const auto& e : entries) {
    std::cout << (e.passed() ? "  ok   " : "  FAIL ") << e.name << "  max rel err "
              << detail::format_double(e.max_rel_err) << " (threshold "
              << detail::format_double(e.threshold) << ")\n";
    worst = std::max(worst, e.max_rel_err);
    ok = ok && e.passed();
  }
  std::cout << "max relative error " << detail::format_double(worst) << "\n";
  return ok ? 0 : 1;
}

}  // namespace cli_detail

inline int cli_main(int argc, const char* const* argv) {
  using namespace cli_detail;
  CLI::App app{"deconvolutional latent-variable model for text"};
  app.require_subcommand(1);
  int rc = 0;

  auto* tu = app.add_subcommand("train-unsup", "train on a single-sentence corpus");
  auto tu_flags = std::make_shared<CommonFlags>();
  tu_flags->add_to(tu);
  tu->callback([tu_flags, &rc] { rc = run_train_unsup(*tu_flags); });

  auto* tm = app.add_subcommand("train-match", "train on a sentence-pair corpus");
  auto tm_flags = std::make_shared<CommonFlags>();
  tm_flags->add_to(tm);
  tm->callback([tm_flags, &rc] { rc = run_train_match(*tm_flags); });

  auto* em = app.add_subcommand("embed", "export 2-D PCA projections of sentence codes");
  auto em_flags = std::make_shared<CommonFlags>();
  auto em_ckpt = std::make_shared<std::string>();
  auto em_data = std::make_shared<std::string>();
  em_flags->add_to(em, false);
  em->add_option("--checkpoint", *em_ckpt, "trained checkpoint")->required();
  em->add_option("--data", *em_data, "corpus to embed")->required();
  em->callback([em_flags, em_ckpt, em_data, &rc] { rc = run_embed(*em_flags, *em_ckpt, *em_data); });

  auto* pr = app.add_subcommand("probe", "linear probe on frozen sentence codes");
  auto pr_flags = std::make_shared<CommonFlags>();
  auto pr_ckpt = std::make_shared<std::string>();
  auto pr_train = std::make_shared<std::string>();
  auto pr_test = std::make_shared<std::string>();
  auto pr_n = std::make_shared<int>(1000);
  pr_flags->add_to(pr, false);
  pr->add_option("--checkpoint", *pr_ckpt, "trained checkpoint")->required();
  pr->add_option("--train-data", *pr_train, "tagged corpus for probe training")->required();
  pr->add_option("--test-data", *pr_test, "tagged corpus for probe evaluation")->required();
  pr->add_option("--n-train", *pr_n, "probe training sentences");
  pr->callback([pr_flags, pr_ckpt, pr_train, pr_test, pr_n, &rc] {
    rc = run_probe(*pr_flags, *pr_ckpt, *pr_train, *pr_test, *pr_n);
  });

  auto* sw = app.add_subcommand("sweep", "labeled-fraction sweep over training modes");
  auto sw_flags = std::make_shared<CommonFlags>();
  auto sw_fractions = std::make_shared<std::string>();
  auto sw_seeds = std::make_shared<std::string>();
  auto sw_threads = std::make_shared<int>(1);
  sw_flags->add_to(sw, false);
  sw->add_option("--fractions", *sw_fractions, "comma-separated labeled fractions");
  sw->add_option("--sweep-seeds", *sw_seeds, "comma-separated seeds");
  sw->add_option("--threads", *sw_threads, "parallel sweep cells (results are order independent)");
  sw->callback([sw_flags, sw_fractions, sw_seeds, sw_threads, &rc] {
    rc = run_sweep(*sw_flags, *sw_fractions, *sw_seeds, *sw_threads);
  });

  auto* gc = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  auto gen = std::make_shared<GenFlags>();
  gc->add_option("--kind", gen->kind, "style or match");
  gc->add_option("--seed", gen->seed, "generator seed");
  gc->add_option("--train-size", gen->train_size, "train sentences per style, or pairs");
  gc->add_option("--val-size", gen->val_size, "validation pairs (match only)");
  gc->add_option("--test-size", gen->test_size, "test sentences per style, or pairs");
  gc->add_option("--style-words", gen->style_words, "content words per style");
  gc->add_option("--function-words", gen->function_words, "shared function words");
  gc->add_option("--len-min", gen->len_min, "minimum sentence length");
  gc->add_option("--len-max", gen->len_max, "maximum sentence length");
  gc->add_option("--function-ratio", gen->function_ratio, "function-word probability");
  gc->add_option("--topic-words", gen->topic_words,
                 "per-sentence topic vocabulary (0 draws style words uniformly)");
  gc->add_option("--out-dir", gen->out_dir, "output directory");
  gc->add_option("--config", gen->config_path, "gen-corpus manifest to replay");
  gc->callback([gen, gc, &rc] { rc = run_gen_corpus(*gen, gc); });

  auto* gr = app.add_subcommand("gradcheck", "finite-difference check of every operation");
  auto gr_seed = std::make_shared<std::uint64_t>(1);
  gr->add_option("--seed", *gr_seed, "seed for random shapes and values");
  gr->callback([gr_seed, &rc] { rc = run_gradcheck_cmd(*gr_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}

}  // namespace dlvm
