// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dlvm/tensor.hpp"

namespace dlvm {

enum class TrainingMode { UnsupLvm, SupLvm, SemiLvm, DeconvAe, EncoderOnly };

inline const char* to_string(TrainingMode m) {
  switch (m) {
    case TrainingMode::UnsupLvm: return "unsup_lvm";
    case TrainingMode::SupLvm: return "sup_lvm";
    case TrainingMode::SemiLvm: return "semi_lvm";
    case TrainingMode::DeconvAe: return "deconv_ae";
    case TrainingMode::EncoderOnly: return "encoder_only";
  }
  return "?";
}

inline TrainingMode parse_mode(const std::string& s) {
  if (s == "unsup_lvm") return TrainingMode::UnsupLvm;
  if (s == "sup_lvm") return TrainingMode::SupLvm;
  if (s == "semi_lvm") return TrainingMode::SemiLvm;
  if (s == "deconv_ae") return TrainingMode::DeconvAe;
  if (s == "encoder_only") return TrainingMode::EncoderOnly;
  throw ConfigError("unknown mode '" + s +
                    "' (expected unsup_lvm, sup_lvm, semi_lvm, deconv_ae or encoder_only)");
}

inline bool mode_uses_sampling(TrainingMode m) {
  return m == TrainingMode::UnsupLvm || m == TrainingMode::SupLvm || m == TrainingMode::SemiLvm;
}
inline bool mode_uses_decoder(TrainingMode m) { return m != TrainingMode::EncoderOnly; }

// All architecture and training hyperparameters. The "desk" preset keeps
// runs on laptop scale; the "paper" preset restores the full-size layer
// widths (K = 300, 600, 500 and M = 500).
struct ModelConfig {
  std::string preset = "desk";
  TrainingMode mode = TrainingMode::UnsupLvm;
  std::uint64_t seed = 1;

  int t_max = 29;
  int window = 5;
  int stride = 2;
  std::array<int, 3> k = {32, 64, 64};
  int m = 16;
  int d_emb = 32;
  double tau = 0.01;

  double dropout = 0.3;
  double lr = 3e-4;
  int batch_size = 32;
  int anneal_steps = 5000;
  double lambda_l2 = 1e-5;
  int max_epochs = 10;
  int patience = 20;
  int vocab_size = 10000;
  double labeled_fraction = 1.0;
  bool score_pad = false;       // score PAD positions in the reconstruction loss
  bool emb_trainable = true;
  int matcher_hidden = 0;       // 0 -> defaults to m

  std::vector<std::string> labels = {"entailment", "contradiction", "neutral"};
  std::string task = "unsup";  // "unsup" (single sentences) or "match" (pairs)
  std::string sweep_fractions = "0.1";
  std::string sweep_seeds = "1,2,3,4,5";
  std::string train_path, val_path, test_path, embeddings_path, out_dir;

  bool pair_task() const { return task == "match"; }
  int num_classes() const { return static_cast<int>(labels.size()); }
  int matcher_width() const { return matcher_hidden > 0 ? matcher_hidden : m; }

  void apply_preset(const std::string& name) {
    preset = name;
    if (name == "desk") {
      k = {32, 64, 64};
      m = 16;
      d_emb = 32;
    } else if (name == "paper") {
      k = {300, 600, 500};
      m = 500;
      d_emb = 300;
      vocab_size = 20000;
    } else {
      throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
    }
  }

  // Temporal extents of the three encoder layers (the decoder mirrors them).
  std::array<int, 4> shape_chain() const {
    std::array<int, 4> len{};
    len[0] = t_max;
    for (int l = 1; l <= 3; ++l) {
      const int prev = len[static_cast<std::size_t>(l - 1)];
      if (prev < window || (prev - window) % stride != 0)
        throw ConfigError("shape chain violated at layer " + std::to_string(l) + ": length " +
                          std::to_string(prev) + " with window " + std::to_string(window) +
                          ", stride " + std::to_string(stride));
      len[static_cast<std::size_t>(l)] = (prev - window) / stride + 1;
    }
    if (len[3] != 1)
      throw ConfigError("shape chain violated at layer 3: final temporal extent " +
                        std::to_string(len[3]) + " != 1");
    return len;
  }

  void validate() const {
    if (tau <= 0.0) throw ConfigError("tau must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (m <= 0 || d_emb <= 0 || k[0] <= 0 || k[1] <= 0 || k[2] <= 0)
      throw ConfigError("layer widths must be positive");
    if (labeled_fraction < 0.0 || labeled_fraction > 1.0)
      throw ConfigError("labeled_fraction must lie in [0, 1]");
    if (labels.size() < 2) throw ConfigError("at least two labels required");
    if (anneal_steps < 0) throw ConfigError("anneal_steps must be nonnegative");
    if (max_epochs < 0) throw ConfigError("max_epochs must be nonnegative");
    if (task != "unsup" && task != "match")
      throw ConfigError("task must be 'unsup' or 'match', got '" + task + "'");
    shape_chain();
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse number '" + s + "'");
  }
}

inline std::int64_t parse_int(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    std::int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse integer '" + s + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + key + "': cannot parse boolean '" + s + "'");
}

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace detail

// Applies one "key = value" assignment. Unknown keys are configuration
// errors so typos surface at startup.
inline void apply_config_kv(ModelConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "preset") cfg.apply_preset(value);
  else if (key == "mode") cfg.mode = parse_mode(value);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "t_max") cfg.t_max = static_cast<int>(parse_int(key, value));
  else if (key == "window") cfg.window = static_cast<int>(parse_int(key, value));
  else if (key == "stride") cfg.stride = static_cast<int>(parse_int(key, value));
  else if (key == "k1") cfg.k[0] = static_cast<int>(parse_int(key, value));
  else if (key == "k2") cfg.k[1] = static_cast<int>(parse_int(key, value));
  else if (key == "k3") cfg.k[2] = static_cast<int>(parse_int(key, value));
  else if (key == "m") cfg.m = static_cast<int>(parse_int(key, value));
  else if (key == "d_emb") cfg.d_emb = static_cast<int>(parse_int(key, value));
  else if (key == "tau") cfg.tau = parse_double(key, value);
  else if (key == "dropout") cfg.dropout = parse_double(key, value);
  else if (key == "lr") cfg.lr = parse_double(key, value);
  else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "anneal_steps") cfg.anneal_steps = static_cast<int>(parse_int(key, value));
  else if (key == "lambda_l2") cfg.lambda_l2 = parse_double(key, value);
  else if (key == "max_epochs") cfg.max_epochs = static_cast<int>(parse_int(key, value));
  else if (key == "patience") cfg.patience = static_cast<int>(parse_int(key, value));
  else if (key == "vocab_size") cfg.vocab_size = static_cast<int>(parse_int(key, value));
  else if (key == "labeled_fraction") cfg.labeled_fraction = parse_double(key, value);
  else if (key == "score_pad") cfg.score_pad = parse_bool(key, value);
  else if (key == "emb_trainable") cfg.emb_trainable = parse_bool(key, value);
  else if (key == "matcher_hidden") cfg.matcher_hidden = static_cast<int>(parse_int(key, value));
  else if (key == "labels") cfg.labels = split_commas(value);
  else if (key == "task") cfg.task = value;
  else if (key == "sweep_fractions") cfg.sweep_fractions = value;
  else if (key == "sweep_seeds") cfg.sweep_seeds = value;
  else if (key == "train_path") cfg.train_path = value;
  else if (key == "val_path") cfg.val_path = value;
  else if (key == "test_path") cfg.test_path = value;
  else if (key == "embeddings_path") cfg.embeddings_path = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

// Plain-text "key = value" file; '#' starts a comment. Keys prefixed
// "state." are checkpoint metadata and are ignored here.
inline void apply_config_text(ModelConfig& cfg, const std::string& text,
                              const std::string& origin) {
  std::istringstream in(text);
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
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.rfind("state.", 0) == 0) continue;
    apply_config_kv(cfg, key, value);
  }
}

inline void apply_config_file(ModelConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  apply_config_text(cfg, buf.str(), path);
}

// Canonical serialization: fixed key order, shortest round-trip number
// formatting. Feeding the result back through apply_config_text
// reconstructs the identical configuration.
inline std::string serialize_config(const ModelConfig& cfg) {
  using detail::format_double;
  std::ostringstream os;
  os << "preset = " << cfg.preset << "\n";
  os << "mode = " << to_string(cfg.mode) << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "t_max = " << cfg.t_max << "\n";
  os << "window = " << cfg.window << "\n";
  os << "stride = " << cfg.stride << "\n";
  os << "k1 = " << cfg.k[0] << "\n";
  os << "k2 = " << cfg.k[1] << "\n";
  os << "k3 = " << cfg.k[2] << "\n";
  os << "m = " << cfg.m << "\n";
  os << "d_emb = " << cfg.d_emb << "\n";
  os << "tau = " << format_double(cfg.tau) << "\n";
  os << "dropout = " << format_double(cfg.dropout) << "\n";
  os << "lr = " << format_double(cfg.lr) << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "anneal_steps = " << cfg.anneal_steps << "\n";
  os << "lambda_l2 = " << format_double(cfg.lambda_l2) << "\n";
  os << "max_epochs = " << cfg.max_epochs << "\n";
  os << "patience = " << cfg.patience << "\n";
  os << "vocab_size = " << cfg.vocab_size << "\n";
  os << "labeled_fraction = " << format_double(cfg.labeled_fraction) << "\n";
  os << "score_pad = " << (cfg.score_pad ? "true" : "false") << "\n";
  os << "emb_trainable = " << (cfg.emb_trainable ? "true" : "false") << "\n";
  os << "matcher_hidden = " << cfg.matcher_hidden << "\n";
  os << "labels = ";
  for (std::size_t i = 0; i < cfg.labels.size(); ++i) os << (i ? "," : "") << cfg.labels[i];
  os << "\n";
  os << "task = " << cfg.task << "\n";
  os << "sweep_fractions = " << cfg.sweep_fractions << "\n";
  os << "sweep_seeds = " << cfg.sweep_seeds << "\n";
  os << "train_path = " << cfg.train_path << "\n";
  os << "val_path = " << cfg.val_path << "\n";
  os << "test_path = " << cfg.test_path << "\n";
  os << "embeddings_path = " << cfg.embeddings_path << "\n";
  os << "out_dir = " << cfg.out_dir << "\n";
  return os.str();
}

}  // namespace dlvm
