// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <chrono>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "dlvm/config.hpp"
#include "dlvm/objectives.hpp"

namespace dlvm {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

// Bias-corrected Adam with a constant learning rate, applied in parameter
// store order. A NaN gradient aborts with the parameter's name.
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::string> names;
  std::vector<Tensor> m, v;
  std::vector<std::uint8_t> frozen;

  void init(const ParameterStore& params, const std::vector<std::string>& frozen_names = {}) {
    names = params.names();
    m.clear();
    v.clear();
    frozen.assign(names.size(), 0);
    for (std::size_t i = 0; i < names.size(); ++i) {
      const Tensor& p = params.get(names[i]);
      m.push_back(Tensor::zeros(p.shape));
      v.push_back(Tensor::zeros(p.shape));
      for (const auto& f : frozen_names)
        if (names[i] == f) frozen[i] = 1;
    }
  }
};

inline void adam_step(ParameterStore& params, AdamState& state, double lr) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < state.names.size(); ++i) {
    Tensor& p = params.get(state.names[i]);
    for (double gv : p.grad)
      if (!std::isfinite(gv))
        throw NumericError("non-finite gradient in parameter '" + state.names[i] + "'");
    if (state.frozen[i]) continue;
    auto& mi = state.m[i].data;
    auto& vi = state.v[i].data;
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      const double gv = p.grad[k];
      mi[k] = state.beta1 * mi[k] + (1.0 - state.beta1) * gv;
      vi[k] = state.beta2 * vi[k] + (1.0 - state.beta2) * gv * gv;
      const double mhat = mi[k] / bc1;
      const double vhat = vi[k] / bc2;
      p.data[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
// Binary layout: magic "DLVM", format version u32, metadata length u64 +
// UTF-8 metadata (resolved config plus state.* keys), then per named tensor:
// name length u32, name bytes, rank u32, extents i64 each, data f64 each.
// All integers and floats little-endian. Files are written to a temp path
// and renamed, and a save -> load -> save round trip is byte identical.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::int64_t step = 0;
  int epoch = 0;
  double best_metric = 0.0;
  int patience_left = 0;
  std::int64_t adam_step = 0;
  std::array<std::uint64_t, 4> rng_state{};
  std::vector<std::pair<std::string, Tensor>> tensors;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  bool eof() const { return pos >= buf.size(); }
  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw IoError("truncated checkpoint: expected " + std::string(what) + " at offset " +
                    std::to_string(pos));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline std::string format_hex_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

}  // namespace detail

inline std::string checkpoint_metadata(const Checkpoint& c) {
  std::ostringstream os;
  os << c.config_text;
  os << "state.step = " << c.step << "\n";
  os << "state.epoch = " << c.epoch << "\n";
  os << "state.best_metric = " << detail::format_hex_double(c.best_metric) << "\n";
  os << "state.patience_left = " << c.patience_left << "\n";
  os << "state.adam_step = " << c.adam_step << "\n";
  os << "state.rng = ";
  for (int i = 0; i < 4; ++i) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, c.rng_state[static_cast<std::size_t>(i)]);
    os << (i ? "," : "") << buf;
  }
  os << "\n";
  return os.str();
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::string out;
  out += "DLVM";
  detail::put_u32(out, c.version);
  const std::string meta = checkpoint_metadata(c);
  detail::put_u64(out, meta.size());
  out += meta;
  for (const auto& [name, tensor] : c.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (int e : tensor.shape) detail::put_u64(out, static_cast<std::uint64_t>(e));
    for (double v : tensor.data) detail::put_f64(out, v);
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint '" + tmp + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to checkpoint '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot rename checkpoint into place at '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string raw = buf.str();
  detail::ByteReader r{raw};

  if (r.bytes(4, "magic") != "DLVM") throw IoError("bad checkpoint magic in '" + path + "'");
  Checkpoint c;
  c.version = r.u32("version");
  if (c.version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(c.version));
  const auto meta_len = r.u64("metadata length");
  const std::string meta = r.bytes(static_cast<std::size_t>(meta_len), "metadata");

  std::istringstream ms(meta);
  std::string line;
  std::ostringstream cfg_text;
  while (std::getline(ms, line)) {
    if (line.rfind("state.", 0) != 0) {
      cfg_text << line << "\n";
      continue;
    }
    auto eq = line.find('=');
    const std::string key = line.substr(0, eq == std::string::npos ? line.size() : eq);
    const std::string value =
        eq == std::string::npos ? "" : line.substr(line.find_first_not_of(' ', eq + 1));
    if (key.rfind("state.step", 0) == 0) c.step = std::strtoll(value.c_str(), nullptr, 10);
    else if (key.rfind("state.epoch", 0) == 0) c.epoch = static_cast<int>(std::strtol(value.c_str(), nullptr, 10));
    else if (key.rfind("state.best_metric", 0) == 0) c.best_metric = std::strtod(value.c_str(), nullptr);
    else if (key.rfind("state.patience_left", 0) == 0) c.patience_left = static_cast<int>(std::strtol(value.c_str(), nullptr, 10));
    else if (key.rfind("state.adam_step", 0) == 0) c.adam_step = std::strtoll(value.c_str(), nullptr, 10);
    else if (key.rfind("state.rng", 0) == 0) {
      const char* p = value.c_str();
      for (int i = 0; i < 4; ++i) {
        char* end = nullptr;
        c.rng_state[static_cast<std::size_t>(i)] = std::strtoull(p, &end, 16);
        p = (end && *end == ',') ? end + 1 : end;
      }
    }
  }
  c.config_text = cfg_text.str();

  while (!r.eof()) {
    const auto name_len = r.u32("tensor name length");
    const std::string name = r.bytes(name_len, "tensor name");
    const auto rank = r.u32("tensor rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i)
      shape.push_back(static_cast<int>(r.u64("tensor extent")));
    const auto n = shape_size(shape);
    std::vector<double> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = r.f64("tensor data");
    c.tensors.emplace_back(name, Tensor(std::move(shape), std::move(data)));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Training session and loop
// ---------------------------------------------------------------------------

struct Session {
  ModelConfig cfg;
  ParameterStore params;
  AdamState adam;
  Rng rng{0};
  std::int64_t step = 0;
  int epoch = 0;
  double best_metric = 0.0;
  int patience_left = 0;
  bool pairs = false;
};

// Parameter creation order (and therefore init draw order): embedding,
// encoder convolutions 1..3, mu head, log-sigma head (sampling modes),
// decoder layers 3..1 (all modes with a decoder), matcher (pair tasks).
inline Session make_session(const ModelConfig& cfg, int vocab_size, bool pairs) {
  cfg.validate();
  Session s;
  s.cfg = cfg;
  s.pairs = pairs;
  s.rng = Rng(cfg.seed);
  EmbeddingMatrix emb = random_embedding(cfg.d_emb, vocab_size, s.rng);
  s.params.add("embedding", std::move(emb.matrix));
  init_encoder_params(s.params, cfg, s.rng);
  if (mode_uses_decoder(cfg.mode)) init_decoder_params(s.params, cfg, s.rng);
  if (pairs) init_matcher_params(s.params, cfg, s.rng);
  s.adam.init(s.params, cfg.emb_trainable ? std::vector<std::string>{}
                                          : std::vector<std::string>{"embedding"});
  s.best_metric = pairs ? -std::numeric_limits<double>::infinity()
                        : std::numeric_limits<double>::infinity();
  s.patience_left = cfg.patience;
  return s;
}

inline Checkpoint make_checkpoint(const Session& s) {
  Checkpoint c;
  c.config_text = serialize_config(s.cfg);
  c.step = s.step;
  c.epoch = s.epoch;
  c.best_metric = s.best_metric;
  c.patience_left = s.patience_left;
  c.adam_step = s.adam.step;
  c.rng_state = s.rng.state();
  for (const auto& name : s.params.names()) {
    const Tensor& p = s.params.get(name);
    c.tensors.emplace_back(name, Tensor(p.shape, p.data));
  }
  for (std::size_t i = 0; i < s.adam.names.size(); ++i)
    c.tensors.emplace_back("adam.m." + s.adam.names[i],
                           Tensor(s.adam.m[i].shape, s.adam.m[i].data));
  for (std::size_t i = 0; i < s.adam.names.size(); ++i)
    c.tensors.emplace_back("adam.v." + s.adam.names[i],
                           Tensor(s.adam.v[i].shape, s.adam.v[i].data));
  return c;
}

inline Session session_from_checkpoint(const Checkpoint& c, bool pairs,
                                       const ModelConfig* override_cfg = nullptr) {
  ModelConfig cfg;
  apply_config_text(cfg, c.config_text, "checkpoint");
  if (override_cfg) cfg = *override_cfg;
  int vocab_size = -1;
  for (const auto& [name, t] : c.tensors)
    if (name == "embedding") vocab_size = t.extent(1);
  if (vocab_size <= 0) throw IoError("checkpoint carries no embedding tensor");
  Session s = make_session(cfg, vocab_size, pairs);
  s.step = c.step;
  s.epoch = c.epoch;
  s.best_metric = c.best_metric;
  s.patience_left = c.patience_left;
  s.adam.step = c.adam_step;
  s.rng.set_state(c.rng_state);
  for (const auto& [name, t] : c.tensors) {
    if (name.rfind("adam.m.", 0) == 0) {
      for (std::size_t i = 0; i < s.adam.names.size(); ++i)
        if ("adam.m." + s.adam.names[i] == name) s.adam.m[i].data = t.data;
    } else if (name.rfind("adam.v.", 0) == 0) {
      for (std::size_t i = 0; i < s.adam.names.size(); ++i)
        if ("adam.v." + s.adam.names[i] == name) s.adam.v[i].data = t.data;
    } else {
      if (!s.params.has(name))
        throw IoError("checkpoint tensor '" + name + "' does not fit the configured model");
      Tensor& p = s.params.get(name);
      if (p.shape != t.shape)
        throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape) +
                      ", expected " + shape_str(p.shape));
      p.data = t.data;
    }
  }
  return s;
}

struct EpochRow {
  int epoch = 0;
  std::int64_t step = 0;
  LossBreakdown mean;
  double val_metric = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRow> rows;
  double best_metric = 0.0;
  int best_epoch = -1;
  bool stopped_early = false;
};

namespace detail {

inline std::string csv_num(double v) { return format_double(v); }

inline void append_metrics_row(const std::string& path, const EpochRow& r, bool header) {
  std::ofstream f(path, header ? (std::ios::out | std::ios::trunc) : (std::ios::out | std::ios::app));
  if (!f) throw IoError("cannot write metrics file '" + path + "'");
  if (header) f << "epoch,step,total,recon,kl,match,l2,kl_fraction,val_metric\n";
  f << r.epoch << ',' << r.step << ',' << csv_num(r.mean.total) << ',' << csv_num(r.mean.recon())
    << ',' << csv_num(r.mean.kl()) << ',' << csv_num(r.mean.match) << ',' << csv_num(r.mean.l2)
    << ',' << csv_num(r.mean.kl_fraction()) << ',' << csv_num(r.val_metric) << "\n";
}

}  // namespace detail

// Validation metric per epoch: matching accuracy (higher is better) on pair
// tasks, mean validation loss (lower is better) otherwise. Early stopping
// fires after `patience` consecutive epochs without improvement and only
// when a validation set is present.
template <class Dataset>
TrainReport train_loop(Session& s, const Dataset& train, const Dataset* val,
                       const std::string& out_dir, std::ostream* log = nullptr) {
  TrainReport report;
  const ModelConfig& cfg = s.cfg;
  const int start_epoch = s.epoch;
  const bool to_disk = !out_dir.empty();
  const std::string metrics_path = out_dir + "/metrics.csv";
  const std::string last_path = out_dir + "/last.ckpt";
  const std::string best_path = out_dir + "/best.ckpt";

  std::vector<int> order(static_cast<std::size_t>(train.size()));

  for (int epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    // order is rebuilt from identity so each epoch's permutation is a pure
    // function of the RNG state, which checkpoints restore
    for (int i = 0; i < train.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    s.rng.shuffle(order);
    LossBreakdown sums;
    double weight = 0.0;
    for (int begin = 0; begin < train.size(); begin += cfg.batch_size) {
      std::vector<int> idx(order.begin() + begin,
                           order.begin() + std::min<std::size_t>(
                               static_cast<std::size_t>(train.size()),
                               static_cast<std::size_t>(begin + cfg.batch_size)));
      Batch batch = train.make_batch(idx);
      Graph g;
      BatchLoss loss = build_training_loss(g, s.params, cfg, batch, s.rng, true, s.step);
      if (!std::isfinite(loss.parts.total))
        throw NumericError("training diverged: non-finite loss at step " + std::to_string(s.step));
      backward(g, loss.total, s.params);
      adam_step(s.params, s.adam, cfg.lr);
      ++s.step;
      const double w = batch.size;
      sums.recon_p += loss.parts.recon_p * w;
      sums.recon_h += loss.parts.recon_h * w;
      sums.kl_p += loss.parts.kl_p * w;
      sums.kl_h += loss.parts.kl_h * w;
      sums.match += loss.parts.match * w;
      sums.l2 += loss.parts.l2 * w;
      sums.alpha = loss.parts.alpha;
      sums.total += loss.parts.total * w;
      weight += w;
    }
    s.epoch = epoch + 1;

    EpochRow row;
    row.epoch = s.epoch;
    row.step = s.step;
    row.mean = sums;
    if (weight > 0.0) {
      row.mean.recon_p = sums.recon_p / weight;
      row.mean.recon_h = sums.recon_h / weight;
      row.mean.kl_p = sums.kl_p / weight;
      row.mean.kl_h = sums.kl_h / weight;
      row.mean.match = sums.match / weight;
      row.mean.l2 = sums.l2 / weight;
      row.mean.total = sums.total / weight;
    }

    bool improved = false;
    if (val) {
      if constexpr (std::is_same_v<Dataset, PairDataset>) {
        row.val_metric = matching_accuracy(s.params, cfg, *val, cfg.batch_size);
        improved = row.val_metric > s.best_metric;
      } else {
        row.val_metric = unsup_validation_loss(s.params, cfg, *val, cfg.batch_size);
        improved = row.val_metric < s.best_metric;
      }
      if (improved) {
        s.best_metric = row.val_metric;
        report.best_epoch = s.epoch;
        s.patience_left = cfg.patience;
      } else {
        --s.patience_left;
      }
    }

    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.rows.push_back(row);
    if (to_disk) {
      detail::append_metrics_row(metrics_path, row, epoch == 0);
      save_checkpoint(last_path, make_checkpoint(s));
      if (val && improved) save_checkpoint(best_path, make_checkpoint(s));
    }
    if (log)
      (*log) << "epoch " << row.epoch << " step " << row.step << " total "
             << detail::format_double(row.mean.total) << " recon "
             << detail::format_double(row.mean.recon()) << " kl "
             << detail::format_double(row.mean.kl()) << " kl_frac "
             << detail::format_double(row.mean.kl_fraction()) << " val "
             << detail::format_double(row.val_metric) << " ("
             << detail::format_double(row.wall_seconds) << "s)\n";
    if (val && s.patience_left <= 0) {
      report.stopped_early = true;
      break;
    }
  }

  if (to_disk && s.epoch == start_epoch) save_checkpoint(last_path, make_checkpoint(s));
  report.best_metric = s.best_metric;
  return report;
}

}  // namespace dlvm
