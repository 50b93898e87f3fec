#pragma once

// Multinomial linear probe over frozen embeddings, trained with Adam on mean
// cross-entropy. Also hosts the real+synthetic mixed-batch harness.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "clinalign/common.hpp"
#include "clinalign/datastore.hpp"
#include "clinalign/rng.hpp"

namespace clinalign {

struct ProbeConfig {
  double learning_rate = 1e-3;
  int epochs = 50;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct ProbeModel {
  std::string encoder_id;
  std::vector<std::string> classes;
  Eigen::MatrixXd weights;  // classes x dim
  Eigen::VectorXd bias;     // classes
  ProbeConfig config;

  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t num_classes() const { return classes.size(); }

  std::size_t class_index(std::string_view label) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == label) return i;
    throw Error("probe: unknown label '" + std::string(label) + "'");
  }

  void check_dim(std::size_t d) const {
    if (d != dim())
      throw Error("probe: embedding dim " + std::to_string(d) + " != probe dim " + std::to_string(dim()));
  }

  Eigen::VectorXd logits(std::span<const double> x) const {
    check_dim(x.size());
    return weights * Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())) + bias;
  }

  std::size_t predict(std::span<const double> x) const {
    Eigen::Index best;
    logits(x).maxCoeff(&best);
    return static_cast<std::size_t>(best);
  }
};

inline ProbeModel zero_probe(std::string encoder_id, std::vector<std::string> classes, std::size_t dim) {
  ProbeModel p;
  p.encoder_id = std::move(encoder_id);
  p.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(classes.size()), static_cast<Eigen::Index>(dim));
  p.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(classes.size()));
  p.classes = std::move(classes);
  return p;
}

// Numerically stable log-softmax.
inline Eigen::VectorXd log_softmax(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) { return log_softmax(z).array().exp(); }

// Log-probability of `label` under the probe; always <= 0.
inline double dd_log_likelihood(const ProbeModel& probe, std::span<const double> emb, std::string_view label) {
  const std::size_t y = probe.class_index(label);
  return log_softmax(probe.logits(emb))(static_cast<Eigen::Index>(y));
}

// ---------------------------------------------------------------------------
// Training data

struct LabeledData {
  Eigen::MatrixXd x;            // rows x dim
  std::vector<std::size_t> y;   // class indices

  std::size_t size() const { return y.size(); }
};

// Gathers rows whose metadata matches `split` (all splits when nullopt).
// Labels outside `classes` are rejected.
inline LabeledData gather(const EmbeddingMatrix& m, std::span<const SampleMeta> meta,
                          const std::vector<std::string>& classes, std::optional<Split> split) {
  std::map<std::string, std::size_t> cls;
  for (std::size_t i = 0; i < classes.size(); ++i) cls[classes[i]] = i;
  auto idx = m.index();
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (const auto& s : meta) {
    if (split && s.split != *split) continue;
    auto r = idx.find(s.id);
    if (r == idx.end()) throw LoadError("gather: sample '" + s.id + "' has no embedding row");
    auto c = cls.find(s.label);
    if (c == cls.end()) throw LoadError("gather: sample '" + s.id + "' has label outside the class list");
    picks.emplace_back(r->second, c->second);
  }
  LabeledData d;
  d.x.resize(static_cast<Eigen::Index>(picks.size()), m.dim);
  for (std::size_t i = 0; i < picks.size(); ++i) {
    auto row = m.row(picks[i].first);
    for (std::size_t c = 0; c < m.dim; ++c) d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
    d.y.push_back(picks[i].second);
  }
  return d;
}

inline double mean_cross_entropy(const ProbeModel& p, const LabeledData& d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    Eigen::VectorXd z = p.weights * d.x.row(static_cast<Eigen::Index>(i)).transpose() + p.bias;
    s -= log_softmax(z)(static_cast<Eigen::Index>(d.y[i]));
  }
  return d.size() ? s / static_cast<double>(d.size()) : 0.0;
}

inline double accuracy(const ProbeModel& p, const LabeledData& d) {
  if (d.size() == 0) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    Eigen::Index best;
    (p.weights * d.x.row(static_cast<Eigen::Index>(i)).transpose() + p.bias).maxCoeff(&best);
    ok += static_cast<std::size_t>(best) == d.y[i];
  }
  return static_cast<double>(ok) / static_cast<double>(d.size());
}

// Unweighted mean of per-class F1 over the probe's class list. A class with
// no support and no predictions contributes 0.
inline double macro_f1(const ProbeModel& p, const LabeledData& d) {
  const std::size_t c = p.num_classes();
  std::vector<double> tp(c, 0), fp(c, 0), fn(c, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    Eigen::Index best;
    (p.weights * d.x.row(static_cast<Eigen::Index>(i)).transpose() + p.bias).maxCoeff(&best);
    const auto pred = static_cast<std::size_t>(best);
    if (pred == d.y[i]) {
      tp[pred] += 1;
    } else {
      fp[pred] += 1;
      fn[d.y[i]] += 1;
    }
  }
  double s = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double denom = 2 * tp[k] + fp[k] + fn[k];
    s += denom > 0 ? 2 * tp[k] / denom : 0.0;
  }
  return c ? s / static_cast<double>(c) : 0.0;
}

// ---------------------------------------------------------------------------
// Batch planning

struct BatchComposition {
  std::vector<std::size_t> real_rows;
  std::vector<std::size_t> synthetic_rows;
};

inline std::size_t synthetic_per_batch(double mix, std::size_t batch) {
  return static_cast<std::size_t>(std::llround(mix * static_cast<double>(batch)));
}

// Produces the batches of one training run. Every batch carries exactly
// round(mix * batch) synthetic rows. The stream with the larger per-batch
// share is walked as a seeded permutation; the other is drawn with
// replacement. A real primary stream ends each epoch with a partial batch
// (so mix = 0 reproduces plain minibatch training); a synthetic primary
// stream cycles across epoch boundaries so its share stays exact.
class MixedBatchPlanner {
 public:
  MixedBatchPlanner(std::size_t n_real, std::size_t n_synthetic, std::size_t batch, double mix,
                    std::uint64_t seed)
      : n_real_(n_real), n_syn_(n_synthetic), batch_(batch), rng_(substream_seed(seed, "probe/batches")) {
    if (batch == 0) throw Error("batch size must be positive");
    if (!(mix >= 0.0 && mix <= 1.0)) throw Error("mix fraction must lie in [0, 1]");
    syn_per_ = synthetic_per_batch(mix, batch);
    real_per_ = batch - syn_per_;
    if (syn_per_ > 0 && n_syn_ == 0) throw Error("mix fraction > 0 with an empty synthetic pool");
    if (real_per_ > 0 && n_real_ == 0) throw Error("real rows requested with an empty real pool");
    synthetic_primary_ = syn_per_ > real_per_;
  }

  std::size_t synthetic_per() const { return syn_per_; }
  std::size_t real_per() const { return real_per_; }

  std::vector<BatchComposition> next_epoch() {
    std::vector<BatchComposition> out;
    if (!synthetic_primary_) {
      std::vector<std::size_t> perm(n_real_);
      for (std::size_t i = 0; i < n_real_; ++i) perm[i] = i;
      rng_.shuffle(perm);
      for (std::size_t start = 0; start < n_real_; start += real_per_) {
        BatchComposition b;
        const std::size_t end = std::min(n_real_, start + real_per_);
        b.real_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(start),
                           perm.begin() + static_cast<std::ptrdiff_t>(end));
        for (std::size_t k = 0; k < syn_per_; ++k) b.synthetic_rows.push_back(rng_.below(n_syn_));
        out.push_back(std::move(b));
      }
    } else {
      const std::size_t batches = (n_syn_ + syn_per_ - 1) / syn_per_;
      for (std::size_t i = 0; i < batches; ++i) {
        BatchComposition b;
        for (std::size_t k = 0; k < syn_per_; ++k) b.synthetic_rows.push_back(next_cyclic());
        for (std::size_t k = 0; k < real_per_; ++k) b.real_rows.push_back(rng_.below(n_real_));
        out.push_back(std::move(b));
      }
    }
    return out;
  }

 private:
  std::size_t next_cyclic() {
    if (cursor_ >= cycle_.size()) {
      cycle_.resize(n_syn_);
      for (std::size_t i = 0; i < n_syn_; ++i) cycle_[i] = i;
      rng_.shuffle(cycle_);
      cursor_ = 0;
    }
    return cycle_[cursor_++];
  }

  std::size_t n_real_, n_syn_, batch_;
  std::size_t syn_per_ = 0, real_per_ = 0;
  bool synthetic_primary_ = false;
  Rng rng_;
  std::vector<std::size_t> cycle_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Training

namespace detail {

struct AdamState {
  Eigen::MatrixXd mw, vw;
  Eigen::VectorXd mb, vb;
  long step = 0;
};

inline void train_mixed(ProbeModel& p, const LabeledData& real, const LabeledData* synthetic, double mix,
                        std::vector<BatchComposition>* trace) {
  const auto& cfg = p.config;
  const auto c = static_cast<Eigen::Index>(p.num_classes());
  const auto d = static_cast<Eigen::Index>(p.dim());
  MixedBatchPlanner planner(real.size(), synthetic ? synthetic->size() : 0, cfg.batch_size, mix, cfg.seed);
  AdamState s{Eigen::MatrixXd::Zero(c, d), Eigen::MatrixXd::Zero(c, d), Eigen::VectorXd::Zero(c),
              Eigen::VectorXd::Zero(c)};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (auto& batch : planner.next_epoch()) {
      Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(c, d);
      Eigen::VectorXd gb = Eigen::VectorXd::Zero(c);
      auto accumulate = [&](const LabeledData& src, std::size_t row) {
        const Eigen::VectorXd x = src.x.row(static_cast<Eigen::Index>(row)).transpose();
        Eigen::VectorXd g = softmax(p.weights * x + p.bias);
        g(static_cast<Eigen::Index>(src.y[row])) -= 1.0;
        gw.noalias() += g * x.transpose();
        gb += g;
      };
      for (auto r : batch.real_rows) accumulate(real, r);
      for (auto r : batch.synthetic_rows) accumulate(*synthetic, r);
      const double n = static_cast<double>(batch.real_rows.size() + batch.synthetic_rows.size());
      gw /= n;
      gb /= n;
      ++s.step;
      s.mw = cfg.beta1 * s.mw + (1 - cfg.beta1) * gw;
      s.vw = cfg.beta2 * s.vw + (1 - cfg.beta2) * gw.cwiseProduct(gw);
      s.mb = cfg.beta1 * s.mb + (1 - cfg.beta1) * gb;
      s.vb = cfg.beta2 * s.vb + (1 - cfg.beta2) * gb.cwiseProduct(gb);
      const double c1 = 1 - std::pow(cfg.beta1, static_cast<double>(s.step));
      const double c2 = 1 - std::pow(cfg.beta2, static_cast<double>(s.step));
      p.weights.array() -= cfg.learning_rate * (s.mw.array() / c1) / ((s.vw.array() / c2).sqrt() + cfg.epsilon);
      p.bias.array() -= cfg.learning_rate * (s.mb.array() / c1) / ((s.vb.array() / c2).sqrt() + cfg.epsilon);
      if (trace) trace->push_back(std::move(batch));
    }
  }
}

inline void require_two_classes(const LabeledData& d, std::size_t num_classes) {
  std::vector<bool> present(num_classes, false);
  for (auto y : d.y) present[y] = true;
  if (std::count(present.begin(), present.end(), true) < 2)
    throw Error("degenerate training: fewer than two classes present");
}

}  // namespace detail

// Zero-initialized probe trained on real train rows.
inline ProbeModel train_probe(const LabeledData& train, std::string encoder_id, std::vector<std::string> classes,
                              const ProbeConfig& config = {}) {
  if (classes.size() < 2) throw Error("degenerate training: need at least two classes");
  detail::require_two_classes(train, classes.size());
  ProbeModel p = zero_probe(std::move(encoder_id), std::move(classes), static_cast<std::size_t>(train.x.cols()));
  p.config = config;
  detail::train_mixed(p, train, nullptr, 0.0, nullptr);
  return p;
}

inline ProbeModel train_probe(const EmbeddingMatrix& m, std::span<const SampleMeta> meta,
                              std::vector<std::string> classes, const ProbeConfig& config = {}) {
  return train_probe(gather(m, meta, classes, Split::kTrain), m.encoder_id, std::move(classes), config);
}

struct AugmentResult {
  ProbeModel probe;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<BatchComposition> batches;  // populated when tracing is requested
};

inline AugmentResult train_aug_classifier(const LabeledData& real, const LabeledData& synthetic,
                                          const LabeledData& test, std::vector<std::string> classes,
                                          double mix, std::string encoder_id, const ProbeConfig& config = {},
                                          bool trace_batches = false) {
  if (!(mix >= 0.0 && mix <= 1.0)) throw Error("mix fraction must lie in [0, 1]");
  if (mix > 0.0 && synthetic.size() == 0) throw Error("mix fraction > 0 with an empty synthetic pool");
  for (auto y : synthetic.y)
    if (y >= classes.size()) throw Error("synthetic label outside the class list");
  AugmentResult r;
  r.probe = zero_probe(std::move(encoder_id), std::move(classes), static_cast<std::size_t>(real.x.cols()));
  r.probe.config = config;
  detail::train_mixed(r.probe, real, &synthetic, mix, trace_batches ? &r.batches : nullptr);
  r.accuracy = accuracy(r.probe, test);
  r.macro_f1 = macro_f1(r.probe, test);
  return r;
}

// ---------------------------------------------------------------------------
// Persistence: one JSON header line, then an EMB1 block holding W.

inline std::string encode_probe(const ProbeModel& p) {
  json h;
  h["format"] = "clinalign-probe-1";
  h["encoder_id"] = p.encoder_id;
  h["classes"] = p.classes;
  h["bias"] = std::vector<double>(p.bias.data(), p.bias.data() + p.bias.size());
  h["config"] = {{"learning_rate", p.config.learning_rate}, {"epochs", p.config.epochs},
                 {"batch_size", p.config.batch_size},       {"seed", p.config.seed},
                 {"beta1", p.config.beta1},                 {"beta2", p.config.beta2},
                 {"epsilon", p.config.epsilon}};
  std::vector<float> w;
  for (Eigen::Index r = 0; r < p.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < p.weights.cols(); ++c) w.push_back(static_cast<float>(p.weights(r, c)));
  return h.dump() + "\n" +
         encode_emb1(static_cast<std::uint32_t>(p.weights.rows()), static_cast<std::uint32_t>(p.weights.cols()), w);
}

inline ProbeModel decode_probe(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw LoadError("probe: missing JSON header");
  ProbeModel p;
  try {
    const json h = json::parse(bytes.substr(0, nl));
    if (h.value("format", "") != "clinalign-probe-1") throw LoadError("probe: unknown format tag");
    p.encoder_id = h.at("encoder_id").get<std::string>();
    p.classes = h.at("classes").get<std::vector<std::string>>();
    auto b = h.at("bias").get<std::vector<double>>();
    p.bias = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    const auto& c = h.at("config");
    p.config.learning_rate = c.at("learning_rate");
    p.config.epochs = c.at("epochs");
    p.config.batch_size = c.at("batch_size");
    p.config.seed = c.at("seed");
    p.config.beta1 = c.at("beta1");
    p.config.beta2 = c.at("beta2");
    p.config.epsilon = c.at("epsilon");
  } catch (const json::exception& e) {
    throw LoadError(std::string("probe header: ") + e.what());
  }
  std::uint32_t rows = 0, dim = 0;
  std::vector<float> w;
  decode_emb1(bytes, nl + 1, rows, dim, w);
  if (rows != p.classes.size() || static_cast<Eigen::Index>(rows) != p.bias.size())
    throw LoadError("probe: weight rows do not match class count");
  p.weights.resize(rows, dim);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < dim; ++c) p.weights(r, c) = w[static_cast<std::size_t>(r) * dim + c];
  return p;
}

inline void save_probe(const fs::path& path, const ProbeModel& p) { write_file(path, encode_probe(p)); }
inline ProbeModel load_probe(const fs::path& path) { return decode_probe(read_file(path)); }

}  // namespace clinalign
