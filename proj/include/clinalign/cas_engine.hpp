#pragma once

// Clinical Alignment Score primitives (VDC, CCS, DD, SFS) and their
// macro-average, evaluated in a metric-evaluator embedding space that must
// differ from the training critic's.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clinalign/common.hpp"
#include "clinalign/datastore.hpp"
#include "clinalign/parallel.hpp"
#include "clinalign/probe.hpp"

namespace clinalign {

// ---------------------------------------------------------------------------
// Model roles

enum class Role { kTrainingCritic, kMetricEvaluator, kOutOfFamilyEvaluator };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::kTrainingCritic: return "training-critic";
    case Role::kMetricEvaluator: return "metric-evaluator";
    case Role::kOutOfFamilyEvaluator: return "out-of-family-evaluator";
  }
  return "?";
}

inline Role parse_role(std::string_view s) {
  if (s == "training-critic") return Role::kTrainingCritic;
  if (s == "metric-evaluator") return Role::kMetricEvaluator;
  if (s == "out-of-family-evaluator") return Role::kOutOfFamilyEvaluator;
  throw BindingError("unknown evaluator role '" + std::string(s) + "'");
}

struct EvaluatorBinding {
  Role role;
  std::string encoder_id;
};

struct RoleBindings {
  std::vector<EvaluatorBinding> bindings;

  std::optional<std::string> encoder_for(Role r) const {
    for (const auto& b : bindings)
      if (b.role == r) return b.encoder_id;
    return std::nullopt;
  }

  // Rejects any binding set in which the reward critic could also grade the
  // results.
  void validate() const {
    for (const auto& b : bindings)
      if (b.encoder_id.empty()) throw BindingError(std::string(to_string(b.role)) + ": empty encoder id");
    auto critic = encoder_for(Role::kTrainingCritic);
    auto metric = encoder_for(Role::kMetricEvaluator);
    if (!metric) throw BindingError("no metric-evaluator encoder bound");
    if (critic && *critic == *metric)
      throw BindingError("encoder '" + *critic + "' is bound as both training-critic and metric-evaluator");
    if (auto oof = encoder_for(Role::kOutOfFamilyEvaluator); oof && critic && *oof == *critic)
      throw BindingError("encoder '" + *critic + "' is bound as both training-critic and out-of-family-evaluator");
  }
};

// ---------------------------------------------------------------------------
// Cosine

template <typename A, typename B>
double cosine(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size())
    throw Error("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) throw UndefinedError("cosine: undefined similarity for a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double cosine(const Vector& a, const Vector& b) {
  return cosine(std::span<const double>(a), std::span<const double>(b));
}

// ---------------------------------------------------------------------------
// Per-sample scoring

enum class DdMode {
  kIndicator,  // 1 when argmax of probe logits equals the label, else 0
  kProb,       // softmax probability of the label
};

inline DdMode parse_dd_mode(std::string_view s) {
  if (s == "indicator") return DdMode::kIndicator;
  if (s == "prob") return DdMode::kProb;
  throw Error("unknown dd mode '" + std::string(s) + "'");
}

struct RewardComponents {
  double vdc = 0.0;
  double ccs = 0.0;
  double dd = 0.0;
  std::optional<double> sfs;
  // Undefined without a reference (prompt-only deployment).
  std::optional<double> cas;
};

inline double macro_average(double vdc, double ccs, double dd, double sfs) {
  return (vdc + ccs + dd + sfs) / 4.0;
}

struct ScoreInputs {
  std::string encoder_id;  // space every vector below was embedded in
  std::span<const double> generated;
  std::span<const double> prompt;     // enriched prompt text embedding
  std::span<const double> checklist;  // class checklist text embedding
  std::optional<std::span<const double>> reference;
};

inline double dd_metric(const ProbeModel& probe, std::span<const double> emb, std::string_view label, DdMode mode) {
  const std::size_t y = probe.class_index(label);
  const Eigen::VectorXd z = probe.logits(emb);
  if (mode == DdMode::kIndicator) {
    Eigen::Index best;
    z.maxCoeff(&best);
    return static_cast<std::size_t>(best) == y ? 1.0 : 0.0;
  }
  return std::exp(log_softmax(z)(static_cast<Eigen::Index>(y)));
}

inline RewardComponents score_sample(const ScoreInputs& in, const ProbeModel& probe, std::string_view label,
                                     DdMode mode = DdMode::kIndicator) {
  if (probe.encoder_id != in.encoder_id)
    throw BindingError("probe trained on '" + probe.encoder_id + "' applied to '" + in.encoder_id + "' embeddings");
  RewardComponents r;
  r.vdc = cosine(in.generated, in.prompt);
  r.ccs = cosine(in.generated, in.checklist);
  r.dd = dd_metric(probe, in.generated, label, mode);
  if (in.reference) {
    r.sfs = cosine(in.generated, *in.reference);
    r.cas = macro_average(r.vdc, r.ccs, r.dd, *r.sfs);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Set-level summary

struct MethodSummary {
  std::string method;
  std::size_t n = 0;
  double vdc = 0, ccs = 0, dd = 0, sfs = 0, cas = 0;
  // Fraction of rows whose dd marks a correct prediction (dd > 0.5).
  double dd_accuracy = 0;
};

// Per-method arithmetic means. Rows are reduced in (method, id) order so the
// result does not depend on input row order.
inline std::vector<MethodSummary> score_set(const ScoreTable& table) {
  std::map<std::string, std::vector<const ScoreRow*>> by_method;
  for (const auto& r : table) by_method[r.method].push_back(&r);
  std::vector<MethodSummary> out;
  for (auto& [method, rows] : by_method) {
    std::stable_sort(rows.begin(), rows.end(), [](auto* a, auto* b) {
      if (a->id != b->id) return a->id < b->id;
      if (a->cas != b->cas) return a->cas < b->cas;
      return a->vdc < b->vdc;
    });
    MethodSummary s;
    s.method = method;
    s.n = rows.size();
    std::size_t correct = 0;
    for (auto* r : rows) {
      s.vdc += r->vdc;
      s.ccs += r->ccs;
      s.dd += r->dd;
      s.sfs += r->sfs;
      s.cas += r->cas;
      correct += r->dd > 0.5;
    }
    const double n = static_cast<double>(s.n);
    s.vdc /= n;
    s.ccs /= n;
    s.dd /= n;
    s.sfs /= n;
    s.cas /= n;
    s.dd_accuracy = static_cast<double>(correct) / n;
    out.push_back(s);
  }
  return out;
}

inline std::string write_summary_csv(const std::vector<MethodSummary>& rows) {
  std::string out = "method,n,vdc,ccs,dd,sfs,cas,dd_accuracy\n";
  for (const auto& s : rows)
    out += csv_escape(s.method) + ',' + std::to_string(s.n) + ',' + format_real(s.vdc) + ',' + format_real(s.ccs) +
           ',' + format_real(s.dd) + ',' + format_real(s.sfs) + ',' + format_real(s.cas) + ',' +
           format_real(s.dd_accuracy) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Dataset scoring

struct DatasetInputs {
  const EmbeddingMatrix* generated = nullptr;  // rows keyed by generated sample id
  std::span<const SampleMeta> generated_meta;
  const EmbeddingMatrix* prompts = nullptr;     // keyed by reference (held-out) sample id
  const EmbeddingMatrix* checklists = nullptr;  // keyed by class label
  const EmbeddingMatrix* references = nullptr;  // keyed by reference sample id
};

// Scores every generated sample. Each sample's enriched prompt and real
// reference are looked up through its reference_id.
inline ScoreTable score_dataset(const DatasetInputs& in, const ProbeModel& probe, const RoleBindings& roles,
                                DdMode mode = DdMode::kIndicator) {
  roles.validate();
  const std::string evaluator = *roles.encoder_for(Role::kMetricEvaluator);
  for (const EmbeddingMatrix* m : {in.generated, in.prompts, in.checklists, in.references}) {
    if (!m) throw Error("score_dataset: missing embedding matrix");
    if (m->encoder_id != evaluator)
      throw BindingError("embedding matrix from '" + m->encoder_id + "' but metric evaluator is '" + evaluator + "'");
  }
  if (probe.encoder_id != evaluator)
    throw BindingError("probe trained on '" + probe.encoder_id + "' but metric evaluator is '" + evaluator + "'");
  const auto gen_idx = in.generated->index();
  const auto prompt_idx = in.prompts->index();
  const auto check_idx = in.checklists->index();
  const auto ref_idx = in.references->index();

  ScoreTable out(in.generated_meta.size());
  parallel_for(in.generated_meta.size(), [&](std::size_t i) {
    const SampleMeta& s = in.generated_meta[i];
    auto lookup = [&](const auto& idx, const std::string& key, const char* what) {
      auto it = idx.find(key);
      if (it == idx.end()) throw LoadError(std::string("no ") + what + " embedding for '" + key + "'");
      return it->second;
    };
    if (!s.reference_id) throw LoadError("generated sample '" + s.id + "' has no reference_id");
    const Vector g = in.generated->row_as_double(lookup(gen_idx, s.id, "generated"));
    const Vector p = in.prompts->row_as_double(lookup(prompt_idx, *s.reference_id, "prompt"));
    const Vector c = in.checklists->row_as_double(lookup(check_idx, s.label, "checklist"));
    const Vector r = in.references->row_as_double(lookup(ref_idx, *s.reference_id, "reference"));
    const auto comp = score_sample({evaluator, g, p, c, std::span<const double>(r)}, probe, s.label, mode);
    out[i] = {s.id, s.source_method.value_or(""), comp.vdc, comp.ccs, comp.dd, *comp.sfs, *comp.cas};
  });
  return out;
}

}  // namespace clinalign
