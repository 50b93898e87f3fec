#pragma once

// Subcommand bodies. Each takes the merged RunConfig plus its own options,
// writes its report files under the output directory and returns a
// RunRecord; the dispatcher turns that into the run manifest.

#include <ostream>
#include <string>
#include <vector>

#include "clinalign/analysis.hpp"
#include "clinalign/audit.hpp"
#include "clinalign/cas_engine.hpp"
#include "clinalign/cli/config.hpp"
#include "clinalign/datastore.hpp"
#include "clinalign/enrichment.hpp"
#include "clinalign/generator_client.hpp"
#include "clinalign/image_io.hpp"
#include "clinalign/preference.hpp"
#include "clinalign/probe.hpp"
#include "clinalign/rewardlab.hpp"

namespace clinalign::cli {

namespace detail {

inline fs::path emit(RunRecord& rec, const RunConfig& c, const std::string& name, std::string_view body) {
  const fs::path p = c.out() / name;
  write_file(p, body);
  rec.outputs.push_back(p);
  return p;
}

inline DatasetManifest require_manifest(const RunConfig& c) {
  if (c.manifest.empty()) throw LoadError("no dataset manifest given (--manifest or config key 'manifest')");
  return load_manifest(c.manifest);
}

// Embedding file declared for (role, encoder) in the manifest. Paths are
// relative to the manifest's directory.
inline EmbeddingMatrix manifest_embeddings(const RunConfig& c, const DatasetManifest& m, const std::string& role,
                                           const std::string& encoder) {
  for (const auto& e : m.embeddings)
    if (e.role == role && (e.encoder_id.empty() || e.encoder_id == encoder))
      return load_embeddings(fs::path(c.manifest).parent_path() / e.path, encoder);
  throw LoadError("manifest '" + m.name + "': no '" + role + "' embeddings for encoder '" + encoder + "'");
}

inline std::vector<std::string> generated_roles(const DatasetManifest& m, const std::string& encoder) {
  std::set<std::string> out;
  for (const auto& e : m.embeddings)
    if (e.role.rfind("generated:", 0) == 0 && (e.encoder_id.empty() || e.encoder_id == encoder)) out.insert(e.role);
  return {out.begin(), out.end()};
}

inline std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::vector<std::string>& header) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw LoadError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (csv_split(line) != header) {
    std::string want;
    for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
    throw LoadError(path.string() + ": header must be '" + want + "'");
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = csv_split(line);
    if (f.size() != header.size())
      throw LoadError(path.string() + ":" + std::to_string(n) + ": expected " + std::to_string(header.size()) +
                      " fields");
    rows.push_back(std::move(f));
  }
  return rows;
}

inline double to_real(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw LoadError(path.string() + ": '" + s + "' is not a number");
}

inline json probe_json(const ProbeConfig& p) {
  return {{"learning_rate", p.learning_rate}, {"epochs", p.epochs}, {"batch_size", p.batch_size}, {"seed", p.seed}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// score

struct ScoreOptions {
  std::string probe;
  std::string dd_mode = "indicator";
};

inline RunRecord cmd_score(const RunConfig& c, const ScoreOptions& o, std::ostream& log) {
  RunRecord rec{"score", {{"probe", o.probe}, {"dd_mode", o.dd_mode}}, {}, {}};
  const RoleBindings roles = c.roles();
  roles.validate();
  const DdMode mode = parse_dd_mode(o.dd_mode);
  const std::string enc = c.require_encoder(Role::kMetricEvaluator);
  if (o.probe.empty()) throw LoadError("no probe file given (--probe)");

  const auto m = detail::require_manifest(c);
  const auto probe = load_probe(o.probe);
  const auto generated = detail::manifest_embeddings(c, m, "generated", enc);
  const auto prompts = detail::manifest_embeddings(c, m, "prompt", enc);
  const auto checklists = detail::manifest_embeddings(c, m, "checklist", enc);
  const auto references = detail::manifest_embeddings(c, m, "reference", enc);
  std::vector<SampleMeta> gen_meta;
  for (const auto& s : m.samples)
    if (s.split == Split::kGenerated) gen_meta.push_back(s);
  if (gen_meta.empty()) throw LoadError("manifest '" + m.name + "': no generated samples to score");

  const auto table = score_dataset({&generated, gen_meta, &prompts, &checklists, &references}, probe, roles, mode);
  const auto summary = score_set(table);
  detail::emit(rec, c, "scores.csv", write_score_csv(table));
  detail::emit(rec, c, "summary.csv", write_summary_csv(summary));
  for (const auto& s : summary) log << s.method << ": n=" << s.n << " cas=" << format_real(s.cas) << "\n";
  return rec;
}

// ---------------------------------------------------------------------------
// tail

struct TailOptions {
  std::vector<std::string> scores;
  std::string real_method = "real";
  std::string dataset;
};

inline RunRecord cmd_tail(const RunConfig& c, const TailOptions& o, std::ostream& log) {
  RunRecord rec{"tail", {{"scores", o.scores}, {"real_method", o.real_method}, {"dataset", o.dataset}}, {}, {}};
  if (o.scores.empty()) throw LoadError("no score tables given (--scores)");
  std::vector<double> real;
  std::map<std::string, std::vector<double>> gen;
  for (const auto& f : o.scores)
    for (const auto& r : parse_score_csv(read_file(f))) (r.method == o.real_method ? real : gen[r.method]).push_back(r.cas);
  if (real.empty()) throw LoadError("no rows with method '" + o.real_method + "' to set the threshold");
  const auto report = tail_report(o.dataset.empty() ? "dataset" : o.dataset, real, gen);
  detail::emit(rec, c, "tail.csv", write_tail_csv(report));
  log << "tau=" << format_real(report.tau) << "\n";
  for (const auto& row : report.rows)
    log << row.method << ": below tau " << format_real(100.0 * row.rate_below) << "%\n";
  return rec;
}

// ---------------------------------------------------------------------------
// corr

struct CorrOptions {
  std::string input;  // CSV: name,cas,utility
};

inline RunRecord cmd_corr(const RunConfig& c, const CorrOptions& o, std::ostream& log) {
  RunRecord rec{"corr", {{"input", o.input}}, {}, {}};
  if (o.input.empty()) throw LoadError("no input table given (--input)");
  std::vector<double> x, y;
  for (const auto& row : detail::read_csv(o.input, {"name", "cas", "utility"})) {
    x.push_back(detail::to_real(row[1], o.input));
    y.push_back(detail::to_real(row[2], o.input));
  }
  const auto r = correlate(x, y);
  detail::emit(rec, c, "corr.json", to_json(r).dump(2) + "\n");
  log << "pearson r=" << format_real(r.pearson_r) << " p=" << format_real(r.pearson_p)
      << "  spearman rho=" << format_real(r.spearman_rho) << " p=" << format_real(r.spearman_p) << "\n";
  return rec;
}

// ---------------------------------------------------------------------------
// audit

struct AuditOptions {
  std::string train_images;
  std::string generated_images;  // one sub-directory of PNGs per method
  std::string dataset;
  double ssim_threshold = 0.95;
  int phash_threshold = 5;
  bool nn = false;
};

inline RunRecord cmd_audit(const RunConfig& c, const AuditOptions& o, std::ostream& log) {
  RunRecord rec{"audit",
                {{"train_images", o.train_images},
                 {"generated_images", o.generated_images},
                 {"dataset", o.dataset},
                 {"ssim_threshold", o.ssim_threshold},
                 {"phash_threshold", o.phash_threshold},
                 {"nn", o.nn}},
                {},
                {}};
  if (o.train_images.empty() && o.generated_images.empty() && !o.nn)
    throw LoadError("nothing to audit: give --train-images/--generated-images and/or --nn");
  const std::string dataset = o.dataset.empty() ? "dataset" : o.dataset;
  if (!o.train_images.empty() || !o.generated_images.empty()) {
    if (o.train_images.empty() || o.generated_images.empty())
      throw LoadError("near-duplicate audit needs both --train-images and --generated-images");
    std::vector<GrayImage> train;
    for (const auto& p : list_pngs(o.train_images)) train.push_back(read_png_gray(p));
    if (!fs::is_directory(o.generated_images)) throw LoadError("not a directory: " + o.generated_images);
    std::vector<fs::path> method_dirs;
    for (const auto& e : fs::directory_iterator(o.generated_images))
      if (e.is_directory()) method_dirs.push_back(e.path());
    std::sort(method_dirs.begin(), method_dirs.end());
    std::vector<GeneratedImage> gen;
    for (const auto& d : method_dirs)
      for (const auto& p : list_pngs(d)) gen.push_back({d.filename().string(), p.stem().string(), read_png_gray(p)});
    const NearDupThresholds th{o.ssim_threshold, o.phash_threshold};
    const auto r = near_duplicates(gen, train, th);
    detail::emit(rec, c, "dup.csv", write_dup_csv(dataset, r, th));
    std::string per_sample = "method,id,max_ssim,min_hamming,ssim_flag,phash_flag\n";
    for (const auto& s : r.samples)
      per_sample += csv_escape(s.method) + ',' + csv_escape(s.id) + ',' + format_real(s.max_ssim) + ',' +
                    std::to_string(s.min_hamming) + ',' + (s.ssim_flag ? "1" : "0") + ',' + (s.phash_flag ? "1" : "0") +
                    '\n';
    detail::emit(rec, c, "dup_samples.csv", per_sample);
    for (const auto& d : r.methods) log << d.method << ": " << d.any_flags << "/" << d.n << " flagged\n";
  }
  if (o.nn) {
    // Out-of-family space when bound, else the metric evaluator's.
    const auto oof = c.encoder(Role::kOutOfFamilyEvaluator);
    const std::string enc = oof ? *oof : c.require_encoder(Role::kMetricEvaluator);
    const auto m = detail::require_manifest(c);
    const auto train = detail::manifest_embeddings(c, m, "train", enc);
    const auto test = detail::manifest_embeddings(c, m, "test", enc);
    std::vector<NnSymmetry> rows;
    for (const auto& role : detail::generated_roles(m, enc))
      rows.push_back(nn_symmetry(role.substr(10), detail::manifest_embeddings(c, m, role, enc), train, test));
    if (rows.empty()) throw LoadError("manifest '" + m.name + "': no 'generated:<method>' embeddings for '" + enc + "'");
    detail::emit(rec, c, "nn.csv", write_nn_csv(dataset, rows));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// prefs-fit

struct PrefsFitOptions {
  std::string rankings;
  std::string key;
  std::string cas;  // optional JSON {method: cas}
  std::size_t resamples = 10000;
  double level = 0.95;
};

inline RunRecord cmd_prefs_fit(const RunConfig& c, const PrefsFitOptions& o, std::ostream& log) {
  RunRecord rec{"prefs-fit",
                {{"rankings", o.rankings}, {"key", o.key}, {"cas", o.cas}, {"resamples", o.resamples}, {"level", o.level}},
                {},
                {}};
  if (o.rankings.empty() || o.key.empty()) throw LoadError("prefs-fit needs --rankings and --key");
  const auto records = load_rankings(o.rankings);
  const auto key = load_key(o.key);
  if (records.empty()) throw LoadError(o.rankings + ": no ranking records");

  const auto full = fit_bt(rankings_to_pairs(records, key, PairExpansion::kFull));
  const auto top = fit_bt(rankings_to_pairs(records, key, PairExpansion::kTopOnly));
  std::string bt = "method,strength_full,strength_top_only,converged,bounded\n";
  for (std::size_t i = 0; i < full.methods.size(); ++i)
    bt += csv_escape(full.methods[i]) + ',' + format_real(full.strengths[i]) + ',' + format_real(top.strengths[i]) +
          ',' + (full.converged && top.converged ? "1" : "0") + ',' + (full.bounded && top.bounded ? "1" : "0") + '\n';
  detail::emit(rec, c, "bt.csv", bt);

  rec.substreams["bootstrap"] = c.substream("bootstrap");
  std::string t1 = "method,top1_rate,ci_lo,ci_hi\n";
  for (const auto& r : top1_rate(records, key, o.resamples, o.level, rec.substreams["bootstrap"])) {
    t1 += csv_escape(r.method) + ',' + format_real(r.rate) + ',' + format_real(r.ci.lo) + ',' + format_real(r.ci.hi) +
          '\n';
    log << r.method << ": top-1 " << format_real(r.rate) << " [" << format_real(r.ci.lo) << ", "
        << format_real(r.ci.hi) << "]\n";
  }
  detail::emit(rec, c, "top1.csv", t1);

  std::string rd = "method,rank,fraction\n";
  for (const auto& [m, dist] : rank_distribution(records, key))
    for (std::size_t k = 0; k < dist.size(); ++k)
      rd += csv_escape(m) + ',' + std::to_string(k + 1) + ',' + format_real(dist[k]) + '\n';
  detail::emit(rec, c, "rank_distribution.csv", rd);

  const auto ag = rater_agreement(records, key);
  json extra = {{"records", records.size()},
                {"rater_agreement",
                 {{"shared_cases", ag.shared_cases},
                  {"top1_agreement", ag.top1_agreement},
                  {"mean_kendall_tau", ag.mean_kendall_tau}}}};
  if (!o.cas.empty()) {
    std::map<std::string, double> cas;
    try {
      cas = json::parse(read_file(o.cas)).get<std::map<std::string, double>>();
    } catch (const json::exception& e) {
      throw LoadError(o.cas + ": " + e.what());
    }
    extra["preference_vs_cas"] = to_json(preference_vs_cas(full, cas));
  }
  detail::emit(rec, c, "prefs.json", extra.dump(2) + "\n");
  return rec;
}

// ---------------------------------------------------------------------------
// rewardlab

struct RewardLabOptions {
  std::vector<std::size_t> K, T_train, M;
  std::vector<double> w_dd;
  std::size_t steps = 40;
  std::size_t batch = 8;
  double learning_rate = 0.05;
};

inline RunRecord cmd_rewardlab(const RunConfig& c, const RewardLabOptions& o, std::ostream& log) {
  c.weights.validate();
  SweepConfig sc;
  sc.base = c.weights;
  sc.K = o.K.empty() ? std::vector<std::size_t>{c.weights.K} : o.K;
  sc.T_train = o.T_train.empty() ? std::vector<std::size_t>{c.weights.T_train} : o.T_train;
  sc.M = o.M.empty() ? std::vector<std::size_t>{c.weights.M} : o.M;
  sc.w_dd = o.w_dd.empty() ? std::vector<double>{c.weights.w_dd} : o.w_dd;
  sc.steps = o.steps;
  sc.batch = o.batch;
  sc.learning_rate = o.learning_rate;
  sc.seed = c.substream("rewardlab");
  RunRecord rec{"rewardlab", to_json(sc), {{"rewardlab", sc.seed}}, {}};
  const auto rows = sweep(sc);
  detail::emit(rec, c, "sweep.csv", write_sweep_csv(rows));
  for (const auto& r : rows)
    log << "K=" << r.cell.K << " T=" << r.cell.T_train << " M=" << r.cell.M << " w_dd=" << format_real(r.cell.w_dd)
        << ": reward " << format_real(r.initial_reward) << " -> " << format_real(r.final_reward) << "\n";
  return rec;
}

// ---------------------------------------------------------------------------
// probe-train / augment

struct ProbeTrainOptions {
  std::string encoder;  // default: metric evaluator
  std::string output;
  ProbeConfig probe;
};

inline RunRecord cmd_probe_train(const RunConfig& c, ProbeTrainOptions o, std::ostream& log) {
  const std::string enc = o.encoder.empty() ? c.require_encoder(Role::kMetricEvaluator) : o.encoder;
  o.probe.seed = c.substream("probe");
  RunRecord rec{"probe-train", {{"encoder", enc}, {"output", o.output}, {"probe", detail::probe_json(o.probe)}},
                {{"probe", o.probe.seed}}, {}};
  const auto m = detail::require_manifest(c);
  const auto train = detail::manifest_embeddings(c, m, "train", enc);
  const auto p = train_probe(gather(train, m.samples, m.label_set, Split::kTrain), enc, m.label_set, o.probe);
  const fs::path out = o.output.empty() ? c.out() / ("probe." + enc + ".bin") : fs::path(o.output);
  save_probe(out, p);
  rec.outputs.push_back(out);
  bool has_test = false;
  for (const auto& e : m.embeddings) has_test |= e.role == "test";
  if (has_test) {
    const auto test = detail::manifest_embeddings(c, m, "test", enc);
    const auto d = gather(test, m.samples, m.label_set, Split::kTest);
    if (d.size()) log << "test accuracy " << format_real(accuracy(p, d)) << ", macro-F1 " << format_real(macro_f1(p, d)) << "\n";
  }
  return rec;
}

struct AugmentOptions {
  std::string encoder;
  std::vector<double> mix{0.0, 0.2, 0.5};
  ProbeConfig probe;
};

inline RunRecord cmd_augment(const RunConfig& c, AugmentOptions o, std::ostream& log) {
  const std::string enc = o.encoder.empty() ? c.require_encoder(Role::kMetricEvaluator) : o.encoder;
  o.probe.seed = c.substream("augment");
  RunRecord rec{"augment", {{"encoder", enc}, {"mix", o.mix}, {"probe", detail::probe_json(o.probe)}},
                {{"augment", o.probe.seed}}, {}};
  const auto m = detail::require_manifest(c);
  const auto real = gather(detail::manifest_embeddings(c, m, "train", enc), m.samples, m.label_set, Split::kTrain);
  const auto test = gather(detail::manifest_embeddings(c, m, "test", enc), m.samples, m.label_set, Split::kTest);
  LabeledData synth;
  if (std::any_of(o.mix.begin(), o.mix.end(), [](double x) { return x > 0; }))
    synth = gather(detail::manifest_embeddings(c, m, "generated", enc), m.samples, m.label_set, Split::kGenerated);
  std::string csv = "mix,accuracy,macro_f1\n";
  for (double mix : o.mix) {
    const auto r = train_aug_classifier(real, synth, test, m.label_set, mix, enc, o.probe);
    csv += format_real(mix) + ',' + format_real(r.accuracy) + ',' + format_real(r.macro_f1) + '\n';
    log << "mix " << format_real(mix) << ": accuracy " << format_real(r.accuracy) << "\n";
  }
  detail::emit(rec, c, "augment.csv", csv);
  return rec;
}

// ---------------------------------------------------------------------------
// kshot

struct KShotOptions {
  std::size_t k = 10;
};

inline RunRecord cmd_kshot(const RunConfig& c, const KShotOptions& o, std::ostream& log) {
  RunRecord rec{"kshot", {{"k", o.k}}, {{"kshot", c.substream("kshot")}}, {}};
  const auto m = detail::require_manifest(c);
  auto sub = kshot_subset(m, o.k, rec.substreams["kshot"]);
  // Keep embedding paths valid from the new location.
  const fs::path base = fs::absolute(fs::path(c.manifest).parent_path());
  for (auto& e : sub.manifest.embeddings) e.path = (base / e.path).lexically_normal().string();
  sub.manifest.meta_file.clear();
  detail::emit(rec, c, sub.manifest.name + ".json", to_json(sub.manifest).dump(2) + "\n");
  for (const auto& s : sub.short_classes) log << "class '" << s << "' has fewer than " << o.k << " train samples\n";
  return rec;
}

// ---------------------------------------------------------------------------
// enrichment: validate-prompts / gen-prompts

struct ValidatePromptsOptions {
  std::string schema;
  std::string candidates;
  bool strict = false;
};

struct ValidateOutcome {
  std::size_t valid = 0, invalid = 0;
};

inline RunRecord cmd_validate_prompts(const RunConfig& c, const ValidatePromptsOptions& o, std::ostream& log,
                                      ValidateOutcome* outcome = nullptr) {
  RunRecord rec{"validate-prompts", {{"schema", o.schema}, {"candidates", o.candidates}, {"strict", o.strict}}, {}, {}};
  if (o.schema.empty() || o.candidates.empty()) throw LoadError("validate-prompts needs --schema and --candidates");
  const auto schema = load_schema(o.schema);
  std::string ok, bad;
  ValidateOutcome n;
  for (const auto& cand : load_candidates(o.candidates)) {
    const auto r = validate_prompt(cand.candidate, schema, cand.label, cand.sample_id);
    if (r.ok()) {
      ok += to_json(*r.prompt).dump() + "\n";
      ++n.valid;
    } else {
      json v = json::array();
      for (const auto& x : r.violations) v.push_back(to_json(x));
      bad += json{{"sample_id", cand.sample_id}, {"label", cand.label}, {"violations", v}}.dump() + "\n";
      ++n.invalid;
    }
  }
  detail::emit(rec, c, "prompts.jsonl", ok);
  detail::emit(rec, c, "violations.jsonl", bad);
  log << n.valid << " valid, " << n.invalid << " rejected\n";
  if (outcome) *outcome = n;
  return rec;
}

struct GenPromptsOptions {
  std::string requests;  // JSONL: sample_id, label[, image_ref]
  std::string domain;
  std::string offline;   // directory of canned responses instead of HTTP
};

inline RunRecord cmd_gen_prompts(const RunConfig& c, const GenPromptsOptions& o, std::ostream& log) {
  RunRecord rec{"gen-prompts", {{"requests", o.requests}, {"domain", o.domain}, {"offline", o.offline}}, {}, {}};
  if (o.requests.empty() || o.domain.empty()) throw LoadError("gen-prompts needs --requests and --domain");
  std::unique_ptr<TextGenerator> gen;
  if (!o.offline.empty()) {
    gen = std::make_unique<OfflineGenerator>(o.offline);
  } else {
    if (c.generator_url.empty())
      throw LoadError("no generator endpoint (--generator-url, " + std::string(kEnvGenerator) + " or --offline)");
    HttpClientConfig hc;
    hc.base_url = c.generator_url;
    gen = std::make_unique<HttpGenerator>(hc);
  }
  std::string out;
  std::size_t n = 0;
  for (const auto& j : read_jsonl(o.requests)) {
    GenerationRequest req{j.at("sample_id").get<std::string>(), j.at("label").get<std::string>(), o.domain,
                          j.value("image_ref", "")};
    out += json{{"sample_id", req.sample_id}, {"label", req.label}, {"candidate", gen->generate(req)}}.dump() + "\n";
    ++n;
  }
  detail::emit(rec, c, "candidates.jsonl", out);
  log << n << " candidates written\n";
  return rec;
}

// ---------------------------------------------------------------------------
// pass-rate / diversity

struct PassRateOptions {
  std::string verdicts;
  std::string checklists;
};

// Item ids are checklist attribute names.
inline RunRecord cmd_pass_rate(const RunConfig& c, const PassRateOptions& o, std::ostream& log) {
  RunRecord rec{"pass-rate", {{"verdicts", o.verdicts}, {"checklists", o.checklists}}, {}, {}};
  if (o.verdicts.empty() || o.checklists.empty()) throw LoadError("pass-rate needs --verdicts and --checklists");
  std::set<std::string> items;
  for (const auto& [_, cl] : load_checklists(o.checklists))
    for (const auto& it : cl.items) items.insert(it.attribute);
  const auto rates = checklist_pass_rate(parse_verdicts(read_jsonl(o.verdicts)), items);
  std::string csv = "method,pass_rate\n";
  for (const auto& [m, r] : rates) {
    csv += csv_escape(m) + ',' + format_real(r) + '\n';
    log << m << ": " << format_real(100.0 * r) << "%\n";
  }
  detail::emit(rec, c, "pass_rate.csv", csv);
  return rec;
}

struct DiversityOptions {
  std::string pairs;  // CSV: method,prompt_id,sample_a,sample_b,distance
};

inline RunRecord cmd_diversity(const RunConfig& c, const DiversityOptions& o, std::ostream& log) {
  RunRecord rec{"diversity", {{"pairs", o.pairs}}, {}, {}};
  if (o.pairs.empty()) throw LoadError("diversity needs --pairs");
  std::vector<PairDistance> pairs;
  for (const auto& r : detail::read_csv(o.pairs, {"method", "prompt_id", "sample_a", "sample_b", "distance"}))
    pairs.push_back({r[0], r[1], r[2], r[3], detail::to_real(r[4], o.pairs)});
  const auto res = diversity_aggregate(pairs);
  std::string csv = "method,prompts,mean_diversity\n";
  for (const auto& r : res.rows) csv += csv_escape(r.method) + ',' + std::to_string(r.prompts) + ',' + format_real(r.mean_diversity) + '\n';
  for (const auto& w : res.warnings) log << "warning: " << w << "\n";
  detail::emit(rec, c, "diversity.csv", csv);
  return rec;
}

}  // namespace clinalign::cli
