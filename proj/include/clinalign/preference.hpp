#pragma once

// Blinded ranking records -> pairwise wins -> Bradley-Terry strengths.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "clinalign/analysis.hpp"
#include "clinalign/common.hpp"
#include "clinalign/datastore.hpp"

namespace clinalign {

struct RankingRecord {
  std::string case_id;
  std::string rater_id;
  std::vector<std::string> order;         // best -> worst, opaque tokens
  std::vector<std::string> presentation;  // display order shown to the rater
  std::string ts;
};

// Opaque token -> method name. Kept in a separate file from rankings.
using SealedKey = std::map<std::string, std::string>;

inline json to_json(const RankingRecord& r) {
  return {{"case_id", r.case_id}, {"rater_id", r.rater_id}, {"order", r.order},
          {"presentation", r.presentation}, {"ts", r.ts}};
}

// Checks the record is internally consistent: order is a permutation of the
// presented candidate set with at least two entries.
inline void validate_ranking(const RankingRecord& r) {
  if (r.case_id.empty()) throw Error("ranking: empty case_id");
  if (r.rater_id.empty()) throw Error("ranking: empty rater_id");
  if (r.order.size() < 2) throw Error("ranking for case '" + r.case_id + "': fewer than two candidates");
  std::set<std::string> o(r.order.begin(), r.order.end());
  if (o.size() != r.order.size()) throw Error("ranking for case '" + r.case_id + "': not a permutation (repeated token)");
  if (!r.presentation.empty()) {
    std::set<std::string> p(r.presentation.begin(), r.presentation.end());
    if (p != o) throw Error("ranking for case '" + r.case_id + "': not a permutation of the presented candidates");
  }
}

// Field extraction only; ranking_from_json also validates.
inline RankingRecord parse_ranking(const json& j) {
  RankingRecord r;
  try {
    r.case_id = j.at("case_id").get<std::string>();
    r.rater_id = j.at("rater_id").get<std::string>();
    r.order = j.at("order").get<std::vector<std::string>>();
    if (j.contains("presentation")) r.presentation = j["presentation"].get<std::vector<std::string>>();
    if (j.contains("ts") && j["ts"].is_string()) r.ts = j["ts"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(std::string("ranking record: ") + e.what());
  }
  return r;
}

inline RankingRecord ranking_from_json(const json& j) {
  RankingRecord r = parse_ranking(j);
  validate_ranking(r);
  return r;
}

inline std::vector<RankingRecord> load_rankings(const fs::path& path) {
  std::vector<RankingRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(ranking_from_json(j));
  return out;
}

inline SealedKey load_key(const fs::path& path) {
  try {
    return json::parse(read_file(path)).get<SealedKey>();
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Pairwise expansion

struct WinCounts {
  std::vector<std::string> methods;
  std::vector<std::vector<double>> wins;  // wins[i][j]: times i ranked above j

  std::size_t index(std::string_view m) const {
    for (std::size_t i = 0; i < methods.size(); ++i)
      if (methods[i] == m) return i;
    throw Error("unknown method '" + std::string(m) + "'");
  }

  double total() const {
    double s = 0;
    for (const auto& row : wins)
      for (double w : row) s += w;
    return s;
  }
};

inline WinCounts empty_counts(std::vector<std::string> methods) {
  WinCounts w;
  w.wins.assign(methods.size(), std::vector<double>(methods.size(), 0.0));
  w.methods = std::move(methods);
  return w;
}

enum class PairExpansion {
  kFull,     // every higher-ranked candidate beats every lower-ranked one
  kTopOnly,  // only the first-ranked candidate's wins
};

inline std::vector<std::string> key_methods(const SealedKey& key) {
  std::set<std::string> m;
  for (const auto& [_, method] : key) m.insert(method);
  return {m.begin(), m.end()};
}

inline std::vector<std::string> resolve(const RankingRecord& r, const SealedKey& key) {
  std::vector<std::string> methods;
  for (const auto& t : r.order) {
    auto it = key.find(t);
    if (it == key.end()) throw Error("ranking for case '" + r.case_id + "': unresolvable token '" + t + "'");
    methods.push_back(it->second);
  }
  std::set<std::string> u(methods.begin(), methods.end());
  if (u.size() != methods.size()) throw Error("ranking for case '" + r.case_id + "': two candidates share a method");
  return methods;
}

// A ranking of m candidates yields m(m-1)/2 wins under full expansion.
inline WinCounts rankings_to_pairs(std::span<const RankingRecord> records, const SealedKey& key,
                                   PairExpansion mode = PairExpansion::kFull) {
  WinCounts w = empty_counts(key_methods(key));
  for (const auto& r : records) {
    validate_ranking(r);
    const auto methods = resolve(r, key);
    const std::size_t top = mode == PairExpansion::kFull ? methods.size() : 1;
    for (std::size_t a = 0; a < top; ++a)
      for (std::size_t b = a + 1; b < methods.size(); ++b) w.wins[w.index(methods[a])][w.index(methods[b])] += 1.0;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Bradley-Terry fit

struct BTOptions {
  double smoothing = 0.5;  // pseudo-count added to every directed pair
  double tolerance = 1e-10;       // on the log-likelihood change
  double step_tolerance = 1e-12;  // on max |delta log s| per iteration
  int max_iterations = 10000;
};

struct BTResult {
  std::vector<std::string> methods;
  std::vector<double> strengths;  // positive, sum to 1
  std::vector<double> log_likelihood;  // per iteration, starting with the initial point
  int iterations = 0;
  bool converged = false;
  // False when the (smoothed) win graph is not strongly connected, so the
  // maximum-likelihood strengths lie on the boundary and iterates diverge.
  bool bounded = true;

  double strength(std::string_view m) const {
    for (std::size_t i = 0; i < methods.size(); ++i)
      if (methods[i] == m) return strengths[i];
    throw Error("BT result: no method '" + std::string(m) + "'");
  }
};

inline double bt_log_likelihood(const std::vector<std::vector<double>>& w, const std::vector<double>& s) {
  double ll = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (i != j && w[i][j] > 0) ll += w[i][j] * (std::log(s[i]) - std::log(s[i] + s[j]));
  return ll;
}

inline bool strongly_connected(const std::vector<std::vector<double>>& w) {
  const std::size_t n = w.size();
  auto reach = [&](bool forward) {
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      for (std::size_t v = 0; v < n; ++v)
        if (!seen[v] && (forward ? w[u][v] : w[v][u]) > 0) {
          seen[v] = true;
          stack.push_back(v);
        }
    }
    return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
  };
  return n == 0 || (reach(true) && reach(false));
}

// Minorization-maximization (simultaneous update) on smoothed counts. The
// log-likelihood test alone stops ~1e-6 short in log-strength on slow fits, so
// the step in log-strength must also have settled.
inline BTResult fit_bt(const WinCounts& counts, const BTOptions& opt = {}) {
  const std::size_t n = counts.methods.size();
  if (n < 2) throw Error("fit_bt: need at least two methods");
  for (std::size_t i = 0; i < n; ++i) {
    double appearances = 0;
    for (std::size_t j = 0; j < n; ++j) appearances += counts.wins[i][j] + counts.wins[j][i];
    if (appearances == 0) throw Error("fit_bt: method '" + counts.methods[i] + "' never appears in a comparison");
  }
  std::vector<std::vector<double>> w = counts.wins;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) w[i][j] += opt.smoothing;

  BTResult r;
  r.methods = counts.methods;
  r.bounded = strongly_connected(w);
  std::vector<double> s(n, 1.0 / static_cast<double>(n));
  std::vector<double> wins_total(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) wins_total[i] += w[i][j];
  r.log_likelihood.push_back(bt_log_likelihood(w, s));
  for (int it = 0; it < opt.max_iterations; ++it) {
    std::vector<double> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      double denom = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && s[i] + s[j] > 0) denom += (w[i][j] + w[j][i]) / (s[i] + s[j]);
      next[i] = denom > 0 ? wins_total[i] / denom : 0.0;
    }
    double total = 0;
    for (double v : next) total += v;
    for (auto& v : next) v /= total;
    double step = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (next[i] > 0 && s[i] > 0) step = std::max(step, std::fabs(std::log(next[i] / s[i])));
    s = std::move(next);
    r.iterations = it + 1;
    const double ll = bt_log_likelihood(w, s);
    const double change = ll - r.log_likelihood.back();
    r.log_likelihood.push_back(ll);
    if (std::fabs(change) < opt.tolerance && step < opt.step_tolerance) {
      r.converged = true;
      break;
    }
  }
  r.strengths = s;
  return r;
}

// ---------------------------------------------------------------------------
// Top-1 rates and rank distributions

struct Top1Row {
  std::string method;
  double rate = 0;
  Interval ci;
};

namespace detail {

inline std::map<std::string, std::vector<std::size_t>> records_by_case(std::span<const RankingRecord> records) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < records.size(); ++i) out[records[i].case_id].push_back(i);
  return out;
}

}  // namespace detail

// Fraction of records (cases pooled over raters) in which each method is
// ranked first; percentile bootstrap CI resampling whole cases.
inline std::vector<Top1Row> top1_rate(std::span<const RankingRecord> records, const SealedKey& key,
                                      std::size_t resamples, double level, std::uint64_t seed) {
  if (records.empty()) throw Error("top1_rate: no records");
  const auto methods = key_methods(key);
  std::vector<std::size_t> first(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto resolved = resolve(records[i], key);
    first[i] = static_cast<std::size_t>(std::find(methods.begin(), methods.end(), resolved.front()) - methods.begin());
  }
  const auto cases = detail::records_by_case(records);
  std::vector<std::vector<std::size_t>> case_records;
  for (const auto& [_, idx] : cases) case_records.push_back(idx);

  auto rates_for = [&](std::span<const std::size_t> case_sample) {
    std::vector<double> counts(methods.size(), 0.0);
    double total = 0;
    for (auto c : case_sample)
      for (auto ri : case_records[c]) {
        counts[first[ri]] += 1;
        total += 1;
      }
    for (auto& v : counts) v /= total;
    return counts;
  };

  std::vector<std::size_t> all(case_records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto point = rates_for(all);

  std::vector<Top1Row> out;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    auto dist = bootstrap_distribution(
        std::span<const std::size_t>(all), [&](std::span<const std::size_t> s) { return rates_for(s)[m]; },
        resamples, seed);
    out.push_back({methods[m], point[m], percentile_interval(std::move(dist), level)});
  }
  return out;
}

// dist[method][k]: fraction of records placing the method at rank k+1.
inline std::map<std::string, std::vector<double>> rank_distribution(std::span<const RankingRecord> records,
                                                                    const SealedKey& key) {
  std::map<std::string, std::vector<double>> out;
  std::map<std::string, double> appearances;
  for (const auto& r : records) {
    const auto methods = resolve(r, key);
    for (std::size_t k = 0; k < methods.size(); ++k) {
      auto& v = out[methods[k]];
      if (v.size() <= k) v.resize(k + 1, 0.0);
      v[k] += 1;
      appearances[methods[k]] += 1;
    }
  }
  for (auto& [m, v] : out)
    for (auto& x : v) x /= appearances[m];
  return out;
}

struct RaterAgreement {
  std::size_t shared_cases = 0;
  double top1_agreement = 0;     // fraction of rater pairs choosing the same first method
  double mean_kendall_tau = 0;   // over rater pairs on shared cases
};

// Agreement between raters on cases ranked by more than one rater.
inline RaterAgreement rater_agreement(std::span<const RankingRecord> records, const SealedKey& key) {
  RaterAgreement a;
  double pairs = 0, agree = 0, tau_sum = 0;
  for (const auto& [_, idx] : detail::records_by_case(records)) {
    if (idx.size() < 2) continue;
    ++a.shared_cases;
    for (std::size_t x = 0; x < idx.size(); ++x)
      for (std::size_t y = x + 1; y < idx.size(); ++y) {
        const auto mx = resolve(records[idx[x]], key), my = resolve(records[idx[y]], key);
        agree += mx.front() == my.front();
        std::map<std::string, std::size_t> pos;
        for (std::size_t k = 0; k < my.size(); ++k) pos[my[k]] = k;
        double concordant = 0, discordant = 0;
        for (std::size_t i = 0; i < mx.size(); ++i)
          for (std::size_t j = i + 1; j < mx.size(); ++j) {
            if (!pos.count(mx[i]) || !pos.count(mx[j])) continue;
            (pos[mx[i]] < pos[mx[j]] ? concordant : discordant) += 1;
          }
        if (concordant + discordant > 0) tau_sum += (concordant - discordant) / (concordant + discordant);
        pairs += 1;
      }
  }
  if (pairs > 0) {
    a.top1_agreement = agree / pairs;
    a.mean_kendall_tau = tau_sum / pairs;
  }
  return a;
}

// Pearson/Spearman association between BT strengths and per-method CAS.
inline CorrelationReport preference_vs_cas(const BTResult& bt, const std::map<std::string, double>& cas) {
  std::set<std::string> a(bt.methods.begin(), bt.methods.end()), b;
  for (const auto& [m, _] : cas) b.insert(m);
  if (a != b) throw Error("preference_vs_cas: method sets differ between BT result and CAS table");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < bt.methods.size(); ++i) {
    x.push_back(bt.strengths[i]);
    y.push_back(cas.at(bt.methods[i]));
  }
  return correlate(x, y);
}

}  // namespace clinalign
