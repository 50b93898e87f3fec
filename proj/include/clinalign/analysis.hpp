#pragma once

// Distribution-level statistics over per-image scores.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "clinalign/common.hpp"
#include "clinalign/datastore.hpp"
#include "clinalign/parallel.hpp"
#include "clinalign/rng.hpp"

namespace clinalign {

// ---------------------------------------------------------------------------
// Percentiles

// Linear-interpolation percentile on a sorted sample: rank (n-1)*q/100.
inline double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error("percentile: empty input");
  if (!(q >= 0.0 && q <= 100.0)) throw Error("percentile: q must lie in [0, 100]");
  const double rank = static_cast<double>(sorted.size() - 1) * q / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double percentile(std::span<const double> values, double q) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return percentile_sorted(v, q);
}

struct EcdfPoint {
  double x;
  double f;
};

// Empirical CDF as step points at each distinct value.
inline std::vector<EcdfPoint> ecdf(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  std::vector<EcdfPoint> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (i + 1 == v.size() || v[i + 1] != v[i])
      out.push_back({v[i], static_cast<double>(i + 1) / static_cast<double>(v.size())});
  return out;
}

// ---------------------------------------------------------------------------
// Low-alignment tail

struct TailRow {
  std::string method;
  std::size_t n = 0;
  double mean_cas = 0;
  double rate_below = 0;  // fraction with CAS strictly below tau
  double p10 = 0;
};

struct TailReport {
  std::string dataset;
  double tau = 0;
  std::vector<TailRow> rows;

  const TailRow& row(std::string_view method) const {
    for (const auto& r : rows)
      if (r.method == method) return r;
    throw Error("tail report: no method '" + std::string(method) + "'");
  }
};

inline double rate_below(std::span<const double> scores, double tau) {
  if (scores.empty()) return 0.0;
  std::size_t k = 0;
  for (double s : scores) k += s < tau;
  return static_cast<double>(k) / static_cast<double>(scores.size());
}

// tau is the 25th percentile of the real-image scores only.
inline TailReport tail_report(std::string dataset, std::span<const double> real_scores,
                              const std::map<std::string, std::vector<double>>& generated) {
  if (real_scores.empty()) throw Error("tail_report: real scores are empty");
  TailReport r;
  r.dataset = std::move(dataset);
  r.tau = percentile(real_scores, 25.0);
  for (const auto& [method, scores] : generated) {
    TailRow row;
    row.method = method;
    row.n = scores.size();
    if (!scores.empty()) {
      row.mean_cas = mean_of(scores);
      row.rate_below = rate_below(scores, r.tau);
      row.p10 = percentile(scores, 10.0);
    }
    r.rows.push_back(row);
  }
  return r;
}

// Relative reduction of `method`'s low-alignment rate against the lowest
// rate among all other methods: (best_other - rate) / best_other.
inline std::optional<double> relative_tail_reduction(const TailReport& r, std::string_view method) {
  const double mine = r.row(method).rate_below;
  std::optional<double> best;
  for (const auto& row : r.rows)
    if (row.method != method && (!best || row.rate_below < *best)) best = row.rate_below;
  if (!best || *best == 0.0) return std::nullopt;
  return (*best - mine) / *best;
}

inline std::string write_tail_csv(const TailReport& r) {
  std::string out = "dataset,tau,method,n,mean_cas,rate_below_tau,p10_cas\n";
  for (const auto& row : r.rows)
    out += csv_escape(r.dataset) + ',' + format_real(r.tau) + ',' + csv_escape(row.method) + ',' +
           std::to_string(row.n) + ',' + format_real(row.mean_cas) + ',' + format_real(row.rate_below) + ',' +
           format_real(row.p10) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Special functions for p-values

// Continued fraction for the incomplete beta function (modified Lentz).
inline double incbeta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

// Regularized incomplete beta I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * incbeta_cf(a, b, x) / a;
  return 1.0 - front * incbeta_cf(b, a, 1.0 - x) / b;
}

// Two-sided p-value of a Student-t statistic with `dof` degrees of freedom.
inline double student_t_two_sided_p(double t, double dof) {
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

// ---------------------------------------------------------------------------
// Correlation

struct CorrelationReport {
  std::size_t n = 0;
  double pearson_r = 0, pearson_p = 1;
  double spearman_rho = 0, spearman_p = 1;
};

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedError("correlation undefined: zero variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Ranks starting at 1; ties receive the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double correlation_p(double r, std::size_t n) {
  const double dof = static_cast<double>(n) - 2.0;
  if (std::fabs(r) >= 1.0) return 0.0;
  const double t = r * std::sqrt(dof / (1.0 - r * r));
  return student_t_two_sided_p(t, dof);
}

inline CorrelationReport correlate(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("correlate: length mismatch");
  if (x.size() < 3) throw Error("correlate: need at least 3 pairs");
  CorrelationReport c;
  c.n = x.size();
  c.pearson_r = pearson(x, y);
  c.pearson_p = correlation_p(c.pearson_r, c.n);
  const auto rx = average_ranks(x), ry = average_ranks(y);
  c.spearman_rho = pearson(rx, ry);
  c.spearman_p = correlation_p(c.spearman_rho, c.n);
  return c;
}

inline json to_json(const CorrelationReport& c) {
  return {{"n", c.n},
          {"pearson_r", c.pearson_r},
          {"pearson_p", c.pearson_p},
          {"spearman_rho", c.spearman_rho},
          {"spearman_p", c.spearman_p}};
}

// ---------------------------------------------------------------------------
// Bootstrap

struct Interval {
  double lo = 0;
  double hi = 0;
};

// Statistic values over B resamples (each of size data.size(), drawn with
// replacement). Resample b uses its own substream of `seed`, so the
// distribution does not depend on how work is split across threads.
template <typename T, typename Stat>
std::vector<double> bootstrap_distribution(std::span<const T> data, Stat&& stat, std::size_t resamples,
                                           std::uint64_t seed) {
  std::vector<double> out(resamples);
  const std::size_t n = data.size();
  parallel_for(resamples, [&](std::size_t b) {
    Rng rng(substream_seed(seed, static_cast<std::uint64_t>(b)));
    std::vector<T> sample;
    sample.reserve(n);
    for (std::size_t i = 0; i < n; ++i) sample.push_back(data[rng.below(n)]);
    out[b] = stat(std::span<const T>(sample));
  });
  return out;
}

inline Interval percentile_interval(std::vector<double> dist, double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error("bootstrap: level must lie in (0, 1)");
  std::sort(dist.begin(), dist.end());
  const double alpha = (1.0 - level) / 2.0;
  return {percentile_sorted(dist, 100.0 * alpha), percentile_sorted(dist, 100.0 * (1.0 - alpha))};
}

// Percentile bootstrap interval at `level` (e.g. 0.95).
template <typename T, typename Stat>
Interval bootstrap_ci(std::span<const T> data, Stat&& stat, std::size_t resamples, double level, std::uint64_t seed) {
  if (resamples < 100) throw Error("bootstrap: need at least 100 resamples");
  if (data.empty()) throw Error("bootstrap: empty data");
  return percentile_interval(bootstrap_distribution(data, std::forward<Stat>(stat), resamples, seed), level);
}

// ---------------------------------------------------------------------------
// Diversity (per-pair distances such as LPIPS, ingested)

struct PairDistance {
  std::string method;
  std::string prompt_id;
  std::string sample_a;
  std::string sample_b;
  double distance = 0;
};

struct DiversityRow {
  std::string method;
  std::size_t prompts = 0;
  double mean_diversity = 0;
};

struct DiversityResult {
  std::vector<DiversityRow> rows;
  std::vector<std::string> warnings;
};

// Mean over each prompt's unordered sample pairs, then mean over prompts.
inline DiversityResult diversity_aggregate(std::span<const PairDistance> pairs) {
  std::map<std::string, std::map<std::string, std::vector<const PairDistance*>>> grouped;
  for (const auto& p : pairs) grouped[p.method][p.prompt_id].push_back(&p);
  DiversityResult out;
  for (const auto& [method, prompts] : grouped) {
    DiversityRow row;
    row.method = method;
    double total = 0;
    for (const auto& [prompt, list] : prompts) {
      std::set<std::string> samples;
      std::set<std::pair<std::string, std::string>> seen;
      for (auto* p : list) {
        samples.insert(p->sample_a);
        samples.insert(p->sample_b);
        if (p->sample_a == p->sample_b)
          throw Error("diversity: self-pair '" + p->sample_a + "' in prompt '" + prompt + "'");
        auto key = std::minmax(p->sample_a, p->sample_b);
        if (!seen.insert({key.first, key.second}).second)
          throw Error("diversity: duplicate pair in prompt '" + prompt + "'");
      }
      if (samples.size() < 2) {
        out.warnings.push_back(method + "/" + prompt + ": fewer than 2 samples, skipped");
        continue;
      }
      const std::size_t want = samples.size() * (samples.size() - 1) / 2;
      if (seen.size() != want)
        throw Error("diversity: prompt '" + prompt + "' has " + std::to_string(seen.size()) + " pairs, expected " +
                    std::to_string(want));
      double s = 0;
      for (auto* p : list) s += p->distance;
      total += s / static_cast<double>(list.size());
      ++row.prompts;
    }
    if (row.prompts) row.mean_diversity = total / static_cast<double>(row.prompts);
    out.rows.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checklist audit verdicts

struct Verdict {
  std::string method;
  std::string sample_id;
  std::string item_id;
  bool pass = false;
};

inline std::vector<Verdict> parse_verdicts(const std::vector<json>& lines) {
  std::vector<Verdict> out;
  std::size_t n = 0;
  for (const auto& j : lines) {
    ++n;
    try {
      out.push_back({j.at("method").get<std::string>(), j.at("sample_id").get<std::string>(),
                     j.at("item_id").get<std::string>(), j.at("pass").get<bool>()});
    } catch (const json::exception& e) {
      throw LoadError("verdict record " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// Fraction of satisfied (sample, item) pairs per method.
inline std::map<std::string, double> checklist_pass_rate(std::span<const Verdict> verdicts,
                                                         const std::set<std::string>& known_items) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> acc;
  for (const auto& v : verdicts) {
    if (!known_items.count(v.item_id)) throw Error("checklist audit: unknown item id '" + v.item_id + "'");
    auto& [pass, total] = acc[v.method];
    pass += v.pass;
    ++total;
  }
  std::map<std::string, double> out;
  for (const auto& [m, pt] : acc) out[m] = static_cast<double>(pt.first) / static_cast<double>(pt.second);
  return out;
}

}  // namespace clinalign
