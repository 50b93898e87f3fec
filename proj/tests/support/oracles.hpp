#pragma once

// Reference implementations used only by tests. Each one is written
// independently of the library code it checks: direct sums instead of
// separable passes, long double instead of double, exhaustive search instead
// of iteration.

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <utility>
#include <vector>

namespace oracle {

using ld = long double;

// ---------------------------------------------------------------------------
// Statistics

// Linear interpolation between closest ranks, position (n-1) * q / 100.
inline ld percentile(std::vector<ld> v, ld q) {
  std::sort(v.begin(), v.end());
  const ld pos = (static_cast<ld>(v.size()) - 1) * q / 100;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<ld>(lo)) * (v[hi] - v[lo]);
}

inline ld pearson(const std::vector<ld>& x, const std::vector<ld>& y) {
  const ld n = static_cast<ld>(x.size());
  const ld mx = std::accumulate(x.begin(), x.end(), ld{0}) / n;
  const ld my = std::accumulate(y.begin(), y.end(), ld{0}) / n;
  ld sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Ranks with ties sharing the mean of their positions (1-based), found by
// counting rather than sorting.
inline std::vector<ld> midranks(const std::vector<ld>& v) {
  std::vector<ld> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    ld less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

inline ld spearman(const std::vector<ld>& x, const std::vector<ld>& y) { return pearson(midranks(x), midranks(y)); }

// Two-sided p for a correlation under the t approximation with n-2 dof.
inline ld correlation_p(ld r, std::size_t n) {
  const ld dof = static_cast<ld>(n) - 2;
  const ld t = r * std::sqrt(dof / (1 - r * r));
  boost::math::students_t_distribution<ld> dist(dof);
  return 2 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

// ---------------------------------------------------------------------------
// Softmax

inline ld log_softmax_at(const std::vector<ld>& z, std::size_t k) {
  ld s = 0;
  for (ld v : z) s += std::exp(v);
  return z[k] - std::log(s);
}

// ---------------------------------------------------------------------------
// Image metrics

// Direct 2-D Gaussian-weighted SSIM, variances via the two-pass form.
inline double ssim(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, std::size_t w,
                   std::size_t h) {
  const int k = 11;
  const ld sigma = 1.5L, c1 = 6.5025L, c2 = 58.5225L;
  ld g[k][k], gsum = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * sigma * sigma));
      gsum += g[i][j];
    }
  ld total = 0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + k <= h; ++y)
    for (std::size_t x = 0; x + k <= w; ++x) {
      ld ma = 0, mb = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          ma += g[i][j] / gsum * a[(y + i) * w + x + j];
          mb += g[i][j] / gsum * b[(y + i) * w + x + j];
        }
      ld va = 0, vb = 0, cov = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const ld da = a[(y + i) * w + x + j] - ma, db = b[(y + i) * w + x + j] - mb;
          va += g[i][j] / gsum * da * da;
          vb += g[i][j] / gsum * db * db;
          cov += g[i][j] / gsum * da * db;
        }
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return static_cast<double>(total / static_cast<ld>(count));
}

// Orthonormal 2-D DCT-II by the defining quadruple sum.
inline std::vector<double> dct2(const std::vector<double>& f, std::size_t n) {
  std::vector<double> out(n * n);
  const ld pi = std::numbers::pi_v<ld>;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      ld s = 0;
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t y = 0; y < n; ++y)
          s += f[x * n + y] * std::cos(pi * (2 * x + 1) * u / (2 * n)) * std::cos(pi * (2 * y + 1) * v / (2 * n));
      const ld au = u == 0 ? std::sqrt(1.0L / n) : std::sqrt(2.0L / n);
      const ld av = v == 0 ? std::sqrt(1.0L / n) : std::sqrt(2.0L / n);
      out[u * n + v] = static_cast<double>(au * av * s);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Nearest neighbours

inline double cosine_distance(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

inline std::vector<double> nearest(const std::vector<std::vector<float>>& q, const std::vector<std::vector<float>>& r) {
  std::vector<double> out;
  for (const auto& a : q) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : r) best = std::min(best, cosine_distance(a, b));
    out.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bradley-Terry

// Log-likelihood of log-strengths theta under (already smoothed) win counts.
inline ld bt_loglik(const std::vector<std::vector<ld>>& w, const std::vector<ld>& theta) {
  ld ll = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = 0; j < w.size(); ++j)
      if (i != j && w[i][j] > 0) ll += w[i][j] * (theta[i] - std::log(std::exp(theta[i]) + std::exp(theta[j])));
  return ll;
}

// Maximizes the 3-method likelihood over (theta1 - theta0, theta2 - theta0)
// by repeated dense grid search with shrinking spacing.
inline std::pair<ld, ld> bt_grid_3(const std::vector<std::vector<ld>>& w) {
  ld c1 = 0, c2 = 0, span = 8;
  const int g = 60;
  while (span > 1e-10L) {
    ld best = -std::numeric_limits<ld>::infinity(), b1 = c1, b2 = c2;
    for (int i = -g; i <= g; ++i)
      for (int j = -g; j <= g; ++j) {
        const ld d1 = c1 + span * i / g, d2 = c2 + span * j / g;
        const ld ll = bt_loglik(w, {0, d1, d2});
        if (ll > best) {
          best = ll;
          b1 = d1;
          b2 = d2;
        }
      }
    c1 = b1;
    c2 = b2;
    span *= 4.0L / g;
  }
  return {c1, c2};
}

}  // namespace oracle
