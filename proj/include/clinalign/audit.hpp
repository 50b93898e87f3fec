#pragma once

// Memorization audit: windowed SSIM, DCT perceptual hash, and embedding-space
// nearest-neighbour distance symmetry.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "clinalign/cas_engine.hpp"
#include "clinalign/common.hpp"
#include "clinalign/datastore.hpp"
#include "clinalign/parallel.hpp"

namespace clinalign {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major luminance

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  bool same_shape(const GrayImage& o) const { return width == o.width && height == o.height; }
};

// Rec. 601 luma of an 8-bit RGB triple.
inline std::uint8_t rec601_luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
}

// ---------------------------------------------------------------------------
// SSIM

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double c1 = (0.01 * 255) * (0.01 * 255);
  double c2 = (0.03 * 255) * (0.03 * 255);
};

// Normalized 1-D Gaussian taps; their outer product is the 2-D window.
inline std::vector<double> gaussian_taps(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double center = (static_cast<double>(size) - 1.0) / 2.0;
  double sum = 0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - center;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Mean local SSIM over every fully-contained window position.
inline double ssim(const GrayImage& a, const GrayImage& b, const SsimParams& p = {}) {
  if (!a.same_shape(b))
    throw Error("ssim: dimension mismatch (" + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
  if (a.width < p.window || a.height < p.window) throw Error("ssim: image smaller than the window");
  const auto g = gaussian_taps(p.window, p.sigma);
  const std::size_t w = a.width, h = a.height, k = p.window;
  const std::size_t ow = w - k + 1, oh = h - k + 1;

  // Horizontal pass over the five moment images, then vertical.
  enum { kA, kB, kAA, kBB, kAB, kMoments };
  std::vector<std::array<double, kMoments>> row_pass(ow * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      std::array<double, kMoments> acc{};
      for (std::size_t t = 0; t < k; ++t) {
        const double va = a.at(x + t, y), vb = b.at(x + t, y);
        acc[kA] += g[t] * va;
        acc[kB] += g[t] * vb;
        acc[kAA] += g[t] * va * va;
        acc[kBB] += g[t] * vb * vb;
        acc[kAB] += g[t] * va * vb;
      }
      row_pass[y * ow + x] = acc;
    }
  double total = 0;
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      std::array<double, kMoments> m{};
      for (std::size_t t = 0; t < k; ++t)
        for (int c = 0; c < kMoments; ++c) m[c] += g[t] * row_pass[(y + t) * ow + x][c];
      const double va = m[kAA] - m[kA] * m[kA];
      const double vb = m[kBB] - m[kB] * m[kB];
      const double cov = m[kAB] - m[kA] * m[kB];
      total += ((2 * m[kA] * m[kB] + p.c1) * (2 * cov + p.c2)) /
               ((m[kA] * m[kA] + m[kB] * m[kB] + p.c1) * (va + vb + p.c2));
    }
  return total / static_cast<double>(ow * oh);
}

// ---------------------------------------------------------------------------
// Perceptual hash

using Hash64 = std::uint64_t;

inline int hamming(Hash64 a, Hash64 b) { return std::popcount(a ^ b); }

// Area-average resample to out_w x out_h (each output pixel averages the
// source area it covers, with fractional edge weights).
inline std::vector<double> resize_area(const GrayImage& img, std::size_t out_w, std::size_t out_h) {
  auto weights = [](std::size_t in, std::size_t out) {
    std::vector<std::vector<double>> m(out, std::vector<double>(in, 0.0));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double lo = static_cast<double>(o) * scale, hi = lo + scale;
      for (auto i = static_cast<std::size_t>(std::floor(lo)); i < in && static_cast<double>(i) < hi; ++i) {
        const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
        if (overlap > 0) m[o][i] = overlap / scale;
      }
    }
    return m;
  };
  const auto wx = weights(img.width, out_w), wy = weights(img.height, out_h);
  std::vector<double> tmp(img.height * out_w, 0.0);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double s = 0;
      for (std::size_t x = 0; x < img.width; ++x)
        if (wx[ox][x] != 0) s += wx[ox][x] * img.at(x, y);
      tmp[y * out_w + ox] = s;
    }
  std::vector<double> out(out_w * out_h, 0.0);
  for (std::size_t oy = 0; oy < out_h; ++oy)
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double s = 0;
      for (std::size_t y = 0; y < img.height; ++y)
        if (wy[oy][y] != 0) s += wy[oy][y] * tmp[y * out_w + ox];
      out[oy * out_w + ox] = s;
    }
  return out;
}

// Orthonormal 2-D type-II DCT of an n x n row-major block, computed
// separably as D * F * D^T.
inline std::vector<double> dct2(std::span<const double> block, std::size_t n) {
  if (block.size() != n * n) throw Error("dct2: block is not n x n");
  std::vector<double> basis(n * n);
  for (std::size_t u = 0; u < n; ++u) {
    const double alpha = u == 0 ? std::sqrt(1.0 / static_cast<double>(n)) : std::sqrt(2.0 / static_cast<double>(n));
    for (std::size_t x = 0; x < n; ++x)
      basis[u * n + x] =
          alpha * std::cos(std::numbers::pi * (2.0 * static_cast<double>(x) + 1.0) * static_cast<double>(u) /
                           (2.0 * static_cast<double>(n)));
  }
  // rows: tmp[y][v] = sum_x basis[v][x] * block[y][x]
  std::vector<double> tmp(n * n, 0.0), out(n * n, 0.0);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t v = 0; v < n; ++v) {
      double s = 0;
      for (std::size_t x = 0; x < n; ++x) s += basis[v * n + x] * block[y * n + x];
      tmp[y * n + v] = s;
    }
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      double s = 0;
      for (std::size_t y = 0; y < n; ++y) s += basis[u * n + y] * tmp[y * n + v];
      out[u * n + v] = s;
    }
  return out;
}

inline constexpr std::size_t kHashResize = 32;
inline constexpr std::size_t kHashBlock = 8;

// DCT coefficients of the 32x32 area-resampled image (row u = vertical
// frequency).
inline std::vector<double> phash_coefficients(const GrayImage& img) {
  if (img.width < kHashBlock || img.height < kHashBlock) throw Error("phash: image smaller than 8x8");
  return dct2(resize_area(img, kHashResize, kHashResize), kHashResize);
}

// 64-bit hash of the top-left 8x8 DCT block. The median is taken over the 63
// AC coefficients; a bit is set when its coefficient is strictly greater than
// the median. Bit order is row-major with (0,0) in the most significant bit.
// Coefficients are snapped to a 1e-6 grid first so that values that are zero
// in exact arithmetic (e.g. AC terms of a flat image) compare as equal.
inline Hash64 phash(const GrayImage& img) {
  const auto coef = phash_coefficients(img);
  std::array<double, kHashBlock * kHashBlock> block{};
  for (std::size_t u = 0; u < kHashBlock; ++u)
    for (std::size_t v = 0; v < kHashBlock; ++v)
      block[u * kHashBlock + v] = std::nearbyint(coef[u * kHashResize + v] * 1e6) / 1e6;
  std::vector<double> ac(block.begin() + 1, block.end());
  std::nth_element(ac.begin(), ac.begin() + static_cast<std::ptrdiff_t>(ac.size() / 2), ac.end());
  const double median = ac[ac.size() / 2];
  Hash64 h = 0;
  for (std::size_t i = 0; i < block.size(); ++i)
    if (block[i] > median) h |= Hash64{1} << (63 - i);
  return h;
}

// ---------------------------------------------------------------------------
// Near-duplicate detection

struct NearDupThresholds {
  double ssim = 0.95;  // flag when SSIM > threshold
  int phash = 5;       // flag when Hamming <= threshold
};

struct GeneratedImage {
  std::string method;
  std::string id;
  GrayImage image;
};

struct SampleAudit {
  std::string method;
  std::string id;
  double max_ssim = 0;
  int min_hamming = 64;
  bool ssim_flag = false;
  bool phash_flag = false;
};

struct DupSummary {
  std::string method;
  std::size_t n = 0;
  std::size_t ssim_flags = 0;
  std::size_t phash_flags = 0;
  std::size_t any_flags = 0;
  double max_ssim = 0;
};

struct NearDupReport {
  std::vector<SampleAudit> samples;
  std::vector<DupSummary> methods;
};

inline NearDupReport near_duplicates(std::span<const GeneratedImage> generated, std::span<const GrayImage> train,
                                     const NearDupThresholds& th = {}) {
  if (train.empty()) throw Error("near_duplicates: empty train set");
  std::vector<Hash64> train_hash(train.size());
  parallel_for(train.size(), [&](std::size_t i) { train_hash[i] = phash(train[i]); });
  NearDupReport r;
  r.samples.resize(generated.size());
  parallel_for(generated.size(), [&](std::size_t i) {
    const auto& g = generated[i];
    SampleAudit s{g.method, g.id};
    s.max_ssim = -std::numeric_limits<double>::infinity();
    const Hash64 h = phash(g.image);
    for (std::size_t t = 0; t < train.size(); ++t) {
      s.max_ssim = std::max(s.max_ssim, ssim(g.image, train[t]));
      s.min_hamming = std::min(s.min_hamming, hamming(h, train_hash[t]));
    }
    s.ssim_flag = s.max_ssim > th.ssim;
    s.phash_flag = s.min_hamming <= th.phash;
    r.samples[i] = s;
  });
  std::map<std::string, DupSummary> by;
  for (const auto& s : r.samples) {
    auto& d = by[s.method];
    if (d.n == 0) {
      d.method = s.method;
      d.max_ssim = s.max_ssim;
    }
    ++d.n;
    d.ssim_flags += s.ssim_flag;
    d.phash_flags += s.phash_flag;
    d.any_flags += s.ssim_flag || s.phash_flag;
    d.max_ssim = std::max(d.max_ssim, s.max_ssim);
  }
  for (auto& [_, d] : by) r.methods.push_back(d);
  return r;
}

inline std::string write_dup_csv(const std::string& dataset, const NearDupReport& r, const NearDupThresholds& th) {
  std::string out = "dataset,method,ssim_gt_" + format_real(th.ssim) + ",phash_le_" + std::to_string(th.phash) +
                    ",any,max_ssim\n";
  for (const auto& d : r.methods)
    out += csv_escape(dataset) + ',' + csv_escape(d.method) + ',' + std::to_string(d.ssim_flags) + ',' +
           std::to_string(d.phash_flags) + ',' + std::to_string(d.any_flags) + ',' + format_real(d.max_ssim) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour distance symmetry

struct NnSymmetry {
  std::string method;
  double d_train = 0;
  double d_test = 0;
  double delta = 0;  // d_train - d_test
};

// Cosine distance (1 - cosine) from each row of `query` to its nearest row
// in `reference`.
inline std::vector<double> nearest_cosine_distances(const EmbeddingMatrix& query, const EmbeddingMatrix& reference) {
  if (reference.rows == 0) throw Error("nn_symmetry: empty reference set");
  if (query.dim != reference.dim) throw BindingError("nn_symmetry: embedding dims differ");
  std::vector<double> out(query.rows);
  parallel_for(query.rows, [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < reference.rows; ++j) best = std::min(best, 1.0 - cosine(query.row(i), reference.row(j)));
    out[i] = best;
  });
  return out;
}

// Mean of values summed in ascending order (row-order independent).
inline double ordered_mean(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline NnSymmetry nn_symmetry(const std::string& method, const EmbeddingMatrix& generated,
                              const EmbeddingMatrix& train, const EmbeddingMatrix& test) {
  if (generated.encoder_id != train.encoder_id || generated.encoder_id != test.encoder_id)
    throw BindingError("nn_symmetry: matrices come from different encoder spaces");
  NnSymmetry r{method};
  r.d_train = ordered_mean(nearest_cosine_distances(generated, train));
  r.d_test = ordered_mean(nearest_cosine_distances(generated, test));
  r.delta = r.d_train - r.d_test;
  return r;
}

inline std::string write_nn_csv(const std::string& dataset, std::span<const NnSymmetry> rows) {
  std::string out = "dataset,method,d_nn_train,d_nn_test,delta\n";
  for (const auto& r : rows)
    out += csv_escape(dataset) + ',' + csv_escape(r.method) + ',' + format_real(r.d_train) + ',' +
           format_real(r.d_test) + ',' + format_real(r.delta) + '\n';
  return out;
}

}  // namespace clinalign
