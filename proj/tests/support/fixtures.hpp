#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "clinalign/audit.hpp"
#include "clinalign/datastore.hpp"
#include "clinalign/rng.hpp"

namespace fixture {

namespace fs = std::filesystem;

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("clinalign-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline clinalign::EmbeddingMatrix random_matrix(std::string encoder, std::size_t rows, std::size_t dim,
                                                std::uint64_t seed, std::string id_prefix = "s") {
  clinalign::Rng rng(seed);
  std::vector<clinalign::Vector> data(rows, clinalign::Vector(dim));
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < rows; ++r) {
    for (auto& v : data[r]) v = rng.normal();
    ids.push_back(id_prefix + std::to_string(r));
  }
  return clinalign::make_matrix(std::move(encoder), std::move(ids), data);
}

inline clinalign::GrayImage random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  clinalign::Rng rng(seed);
  clinalign::GrayImage g(w, h);
  for (auto& p : g.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return g;
}

// Smooth pattern: a few random low-frequency cosines around mid-grey.
inline clinalign::GrayImage smooth_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  clinalign::Rng rng(seed);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i)
    waves.push_back({0.5 + 2.5 * rng.uniform(), 0.5 + 2.5 * rng.uniform(), 6.283 * rng.uniform(),
                     15 + 20 * rng.uniform()});
  clinalign::GrayImage g(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double v = 128;
      for (const auto& wv : waves)
        v += wv.amp * std::cos(6.283 * (wv.fx * x / double(w) + wv.fy * y / double(h)) + wv.phase);
      g.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  return g;
}

// Copy with additive Gaussian pixel noise, clamped to [0, 255].
inline clinalign::GrayImage noisy(const clinalign::GrayImage& src, double sigma, std::uint64_t seed) {
  clinalign::Rng rng(seed);
  clinalign::GrayImage g = src;
  for (auto& p : g.pixels) p = static_cast<std::uint8_t>(std::clamp(std::lround(p + sigma * rng.normal()), 0L, 255L));
  return g;
}

}  // namespace fixture
