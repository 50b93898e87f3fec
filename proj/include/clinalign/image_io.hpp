#pragma once

// 8-bit PNG read/write via libpng's simplified API. Colour images are reduced
// to Rec. 601 luma here rather than by libpng (whose grey conversion uses
// different weights).

#include <png.h>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "clinalign/audit.hpp"

namespace clinalign {

inline GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw LoadError(path.string() + ": " + img.message);
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw LoadError(path.string() + ": " + msg);
  }
  GrayImage out(img.width, img.height);
  if (color) {
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
      out.pixels[i] = rec601_luma(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]);
  } else {
    std::copy(buf.begin(), buf.end(), out.pixels.begin());
  }
  return out;
}

inline void write_png_gray(const std::filesystem::path& path, const GrayImage& g) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(g.width);
  img.height = static_cast<png_uint_32>(g.height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, g.pixels.data(), 0, nullptr))
    throw Error(path.string() + ": " + img.message);
}

// All *.png files in a directory, sorted by file name.
inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw LoadError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace clinalign
