// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "handteleop/errors.hpp"

namespace handteleop {

/// Row-major res_y × res_x grid.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t width, std::size_t height, const T& fill = T{})
      : width_(width), height_(height), data_(width * height, fill) {}

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t row, std::size_t col) { return data_[row * width_ + col]; }
  const T& operator()(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }

  std::span<T> pixels() { return data_; }
  std::span<const T> pixels() const { return data_; }

  bool same_shape(const Grid& o) const { return width_ == o.width_ && height_ == o.height_; }
  template <typename U>
  bool same_shape(const Grid<U>& o) const {
    return width_ == o.width() && height_ == o.height();
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.data_ == b.data_;
  }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<T> data_;
};

using Image8 = Grid<std::uint8_t>;

// --- PGM (binary P5, maxval 255) ------------------------------------------

inline void write_pgm(std::ostream& out, const Image8& img) {
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels().data()), static_cast<std::streamsize>(img.size()));
}

inline void write_pgm_file(const std::string& path, const Image8& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write '" + path + "'");
  write_pgm(f, img);
}

inline Image8 read_pgm(std::istream& in) {
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t.push_back(c);
      }
    }
    return t;
  };
  if (token() != "P5") throw ValidationError("not a binary PGM (P5) image");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw ValidationError("malformed PGM header");
  }
  if (w == 0 || h == 0 || maxval != 255) throw ValidationError("unsupported PGM dimensions or maxval");
  Image8 img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels().data()), static_cast<std::streamsize>(img.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.size()) throw ValidationError("truncated PGM pixel data");
  return img;
}

inline Image8 read_pgm_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path + "'");
  return read_pgm(f);
}

// --- 2x2 super-image tiling ---------------------------------------------------

/// Places four equal-size images as 0:top-left, 1:top-right, 2:bottom-left, 3:bottom-right.
template <typename T>
Grid<T> tile_super_image(std::span<const Grid<T>> imgs) {
  if (imgs.size() != 4) throw ValidationError("super-image tiling needs exactly 4 images");
  const std::size_t w = imgs[0].width(), h = imgs[0].height();
  for (const auto& im : imgs)
    if (im.width() != w || im.height() != h) throw ValidationError("super-image inputs differ in size");
  Grid<T> out(2 * w, 2 * h);
  for (std::size_t q = 0; q < 4; ++q) {
    const std::size_t r0 = (q / 2) * h, c0 = (q % 2) * w;
    for (std::size_t r = 0; r < h; ++r)
      std::copy_n(&imgs[q](r, 0), w, &out(r0 + r, c0));
  }
  return out;
}

template <typename T>
std::array<Grid<T>, 4> untile_super_image(const Grid<T>& super) {
  if (super.width() % 2 || super.height() % 2) throw ValidationError("super-image has odd dimensions");
  const std::size_t w = super.width() / 2, h = super.height() / 2;
  std::array<Grid<T>, 4> out;
  for (std::size_t q = 0; q < 4; ++q) {
    out[q] = Grid<T>(w, h);
    const std::size_t r0 = (q / 2) * h, c0 = (q % 2) * w;
    for (std::size_t r = 0; r < h; ++r) std::copy_n(&super(r0 + r, c0), w, &out[q](r, 0));
  }
  return out;
}

// --- Bilinear resize ------------------------------------------------------------

/// Pixel-center-aligned bilinear resampling with edge clamping, rounded
/// half away from zero. Same-size resizes return an exact copy.
inline Image8 resize_image(const Image8& img, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw ValidationError("resize target must have positive dimensions");
  if (img.empty()) throw ValidationError("cannot resize an empty image");
  if (width == img.width() && height == img.height()) return img;

  auto sample_axis = [](std::size_t dst, std::size_t dst_n, std::size_t src_n) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_n) / static_cast<double>(dst_n) - 0.5;
    const double c = std::clamp(s, 0.0, static_cast<double>(src_n - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(c));
    const std::size_t i1 = std::min(i0 + 1, src_n - 1);
    return std::tuple{i0, i1, c - static_cast<double>(i0)};
  };

  Image8 out(width, height);
  for (std::size_t r = 0; r < height; ++r) {
    const auto [y0, y1, ty] = sample_axis(r, height, img.height());
    for (std::size_t c = 0; c < width; ++c) {
      const auto [x0, x1, tx] = sample_axis(c, width, img.width());
      const double a = img(y0, x0), b = img(y0, x1), cc = img(y1, x0), d = img(y1, x1);
      const double top = a + (b - a) * tx;
      const double bottom = cc + (d - cc) * tx;
      const double v = top + (bottom - top) * ty;
      out(r, c) = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
    }
  }
  return out;
}

}  // namespace handteleop
