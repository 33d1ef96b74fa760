#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsopt/common.hpp"
#include "gsopt/tensor.hpp"

namespace gsopt {

// Dense H*W*C image, row-major, values in [0,1]. c is 1 (gray) or 3 (rgb).
struct Image {
  std::size_t h = 0, w = 0, c = 1;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h_, std::size_t w_, std::size_t c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), data(h_ * w_ * c_, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t ch) {
    return data[(y * w + x) * c + ch];
  }
  double at(std::size_t y, std::size_t x, std::size_t ch) const {
    return data[(y * w + x) * c + ch];
  }
  std::size_t size() const { return data.size(); }
};

// 8-bit PNG codec. Writing quantizes with round(v*255); values are clamped
// to [0,1] first. Gray files load with c=1, everything else as rgb.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

// Label maps ride in 8-bit gray PNGs with the class id stored verbatim.
Tensor read_label_png(const std::string& path);
void write_label_png(const std::string& path, const Tensor& labels);

// Align-corners bilinear resize (corner pixels are preserved exactly).
Image resize_bilinear(const Image& src, std::size_t nh, std::size_t nw);

}  // namespace gsopt
