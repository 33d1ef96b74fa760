#pragma once

#include <map>
#include <string>
#include <vector>

#include "gsopt/common.hpp"

namespace gsopt {

// RGBA tile with double channels in [0,1].
struct Texture {
  std::size_t h = 0, w = 0;
  std::vector<double> rgba;  // h*w*4

  Texture() = default;
  Texture(std::size_t h_, std::size_t w_) : h(h_), w(w_), rgba(h_ * w_ * 4) {}

  double& at(std::size_t y, std::size_t x, std::size_t ch) {
    return rgba[(y * w + x) * 4 + ch];
  }
  double at(std::size_t y, std::size_t x, std::size_t ch) const {
    return rgba[(y * w + x) * 4 + ch];
  }
};

// Textures grouped by grammar class name. pick() cycles deterministically
// through the variants of a class.
class AssetLibrary {
 public:
  void add(const std::string& cls, Texture t);
  bool has(const std::string& cls) const;
  std::size_t count(const std::string& cls) const;
  const Texture& pick(const std::string& cls, std::size_t index) const;
  void validate() const;  // alpha in [0,1], no empty classes

 private:
  std::map<std::string, std::vector<Texture>> by_class_;
};

// Digit glyph pack rasterized from a built-in font, with per-variant stroke
// weight and intensity jitter. Classes "0".."9" plus "background".
AssetLibrary make_mnist_assets(int variants_per_digit, std::uint64_t seed);

// Digit pack cut from IDX files (train-images-idx3-ubyte /
// train-labels-idx1-ubyte under dir), first per_class samples of each digit.
AssetLibrary load_mnist_assets_idx(const std::string& dir, int per_class);

// IDX ingestion when the GSOPT_DATA_DIR files exist, built-in pack otherwise.
AssetLibrary make_mnist_assets_auto(int variants_per_digit,
                                    std::uint64_t seed);

struct AerialAssetCounts {
  int car = 16;
  int tree = 8;
  int house = 6;
  int grass = 4;
  int road = 4;
};

// Procedural tiles: per-class base color, seeded noise, simple structure
// (road center dashes, car windshield band, circular tree crown).
AssetLibrary make_aerial_assets(const AerialAssetCounts& counts,
                                std::uint64_t seed);

}  // namespace gsopt
