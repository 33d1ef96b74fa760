#include "gsopt/assets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "gsopt/idx.hpp"

namespace gsopt {

namespace {

// 5x7 digit glyphs, one bit per cell.
constexpr std::array<std::array<std::uint8_t, 7>, 10> kFont = {{
    {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110},  // 0
    {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110},  // 1
    {0b01110, 0b10001, 0b00001, 0b00110, 0b01000, 0b10000, 0b11111},  // 2
    {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110},  // 3
    {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010},  // 4
    {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110},  // 5
    {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110},  // 6
    {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000},  // 7
    {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110},  // 8
    {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100},  // 9
}};

constexpr std::size_t kDigitTile = 24;

double glyph_bit(int digit, double row, double col) {
  // Bilinear sample of the 5x7 bitmap with zero outside.
  const auto cell = [&](int r, int c) -> double {
    if (r < 0 || r >= 7 || c < 0 || c >= 5) return 0.0;
    return (kFont[digit][r] >> (4 - c)) & 1 ? 1.0 : 0.0;
  };
  const int r0 = static_cast<int>(std::floor(row));
  const int c0 = static_cast<int>(std::floor(col));
  const double fr = row - r0, fc = col - c0;
  const double top = (1 - fc) * cell(r0, c0) + fc * cell(r0, c0 + 1);
  const double bot = (1 - fc) * cell(r0 + 1, c0) + fc * cell(r0 + 1, c0 + 1);
  return (1 - fr) * top + fr * bot;
}

Texture digit_texture(int digit, double gamma, Rng& rng) {
  Texture t(kDigitTile, kDigitTile);
  // Glyph block: 7 rows / 5 cols mapped into a centered 20x14 region.
  const double gh = 20.0, gw = gh * 5.0 / 7.0;
  const double oy = (kDigitTile - gh) / 2.0, ox = (kDigitTile - gw) / 2.0;
  for (std::size_t y = 0; y < kDigitTile; ++y)
    for (std::size_t x = 0; x < kDigitTile; ++x) {
      const double row = (y + 0.5 - oy) / gh * 7.0 - 0.5;
      const double col = (x + 0.5 - ox) / gw * 5.0 - 0.5;
      double v = std::pow(glyph_bit(digit, row, col), gamma);
      v *= rng.uniform(0.9, 1.0);
      t.at(y, x, 0) = t.at(y, x, 1) = t.at(y, x, 2) = v;
      t.at(y, x, 3) = v;
    }
  return t;
}

Texture digit_texture_from_idx(const std::uint8_t* px, std::size_t rows,
                               std::size_t cols) {
  Texture t(rows, cols);
  for (std::size_t y = 0; y < rows; ++y)
    for (std::size_t x = 0; x < cols; ++x) {
      const double v = px[y * cols + x] / 255.0;
      t.at(y, x, 0) = t.at(y, x, 1) = t.at(y, x, 2) = v;
      t.at(y, x, 3) = v;
    }
  return t;
}

Texture black_tile(std::size_t n, double noise, Rng& rng) {
  Texture t(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double v = noise > 0.0 ? rng.uniform(0.0, noise) : 0.0;
      t.at(y, x, 0) = t.at(y, x, 1) = t.at(y, x, 2) = v;
      t.at(y, x, 3) = 1.0;
    }
  return t;
}

struct Rgb {
  double r, g, b;
};

Texture flat_tile(std::size_t h, std::size_t w, Rgb base, double noise,
                  Rng& rng) {
  Texture t(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double n = rng.uniform(-noise, noise);
      t.at(y, x, 0) = std::clamp(base.r + n, 0.0, 1.0);
      t.at(y, x, 1) = std::clamp(base.g + n, 0.0, 1.0);
      t.at(y, x, 2) = std::clamp(base.b + n, 0.0, 1.0);
      t.at(y, x, 3) = 1.0;
    }
  return t;
}

Texture road_tile(Rng& rng) {
  // x runs along the road. Dashed center line plus faint edge lines.
  const double shade = rng.uniform(0.20, 0.30);
  Texture t = flat_tile(16, 64, {shade, shade, shade}, 0.02, rng);
  for (std::size_t x = 0; x < t.w; ++x) {
    if ((x / 6) % 2 == 0) {
      t.at(7, x, 0) = t.at(7, x, 1) = t.at(7, x, 2) = 0.9;
      t.at(8, x, 0) = t.at(8, x, 1) = t.at(8, x, 2) = 0.9;
    }
    for (std::size_t y : {std::size_t{0}, t.h - 1})
      t.at(y, x, 0) = t.at(y, x, 1) = t.at(y, x, 2) = 0.55;
  }
  return t;
}

Texture car_tile(Rng& rng) {
  static const std::array<Rgb, 6> kPalette = {{{0.75, 0.10, 0.10},
                                               {0.10, 0.15, 0.70},
                                               {0.85, 0.85, 0.85},
                                               {0.80, 0.65, 0.05},
                                               {0.10, 0.10, 0.12},
                                               {0.45, 0.47, 0.50}}};
  const Rgb body = kPalette[rng.uniform_index(kPalette.size())];
  Texture t = flat_tile(16, 32, body, 0.03, rng);
  // Windshield band near the front (high x), darker roof block mid-body.
  for (std::size_t y = 2; y < 14; ++y) {
    for (std::size_t x = 22; x < 26; ++x) {
      t.at(y, x, 0) = 0.15;
      t.at(y, x, 1) = 0.20;
      t.at(y, x, 2) = 0.30;
    }
    for (std::size_t x = 10; x < 20; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch)
        t.at(y, x, ch) *= 0.85;
  }
  // Rounded corners: knock out alpha.
  for (std::size_t y = 0; y < t.h; ++y)
    for (std::size_t x = 0; x < t.w; ++x) {
      const bool corner = (y < 2 || y >= t.h - 2) && (x < 2 || x >= t.w - 2);
      if (corner) t.at(y, x, 3) = 0.0;
    }
  return t;
}

Texture tree_tile(Rng& rng) {
  const std::size_t n = 32;
  const Rgb base{rng.uniform(0.05, 0.12), rng.uniform(0.25, 0.40),
                 rng.uniform(0.04, 0.10)};
  Texture t(n, n);
  const double c = (n - 1) / 2.0, radius = n / 2.0 - 0.5;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double d = std::hypot(y - c, x - c);
      const double crown = d <= radius ? 1.0 : 0.0;
      const double shade = 1.0 - 0.4 * d / radius;  // darker rim
      const double noise = rng.uniform(-0.04, 0.04);
      t.at(y, x, 0) = std::clamp(base.r * shade + noise, 0.0, 1.0);
      t.at(y, x, 1) = std::clamp(base.g * shade + noise, 0.0, 1.0);
      t.at(y, x, 2) = std::clamp(base.b * shade + noise, 0.0, 1.0);
      t.at(y, x, 3) = crown;
    }
  return t;
}

Texture house_tile(Rng& rng) {
  static const std::array<Rgb, 4> kRoofs = {{{0.55, 0.25, 0.15},
                                             {0.60, 0.35, 0.20},
                                             {0.40, 0.20, 0.25},
                                             {0.50, 0.45, 0.40}}};
  const Rgb roof = kRoofs[rng.uniform_index(kRoofs.size())];
  Texture t = flat_tile(32, 32, roof, 0.03, rng);
  for (std::size_t y = 0; y < t.h; ++y)
    for (std::size_t x = 0; x < t.w; ++x) {
      const bool border =
          y < 2 || y >= t.h - 2 || x < 2 || x >= t.w - 2;
      if (border)
        for (std::size_t ch = 0; ch < 3; ++ch) t.at(y, x, ch) *= 0.5;
      // Ridge line across the roof.
      if (y == t.h / 2 || y == t.h / 2 - 1)
        for (std::size_t ch = 0; ch < 3; ++ch) t.at(y, x, ch) *= 0.7;
    }
  return t;
}

}  // namespace

void AssetLibrary::add(const std::string& cls, Texture t) {
  by_class_[cls].push_back(std::move(t));
}

bool AssetLibrary::has(const std::string& cls) const {
  return by_class_.count(cls) != 0;
}

std::size_t AssetLibrary::count(const std::string& cls) const {
  auto it = by_class_.find(cls);
  return it == by_class_.end() ? 0 : it->second.size();
}

const Texture& AssetLibrary::pick(const std::string& cls,
                                  std::size_t index) const {
  auto it = by_class_.find(cls);
  if (it == by_class_.end() || it->second.empty())
    raise(ErrorKind::Asset, "no textures for class \"" + cls + "\"");
  return it->second[index % it->second.size()];
}

void AssetLibrary::validate() const {
  for (const auto& [cls, textures] : by_class_) {
    if (textures.empty())
      raise(ErrorKind::Asset, "class \"" + cls + "\" has no textures");
    for (const Texture& t : textures) {
      if (t.h == 0 || t.w == 0 || t.rgba.size() != t.h * t.w * 4)
        raise(ErrorKind::Asset, "malformed texture for \"" + cls + "\"");
      for (std::size_t i = 3; i < t.rgba.size(); i += 4)
        if (t.rgba[i] < 0.0 || t.rgba[i] > 1.0)
          raise(ErrorKind::Asset, "alpha out of range for \"" + cls + "\"");
    }
  }
}

AssetLibrary make_mnist_assets(int variants_per_digit, std::uint64_t seed) {
  if (variants_per_digit < 1)
    raise(ErrorKind::Config, "need at least one variant per digit");
  Rng rng(seed);
  AssetLibrary lib;
  for (int d = 0; d < 10; ++d)
    for (int v = 0; v < variants_per_digit; ++v) {
      const double gamma = rng.uniform(0.6, 1.4);  // stroke weight jitter
      lib.add(std::to_string(d), digit_texture(d, gamma, rng));
    }
  lib.add("background", black_tile(32, 0.0, rng));
  for (int v = 1; v < 4; ++v) lib.add("background", black_tile(32, 0.10, rng));
  lib.add("scene", black_tile(1, 0.0, rng));  // root renders nothing
  lib.validate();
  return lib;
}

AssetLibrary load_mnist_assets_idx(const std::string& dir, int per_class) {
  const std::string img_path = dir + "/train-images-idx3-ubyte";
  const std::string lbl_path = dir + "/train-labels-idx1-ubyte";
  const IdxImages images = load_idx_images(img_path);
  const std::vector<std::uint8_t> labels = load_idx_labels(lbl_path);
  if (labels.size() != images.count)
    raise(ErrorKind::Data, "IDX image/label count mismatch under " + dir);

  AssetLibrary lib;
  std::array<int, 10> taken{};
  for (std::size_t i = 0; i < images.count; ++i) {
    const int d = labels[i];
    if (d < 0 || d > 9)
      raise(ErrorKind::Data, "IDX label out of range under " + dir);
    if (taken[d] >= per_class) continue;
    lib.add(std::to_string(d),
            digit_texture_from_idx(images.image(i), images.rows, images.cols));
    ++taken[d];
    if (std::all_of(taken.begin(), taken.end(),
                    [&](int n) { return n >= per_class; }))
      break;
  }
  for (int d = 0; d < 10; ++d)
    if (taken[d] == 0)
      raise(ErrorKind::Data,
            "no IDX samples for digit " + std::to_string(d) + " under " + dir);

  Rng rng(1);
  lib.add("background", black_tile(32, 0.0, rng));
  for (int v = 1; v < 4; ++v) lib.add("background", black_tile(32, 0.10, rng));
  lib.add("scene", black_tile(1, 0.0, rng));
  lib.validate();
  return lib;
}

AssetLibrary make_mnist_assets_auto(int variants_per_digit,
                                    std::uint64_t seed) {
  if (const char* dir = std::getenv("GSOPT_DATA_DIR")) {
    namespace fs = std::filesystem;
    if (fs::exists(fs::path(dir) / "train-images-idx3-ubyte") &&
        fs::exists(fs::path(dir) / "train-labels-idx1-ubyte"))
      return load_mnist_assets_idx(dir, variants_per_digit);
  }
  return make_mnist_assets(variants_per_digit, seed);
}

AssetLibrary make_aerial_assets(const AerialAssetCounts& counts,
                                std::uint64_t seed) {
  if (counts.car < 1 || counts.tree < 1 || counts.house < 1 ||
      counts.grass < 1 || counts.road < 1)
    raise(ErrorKind::Config, "aerial asset counts must be positive");
  Rng rng(seed);
  AssetLibrary lib;
  for (int i = 0; i < counts.grass; ++i)
    lib.add("background",
            flat_tile(64, 64,
                      {rng.uniform(0.15, 0.22), rng.uniform(0.32, 0.42),
                       rng.uniform(0.10, 0.16)},
                      0.04, rng));
  for (int i = 0; i < counts.road; ++i) lib.add("road", road_tile(rng));
  for (int i = 0; i < counts.car; ++i) lib.add("car", car_tile(rng));
  for (int i = 0; i < counts.tree; ++i) lib.add("tree", tree_tile(rng));
  for (int i = 0; i < counts.house; ++i) lib.add("house", house_tile(rng));
  lib.validate();
  return lib;
}

}  // namespace gsopt
