#pragma once

#include <cstdint>
#include <vector>

#include "gsopt/image.hpp"
#include "gsopt/tensor.hpp"

namespace gsopt {

// Fixed-parameter convolutional embedding used as the feature map for
// distribution matching. Three conv+pool stages (widths 16/32/64) over a
// 64x64 bilinear resize of the input; features are the globally pooled
// stage-3 activations, optionally concatenated with the pooled stage-2
// activations (multi_scale). Weights are drawn once from the seed and never
// trained, so the embedding is a deterministic function of the pixels.
class FeatureExtractor {
 public:
  struct Config {
    std::size_t channels = 1;   // expected image channel count
    bool multi_scale = false;   // concat stage-2 pool (width 96 instead of 64)
    std::uint64_t seed = 2024;
  };

  explicit FeatureExtractor(const Config& cfg);

  const Config& config() const { return cfg_; }
  std::size_t width() const { return cfg_.multi_scale ? 96 : 64; }

  // [batch, width] feature matrix; images must match the configured channel
  // count but may be any size (resized internally).
  Tensor extract(const std::vector<Image>& images) const;
  Tensor extract(const Image& image) const;  // [1, width]

  // Pixel gradient of g.feature_grad dot features(image), i.e. the backward
  // map used to chain feature-space gradients onto the rendered image.
  Image backward(const Image& image, const Tensor& feature_grad) const;

 private:
  Config cfg_;
  Tensor k1_, b1_, k2_, b2_, k3_, b3_;
};

}  // namespace gsopt
