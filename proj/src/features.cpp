#include "gsopt/features.hpp"

#include <cmath>
#include <cstddef>

#include "gsopt/common.hpp"
#include "gsopt/tape.hpp"

namespace gsopt {

namespace {

constexpr std::size_t kResize = 64;

Tensor he_kernel(Rng& rng, std::size_t out_c, std::size_t in_c) {
  Tensor k({out_c, in_c, 3, 3});
  const double std = std::sqrt(2.0 / static_cast<double>(in_c * 9));
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = std * rng.normal();
  return k;
}

// Planar [1,C,64,64] tensor from an interleaved image, resized first.
Tensor to_input(const Image& image, std::size_t channels) {
  if (image.c != channels)
    raise(ErrorKind::Shape,
          "feature extractor configured for " + std::to_string(channels) +
              " channel(s), got image with " + std::to_string(image.c));
  const Image resized = resize_bilinear(image, kResize, kResize);
  Tensor x({1, channels, kResize, kResize});
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t y = 0; y < kResize; ++y)
      for (std::size_t xx = 0; xx < kResize; ++xx)
        x[(ch * kResize + y) * kResize + xx] = resized.at(y, xx, ch);
  return x;
}

struct FeatureTape {
  Tape tape;
  NodeId input = -1;
  NodeId feats = -1;
};

}  // namespace

FeatureExtractor::FeatureExtractor(const Config& cfg) : cfg_(cfg) {
  if (cfg_.channels < 1 || cfg_.channels > 4)
    raise(ErrorKind::Config, "feature extractor channels must be in [1, 4]");
  Rng rng(cfg_.seed);
  k1_ = he_kernel(rng, 16, cfg_.channels);
  b1_ = Tensor({16});
  k2_ = he_kernel(rng, 32, 16);
  b2_ = Tensor({32});
  k3_ = he_kernel(rng, 64, 32);
  b3_ = Tensor({64});
}

namespace {

void run_forward(const FeatureExtractor::Config& cfg, const Tensor& k1,
                 const Tensor& b1, const Tensor& k2, const Tensor& b2,
                 const Tensor& k3, const Tensor& b3, Tensor input,
                 bool needs_grad, FeatureTape& out) {
  Tape& t = out.tape;
  out.input = t.leaf(std::move(input), needs_grad);
  const NodeId wk1 = t.leaf(k1), wb1 = t.leaf(b1);
  const NodeId wk2 = t.leaf(k2), wb2 = t.leaf(b2);
  const NodeId wk3 = t.leaf(k3), wb3 = t.leaf(b3);
  const NodeId s1 = t.avgpool2(t.relu(t.conv2d(out.input, wk1, wb1, 1)));
  const NodeId s2 = t.avgpool2(t.relu(t.conv2d(s1, wk2, wb2, 1)));
  const NodeId s3 = t.avgpool2(t.relu(t.conv2d(s2, wk3, wb3, 1)));
  if (cfg.multi_scale) {
    // Pool stage 2 down to stage 3's grid so the channels can be stacked;
    // averaging block means leaves the global mean unchanged.
    out.feats = t.global_avg_pool(t.concat_channels(t.avgpool2(s2), s3));
  } else {
    out.feats = t.global_avg_pool(s3);
  }
}

}  // namespace

Tensor FeatureExtractor::extract(const Image& image) const {
  FeatureTape ft;
  run_forward(cfg_, k1_, b1_, k2_, b2_, k3_, b3_, to_input(image, cfg_.channels),
              false, ft);
  Tensor row({1, width()});
  const Tensor& v = ft.tape.value(ft.feats);
  for (std::size_t i = 0; i < row.size(); ++i) row[i] = v[i];
  return row;
}

Tensor FeatureExtractor::extract(const std::vector<Image>& images) const {
  Tensor out({images.size(), width()});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor row = extract(images[i]);
    for (std::size_t j = 0; j < width(); ++j) out[i * width() + j] = row[j];
  }
  return out;
}

Image FeatureExtractor::backward(const Image& image,
                                 const Tensor& feature_grad) const {
  if (feature_grad.size() != width())
    raise(ErrorKind::Shape, "feature gradient width " +
                                std::to_string(feature_grad.size()) +
                                " does not match extractor width " +
                                std::to_string(width()));
  FeatureTape ft;
  run_forward(cfg_, k1_, b1_, k2_, b2_, k3_, b3_, to_input(image, cfg_.channels),
              true, ft);
  Tensor seed({1, width()});
  for (std::size_t i = 0; i < width(); ++i) seed[i] = feature_grad[i];
  ft.tape.backward_with(ft.feats, seed);
  const Tensor& gin = ft.tape.grad(ft.input);  // [1,C,64,64]

  // Push the gradient back through the bilinear resize: each resized pixel
  // pulled from up to four source taps, so its gradient is scattered to the
  // same taps with the same weights.
  Image out(image.h, image.w, image.c);
  const double sy =
      kResize > 1 ? static_cast<double>(image.h - 1) / (kResize - 1) : 0.0;
  const double sx =
      kResize > 1 ? static_cast<double>(image.w - 1) / (kResize - 1) : 0.0;
  for (std::size_t y = 0; y < kResize; ++y) {
    const double fy = image.h > 1 ? y * sy : 0.0;
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < kResize; ++x) {
      const double fx = image.w > 1 ? x * sx : 0.0;
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < image.c; ++ch) {
        const double g = gin[(ch * kResize + y) * kResize + x];
        out.at(y0, x0, ch) += (1.0 - wy) * (1.0 - wx) * g;
        out.at(y0, x1, ch) += (1.0 - wy) * wx * g;
        out.at(y1, x0, ch) += wy * (1.0 - wx) * g;
        out.at(y1, x1, ch) += wy * wx * g;
      }
    }
  }
  return out;
}

}  // namespace gsopt
