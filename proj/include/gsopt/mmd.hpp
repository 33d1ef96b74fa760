#pragma once

#include <string>
#include <vector>

#include "gsopt/features.hpp"
#include "gsopt/renderer.hpp"
#include "gsopt/tensor.hpp"

namespace gsopt {

// Gaussian-kernel configuration for the squared-MMD objective. The median
// heuristic picks the bandwidth from the pooled pairwise feature distances
// of the sets being compared; a fixed bandwidth pins it explicitly.
struct KernelConfig {
  enum class Bandwidth { Median, Fixed };
  Bandwidth bandwidth = Bandwidth::Median;
  double sigma = 1.0;  // used (and validated > 0) in Fixed mode
};

// exp(-||x - y||^2 / (2 sigma^2)) over equal-width vectors (any rank, same
// element count).
double gaussian_kernel(const Tensor& x, const Tensor& y, double sigma);

// Bandwidth actually used for the feature matrices [N,D] and [M,D]: the
// fixed value, or the median pooled pairwise distance (falling back to 1
// when every vector coincides).
double resolve_bandwidth(const Tensor& feats_a, const Tensor& feats_b,
                         const KernelConfig& kernel);

// Biased squared-MMD estimator, diagonal terms included:
//   (1/N^2) sum k(a,a') + (1/M^2) sum k(b,b') - (2/NM) sum k(a,b).
// Non-negative up to rounding and exactly symmetric in (A, B).
double mmd2(const Tensor& feats_a, const Tensor& feats_b, double sigma);
double mmd2(const Tensor& feats_a, const Tensor& feats_b,
            const KernelConfig& kernel);

struct MmdImageGrads {
  double loss = 0.0;
  double sigma = 0.0;  // bandwidth the loss and gradients were taken at
  Tensor features;     // [N, width] extracted from the rendered images
  std::vector<Image> pixel_grads;  // d loss / d image, per rendered image
};

// Analytic gradient of mmd2(phi(rendered), target) with respect to every
// rendered image, chained through the extractor's backward map.
MmdImageGrads mmd2_image_grad(const std::vector<Image>& rendered,
                              const Tensor& target_feats,
                              const FeatureExtractor& extractor,
                              const KernelConfig& kernel);

struct MmdAttrGrads {
  double loss = 0.0;
  double sigma = 0.0;
  std::vector<AttrGradResult> grads;  // per graph, over mutable slots
  int renders = 0;                    // total forward renders consumed
};

// End-to-end distribution-matching gradient: renders each graph from its
// stored attributes, takes the analytic image gradient, and pushes it into
// attribute space with the renderer's finite-difference probe. The bandwidth
// is resolved once on the unperturbed batch and frozen for all probes.
MmdAttrGrads mmd2_attr_grad(const std::vector<SceneGraph>& graphs,
                            const Grammar& grammar, const AssetLibrary& assets,
                            const RenderConfig& config,
                            const Tensor& target_feats,
                            const FeatureExtractor& extractor,
                            const KernelConfig& kernel, double h = 0.01,
                            FdScheme scheme = FdScheme::RenderJvp);

// Target-feature cache: a checkpoint holding the [M, width] matrix plus the
// extractor config, so repeated runs against the same target set can skip
// re-extraction. Loading fails soft (returns false) when the file is absent
// or was written under a different extractor config.
void save_feature_cache(const std::string& path, const Tensor& features,
                        const FeatureExtractor::Config& config);
bool load_feature_cache(const std::string& path,
                        const FeatureExtractor::Config& config, Tensor& out);

}  // namespace gsopt
