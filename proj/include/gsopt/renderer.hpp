#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "gsopt/assets.hpp"
#include "gsopt/grammar.hpp"
#include "gsopt/image.hpp"
#include "gsopt/scene_graph.hpp"

namespace gsopt {

enum class Interp { Bilinear, Nearest };
enum class ExperimentKind { Mnist, Aerial };

struct RenderConfig {
  std::size_t canvas_h = 32;
  std::size_t canvas_w = 32;
  ExperimentKind kind = ExperimentKind::Mnist;
  Interp interp = Interp::Bilinear;
  // Subpixel samples per axis. 1 point-samples at pixel centers; higher
  // values average an aa_samples^2 grid, smoothing the render as a function
  // of object attributes (which finite differences rely on).
  int aa_samples = 1;
  // Length of the car coordinate frame along the road, as a fraction of the
  // smaller canvas dimension.
  double road_length_frac = 0.75;
  // Record per-layer alpha maps on the sample (for invariant checks).
  bool keep_layers = false;
};

struct LayerRecord {
  int node_id = -1;
  int class_id = -1;
  Tensor alpha;  // [h, w]
};

struct RenderedSample {
  Image image;
  int class_label = -1;  // digit ground truth (mnist)
  Tensor label_map;      // per-pixel class ids (aerial)
  int graph_id = 0;
  bool clamped = false;           // an object center was clamped on canvas
  std::vector<int> absent_nodes;  // zero-area after scaling, skipped
  std::vector<LayerRecord> layers;
};

// Pure function of its inputs: identical calls give bit-identical samples.
RenderedSample render(const SceneGraph& graph, const Grammar& grammar,
                      const AssetLibrary& assets, const RenderConfig& config);

// Element i equals render(graphs[i]); may parallelize internally. The first
// failing item's error is rethrown with its index prefixed.
std::vector<RenderedSample> render_batch(const std::vector<SceneGraph>& graphs,
                                         const Grammar& grammar,
                                         const AssetLibrary& assets,
                                         const RenderConfig& config);

// Scalar loss of an image that also exposes its analytic pixel gradient.
struct ImageFunctional {
  virtual ~ImageFunctional() = default;
  virtual double value(const Image& img) const = 0;
  virtual Image pixel_grad(const Image& img) const = 0;
};

enum class FdScheme {
  RenderJvp,  // forward image difference quotient dotted with pixel grad
  FullFd,     // central difference of the scalar loss
};

struct AttrGradResult {
  Tensor grad;             // [n_nodes, a_in], nonzero only on mutable slots
  int boundary_flags = 0;  // slots that fell back to a one-sided difference
  int renders = 0;         // forward evaluations consumed
};

// Core finite-difference machinery over an arbitrary image-valued function
// of the attribute matrix. Perturbations act on normalized attributes; with
// bounded=true probes never leave [0,1] (one-sided fallback near the edges).
AttrGradResult fd_gradient(
    const std::function<Image(const Tensor&)>& eval_image,
    const ImageFunctional& loss, const Tensor& attrs0,
    const std::vector<std::pair<std::size_t, std::size_t>>& slots, double h,
    FdScheme scheme, bool bounded = true);

// Gradient of loss(render(graph)) with respect to every mutable attribute.
AttrGradResult finite_diff_attr_grad(const ImageFunctional& loss,
                                     const SceneGraph& graph,
                                     const Grammar& grammar,
                                     const AssetLibrary& assets,
                                     const RenderConfig& config,
                                     double h = 0.01,
                                     FdScheme scheme = FdScheme::RenderJvp);

}  // namespace gsopt
