#include "gsopt/mmd.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>

#include "json.hpp"

#include "gsopt/checkpoint.hpp"
#include "gsopt/common.hpp"

namespace gsopt {

namespace {

void require_features(const Tensor& t, const char* name) {
  if (t.rank() != 2)
    raise(ErrorKind::Shape,
          std::string(name) + ": feature matrix must be [N, D], got " +
              t.shape_str());
  if (t.dim(0) == 0)
    raise(ErrorKind::Shape, std::string(name) + ": empty feature set");
}

double sq_dist(const double* x, const double* y, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = x[i] - y[i];
    s += diff * diff;
  }
  return s;
}

double kernel_at(const double* x, const double* y, std::size_t d,
                 double sigma) {
  return std::exp(-sq_dist(x, y, d) / (2.0 * sigma * sigma));
}

}  // namespace

double gaussian_kernel(const Tensor& x, const Tensor& y, double sigma) {
  if (x.size() != y.size())
    raise(ErrorKind::Shape, "gaussian_kernel: width mismatch, " +
                                x.shape_str() + " vs " + y.shape_str());
  if (sigma <= 0.0)
    raise(ErrorKind::Config, "gaussian_kernel: bandwidth must be positive");
  return kernel_at(x.data(), y.data(), x.size(), sigma);
}

double resolve_bandwidth(const Tensor& feats_a, const Tensor& feats_b,
                         const KernelConfig& kernel) {
  if (kernel.bandwidth == KernelConfig::Bandwidth::Fixed) {
    if (kernel.sigma <= 0.0)
      raise(ErrorKind::Config, "fixed kernel bandwidth must be positive");
    return kernel.sigma;
  }
  require_features(feats_a, "resolve_bandwidth");
  require_features(feats_b, "resolve_bandwidth");
  if (feats_a.dim(1) != feats_b.dim(1))
    raise(ErrorKind::Shape, "resolve_bandwidth: feature width mismatch, " +
                                feats_a.shape_str() + " vs " +
                                feats_b.shape_str());
  const std::size_t n = feats_a.dim(0), m = feats_b.dim(0);
  const std::size_t d = feats_a.dim(1);
  std::vector<const double*> rows;
  rows.reserve(n + m);
  for (std::size_t i = 0; i < n; ++i) rows.push_back(feats_a.data() + i * d);
  for (std::size_t j = 0; j < m; ++j) rows.push_back(feats_b.data() + j * d);
  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j)
      dist.push_back(std::sqrt(sq_dist(rows[i], rows[j], d)));
  if (dist.empty()) return 1.0;  // single pooled vector
  std::sort(dist.begin(), dist.end());
  const std::size_t mid = dist.size() / 2;
  const double median = dist.size() % 2 ? dist[mid]
                                        : 0.5 * (dist[mid - 1] + dist[mid]);
  return median > 0.0 ? median : 1.0;  // all vectors coincide -> any scale
}

double mmd2(const Tensor& feats_a, const Tensor& feats_b, double sigma) {
  require_features(feats_a, "mmd2");
  require_features(feats_b, "mmd2");
  if (feats_a.dim(1) != feats_b.dim(1))
    raise(ErrorKind::Shape, "mmd2: feature width mismatch, " +
                                feats_a.shape_str() + " vs " +
                                feats_b.shape_str());
  if (sigma <= 0.0)
    raise(ErrorKind::Config, "mmd2: bandwidth must be positive");
  const std::size_t n = feats_a.dim(0), m = feats_b.dim(0);
  const std::size_t d = feats_a.dim(1);

  std::vector<double> buf;
  buf.reserve(std::max(n * n, m * m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      buf.push_back(
          kernel_at(feats_a.data() + i * d, feats_a.data() + j * d, d, sigma));
  const double self_a = pairwise_sum(buf) / static_cast<double>(n * n);

  buf.clear();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      buf.push_back(
          kernel_at(feats_b.data() + i * d, feats_b.data() + j * d, d, sigma));
  const double self_b = pairwise_sum(buf) / static_cast<double>(m * m);

  // The cross buffer is reduced in sorted order: the multiset of kernel
  // values is what both argument orders share, so sorting makes
  // mmd2(A,B) == mmd2(B,A) bit-exact while staying deterministic.
  buf.clear();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      buf.push_back(
          kernel_at(feats_a.data() + i * d, feats_b.data() + j * d, d, sigma));
  std::sort(buf.begin(), buf.end());
  const double cross = pairwise_sum(buf) / static_cast<double>(n * m);

  return self_a + self_b - 2.0 * cross;
}

double mmd2(const Tensor& feats_a, const Tensor& feats_b,
            const KernelConfig& kernel) {
  return mmd2(feats_a, feats_b, resolve_bandwidth(feats_a, feats_b, kernel));
}

namespace {

// d mmd2 / d a_i over rows of A (the first set):
//   (2/N^2) sum_q k(a_i,a_q)(a_q - a_i)/s^2 - (2/NM) sum_j k(a_i,b_j)(b_j - a_i)/s^2
Tensor feature_grad_rows(const Tensor& feats_a, const Tensor& feats_b,
                         double sigma) {
  const std::size_t n = feats_a.dim(0), m = feats_b.dim(0);
  const std::size_t d = feats_a.dim(1);
  const double inv_s2 = 1.0 / (sigma * sigma);
  Tensor grad({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = feats_a.data() + i * d;
    double* gi = grad.data() + i * d;
    for (std::size_t q = 0; q < n; ++q) {
      const double* aq = feats_a.data() + q * d;
      const double coef =
          2.0 / static_cast<double>(n * n) * kernel_at(ai, aq, d, sigma) *
          inv_s2;
      for (std::size_t k = 0; k < d; ++k) gi[k] += coef * (aq[k] - ai[k]);
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = feats_b.data() + j * d;
      const double coef =
          -2.0 / static_cast<double>(n * m) * kernel_at(ai, bj, d, sigma) *
          inv_s2;
      for (std::size_t k = 0; k < d; ++k) gi[k] += coef * (bj[k] - ai[k]);
    }
  }
  return grad;
}

}  // namespace

MmdImageGrads mmd2_image_grad(const std::vector<Image>& rendered,
                              const Tensor& target_feats,
                              const FeatureExtractor& extractor,
                              const KernelConfig& kernel) {
  if (rendered.empty())
    raise(ErrorKind::Shape, "mmd2_image_grad: empty rendered set");
  require_features(target_feats, "mmd2_image_grad");
  MmdImageGrads out;
  out.features = extractor.extract(rendered);
  out.sigma = resolve_bandwidth(out.features, target_feats, kernel);
  out.loss = mmd2(out.features, target_feats, out.sigma);
  const Tensor fgrad = feature_grad_rows(out.features, target_feats, out.sigma);
  const std::size_t d = out.features.dim(1);
  out.pixel_grads.reserve(rendered.size());
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    Tensor row({d});
    for (std::size_t k = 0; k < d; ++k) row[k] = fgrad[i * d + k];
    out.pixel_grads.push_back(extractor.backward(rendered[i], row));
  }
  return out;
}

namespace {

// Loss of one rendered image with every other image in the batch held at its
// unperturbed features. value() re-extracts and re-evaluates the full
// estimator (full-FD probes); pixel_grad() is the analytic row gradient
// pushed through the extractor (render-JVP path).
class RowFunctional : public ImageFunctional {
 public:
  RowFunctional(Tensor base_feats, const Tensor& target,
                const FeatureExtractor& fx, double sigma, std::size_t row)
      : feats_(std::move(base_feats)),
        target_(target),
        fx_(fx),
        sigma_(sigma),
        row_(row) {}

  double value(const Image& img) const override {
    Tensor feats = feats_;
    const Tensor f = fx_.extract(img);
    for (std::size_t k = 0; k < feats.dim(1); ++k)
      feats[row_ * feats.dim(1) + k] = f[k];
    return mmd2(feats, target_, sigma_);
  }

  Image pixel_grad(const Image& img) const override {
    Tensor feats = feats_;
    const Tensor f = fx_.extract(img);
    const std::size_t d = feats.dim(1);
    for (std::size_t k = 0; k < d; ++k) feats[row_ * d + k] = f[k];
    const Tensor fgrad = feature_grad_rows(feats, target_, sigma_);
    Tensor row({d});
    for (std::size_t k = 0; k < d; ++k) row[k] = fgrad[row_ * d + k];
    return fx_.backward(img, row);
  }

 private:
  Tensor feats_;
  const Tensor& target_;
  const FeatureExtractor& fx_;
  double sigma_;
  std::size_t row_;
};

}  // namespace

MmdAttrGrads mmd2_attr_grad(const std::vector<SceneGraph>& graphs,
                            const Grammar& grammar, const AssetLibrary& assets,
                            const RenderConfig& config,
                            const Tensor& target_feats,
                            const FeatureExtractor& extractor,
                            const KernelConfig& kernel, double h,
                            FdScheme scheme) {
  if (graphs.empty())
    raise(ErrorKind::Shape, "mmd2_attr_grad: empty graph batch");
  std::vector<Image> rendered;
  rendered.reserve(graphs.size());
  for (const SceneGraph& g : graphs)
    rendered.push_back(render(g, grammar, assets, config).image);

  MmdAttrGrads out;
  const MmdImageGrads ig =
      mmd2_image_grad(rendered, target_feats, extractor, kernel);
  out.loss = ig.loss;
  out.sigma = ig.sigma;
  out.renders = static_cast<int>(graphs.size());
  out.grads.reserve(graphs.size());
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const RowFunctional loss(ig.features, target_feats, extractor, ig.sigma, i);
    AttrGradResult r = finite_diff_attr_grad(loss, graphs[i], grammar, assets,
                                             config, h, scheme);
    out.renders += r.renders;
    out.grads.push_back(std::move(r));
  }
  return out;
}

void save_feature_cache(const std::string& path, const Tensor& features,
                        const FeatureExtractor::Config& config) {
  require_features(features, "save_feature_cache");
  CheckpointWriter w;
  w.set_meta({{"kind", "feature_cache"},
              {"seed", config.seed},
              {"channels", config.channels},
              {"multi_scale", config.multi_scale},
              {"width", config.multi_scale ? 96 : 64}});
  w.add("features", features, "f64");
  w.save(path);
}

bool load_feature_cache(const std::string& path,
                        const FeatureExtractor::Config& config, Tensor& out) {
  if (!std::filesystem::exists(path)) return false;
  const Checkpoint ckpt = Checkpoint::load(path);
  const nlohmann::json& meta = ckpt.meta();
  if (meta.value("kind", std::string()) != "feature_cache") return false;
  if (meta.value("seed", std::uint64_t{0}) != config.seed) return false;
  if (meta.value("channels", std::size_t{0}) != config.channels) return false;
  if (meta.value("multi_scale", false) != config.multi_scale) return false;
  if (!ckpt.has("features")) return false;
  out = ckpt.tensor("features");
  return true;
}

}  // namespace gsopt
