#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "gsopt/checkpoint.hpp"
#include "gsopt/mmd.hpp"

using namespace gsopt;
using nlohmann::json;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("gsopt_mmd_" + std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

Image random_image(Rng& rng, std::size_t h, std::size_t w, std::size_t c = 1) {
  Image img(h, w, c);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

Tensor row_tensor(std::vector<double> v) {
  Tensor t({1, v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

Tensor stack_rows(const std::vector<std::vector<double>>& rows) {
  Tensor t({rows.size(), rows[0].size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      t[i * rows[0].size() + j] = rows[i][j];
  return t;
}

double l2_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double grad_norm(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return std::sqrt(s);
}

// --- scene setup shared by the renderer-coupled cases ----------------------

// Single digit over a black background; rotation and location mutable.
Grammar mini_grammar() {
  return Grammar::from_json(json::parse(R"({
    "classes": ["scene", "background", "7"],
    "rules": {
      "scene": [
        {"class": "background", "count": 1},
        {"class": "7", "count": 1}
      ]
    },
    "priors": {
      "7": {
        "rotation": {"type": "const", "value": 0.0},
        "locationX": {"type": "const", "value": 0.5},
        "locationY": {"type": "const", "value": 0.5},
        "size": {"type": "const", "value": 6.0}
      }
    },
    "mutable": {"7": ["rotation", "locationX", "locationY"]},
    "ranges": {
      "7": {
        "rotation": {"lo": 0.0, "hi": 360.0, "units": "deg"},
        "size": {"lo": 2.0, "hi": 10.0, "units": "px"}
      }
    },
    "max_depth": 2
  })"));
}

// Same scene shape with nothing marked mutable.
Grammar frozen_grammar() {
  return Grammar::from_json(json::parse(R"({
    "classes": ["scene", "background", "7"],
    "rules": {
      "scene": [
        {"class": "background", "count": 1},
        {"class": "7", "count": 1}
      ]
    },
    "priors": {
      "7": {
        "rotation": {"type": "const", "value": 0.0},
        "locationX": {"type": "const", "value": 0.5},
        "locationY": {"type": "const", "value": 0.5},
        "size": {"type": "const", "value": 6.0}
      }
    },
    "mutable": {},
    "ranges": {
      "7": {
        "rotation": {"lo": 0.0, "hi": 360.0, "units": "deg"},
        "size": {"lo": 2.0, "hi": 10.0, "units": "px"}
      }
    },
    "max_depth": 2
  })"));
}

SceneGraph mini_graph(const Grammar& g, double rot_n, double x_n, double y_n,
                      double size_n = 0.9) {
  Rng rng(1);
  SceneGraph s = sample_scene_graph(g, rng);
  SceneNode& d = s.nodes[2];
  d.attrs[g.n_classes() + kAttrRotation] = rot_n;
  d.attrs[g.n_classes() + kAttrLocationX] = x_n;
  d.attrs[g.n_classes() + kAttrLocationY] = y_n;
  d.attrs[g.n_classes() + kAttrSize] = size_n;
  return s;
}

// Smooth two-lobe blob (soft alpha, no hard cutoffs) so both location and
// rotation move mass continuously.
AssetLibrary blob_assets() {
  AssetLibrary lib;
  const std::size_t n = 12;
  Texture t(n, n);
  const double c = (n - 1) / 2.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t x = 0; x < n; ++x) {
      const double d2 = (r - c) * (r - c) + (x - c) * (x - c);
      const double e2 =
          (r - c - 2.0) * (r - c - 2.0) + (x - c - 1.5) * (x - c - 1.5);
      const double v =
          std::min(1.0, std::exp(-d2 / 16.0) + 0.7 * std::exp(-e2 / 9.6));
      t.at(r, x, 0) = t.at(r, x, 1) = t.at(r, x, 2) = v;
      t.at(r, x, 3) = v;
    }
  lib.add("7", t);
  Texture bg(1, 1);
  bg.at(0, 0, 3) = 1.0;
  lib.add("background", bg);
  return lib;
}

RenderConfig smooth_config() {
  RenderConfig cfg;
  cfg.canvas_h = cfg.canvas_w = 32;
  cfg.kind = ExperimentKind::Mnist;
  cfg.aa_samples = 6;  // smooth the render so probes see gradients, not kinks
  return cfg;
}

}  // namespace

TEST_CASE("feature extraction is deterministic and seed-dependent") {
  FeatureExtractor::Config cfg;
  cfg.seed = 11;
  const FeatureExtractor fx(cfg);
  CHECK(fx.width() == 64);

  Rng rng(5);
  const Image a = random_image(rng, 20, 20);
  const Image b = random_image(rng, 20, 20);

  const Tensor fa1 = fx.extract(a);
  const Tensor fa2 = fx.extract(a);
  CHECK(fa1.size() == 64);
  for (std::size_t i = 0; i < fa1.size(); ++i) CHECK(fa1[i] == fa2[i]);

  // A second extractor built from the same seed is the same function.
  const FeatureExtractor fx_clone(cfg);
  const Tensor fa3 = fx_clone.extract(a);
  for (std::size_t i = 0; i < fa1.size(); ++i) CHECK(fa1[i] == fa3[i]);

  // Distinct images and distinct seeds both change the embedding.
  CHECK(l2_diff(fa1, fx.extract(b)) > 0.0);
  FeatureExtractor::Config other = cfg;
  other.seed = 12;
  CHECK(l2_diff(fa1, FeatureExtractor(other).extract(a)) > 0.0);

  SUBCASE("multi-scale variant widens the embedding") {
    FeatureExtractor::Config ms = cfg;
    ms.multi_scale = true;
    const FeatureExtractor fx_ms(ms);
    CHECK(fx_ms.width() == 96);
    CHECK(fx_ms.extract(a).size() == 96);
  }

  SUBCASE("batch extraction stacks the per-image rows") {
    const Tensor batch = fx.extract(std::vector<Image>{a, b});
    CHECK(batch.dim(0) == 2);
    CHECK(batch.dim(1) == 64);
    const Tensor fb = fx.extract(b);
    for (std::size_t j = 0; j < 64; ++j) {
      CHECK(batch[j] == fa1[j]);
      CHECK(batch[64 + j] == fb[j]);
    }
  }
}

TEST_CASE("feature extractor validates its inputs") {
  FeatureExtractor::Config cfg;
  const FeatureExtractor fx(cfg);
  Rng rng(3);
  CHECK_THROWS_AS(fx.extract(random_image(rng, 8, 8, 3)), Error);

  FeatureExtractor::Config bad = cfg;
  bad.channels = 0;
  CHECK_THROWS_AS(FeatureExtractor{bad}, Error);

  // Backward needs a gradient of the extractor's width.
  CHECK_THROWS_AS(fx.backward(random_image(rng, 8, 8), Tensor({3})), Error);
}

TEST_CASE("feature backward matches pixel finite differences") {
  FeatureExtractor::Config cfg;
  cfg.seed = 7;
  const FeatureExtractor fx(cfg);
  Rng rng(21);
  // Non-square and smaller than the resize target, so the bilinear adjoint
  // has to spread gradients over genuine multi-tap weights.
  Image img = random_image(rng, 20, 14);
  Tensor seed({64});
  for (std::size_t i = 0; i < 64; ++i) seed[i] = rng.normal();

  const Image analytic = fx.backward(img, seed);
  auto scalar = [&](const Image& im) {
    const Tensor f = fx.extract(im);
    double s = 0.0;
    for (std::size_t i = 0; i < 64; ++i) s += seed[i] * f[i];
    return s;
  };

  const double eps = 1e-5;
  double err2 = 0.0, ref2 = 0.0;
  for (int probe = 0; probe < 64; ++probe) {
    const std::size_t y = rng.uniform_index(img.h);
    const std::size_t x = rng.uniform_index(img.w);
    Image plus = img, minus = img;
    plus.at(y, x, 0) += eps;
    minus.at(y, x, 0) -= eps;
    const double fd = (scalar(plus) - scalar(minus)) / (2.0 * eps);
    const double diff = fd - analytic.at(y, x, 0);
    err2 += diff * diff;
    ref2 += fd * fd;
  }
  CHECK(ref2 > 0.0);
  CHECK(std::sqrt(err2 / ref2) < 1e-4);
}

TEST_CASE("gaussian kernel identities") {
  const Tensor x = row_tensor({0.25, -1.5, 3.0});
  CHECK(gaussian_kernel(x, x, 0.7) == 1.0);

  // ||x-y||^2 = 2 with sigma = 1 hits exp(-1) exactly.
  const Tensor a = row_tensor({0.0, 0.0});
  const Tensor b = row_tensor({1.0, 1.0});
  CHECK(gaussian_kernel(a, b, 1.0) == std::exp(-1.0));
  CHECK(gaussian_kernel(a, b, 1.0) == doctest::Approx(0.36788).epsilon(1e-4));

  Rng rng(4);
  Tensor u({5}), v({5});
  for (std::size_t i = 0; i < 5; ++i) {
    u[i] = rng.normal();
    v[i] = rng.normal();
  }
  CHECK(gaussian_kernel(u, v, 0.9) == gaussian_kernel(v, u, 0.9));
  CHECK(gaussian_kernel(u, v, 0.9) > 0.0);
  CHECK(gaussian_kernel(u, v, 0.9) <= 1.0);

  CHECK_THROWS_AS(gaussian_kernel(u, row_tensor({1.0}), 1.0), Error);
  CHECK_THROWS_AS(gaussian_kernel(u, v, 0.0), Error);
}

TEST_CASE("mmd2 identities") {
  Rng rng(9);
  auto random_feats = [&](std::size_t n, std::size_t d) {
    Tensor t({n, d});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
  };
  const Tensor a = random_feats(5, 3);
  const Tensor b = random_feats(7, 3);

  SUBCASE("identical sets score zero") {
    CHECK(std::abs(mmd2(a, a, 0.8)) <= 1e-12);
  }
  SUBCASE("symmetry is bit-exact") {
    CHECK(mmd2(a, b, 0.8) == mmd2(b, a, 0.8));
  }
  SUBCASE("non-negative over random draws") {
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor p = random_feats(1 + rng.uniform_index(6), 4);
      const Tensor q = random_feats(1 + rng.uniform_index(6), 4);
      CHECK(mmd2(p, q, 1.3) >= -1e-12);
    }
  }
  SUBCASE("singleton sets reduce to the closed form") {
    const Tensor x = random_feats(1, 4);
    const Tensor y = random_feats(1, 4);
    const double k = gaussian_kernel(x, y, 1.1);
    CHECK(mmd2(x, y, 1.1) == doctest::Approx(2.0 - 2.0 * k).epsilon(1e-12));
  }
  SUBCASE("input validation") {
    CHECK_THROWS_AS(mmd2(Tensor({0, 3}), b, 1.0), Error);
    CHECK_THROWS_AS(mmd2(a, Tensor({0, 3}), 1.0), Error);
    CHECK_THROWS_AS(mmd2(a, random_feats(2, 4), 1.0), Error);
    CHECK_THROWS_AS(mmd2(a, b, -1.0), Error);
    KernelConfig fixed;
    fixed.bandwidth = KernelConfig::Bandwidth::Fixed;
    fixed.sigma = 0.0;
    CHECK_THROWS_AS(mmd2(a, b, fixed), Error);
  }
}

TEST_CASE("median bandwidth heuristic") {
  // Pooled distances of {0, 1, 3} are {1, 2, 3}; the median is 2.
  const Tensor a = stack_rows({{0.0}, {1.0}});
  const Tensor b = stack_rows({{3.0}});
  KernelConfig cfg;
  CHECK(resolve_bandwidth(a, b, cfg) == doctest::Approx(2.0).epsilon(1e-12));

  // Every vector identical: fall back to a unit bandwidth instead of zero.
  const Tensor same = stack_rows({{0.5, 0.5}, {0.5, 0.5}});
  CHECK(resolve_bandwidth(same, same, cfg) == 1.0);

  KernelConfig fixed;
  fixed.bandwidth = KernelConfig::Bandwidth::Fixed;
  fixed.sigma = 0.37;
  CHECK(resolve_bandwidth(a, b, fixed) == 0.37);
}

TEST_CASE("mmd2 separates far distributions under the median heuristic") {
  Rng rng(123);
  auto draw = [&](double mean) {
    Tensor t({200, 1});
    for (std::size_t i = 0; i < 200; ++i) t[i] = mean + rng.normal();
    return t;
  };
  KernelConfig cfg;  // median
  double min_far = 1e9, max_near = -1e9;
  for (int rep = 0; rep < 50; ++rep) {
    const double far = mmd2(draw(0.0), draw(5.0), cfg);
    const double near = mmd2(draw(0.0), draw(0.0), cfg);
    min_far = std::min(min_far, far);
    max_near = std::max(max_near, near);
  }
  // Far sets dominate same-distribution noise with a clear margin in every
  // repetition, not just on average.
  CHECK(min_far > max_near);
  CHECK(min_far > 10.0 * max_near);
}

TEST_CASE("mmd2_image_grad sits at a flat minimum on equal sets") {
  FeatureExtractor::Config fcfg;
  fcfg.seed = 31;
  const FeatureExtractor fx(fcfg);
  Rng rng(8);
  std::vector<Image> set;
  for (int i = 0; i < 3; ++i) set.push_back(random_image(rng, 16, 16));
  const Tensor target = fx.extract(set);

  KernelConfig cfg;
  const MmdImageGrads res = mmd2_image_grad(set, target, fx, cfg);
  CHECK(std::abs(res.loss) <= 1e-12);
  for (const Image& g : res.pixel_grads) {
    double norm = 0.0;
    for (double v : g.data) norm += v * v;
    CHECK(std::sqrt(norm) < 1e-8);
  }

  // The reported loss is exactly the estimator on the extracted features.
  CHECK(res.loss == mmd2(res.features, target, res.sigma));

  SUBCASE("doubling the bandwidth keeps the zero and moves the rest") {
    KernelConfig doubled;
    doubled.bandwidth = KernelConfig::Bandwidth::Fixed;
    doubled.sigma = 2.0 * res.sigma;
    CHECK(std::abs(mmd2_image_grad(set, target, fx, doubled).loss) <= 1e-12);

    std::vector<Image> other;
    for (int i = 0; i < 3; ++i) other.push_back(random_image(rng, 16, 16));
    KernelConfig base;
    base.bandwidth = KernelConfig::Bandwidth::Fixed;
    base.sigma = res.sigma;
    const double l1 = mmd2_image_grad(other, target, fx, base).loss;
    const double l2 = mmd2_image_grad(other, target, fx, doubled).loss;
    CHECK(l1 > 0.0);
    CHECK(l2 > 0.0);
    CHECK(l1 != l2);
  }
}

TEST_CASE("mmd2_image_grad matches pixel finite differences on toy images") {
  FeatureExtractor::Config fcfg;
  fcfg.seed = 17;
  const FeatureExtractor fx(fcfg);
  Rng rng(55);
  std::vector<Image> rendered;
  for (int i = 0; i < 2; ++i) rendered.push_back(random_image(rng, 8, 8));
  std::vector<Image> targets;
  for (int i = 0; i < 2; ++i) targets.push_back(random_image(rng, 8, 8));
  const Tensor target_feats = fx.extract(targets);

  // Freeze the bandwidth so the probe differentiates the loss the gradient
  // was actually taken of (the heuristic would shift under perturbation).
  KernelConfig median;
  KernelConfig fixed;
  fixed.bandwidth = KernelConfig::Bandwidth::Fixed;
  fixed.sigma = resolve_bandwidth(fx.extract(rendered), target_feats, median);

  const MmdImageGrads res = mmd2_image_grad(rendered, target_feats, fx, fixed);
  CHECK(res.loss > 0.0);

  auto loss_at = [&](const std::vector<Image>& imgs) {
    return mmd2(fx.extract(imgs), target_feats, fixed.sigma);
  };

  const double eps = 1e-4;
  double err2 = 0.0, ref2 = 0.0;
  for (int probe = 0; probe < 40; ++probe) {
    const std::size_t which = rng.uniform_index(2);
    const std::size_t y = rng.uniform_index(8);
    const std::size_t x = rng.uniform_index(8);
    std::vector<Image> plus = rendered, minus = rendered;
    plus[which].at(y, x, 0) += eps;
    minus[which].at(y, x, 0) -= eps;
    const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * eps);
    const double diff = fd - res.pixel_grads[which].at(y, x, 0);
    err2 += diff * diff;
    ref2 += fd * fd;
  }
  CHECK(ref2 > 0.0);
  CHECK(std::sqrt(err2 / ref2) < 1e-3);
}

TEST_CASE("mmd2_attr_grad with nothing mutable still scores the batch") {
  const Grammar g = frozen_grammar();
  const AssetLibrary assets = blob_assets();
  const RenderConfig rc = smooth_config();
  FeatureExtractor::Config fcfg;
  const FeatureExtractor fx(fcfg);

  std::vector<Image> target_imgs;
  target_imgs.push_back(render(mini_graph(g, 0.5, 0.6, 0.6), g, assets, rc).image);
  target_imgs.push_back(render(mini_graph(g, 0.4, 0.55, 0.65), g, assets, rc).image);
  const Tensor target = fx.extract(target_imgs);

  std::vector<SceneGraph> graphs;
  graphs.push_back(mini_graph(g, 0.5, 0.4, 0.45));
  KernelConfig cfg;
  const MmdAttrGrads res =
      mmd2_attr_grad(graphs, g, blob_assets(), rc, target, fx, cfg);
  CHECK(res.loss > 0.0);
  CHECK(res.sigma > 0.0);
  REQUIRE(res.grads.size() == 1);
  for (std::size_t i = 0; i < res.grads[0].grad.size(); ++i)
    CHECK(res.grads[0].grad[i] == 0.0);
  // One render for the batch image, one inside the probe for its base.
  CHECK(res.renders == 2);
}

TEST_CASE("mmd2_attr_grad: render-jvp and full-fd schemes agree") {
  const Grammar g = mini_grammar();
  const AssetLibrary assets = blob_assets();
  const RenderConfig rc = smooth_config();
  FeatureExtractor::Config fcfg;
  fcfg.seed = 41;
  const FeatureExtractor fx(fcfg);

  std::vector<Image> target_imgs;
  target_imgs.push_back(render(mini_graph(g, 0.55, 0.6, 0.6), g, assets, rc).image);
  target_imgs.push_back(render(mini_graph(g, 0.45, 0.55, 0.65), g, assets, rc).image);
  target_imgs.push_back(render(mini_graph(g, 0.35, 0.65, 0.55), g, assets, rc).image);
  target_imgs.push_back(render(mini_graph(g, 0.6, 0.58, 0.62), g, assets, rc).image);
  const Tensor target = fx.extract(target_imgs);

  Rng rng(77);
  // Consistency between the two gradient paths is checked in the small-step
  // regime where both difference quotients resolve the same local slope. At
  // coarse steps the comparison would measure step-size artifacts instead:
  // the median bandwidth puts the kernel's curvature scale well below
  // h = 0.01, so there the quotients smooth the surface differently (the
  // descent-direction case below covers that practical regime).
  const double h = 1e-6;
  double err_sum = 0.0;
  int probes = 0;
  Tensor mean_jvp, mean_fd;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SceneGraph> graphs;
    for (int i = 0; i < 2; ++i)
      graphs.push_back(mini_graph(g, rng.uniform(0.3, 0.7),
                                  rng.uniform(0.35, 0.65),
                                  rng.uniform(0.35, 0.65)));
    KernelConfig cfg;  // median, frozen internally for the probes
    const MmdAttrGrads jvp = mmd2_attr_grad(graphs, g, assets, rc, target, fx,
                                            cfg, h, FdScheme::RenderJvp);
    const MmdAttrGrads ffd = mmd2_attr_grad(graphs, g, assets, rc, target, fx,
                                            cfg, h, FdScheme::FullFd);
    CHECK(jvp.loss == ffd.loss);
    CHECK(jvp.sigma == ffd.sigma);
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      const Tensor& a = jvp.grads[i].grad;
      const Tensor& b = ffd.grads[i].grad;
      if (mean_jvp.size() == 0) {
        mean_jvp = Tensor(std::vector<std::size_t>{a.size()});
        mean_fd = Tensor(std::vector<std::size_t>{a.size()});
      }
      for (std::size_t k = 0; k < a.size(); ++k) {
        mean_jvp[k] += a[k];
        mean_fd[k] += b[k];
      }
      err_sum += l2_diff(a, b) / grad_norm(b);
      ++probes;
    }
  }
  CHECK(probes == 100);
  const double mean_err = err_sum / probes;
  const double mean_grad_err = l2_diff(mean_jvp, mean_fd) / grad_norm(mean_fd);
  INFO("per-probe mean rel err ", mean_err, ", mean-gradient rel err ",
       mean_grad_err);
  CHECK(mean_err < 1e-2);
}

TEST_CASE("negative attribute gradient is a descent direction") {
  const Grammar g = mini_grammar();
  const AssetLibrary assets = blob_assets();
  const RenderConfig rc = smooth_config();
  FeatureExtractor::Config fcfg;
  fcfg.seed = 19;
  const FeatureExtractor fx(fcfg);

  // Target digits cluster in the lower-right quadrant.
  std::vector<Image> target_imgs;
  target_imgs.push_back(render(mini_graph(g, 0.5, 0.62, 0.6), g, assets, rc).image);
  target_imgs.push_back(render(mini_graph(g, 0.5, 0.58, 0.64), g, assets, rc).image);
  target_imgs.push_back(render(mini_graph(g, 0.5, 0.6, 0.58), g, assets, rc).image);
  const Tensor target = fx.extract(target_imgs);

  Rng rng(13);
  const double h = 0.01;
  const std::size_t base_col = g.n_classes();
  int successes = 0;
  const int trials = 50;
  for (int trial = 0; trial < trials; ++trial) {
    // Start well away from the target cluster.
    const SceneGraph start = mini_graph(g, rng.uniform(0.4, 0.6),
                                        rng.uniform(0.3, 0.45),
                                        rng.uniform(0.3, 0.45));
    std::vector<SceneGraph> batch{start};
    KernelConfig cfg;
    const MmdAttrGrads res =
        mmd2_attr_grad(batch, g, assets, rc, target, fx, cfg, h);
    const Tensor& grad = res.grads[0].grad;
    const double norm = grad_norm(grad);
    if (norm == 0.0) continue;

    bool improved = false;
    for (const double step : {h, 2.0 * h, 4.0 * h}) {
      SceneGraph moved = start;
      for (std::size_t col = 0; col < start.nodes[2].attrs.size(); ++col) {
        const std::size_t idx = 2 * start.nodes[2].attrs.size() + col;
        double v = moved.nodes[2].attrs[col] - step * grad[idx] / norm;
        moved.nodes[2].attrs[col] = std::min(1.0, std::max(0.0, v));
      }
      const Image img = render(moved, g, assets, rc).image;
      const double loss =
          mmd2(fx.extract(std::vector<Image>{img}), target, res.sigma);
      if (loss < res.loss) {
        improved = true;
        break;
      }
    }
    successes += improved ? 1 : 0;
  }
  INFO("descent successes: ", successes, "/", trials);
  CHECK(successes >= 40);
  (void)base_col;
}

TEST_CASE("feature cache round trip") {
  TempDir tmp;
  FeatureExtractor::Config cfg;
  cfg.seed = 99;
  Rng rng(2);
  Tensor feats({3, 64});
  for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = rng.normal();

  const std::string path = tmp.file("target.feats");
  save_feature_cache(path, feats, cfg);

  Tensor loaded;
  REQUIRE(load_feature_cache(path, cfg, loaded));
  REQUIRE(loaded.rank() == 2);
  CHECK(loaded.dim(0) == 3);
  for (std::size_t i = 0; i < feats.size(); ++i) CHECK(loaded[i] == feats[i]);

  SUBCASE("a different extractor config invalidates the cache") {
    FeatureExtractor::Config other = cfg;
    other.seed = 100;
    Tensor out;
    CHECK_FALSE(load_feature_cache(path, other, out));
    other = cfg;
    other.multi_scale = true;
    CHECK_FALSE(load_feature_cache(path, other, out));
  }
  SUBCASE("missing files fail soft") {
    Tensor out;
    CHECK_FALSE(load_feature_cache(tmp.file("nope"), cfg, out));
  }
  SUBCASE("foreign checkpoints are rejected") {
    CheckpointWriter w;
    w.set_meta({{"kind", "model"}});
    w.add("features", feats, "f64");
    const std::string alien = tmp.file("alien.ckpt");
    w.save(alien);
    Tensor out;
    CHECK_FALSE(load_feature_cache(alien, cfg, out));
  }
}
