#include "gsopt/renderer.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>

namespace gsopt {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Deterministic texture variant per (graph, node); pick() reduces mod count.
std::size_t texture_index(int graph_id, int node_id) {
  const std::uint64_t g = static_cast<std::uint64_t>(graph_id) * 2654435761ull;
  const std::uint64_t n = static_cast<std::uint64_t>(node_id) * 2246822519ull;
  return static_cast<std::size_t>(g ^ n);
}

bool is_digit_class(const std::string& name) {
  return name.size() == 1 && name[0] >= '0' && name[0] <= '9';
}

int z_rank(ExperimentKind kind, const std::string& cls) {
  if (kind == ExperimentKind::Mnist) return cls == "background" ? 0 : 1;
  if (cls == "background") return 0;
  if (cls == "road") return 1;
  if (cls == "house") return 2;
  if (cls == "tree") return 3;
  return 4;  // car on top
}

struct PlacedObject {
  int node_id = -1;
  int class_id = -1;
  int rank = 0;
  const Texture* tex = nullptr;
  double cx = 0, cy = 0;      // canvas center
  double theta_deg = 0;       // visual counterclockwise
  double sx = 1, sy = 1;      // texture->canvas scale
};

// Premultiplied texel with zero outside the tile.
double texel(const Texture& t, long r, long c, std::size_t ch) {
  if (r < 0 || c < 0 || r >= static_cast<long>(t.h) ||
      c >= static_cast<long>(t.w))
    return 0.0;
  const double a = t.at(r, c, 3);
  return ch == 3 ? a : t.at(r, c, ch) * a;
}

void sample_rgba(const Texture& tex, double u, double v, Interp interp,
                 double p[4]) {
  if (interp == Interp::Nearest) {
    const long r = std::lround(v), c = std::lround(u);
    for (std::size_t ch = 0; ch < 4; ++ch) p[ch] = texel(tex, r, c, ch);
    return;
  }
  const long r0 = static_cast<long>(std::floor(v));
  const long c0 = static_cast<long>(std::floor(u));
  const double fr = v - r0, fc = u - c0;
  for (std::size_t ch = 0; ch < 4; ++ch) {
    const double top =
        (1 - fc) * texel(tex, r0, c0, ch) + fc * texel(tex, r0, c0 + 1, ch);
    const double bot = (1 - fc) * texel(tex, r0 + 1, c0, ch) +
                       fc * texel(tex, r0 + 1, c0 + 1, ch);
    p[ch] = (1 - fr) * top + fr * bot;
  }
}

void paste(Image& canvas, Tensor* label_map, const PlacedObject& obj,
           Interp interp, int aa, Tensor* alpha_rec) {
  const Texture& tex = *obj.tex;
  const double th = obj.theta_deg * kPi / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  const double tcx = (tex.w - 1) / 2.0, tcy = (tex.h - 1) / 2.0;

  // Conservative bounding box of the rotated, scaled tile.
  const double hx = obj.sx * tex.w / 2.0 + 1.0;
  const double hy = obj.sy * tex.h / 2.0 + 1.0;
  const double ex = std::abs(ct) * hx + std::abs(st) * hy;
  const double ey = std::abs(st) * hx + std::abs(ct) * hy;
  const long y0 = std::max(0L, static_cast<long>(std::floor(obj.cy - ey)));
  const long y1 = std::min(static_cast<long>(canvas.h) - 1,
                           static_cast<long>(std::ceil(obj.cy + ey)));
  const long x0 = std::max(0L, static_cast<long>(std::floor(obj.cx - ex)));
  const long x1 = std::min(static_cast<long>(canvas.w) - 1,
                           static_cast<long>(std::ceil(obj.cx + ex)));

  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      double p[4] = {0, 0, 0, 0};  // premultiplied rgb + alpha
      if (aa == 1) {
        const double dx = x - obj.cx, dy = y - obj.cy;
        sample_rgba(tex, (ct * dx - st * dy) / obj.sx + tcx,
                    (st * dx + ct * dy) / obj.sy + tcy, interp, p);
      } else {
        // Average over an aa x aa grid of subpixel offsets.
        for (int sy = 0; sy < aa; ++sy)
          for (int sx = 0; sx < aa; ++sx) {
            const double dx = x + (sx + 0.5) / aa - 0.5 - obj.cx;
            const double dy = y + (sy + 0.5) / aa - 0.5 - obj.cy;
            double q[4];
            sample_rgba(tex, (ct * dx - st * dy) / obj.sx + tcx,
                        (st * dx + ct * dy) / obj.sy + tcy, interp, q);
            for (std::size_t ch = 0; ch < 4; ++ch) p[ch] += q[ch];
          }
        for (std::size_t ch = 0; ch < 4; ++ch) p[ch] /= aa * aa;
      }
      const double a = p[3];
      if (a <= 0.0) continue;

      if (canvas.c == 1) {
        // Gray canvases read the red channel; digit tiles are monochrome,
        // and skipping the rgb average keeps opaque pastes bit-exact.
        canvas.at(y, x, 0) = p[0] + (1.0 - a) * canvas.at(y, x, 0);
      } else {
        for (std::size_t ch = 0; ch < 3; ++ch)
          canvas.at(y, x, ch) = p[ch] + (1.0 - a) * canvas.at(y, x, ch);
      }
      if (label_map && a > 0.5)
        label_map->at(y, x) = static_cast<double>(obj.class_id);
      if (alpha_rec) alpha_rec->at(y, x) = a;
    }
}

double phys(const SceneGraph& graph, const Grammar& grammar, int node_id,
            int attr) {
  const SceneNode& n = graph.node(node_id);
  return denormalize_attr(grammar, n.class_id, attr,
                          n.continuous(grammar, attr))
      .value;
}

}  // namespace

RenderedSample render(const SceneGraph& graph, const Grammar& grammar,
                      const AssetLibrary& assets, const RenderConfig& config) {
  const std::size_t H = config.canvas_h, W = config.canvas_w;
  if (H < 2 || W < 2) raise(ErrorKind::Config, "canvas too small");
  if (config.aa_samples < 1 || config.aa_samples > 8)
    raise(ErrorKind::Config, "aa_samples must be in [1, 8]");
  const bool aerial = config.kind == ExperimentKind::Aerial;

  RenderedSample sample;
  sample.graph_id = graph.id;
  sample.image = Image(H, W, aerial ? 3 : 1);
  if (aerial) sample.label_map = Tensor({H, W});

  // Resolve object placements in node order (parents precede children, so a
  // car can read its road's frame), then composite by z-rank.
  std::vector<PlacedObject> objects;
  std::vector<int> placed_at(graph.nodes.size(), -1);
  for (const SceneNode& node : graph.nodes) {
    const std::string& cls = graph.classes.at(node.class_id);
    if (cls == "scene") continue;  // structural root, no pixels

    PlacedObject obj;
    obj.node_id = node.id;
    obj.class_id = node.class_id;
    obj.rank = z_rank(config.kind, cls);
    obj.tex = &assets.pick(cls, texture_index(graph.id, node.id));

    if (cls == "background") {
      obj.cx = (W - 1) / 2.0;
      obj.cy = (H - 1) / 2.0;
      obj.sx = static_cast<double>(W) / obj.tex->w;
      obj.sy = static_cast<double>(H) / obj.tex->h;
    } else if (aerial && cls == "road") {
      obj.theta_deg = phys(graph, grammar, node.id, kAttrRotation);
      obj.cx = phys(graph, grammar, node.id, kAttrLocationX) * (W - 1);
      obj.cy = phys(graph, grammar, node.id, kAttrLocationY) * (H - 1);
      const double length = config.road_length_frac * std::min(H, W);
      obj.sx = length / obj.tex->w;
      obj.sy = phys(graph, grammar, node.id, kAttrSize) / obj.tex->h;
    } else if (aerial && cls == "car") {
      const int parent = graph.parent_of(node.id);
      if (parent < 0)
        raise(ErrorKind::Structural,
              "car node " + std::to_string(node.id) + " has no parent");
      if (placed_at[parent] < 0) {
        // Parent collapsed to zero area; the car has no frame to live in.
        sample.absent_nodes.push_back(node.id);
        continue;
      }
      const PlacedObject& road = objects[placed_at[parent]];
      if (graph.classes.at(road.class_id) != "road")
        raise(ErrorKind::Structural, "car parent must be a road");
      // locationX runs along the road, locationY across it; both are
      // fractions of the road's rendered extent.
      const double along = phys(graph, grammar, node.id, kAttrLocationX);
      const double across = phys(graph, grammar, node.id, kAttrLocationY);
      const double rth = road.theta_deg * kPi / 180.0;
      const double dirx = std::cos(rth), diry = -std::sin(rth);
      const double road_len = road.sx * road.tex->w;
      const double road_wid = road.sy * road.tex->h;
      obj.cx = road.cx + (along - 0.5) * road_len * dirx +
               (across - 0.5) * road_wid * -diry;
      obj.cy = road.cy + (along - 0.5) * road_len * diry +
               (across - 0.5) * road_wid * dirx;
      obj.theta_deg =
          road.theta_deg + phys(graph, grammar, node.id, kAttrRotation);
      const double size = phys(graph, grammar, node.id, kAttrSize);
      obj.sx = size / obj.tex->w;
      obj.sy = obj.sx;  // tile aspect carries the car's 2:1 footprint
      const double cx0 = obj.cx, cy0 = obj.cy;
      obj.cx = std::clamp(obj.cx, 0.0, double(W - 1));
      obj.cy = std::clamp(obj.cy, 0.0, double(H - 1));
      if (obj.cx != cx0 || obj.cy != cy0) sample.clamped = true;
    } else {
      // Absolutely placed object (digit, tree, house).
      obj.theta_deg = phys(graph, grammar, node.id, kAttrRotation);
      obj.cx = phys(graph, grammar, node.id, kAttrLocationX) * (W - 1);
      obj.cy = phys(graph, grammar, node.id, kAttrLocationY) * (H - 1);
      const double size = phys(graph, grammar, node.id, kAttrSize);
      obj.sx = size / std::max(obj.tex->h, obj.tex->w);
      obj.sy = obj.sx;
      if (!aerial && is_digit_class(cls) && sample.class_label < 0)
        sample.class_label = cls[0] - '0';
    }

    if (obj.sx * obj.tex->w < 1.0 || obj.sy * obj.tex->h < 1.0) {
      sample.absent_nodes.push_back(node.id);
      continue;
    }
    placed_at[node.id] = static_cast<int>(objects.size());
    objects.push_back(obj);
  }

  if (!aerial && sample.class_label < 0)
    raise(ErrorKind::Structural, "mnist scene has no digit node");

  std::stable_sort(objects.begin(), objects.end(),
                   [](const PlacedObject& a, const PlacedObject& b) {
                     return a.rank < b.rank;
                   });
  for (const PlacedObject& obj : objects) {
    Tensor alpha;
    if (config.keep_layers) alpha = Tensor({H, W});
    paste(sample.image, aerial ? &sample.label_map : nullptr, obj,
          config.interp, config.aa_samples,
          config.keep_layers ? &alpha : nullptr);
    if (config.keep_layers)
      sample.layers.push_back({obj.node_id, obj.class_id, std::move(alpha)});
  }

  for (double& v : sample.image.data) v = std::clamp(v, 0.0, 1.0);
  return sample;
}

std::vector<RenderedSample> render_batch(const std::vector<SceneGraph>& graphs,
                                         const Grammar& grammar,
                                         const AssetLibrary& assets,
                                         const RenderConfig& config) {
  std::vector<RenderedSample> out(graphs.size());
  std::vector<std::exception_ptr> errors(graphs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(graphs.size()); ++i) {
    try {
      out[i] = render(graphs[i], grammar, assets, config);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      raise(e.kind(), "batch item " + std::to_string(i) + ": " + e.what());
    } catch (const std::exception& e) {
      raise(ErrorKind::Contract,
            "batch item " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

AttrGradResult fd_gradient(
    const std::function<Image(const Tensor&)>& eval_image,
    const ImageFunctional& loss, const Tensor& attrs0,
    const std::vector<std::pair<std::size_t, std::size_t>>& slots, double h,
    FdScheme scheme, bool bounded) {
  if (!(h > 0.0)) raise(ErrorKind::Contract, "finite-difference step must be positive");
  if (attrs0.rank() != 2)
    raise(ErrorKind::Contract, "attribute matrix must be rank 2");

  AttrGradResult res;
  res.grad = Tensor({attrs0.dim(0), attrs0.dim(1)});

  if (scheme == FdScheme::RenderJvp) {
    const Image base = eval_image(attrs0);
    ++res.renders;
    const Image g = loss.pixel_grad(base);
    if (g.h != base.h || g.w != base.w || g.c != base.c)
      raise(ErrorKind::Shape, "pixel gradient shape mismatch");
    std::vector<double> prods(base.size());
    for (const auto& [i, j] : slots) {
      const double v = attrs0.at(i, j);
      const bool backward = bounded && v + h > 1.0;
      if (backward && v - h < 0.0)
        raise(ErrorKind::Range, "step h too large for attribute domain");
      Tensor probe = attrs0;
      probe.at(i, j) = backward ? v - h : v + h;
      const Image shifted = eval_image(probe);
      ++res.renders;
      if (backward) ++res.boundary_flags;
      const double sign = backward ? -1.0 : 1.0;
      for (std::size_t k = 0; k < prods.size(); ++k)
        prods[k] = sign * (shifted.data[k] - base.data[k]) / h * g.data[k];
      res.grad.at(i, j) = pairwise_sum(prods);
    }
    return res;
  }

  // Full finite differences of the scalar loss; central where possible.
  bool have_center = false;
  double center = 0.0;
  auto loss_at = [&](const Tensor& attrs) {
    const double value = loss.value(eval_image(attrs));
    ++res.renders;
    return value;
  };
  for (const auto& [i, j] : slots) {
    const double v = attrs0.at(i, j);
    const bool up_ok = !bounded || v + h <= 1.0;
    const bool down_ok = !bounded || v - h >= 0.0;
    if (!up_ok && !down_ok)
      raise(ErrorKind::Range, "step h too large for attribute domain");
    Tensor probe = attrs0;
    if (up_ok && down_ok) {
      probe.at(i, j) = v + h;
      const double up = loss_at(probe);
      probe.at(i, j) = v - h;
      const double down = loss_at(probe);
      res.grad.at(i, j) = (up - down) / (2.0 * h);
    } else {
      if (!have_center) {
        center = loss_at(attrs0);
        have_center = true;
      }
      probe.at(i, j) = up_ok ? v + h : v - h;
      const double side = loss_at(probe);
      res.grad.at(i, j) =
          up_ok ? (side - center) / h : (center - side) / h;
      ++res.boundary_flags;
    }
  }
  return res;
}

AttrGradResult finite_diff_attr_grad(const ImageFunctional& loss,
                                     const SceneGraph& graph,
                                     const Grammar& grammar,
                                     const AssetLibrary& assets,
                                     const RenderConfig& config, double h,
                                     FdScheme scheme) {
  RenderConfig quiet = config;
  quiet.keep_layers = false;

  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i)
    for (std::size_t j = 0; j < graph.a_in(); ++j)
      if (graph.nodes[i].mask[j]) slots.emplace_back(i, j);

  const auto eval = [&](const Tensor& attrs) {
    return render(apply_transform(graph, attrs), grammar, assets, quiet).image;
  };
  return fd_gradient(eval, loss, graph.attr_matrix(), slots, h, scheme);
}

}  // namespace gsopt
