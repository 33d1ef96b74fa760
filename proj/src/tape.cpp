#include "gsopt/tape.hpp"

#include <algorithm>
#include <cmath>

namespace gsopt {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    raise(ErrorKind::Shape, std::string(op) + ": expected rank " +
                                std::to_string(rank) + ", got shape " +
                                t.shape_str());
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) shape_mismatch(op, a, b);
}

}  // namespace

NodeId Tape::leaf(Tensor value, bool needs_grad) {
  return push(std::move(value), needs_grad, nullptr);
}

Tensor& Tape::grad(NodeId id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    n.grad = Tensor(n.value.shape());
    n.grad_ready = true;
  }
  return n.grad;
}

NodeId Tape::push(Tensor value, bool needs_grad,
                  std::function<void(Tape&)> bwd) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backward = std::move(bwd);
  nodes_.push_back(std::move(n));
  const NodeId id = static_cast<NodeId>(nodes_.size()) - 1;
#ifndef NDEBUG
  check_finite(id);
#endif
  return id;
}

void Tape::check_finite(NodeId id) const {
  if (!nodes_[id].value.all_finite())
    raise(ErrorKind::Contract,
          "non-finite value produced at tape node " + std::to_string(id));
}

void Tape::backward(NodeId root) {
  if (value(root).size() != 1)
    raise(ErrorKind::Contract, "backward: root must be scalar, got shape " +
                                   value(root).shape_str());
  grad(root)[0] = 1.0;
  run_backward(root);
}

void Tape::backward_with(NodeId root, const Tensor& seed) {
  require_same(value(root), seed, "backward_with");
  Tensor& g = grad(root);
  for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
  run_backward(root);
}

void Tape::run_backward(NodeId root) {
  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.grad_ready || !n.backward) continue;
    n.backward(*this);
  }
}

// --- elementwise -----------------------------------------------------------

NodeId Tape::add(NodeId a, NodeId b) {
  require_same(value(a), value(b), "add");
  Tensor out = value(a);
  const Tensor& vb = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  const bool ng = needs_grad(a) || needs_grad(b);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, a, b](Tape& t) {
      const Tensor& g = t.grad(id);
      if (t.needs_grad(a)) {
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.needs_grad(b)) {
        Tensor& gb = t.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  return id;
}

NodeId Tape::sub(NodeId a, NodeId b) {
  require_same(value(a), value(b), "sub");
  Tensor out = value(a);
  const Tensor& vb = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
  const bool ng = needs_grad(a) || needs_grad(b);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, a, b](Tape& t) {
      const Tensor& g = t.grad(id);
      if (t.needs_grad(a)) {
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.needs_grad(b)) {
        Tensor& gb = t.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    };
  return id;
}

NodeId Tape::mul(NodeId a, NodeId b) {
  require_same(value(a), value(b), "mul");
  Tensor out = value(a);
  const Tensor& vb = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  const bool ng = needs_grad(a) || needs_grad(b);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, a, b](Tape& t) {
      const Tensor& g = t.grad(id);
      const Tensor& va = t.value(a);
      const Tensor& vb2 = t.value(b);
      if (t.needs_grad(a)) {
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb2[i];
      }
      if (t.needs_grad(b)) {
        Tensor& gb = t.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
      }
    };
  return id;
}

NodeId Tape::scale(NodeId a, double s) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, a, s](Tape& t) {
      const Tensor& g = t.grad(id);
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    };
  return id;
}

NodeId Tape::relu(NodeId a) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], 0.0);
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, a](Tape& t) {
      const Tensor& g = t.grad(id);
      const Tensor& va = t.value(a);
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (va[i] > 0.0) ga[i] += g[i];
    };
  return id;
}

NodeId Tape::sigmoid(NodeId a) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, a](Tape& t) {
      const Tensor& g = t.grad(id);
      const Tensor& y = t.value(id);
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * y[i] * (1.0 - y[i]);
    };
  return id;
}

NodeId Tape::sigmoid_cols(NodeId a, std::size_t col0) {
  require_rank(value(a), 2, "sigmoid_cols");
  const std::size_t rows = value(a).dim(0), cols = value(a).dim(1);
  if (col0 > cols) raise(ErrorKind::Shape, "sigmoid_cols: col0 out of range");
  Tensor out = value(a);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = col0; c < cols; ++c)
      out.at(r, c) = 1.0 / (1.0 + std::exp(-out.at(r, c)));
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, a, col0, rows, cols](Tape& t) {
      const Tensor& g = t.grad(id);
      const Tensor& y = t.value(id);
      Tensor& ga = t.grad(a);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const double gv = g.at(r, c);
          if (c < col0)
            ga.at(r, c) += gv;
          else
            ga.at(r, c) += gv * y.at(r, c) * (1.0 - y.at(r, c));
        }
    };
  return id;
}

NodeId Tape::dropout(NodeId a, double p, bool train, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    raise(ErrorKind::Config, "dropout: p must be in [0,1)");
  if (!train || p == 0.0) {
    Tensor out = value(a);
    const bool ng = needs_grad(a);
    NodeId id = push(std::move(out), ng, nullptr);
    if (ng)
      nodes_[id].backward = [id, a](Tape& t) {
        const Tensor& g = t.grad(id);
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      };
    return id;
  }
  const double keep = 1.0 - p;
  std::vector<double> mask(value(a).size());
  for (double& m : mask) m = (rng.uniform() < p) ? 0.0 : 1.0 / keep;
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, a, mask = std::move(mask)](Tape& t) {
      const Tensor& g = t.grad(id);
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
    };
  return id;
}

// --- linear algebra --------------------------------------------------------

NodeId Tape::matmul(NodeId a, NodeId b) {
  Tensor out;
  gsopt::matmul(value(a), value(b), out);
  const bool ng = needs_grad(a) || needs_grad(b);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, a, b](Tape& t) {
      const Tensor& g = t.grad(id);
      if (t.needs_grad(a)) {
        Tensor da;
        matmul_nt(g, t.value(b), da);  // dA = G B^T : [m,k]
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < da.size(); ++i) ga[i] += da[i];
      }
      if (t.needs_grad(b)) {
        Tensor db;
        matmul_tn(t.value(a), g, db);  // dB = A^T * G
        Tensor& gb = t.grad(b);
        for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
      }
    };
  return id;
}

NodeId Tape::linear(NodeId x, NodeId w, NodeId b) {
  const Tensor& vx = value(x);
  const Tensor& vw = value(w);
  const Tensor& vb = value(b);
  require_rank(vx, 2, "linear");
  require_rank(vw, 2, "linear");
  if (vx.dim(1) != vw.dim(1)) shape_mismatch("linear", vx, vw);
  if (vb.size() != vw.dim(0)) shape_mismatch("linear bias", vw, vb);
  Tensor out;
  matmul_nt(vx, vw, out);
  const std::size_t m = out.dim(0), n = out.dim(1);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) += vb[c];
  const bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, x, w, b, m, n](Tape& t) {
      const Tensor& g = t.grad(id);
      if (t.needs_grad(x)) {
        Tensor dx;
        gsopt::matmul(g, t.value(w), dx);  // [m,out]*[out,in] = [m,in]
        Tensor& gx = t.grad(x);
        for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
      }
      if (t.needs_grad(w)) {
        Tensor dw;
        matmul_tn(g, t.value(x), dw);  // dW = G^T X : [out,in]
        Tensor& gw = t.grad(w);
        for (std::size_t i = 0; i < dw.size(); ++i) gw[i] += dw[i];
      }
      if (t.needs_grad(b)) {
        Tensor& gb = t.grad(b);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) gb[c] += g.at(r, c);
      }
    };
  return id;
}

// --- image ops -------------------------------------------------------------

NodeId Tape::conv2d(NodeId x, NodeId k, NodeId b, std::size_t pad) {
  Tensor out;
  conv2d_forward(value(x), value(k), value(b), pad, out);
  const bool ng = needs_grad(x) || needs_grad(k) || needs_grad(b);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, x, k, b, pad](Tape& t) {
      Tensor gx, gk, gb;
      conv2d_backward(t.value(x), t.value(k), t.grad(id), pad, gx, gk, gb);
      if (t.needs_grad(x)) {
        Tensor& dst = t.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) dst[i] += gx[i];
      }
      if (t.needs_grad(k)) {
        Tensor& dst = t.grad(k);
        for (std::size_t i = 0; i < gk.size(); ++i) dst[i] += gk[i];
      }
      if (t.needs_grad(b)) {
        Tensor& dst = t.grad(b);
        for (std::size_t i = 0; i < gb.size(); ++i) dst[i] += gb[i];
      }
    };
  return id;
}

NodeId Tape::maxpool2(NodeId x) {
  const Tensor& v = value(x);
  require_rank(v, 4, "maxpool2");
  const std::size_t n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
  if (h % 2 || w % 2)
    raise(ErrorKind::Shape, "maxpool2: spatial dims must be even, got " +
                                v.shape_str());
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  std::vector<std::uint32_t> argmax(out.size());
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* in = v.data() + (img * c + ch) * h * w;
      double* o = out.data() + (img * c + ch) * oh * ow;
      std::uint32_t* am = argmax.data() + (img * c + ch) * oh * ow;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          std::size_t best = (2 * y) * w + 2 * xx;
          double bv = in[best];
          const std::size_t cand[3] = {(2 * y) * w + 2 * xx + 1,
                                       (2 * y + 1) * w + 2 * xx,
                                       (2 * y + 1) * w + 2 * xx + 1};
          for (std::size_t idx : cand)
            if (in[idx] > bv) {
              bv = in[idx];
              best = idx;
            }
          o[y * ow + xx] = bv;
          am[y * ow + xx] = static_cast<std::uint32_t>(best);
        }
    }
  const bool ng = needs_grad(x);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, x, n, c, h, w, oh, ow,
                           argmax = std::move(argmax)](Tape& t) {
      const Tensor& g = t.grad(id);
      Tensor& gx = t.grad(x);
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        const double* gp = g.data() + plane * oh * ow;
        const std::uint32_t* am = argmax.data() + plane * oh * ow;
        double* dst = gx.data() + plane * h * w;
        for (std::size_t i = 0; i < oh * ow; ++i) dst[am[i]] += gp[i];
      }
    };
  return id;
}

NodeId Tape::avgpool2(NodeId x) {
  const Tensor& v = value(x);
  require_rank(v, 4, "avgpool2");
  const std::size_t n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
  if (h % 2 || w % 2)
    raise(ErrorKind::Shape, "avgpool2: spatial dims must be even");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* in = v.data() + plane * h * w;
    double* o = out.data() + plane * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        o[y * ow + xx] = 0.25 * (in[(2 * y) * w + 2 * xx] +
                                 in[(2 * y) * w + 2 * xx + 1] +
                                 in[(2 * y + 1) * w + 2 * xx] +
                                 in[(2 * y + 1) * w + 2 * xx + 1]);
  }
  const bool ng = needs_grad(x);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, x, n, c, h, w, oh, ow](Tape& t) {
      const Tensor& g = t.grad(id);
      Tensor& gx = t.grad(x);
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        const double* gp = g.data() + plane * oh * ow;
        double* dst = gx.data() + plane * h * w;
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx) {
            const double gv = 0.25 * gp[y * ow + xx];
            dst[(2 * y) * w + 2 * xx] += gv;
            dst[(2 * y) * w + 2 * xx + 1] += gv;
            dst[(2 * y + 1) * w + 2 * xx] += gv;
            dst[(2 * y + 1) * w + 2 * xx + 1] += gv;
          }
      }
    };
  return id;
}

NodeId Tape::upsample_nn2(NodeId x) {
  const Tensor& v = value(x);
  require_rank(v, 4, "upsample_nn2");
  const std::size_t n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
  const std::size_t oh = h * 2, ow = w * 2;
  Tensor out({n, c, oh, ow});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* in = v.data() + plane * h * w;
    double* o = out.data() + plane * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        o[y * ow + xx] = in[(y / 2) * w + xx / 2];
  }
  const bool ng = needs_grad(x);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, x, n, c, h, w, oh, ow](Tape& t) {
      const Tensor& g = t.grad(id);
      Tensor& gx = t.grad(x);
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        const double* gp = g.data() + plane * oh * ow;
        double* dst = gx.data() + plane * h * w;
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx)
            dst[(y / 2) * w + xx / 2] += gp[y * ow + xx];
      }
    };
  return id;
}

NodeId Tape::concat_channels(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_rank(va, 4, "concat_channels");
  require_rank(vb, 4, "concat_channels");
  if (va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2) ||
      va.dim(3) != vb.dim(3))
    shape_mismatch("concat_channels", va, vb);
  const std::size_t n = va.dim(0), ca = va.dim(1), cb = vb.dim(1),
                    h = va.dim(2), w = va.dim(3);
  Tensor out({n, ca + cb, h, w});
  const std::size_t hw = h * w;
  for (std::size_t img = 0; img < n; ++img) {
    std::copy_n(va.data() + img * ca * hw, ca * hw,
                out.data() + img * (ca + cb) * hw);
    std::copy_n(vb.data() + img * cb * hw, cb * hw,
                out.data() + img * (ca + cb) * hw + ca * hw);
  }
  const bool ng = needs_grad(a) || needs_grad(b);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, a, b, n, ca, cb, hw](Tape& t) {
      const Tensor& g = t.grad(id);
      if (t.needs_grad(a)) {
        Tensor& ga = t.grad(a);
        for (std::size_t img = 0; img < n; ++img) {
          const double* src = g.data() + img * (ca + cb) * hw;
          double* dst = ga.data() + img * ca * hw;
          for (std::size_t i = 0; i < ca * hw; ++i) dst[i] += src[i];
        }
      }
      if (t.needs_grad(b)) {
        Tensor& gb = t.grad(b);
        for (std::size_t img = 0; img < n; ++img) {
          const double* src = g.data() + img * (ca + cb) * hw + ca * hw;
          double* dst = gb.data() + img * cb * hw;
          for (std::size_t i = 0; i < cb * hw; ++i) dst[i] += src[i];
        }
      }
    };
  return id;
}

NodeId Tape::flatten(NodeId x) {
  const Tensor& v = value(x);
  require_rank(v, 4, "flatten");
  const std::size_t n = v.dim(0);
  Tensor out = Tensor::from({n, v.size() / n}, v.raw());
  const bool ng = needs_grad(x);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, x](Tape& t) {
      const Tensor& g = t.grad(id);
      Tensor& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    };
  return id;
}

NodeId Tape::global_avg_pool(NodeId x) {
  const Tensor& v = value(x);
  require_rank(v, 4, "global_avg_pool");
  const std::size_t n = v.dim(0), c = v.dim(1), hw = v.dim(2) * v.dim(3);
  Tensor out({n, c});
  std::vector<double> buf(hw);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* in = v.data() + plane * hw;
    std::copy_n(in, hw, buf.data());
    out[plane] = pairwise_sum(buf) / static_cast<double>(hw);
  }
  const bool ng = needs_grad(x);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, x, n, c, hw](Tape& t) {
      const Tensor& g = t.grad(id);
      Tensor& gx = t.grad(x);
      const double inv = 1.0 / static_cast<double>(hw);
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        const double gv = g[plane] * inv;
        double* dst = gx.data() + plane * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] += gv;
      }
    };
  return id;
}

// --- losses ---------------------------------------------------------------

namespace {

// Stable softmax of a row; returns log-sum-exp.
void softmax_row(const double* logits, std::size_t k, double* out) {
  double mx = logits[0];
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out[i] = std::exp(logits[i] - mx);
    denom += out[i];
  }
  for (std::size_t i = 0; i < k; ++i) out[i] /= denom;
}

}  // namespace

NodeId Tape::softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
  const Tensor& v = value(logits);
  require_rank(v, 2, "softmax_cross_entropy");
  const std::size_t n = v.dim(0), k = v.dim(1);
  if (labels.size() != n)
    raise(ErrorKind::Shape, "softmax_cross_entropy: label count mismatch");
  Tensor probs({n, k});
  std::vector<double> losses(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      raise(ErrorKind::Data, "label out of class range: " + std::to_string(y));
    softmax_row(v.data() + r * k, k, probs.data() + r * k);
    losses[r] = -std::log(std::max(probs.at(r, y), 1e-300));
  }
  Tensor out = Tensor::scalar(pairwise_sum(losses) / static_cast<double>(n));
  const bool ng = needs_grad(logits);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, logits, n, k, probs = std::move(probs),
                           labels = std::move(labels)](Tape& t) {
      const double g = t.grad(id)[0] / static_cast<double>(n);
      Tensor& gl = t.grad(logits);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < k; ++c) {
          double d = probs.at(r, c);
          if (static_cast<int>(c) == labels[r]) d -= 1.0;
          gl.at(r, c) += g * d;
        }
    };
  return id;
}

NodeId Tape::softmax_cross_entropy_map(NodeId logits,
                                       std::vector<int> labels) {
  const Tensor& v = value(logits);
  require_rank(v, 4, "softmax_cross_entropy_map");
  const std::size_t n = v.dim(0), k = v.dim(1), h = v.dim(2), w = v.dim(3);
  const std::size_t px = n * h * w;
  if (labels.size() != px)
    raise(ErrorKind::Shape, "softmax_cross_entropy_map: label count mismatch");
  // probs stored pixel-major [n*h*w, k]
  Tensor probs({px, k});
  std::vector<double> losses(px);
  std::vector<double> row(k);
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t pix = (img * h + y) * w + x;
        for (std::size_t c = 0; c < k; ++c)
          row[c] = v[((img * k + c) * h + y) * w + x];
        const int lab = labels[pix];
        if (lab < 0 || static_cast<std::size_t>(lab) >= k)
          raise(ErrorKind::Data,
                "label out of class range: " + std::to_string(lab));
        softmax_row(row.data(), k, probs.data() + pix * k);
        losses[pix] = -std::log(std::max(probs.at(pix, lab), 1e-300));
      }
  Tensor out = Tensor::scalar(pairwise_sum(losses) / static_cast<double>(px));
  const bool ng = needs_grad(logits);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, logits, n, k, h, w, px,
                           probs = std::move(probs),
                           labels = std::move(labels)](Tape& t) {
      const double g = t.grad(id)[0] / static_cast<double>(px);
      Tensor& gl = t.grad(logits);
      for (std::size_t img = 0; img < n; ++img)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t pix = (img * h + y) * w + x;
            for (std::size_t c = 0; c < k; ++c) {
              double d = probs.at(pix, c);
              if (static_cast<int>(c) == labels[pix]) d -= 1.0;
              gl[((img * k + c) * h + y) * w + x] += g * d;
            }
          }
    };
  return id;
}

NodeId Tape::softmax_ce_cols(NodeId x, std::size_t col0, std::size_t col1,
                             std::vector<int> labels) {
  const Tensor& v = value(x);
  require_rank(v, 2, "softmax_ce_cols");
  const std::size_t n = v.dim(0), cols = v.dim(1);
  if (col1 > cols || col0 >= col1)
    raise(ErrorKind::Shape, "softmax_ce_cols: bad column range");
  const std::size_t k = col1 - col0;
  if (labels.size() != n)
    raise(ErrorKind::Shape, "softmax_ce_cols: label count mismatch");
  Tensor probs({n, k});
  std::vector<double> losses(n);
  std::vector<double> row(k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < k; ++c) row[c] = v.at(r, col0 + c);
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      raise(ErrorKind::Data, "label out of class range: " + std::to_string(y));
    softmax_row(row.data(), k, probs.data() + r * k);
    losses[r] = -std::log(std::max(probs.at(r, y), 1e-300));
  }
  Tensor out = Tensor::scalar(pairwise_sum(losses));
  const bool ng = needs_grad(x);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, x, col0, n, k, probs = std::move(probs),
                           labels = std::move(labels)](Tape& t) {
      const double g = t.grad(id)[0];
      Tensor& gx = t.grad(x);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < k; ++c) {
          double d = probs.at(r, c);
          if (static_cast<int>(c) == labels[r]) d -= 1.0;
          gx.at(r, col0 + c) += g * d;
        }
    };
  return id;
}

NodeId Tape::l1_cols(NodeId x, std::size_t col0, std::size_t col1,
                     Tensor target) {
  const Tensor& v = value(x);
  require_rank(v, 2, "l1_cols");
  const std::size_t n = v.dim(0), cols = v.dim(1);
  if (col1 > cols || col0 > col1)
    raise(ErrorKind::Shape, "l1_cols: bad column range");
  const std::size_t k = col1 - col0;
  if (target.rank() != 2 || target.dim(0) != n || target.dim(1) != k)
    shape_mismatch("l1_cols target", v, target);
  std::vector<double> terms(n * k);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c)
      terms[r * k + c] = std::abs(v.at(r, col0 + c) - target.at(r, c));
  Tensor out = Tensor::scalar(pairwise_sum(terms));
  const bool ng = needs_grad(x);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, x, col0, n, k,
                           target = std::move(target)](Tape& t) {
      const double g = t.grad(id)[0];
      const Tensor& v2 = t.value(x);
      Tensor& gx = t.grad(x);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < k; ++c) {
          const double d = v2.at(r, col0 + c) - target.at(r, c);
          // subgradient 0 at the kink
          if (d > 0.0)
            gx.at(r, col0 + c) += g;
          else if (d < 0.0)
            gx.at(r, col0 + c) -= g;
        }
    };
  return id;
}

NodeId Tape::l1_loss(NodeId pred, Tensor target) {
  const Tensor& v = value(pred);
  require_same(v, target, "l1_loss");
  std::vector<double> terms(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    terms[i] = std::abs(v[i] - target[i]);
  Tensor out = Tensor::scalar(pairwise_sum(terms));
  const bool ng = needs_grad(pred);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, pred, target = std::move(target)](Tape& t) {
      const double g = t.grad(id)[0];
      const Tensor& v2 = t.value(pred);
      Tensor& gp = t.grad(pred);
      for (std::size_t i = 0; i < v2.size(); ++i) {
        const double d = v2[i] - target[i];
        if (d > 0.0)
          gp[i] += g;
        else if (d < 0.0)
          gp[i] -= g;
      }
    };
  return id;
}

NodeId Tape::mse_loss(NodeId pred, Tensor target) {
  const Tensor& v = value(pred);
  require_same(v, target, "mse_loss");
  const std::size_t n = v.size();
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = v[i] - target[i];
    terms[i] = d * d;
  }
  Tensor out = Tensor::scalar(pairwise_sum(terms) / static_cast<double>(n));
  const bool ng = needs_grad(pred);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, pred, n, target = std::move(target)](Tape& t) {
      const double g = t.grad(id)[0] * 2.0 / static_cast<double>(n);
      const Tensor& v2 = t.value(pred);
      Tensor& gp = t.grad(pred);
      for (std::size_t i = 0; i < n; ++i) gp[i] += g * (v2[i] - target[i]);
    };
  return id;
}

NodeId Tape::sum(NodeId a) {
  const Tensor& v = value(a);
  Tensor out = Tensor::scalar(pairwise_sum(v.raw()));
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[id].backward = [id, a](Tape& t) {
      const double g = t.grad(id)[0];
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
  return id;
}

}  // namespace gsopt
