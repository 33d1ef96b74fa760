#include "gsopt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gsopt {

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data) {
  if (count(shape) != data.size())
    raise(ErrorKind::Shape, "Tensor::from: data length does not match shape");
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i)
    os << (i ? "," : "") << shape_[i];
  os << "]";
  return os.str();
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void shape_mismatch(const std::string& op, const Tensor& a, const Tensor& b) {
  raise(ErrorKind::Shape,
        op + ": incompatible shapes " + a.shape_str() + " vs " + b.shape_str());
}

// ---------------------------------------------------------------------------

namespace {

void check_matmul(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() != 2 || b.rank() != 2) shape_mismatch(op, a, b);
}

}  // namespace

void matmul_reference(const Tensor& a, const Tensor& b, Tensor& out) {
  check_matmul(a, b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_mismatch("matmul", a, b);
  out = Tensor({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* br = pb + p * n;
      double* cr = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
}

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
  check_matmul(a, b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_mismatch("matmul", a, b);
  out = Tensor({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = out.data();
  // Rows are independent; the p-loop order inside a row matches the
  // reference, so the result is bit-identical for any thread count.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[static_cast<std::size_t>(i) * k + p];
      const double* br = pb + p * n;
      double* cr = pc + static_cast<std::size_t>(i) * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out;
  matmul(a, b, out);
  return out;
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  check_matmul(a, b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) shape_mismatch("matmul_nt", a, b);
  out = Tensor({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = out.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    const double* ar = pa + static_cast<std::size_t>(i) * k;
    double* cr = pc + static_cast<std::size_t>(i) * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = pb + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      cr[j] = acc;
    }
  }
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  check_matmul(a, b, "matmul_tn");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != m) shape_mismatch("matmul_tn", a, b);
  out = Tensor({k, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = out.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(k); ++i) {
    double* cr = pc + static_cast<std::size_t>(i) * n;
    for (std::size_t p = 0; p < m; ++p) {
      const double av = pa[p * k + static_cast<std::size_t>(i)];
      const double* br = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  std::size_t n, cin, h, w, cout, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, std::size_t pad) {
  if (input.rank() != 4 || kernel.rank() != 4)
    shape_mismatch("conv2d", input, kernel);
  ConvDims d;
  d.n = input.dim(0);
  d.cin = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.cout = kernel.dim(0);
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  if (kernel.dim(1) != d.cin) shape_mismatch("conv2d", input, kernel);
  if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw)
    raise(ErrorKind::Shape, "conv2d: kernel larger than padded input");
  d.oh = d.h + 2 * pad - d.kh + 1;
  d.ow = d.w + 2 * pad - d.kw + 1;
  return d;
}

// Accumulate one (image, out-channel) plane. Inner order fixed: cin, kh, kw.
inline void conv_plane(const double* in, const double* ker, double bias,
                       double* out, const ConvDims& d, std::size_t pad) {
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t oy = 0; oy < d.oh; ++oy) {
    for (std::size_t ox = 0; ox < d.ow; ++ox) {
      double acc = bias;
      for (std::size_t c = 0; c < d.cin; ++c) {
        const double* inc = in + c * d.h * d.w;
        const double* kc = ker + c * d.kh * d.kw;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy + ky) - p;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox + kx) - p;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
            acc += inc[iy * static_cast<std::ptrdiff_t>(d.w) + ix] *
                   kc[ky * d.kw + kx];
          }
        }
      }
      out[oy * d.ow + ox] = acc;
    }
  }
}

}  // namespace

void conv2d_forward_reference(const Tensor& input, const Tensor& kernel,
                              const Tensor& bias, std::size_t pad,
                              Tensor& out) {
  const ConvDims d = conv_dims(input, kernel, pad);
  if (bias.size() != d.cout) shape_mismatch("conv2d bias", kernel, bias);
  out = Tensor({d.n, d.cout, d.oh, d.ow});
  for (std::size_t img = 0; img < d.n; ++img)
    for (std::size_t oc = 0; oc < d.cout; ++oc)
      conv_plane(input.data() + img * d.cin * d.h * d.w,
                 kernel.data() + oc * d.cin * d.kh * d.kw, bias[oc],
                 out.data() + (img * d.cout + oc) * d.oh * d.ow, d, pad);
}

void conv2d_forward(const Tensor& input, const Tensor& kernel,
                    const Tensor& bias, std::size_t pad, Tensor& out) {
  const ConvDims d = conv_dims(input, kernel, pad);
  if (bias.size() != d.cout) shape_mismatch("conv2d bias", kernel, bias);
  out = Tensor({d.n, d.cout, d.oh, d.ow});
  const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(d.n * d.cout);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t plane = 0; plane < planes; ++plane) {
    const std::size_t img = static_cast<std::size_t>(plane) / d.cout;
    const std::size_t oc = static_cast<std::size_t>(plane) % d.cout;
    conv_plane(input.data() + img * d.cin * d.h * d.w,
               kernel.data() + oc * d.cin * d.kh * d.kw, bias[oc],
               out.data() + (img * d.cout + oc) * d.oh * d.ow, d, pad);
  }
}

void conv2d_backward(const Tensor& input, const Tensor& kernel,
                     const Tensor& grad_out, std::size_t pad,
                     Tensor& grad_input, Tensor& grad_kernel,
                     Tensor& grad_bias) {
  const ConvDims d = conv_dims(input, kernel, pad);
  if (grad_out.rank() != 4 || grad_out.dim(0) != d.n ||
      grad_out.dim(1) != d.cout || grad_out.dim(2) != d.oh ||
      grad_out.dim(3) != d.ow)
    shape_mismatch("conv2d_backward", grad_out, kernel);

  grad_input = Tensor(input.shape());
  grad_kernel = Tensor(kernel.shape());
  grad_bias = Tensor({d.cout});
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(pad);

  // grad_input: each (image, in-channel) plane is owned by one iteration.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t plane = 0;
       plane < static_cast<std::ptrdiff_t>(d.n * d.cin); ++plane) {
    const std::size_t img = static_cast<std::size_t>(plane) / d.cin;
    const std::size_t c = static_cast<std::size_t>(plane) % d.cin;
    double* gi = grad_input.data() + (img * d.cin + c) * d.h * d.w;
    for (std::size_t oc = 0; oc < d.cout; ++oc) {
      const double* go = grad_out.data() + (img * d.cout + oc) * d.oh * d.ow;
      const double* kc =
          kernel.data() + (oc * d.cin + c) * d.kh * d.kw;
      for (std::size_t oy = 0; oy < d.oh; ++oy)
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          const double g = go[oy * d.ow + ox];
          if (g == 0.0) continue;
          for (std::size_t ky = 0; ky < d.kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - p;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox + kx) - p;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
              gi[iy * static_cast<std::ptrdiff_t>(d.w) + ix] +=
                  g * kc[ky * d.kw + kx];
            }
          }
        }
    }
  }

  // grad_kernel / grad_bias: each out-channel owned by one iteration.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t occ = 0; occ < static_cast<std::ptrdiff_t>(d.cout);
       ++occ) {
    const std::size_t oc = static_cast<std::size_t>(occ);
    double* gk = grad_kernel.data() + oc * d.cin * d.kh * d.kw;
    double gb = 0.0;
    for (std::size_t img = 0; img < d.n; ++img) {
      const double* go = grad_out.data() + (img * d.cout + oc) * d.oh * d.ow;
      const double* in = input.data() + img * d.cin * d.h * d.w;
      for (std::size_t oy = 0; oy < d.oh; ++oy)
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
          const double g = go[oy * d.ow + ox];
          gb += g;
          if (g == 0.0) continue;
          for (std::size_t c = 0; c < d.cin; ++c) {
            const double* inc = in + c * d.h * d.w;
            double* kc = gk + c * d.kh * d.kw;
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy + ky) - p;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox + kx) - p;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                kc[ky * d.kw + kx] +=
                    g * inc[iy * static_cast<std::ptrdiff_t>(d.w) + ix];
              }
            }
          }
        }
    }
    grad_bias[oc] = gb;
  }
}

}  // namespace gsopt
