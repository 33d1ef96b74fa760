#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gsopt/common.hpp"
#include "gsopt/tensor.hpp"

using namespace gsopt;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Independent oracle: j-major loops with a scalar accumulator, unlike the
// kernel's row-cached accumulation.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
      out.at(i, j) = acc;
    }
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

// Independent conv oracle: pads the input explicitly instead of branch
// clipping, and iterates in kernel-major order.
Tensor conv_oracle(const Tensor& in, const Tensor& ker, const Tensor& bias,
                   std::size_t pad) {
  const std::size_t n = in.dim(0), cin = in.dim(1), h = in.dim(2),
                    w = in.dim(3);
  const std::size_t cout = ker.dim(0), kh = ker.dim(2), kw = ker.dim(3);
  const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
  const std::size_t oh = ph - kh + 1, ow = pw - kw + 1;
  Tensor padded({n, cin, ph, pw});
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          padded[((img * cin + c) * ph + y + pad) * pw + x + pad] =
              in[((img * cin + c) * h + y) * w + x];
  Tensor out({n, cout, oh, ow});
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t oc = 0; oc < cout; ++oc)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx)
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t oy = 0; oy < oh; ++oy)
              for (std::size_t ox = 0; ox < ow; ++ox)
                out[((img * cout + oc) * oh + oy) * ow + ox] +=
                    padded[((img * cin + c) * ph + oy + ky) * pw + ox + kx] *
                    ker[((oc * cin + c) * kh + ky) * kw + kx];
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t oc = 0; oc < cout; ++oc)
      for (std::size_t i = 0; i < oh * ow; ++i)
        out[(img * cout + oc) * oh * ow + i] += bias[oc];
  return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void with_threads(int n, const std::function<void()>& fn) {
#ifdef _OPENMP
  const int prev = omp_get_max_threads();
  omp_set_num_threads(n);
  fn();
  omp_set_num_threads(prev);
#else
  (void)n;
  fn();
#endif
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.dim(1) == 3);
  CHECK(t.shape_str() == "[2,3]");
  t.at(1, 2) = 7.0;
  CHECK(t[5] == 7.0);
  CHECK(t.all_finite());
  t[0] = std::nan("");
  CHECK_FALSE(t.all_finite());

  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), Error);
  CHECK(Tensor::scalar(4.0).size() == 1);
}

TEST_CASE("matmul matches hand-computed 2x2") {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  const Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == 19.0);
  CHECK(c.at(0, 1) == 22.0);
  CHECK(c.at(1, 0) == 43.0);
  CHECK(c.at(1, 1) == 50.0);
}

TEST_CASE("matmul agrees with independent oracle") {
  Rng rng(42);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1},
                         {5, 7, 3},
                         {17, 13, 29},
                         {16, 10, 16}}) {
    const Tensor a = random_tensor({m, k}, rng);
    const Tensor b = random_tensor({k, n}, rng);
    const Tensor got = matmul(a, b);
    const Tensor want = matmul_oracle(a, b);
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul parallel is bit-identical to reference") {
  Rng rng(7);
  const Tensor a = random_tensor({33, 21}, rng);
  const Tensor b = random_tensor({21, 18}, rng);
  Tensor ref;
  matmul_reference(a, b, ref);
  for (int threads : {1, 2, 3, 4}) {
    with_threads(threads, [&] {
      Tensor got;
      matmul(a, b, got);
      CHECK(bit_equal(got, ref));
    });
  }
}

TEST_CASE("matmul_nt and matmul_tn match explicit transposes exactly") {
  Rng rng(11);
  const Tensor a = random_tensor({9, 14}, rng);
  const Tensor b = random_tensor({6, 14}, rng);   // for nt: [m,k]*[n,k]^T
  const Tensor c = random_tensor({9, 5}, rng);    // for tn: a^T * c

  Tensor nt;
  matmul_nt(a, b, nt);
  CHECK(bit_equal(nt, matmul(a, transpose(b))));

  Tensor tn;
  matmul_tn(a, c, tn);
  CHECK(bit_equal(tn, matmul(transpose(a), c)));
}

TEST_CASE("matmul rejects bad shapes") {
  const Tensor a({2, 3});
  const Tensor b({4, 2});
  Tensor out;
  CHECK_THROWS_AS(matmul(a, b, out), Error);
}

TEST_CASE("conv2d matches hand-computed case") {
  // 3x3 input 1..9, 2x2 kernel picking main diagonal, bias 0.5.
  const Tensor in = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor ker = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1});
  const Tensor bias = Tensor::from({1}, {0.5});
  Tensor out;
  conv2d_forward(in, ker, bias, 0, out);
  REQUIRE(out.shape() == std::vector<std::size_t>{1, 1, 2, 2});
  CHECK(out[0] == 6.5);   // 1+5
  CHECK(out[1] == 8.5);   // 2+6
  CHECK(out[2] == 12.5);  // 4+8
  CHECK(out[3] == 14.5);  // 5+9
}

TEST_CASE("conv2d agrees with padded oracle") {
  Rng rng(3);
  for (std::size_t pad : {0u, 1u, 2u}) {
    const Tensor in = random_tensor({2, 3, 7, 6}, rng);
    const Tensor ker = random_tensor({4, 3, 3, 3}, rng);
    const Tensor bias = random_tensor({4}, rng);
    Tensor got;
    conv2d_forward(in, ker, bias, pad, got);
    const Tensor want = conv_oracle(in, ker, bias, pad);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d parallel is bit-identical to reference") {
  Rng rng(19);
  const Tensor in = random_tensor({3, 2, 9, 9}, rng);
  const Tensor ker = random_tensor({5, 2, 3, 3}, rng);
  const Tensor bias = random_tensor({5}, rng);
  Tensor ref;
  conv2d_forward_reference(in, ker, bias, 1, ref);
  for (int threads : {1, 2, 3, 4}) {
    with_threads(threads, [&] {
      Tensor got;
      conv2d_forward(in, ker, bias, 1, got);
      CHECK(bit_equal(got, ref));
    });
  }
}

TEST_CASE("conv2d_backward matches finite differences") {
  Rng rng(23);
  const Tensor in = random_tensor({1, 2, 5, 5}, rng);
  const Tensor ker = random_tensor({3, 2, 3, 3}, rng);
  const Tensor bias = random_tensor({3}, rng);
  const std::size_t pad = 1;

  // Scalar objective: weighted sum of outputs with fixed random weights.
  Tensor w;
  {
    Tensor probe;
    conv2d_forward(in, ker, bias, pad, probe);
    w = random_tensor(probe.shape(), rng);
  }
  auto loss = [&](const Tensor& i2, const Tensor& k2, const Tensor& b2) {
    Tensor out;
    conv2d_forward(i2, k2, b2, pad, out);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * w[i];
    return acc;
  };

  Tensor gi, gk, gb;
  conv2d_backward(in, ker, w, pad, gi, gk, gb);

  const double h = 1e-6;
  auto fd_check = [&](const Tensor& x, const Tensor& grad, int which) {
    Tensor xp = x, xm = x;
    Rng pick(101);
    // Probe a subset of coordinates; conv is linear so FD is near-exact.
    for (int probe = 0; probe < 12; ++probe) {
      const std::size_t i = pick.uniform_index(x.size());
      xp[i] = x[i] + h;
      xm[i] = x[i] - h;
      const double fp = which == 0   ? loss(xp, ker, bias)
                        : which == 1 ? loss(in, xp, bias)
                                     : loss(in, ker, xp);
      const double fm = which == 0   ? loss(xm, ker, bias)
                        : which == 1 ? loss(in, xm, bias)
                                     : loss(in, ker, xm);
      xp[i] = x[i];
      xm[i] = x[i];
      const double fd = (fp - fm) / (2 * h);
      CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
    }
  };
  fd_check(in, gi, 0);
  fd_check(ker, gk, 1);
  fd_check(bias, gb, 2);
}

TEST_CASE("pairwise_sum is accurate and deterministic") {
  Rng rng(5);
  std::vector<double> xs(1000);
  long double acc = 0.0L;
  for (double& v : xs) {
    v = rng.uniform(-1.0, 1.0);
    acc += static_cast<long double>(v);
  }
  const double got = pairwise_sum(xs);
  CHECK(got == doctest::Approx(static_cast<double>(acc)).epsilon(1e-13));
  CHECK(pairwise_sum(std::span<const double>{}) == 0.0);
  CHECK(pairwise_sum(std::span<const double>(xs.data(), 1)) == xs[0]);
  // Same input, same result (no hidden state).
  CHECK(pairwise_sum(xs) == got);
}

TEST_CASE("rng determinism and serialization") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  const std::string state = a.serialize();
  Rng c = Rng::deserialize(state);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == c.next_u64());

  CHECK_THROWS_AS(Rng::deserialize("not a state"), Error);
}

TEST_CASE("rng uniform and index ranges") {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double v = rng.uniform(2.0, 3.0);
    CHECK(v >= 2.0);
    CHECK(v < 3.0);
    const auto idx = rng.uniform_index(7);
    CHECK(idx < 7);
  }
}

TEST_CASE("rng normal moments") {
  Rng rng(77);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  // Monte Carlo tolerances: sd of the mean is ~1/sqrt(n) ≈ 0.007.
  CHECK(std::abs(mean) < 0.03);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("rng fork yields a distinct stream") {
  Rng a(55);
  Rng child = a.fork();
  Rng b(55);
  b.next_u64();  // fork consumed one draw from the parent
  CHECK(a.next_u64() == b.next_u64());
  // Child stream differs from the parent continuation.
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (child.next_u64() == a.next_u64()) ++same;
  CHECK(same == 0);
}
