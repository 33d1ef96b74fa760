#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "gsopt/tape.hpp"

using namespace gsopt;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Magnitudes in [0.2, 1.0]: keeps relu/l1/maxpool probes away from kinks and
// ties at the FD step size.
Tensor random_signed(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double mag = rng.uniform(0.2, 1.0);
    t[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Central-difference check of every coordinate of every input against the
// tape's reverse-mode gradients. build() must be a pure function of the
// leaf values.
template <typename Build>
void fd_check(Build build, std::vector<Tensor> xs, double h = 1e-5,
              double tol = 1e-4) {
  Tape t;
  std::vector<NodeId> ids;
  for (const Tensor& x : xs) ids.push_back(t.leaf(x, true));
  const NodeId root = build(t, ids);
  REQUIRE(t.value(root).size() == 1);
  t.backward(root);
  std::vector<Tensor> analytic;
  for (NodeId id : ids) analytic.push_back(t.grad(id));

  auto eval = [&] {
    Tape t2;
    std::vector<NodeId> ids2;
    for (const Tensor& x : xs) ids2.push_back(t2.leaf(x, false));
    return t2.value(build(t2, ids2))[0];
  };
  for (std::size_t which = 0; which < xs.size(); ++which)
    for (std::size_t i = 0; i < xs[which].size(); ++i) {
      const double x0 = xs[which][i];
      xs[which][i] = x0 + h;
      const double fp = eval();
      xs[which][i] = x0 - h;
      const double fm = eval();
      xs[which][i] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[which][i];
      const double err =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      INFO("input ", which, " coord ", i, ": analytic ", an, " fd ", fd);
      CHECK(err < tol);
    }
}

}  // namespace

TEST_CASE("elementwise chain gradients") {
  Rng rng(1);
  fd_check(
      [](Tape& t, const std::vector<NodeId>& in) {
        NodeId s = t.sub(t.add(in[0], in[1]), t.mul(in[0], in[1]));
        return t.sum(t.scale(s, 1.7));
      },
      {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
}

TEST_CASE("relu gradient and value") {
  Rng rng(2);
  const Tensor x = random_signed({4, 5}, rng);
  Tape t;
  const NodeId y = t.relu(t.leaf(x));
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(t.value(y)[i] == std::max(x[i], 0.0));

  const Tensor target = random_tensor({4, 5}, rng);
  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.mse_loss(tp.relu(in[0]), target);
      },
      {x});
}

TEST_CASE("sigmoid gradient and fixed point") {
  Tape t;
  const NodeId y = t.sigmoid(t.leaf(Tensor::scalar(0.0)));
  CHECK(t.value(y)[0] == 0.5);

  Rng rng(3);
  const Tensor target = random_tensor({2, 3}, rng);
  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.mse_loss(tp.sigmoid(in[0]), target);
      },
      {random_tensor({2, 3}, rng, -3.0, 3.0)});
}

TEST_CASE("sigmoid_cols applies only to the tail columns") {
  Rng rng(4);
  const Tensor x = random_tensor({3, 5}, rng, -2.0, 2.0);
  Tape t;
  const NodeId y = t.sigmoid_cols(t.leaf(x), 2);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      const double want =
          c < 2 ? x.at(r, c) : 1.0 / (1.0 + std::exp(-x.at(r, c)));
      CHECK(t.value(y).at(r, c) == doctest::Approx(want).epsilon(1e-15));
    }

  const Tensor target = random_tensor({3, 5}, rng);
  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.mse_loss(tp.sigmoid_cols(in[0], 2), target);
      },
      {x});
}

TEST_CASE("matmul and linear gradients") {
  Rng rng(5);
  const Tensor target = random_tensor({4, 3}, rng);
  fd_check(
      [&](Tape& t, const std::vector<NodeId>& in) {
        return t.mse_loss(t.matmul(in[0], in[1]), target);
      },
      {random_tensor({4, 6}, rng), random_tensor({6, 3}, rng)});

  // linear value: x[1,3] * W[2,3]^T + b[2]
  const Tensor x = Tensor::from({1, 3}, {1, 2, 3});
  const Tensor w = Tensor::from({2, 3}, {1, 0, 0, 0, 1, 0});
  const Tensor b = Tensor::from({2}, {10, 20});
  Tape t;
  const NodeId out = t.linear(t.leaf(x), t.leaf(w), t.leaf(b));
  CHECK(t.value(out).at(0, 0) == 11.0);
  CHECK(t.value(out).at(0, 1) == 22.0);

  const Tensor target2 = random_tensor({5, 4}, rng);
  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.mse_loss(tp.linear(in[0], in[1], in[2]), target2);
      },
      {random_tensor({5, 7}, rng), random_tensor({4, 7}, rng),
       random_tensor({4}, rng)});
}

TEST_CASE("conv2d gradient through the tape") {
  Rng rng(6);
  const Tensor target = random_tensor({1, 2, 4, 4}, rng);
  fd_check(
      [&](Tape& t, const std::vector<NodeId>& in) {
        return t.mse_loss(t.conv2d(in[0], in[1], in[2], 1), target);
      },
      {random_tensor({1, 2, 4, 4}, rng), random_tensor({2, 2, 3, 3}, rng),
       random_tensor({2}, rng)});
}

TEST_CASE("maxpool2 picks window maxima") {
  const Tensor x =
      Tensor::from({1, 1, 4, 4},
                   {1, 2, 9, 4, 5, 6, 7, 8, 4, 3, 2, 1, 8, 7, 6, 5});
  Tape t;
  const NodeId y = t.maxpool2(t.leaf(x));
  REQUIRE(t.value(y).shape() == std::vector<std::size_t>{1, 1, 2, 2});
  CHECK(t.value(y)[0] == 6.0);
  CHECK(t.value(y)[1] == 9.0);
  CHECK(t.value(y)[2] == 8.0);
  CHECK(t.value(y)[3] == 6.0);

  Rng rng(7);
  const Tensor target = random_tensor({1, 2, 3, 3}, rng);
  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.mse_loss(tp.maxpool2(in[0]), target);
      },
      {random_tensor({1, 2, 6, 6}, rng)});

  CHECK_THROWS_AS(t.maxpool2(t.leaf(Tensor({1, 1, 3, 4}))), Error);
}

TEST_CASE("avgpool2 and upsample_nn2") {
  const Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tape t;
  CHECK(t.value(t.avgpool2(t.leaf(x)))[0] == 2.5);
  const NodeId up = t.upsample_nn2(t.leaf(x));
  REQUIRE(t.value(up).shape() == std::vector<std::size_t>{1, 1, 4, 4});
  CHECK(t.value(up)[0] == 1.0);   // (0,0) -> in(0,0)
  CHECK(t.value(up)[2] == 2.0);   // (0,2) -> in(0,1)
  CHECK(t.value(up)[5] == 1.0);   // (1,1) -> in(0,0)
  CHECK(t.value(up)[15] == 4.0);  // (3,3) -> in(1,1)

  Rng rng(8);
  const Tensor t1 = random_tensor({2, 3, 2, 2}, rng);
  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.mse_loss(tp.avgpool2(in[0]), t1);
      },
      {random_tensor({2, 3, 4, 4}, rng)});
  const Tensor t2 = random_tensor({2, 3, 4, 4}, rng);
  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.mse_loss(tp.upsample_nn2(in[0]), t2);
      },
      {random_tensor({2, 3, 2, 2}, rng)});
}

TEST_CASE("concat_channels layout and gradients") {
  const Tensor a = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({1, 2, 2, 2}, {5, 6, 7, 8, 9, 10, 11, 12});
  Tape t;
  const NodeId y = t.concat_channels(t.leaf(a), t.leaf(b));
  REQUIRE(t.value(y).shape() == std::vector<std::size_t>{1, 3, 2, 2});
  CHECK(t.value(y)[0] == 1.0);
  CHECK(t.value(y)[4] == 5.0);
  CHECK(t.value(y)[11] == 12.0);

  Rng rng(9);
  const Tensor target = random_tensor({2, 5, 2, 2}, rng);
  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.mse_loss(tp.concat_channels(in[0], in[1]), target);
      },
      {random_tensor({2, 2, 2, 2}, rng), random_tensor({2, 3, 2, 2}, rng)});
}

TEST_CASE("flatten and global_avg_pool") {
  const Tensor x = Tensor::from({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tape t;
  const NodeId f = t.flatten(t.leaf(x));
  REQUIRE(t.value(f).shape() == std::vector<std::size_t>{1, 8});
  const NodeId g = t.global_avg_pool(t.leaf(x));
  REQUIRE(t.value(g).shape() == std::vector<std::size_t>{1, 2});
  CHECK(t.value(g).at(0, 0) == 2.5);
  CHECK(t.value(g).at(0, 1) == 6.5);

  Rng rng(10);
  const Tensor target = random_tensor({2, 3}, rng);
  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.mse_loss(tp.global_avg_pool(in[0]), target);
      },
      {random_tensor({2, 3, 4, 4}, rng)});
}

TEST_CASE("softmax cross entropy values") {
  // Uniform logits over K classes: loss = ln K regardless of label.
  Tape t;
  const NodeId l2 = t.softmax_cross_entropy(t.leaf(Tensor({1, 2})), {1});
  CHECK(t.value(l2)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const NodeId l5 = t.softmax_cross_entropy(t.leaf(Tensor({3, 5})), {0, 4, 2});
  CHECK(t.value(l5)[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  // Per-row gradient sums to zero (softmax shift invariance).
  Rng rng(11);
  Tape t2;
  const NodeId logits = t2.leaf(random_tensor({4, 6}, rng, -2.0, 2.0), true);
  t2.backward(t2.softmax_cross_entropy(logits, {0, 1, 2, 3}));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) s += t2.grad(logits).at(r, c);
    CHECK(s == doctest::Approx(0.0).epsilon(1e-12));
  }

  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.softmax_cross_entropy(in[0], {2, 0, 3});
      },
      {random_tensor({3, 4}, rng, -2.0, 2.0)});

  CHECK_THROWS_AS(t.softmax_cross_entropy(t.leaf(Tensor({2, 3})), {0, 3}),
                  Error);
}

TEST_CASE("softmax cross entropy map matches flat version") {
  Rng rng(12);
  // A [1,K,1,1] map is the same problem as a [1,K] row.
  const Tensor row = random_tensor({1, 5}, rng, -2.0, 2.0);
  Tensor map({1, 5, 1, 1});
  for (std::size_t i = 0; i < 5; ++i) map[i] = row[i];
  Tape t;
  const double flat = t.value(t.softmax_cross_entropy(t.leaf(row), {3}))[0];
  const double pix =
      t.value(t.softmax_cross_entropy_map(t.leaf(map), {3}))[0];
  CHECK(pix == doctest::Approx(flat).epsilon(1e-14));

  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.softmax_cross_entropy_map(in[0], {1, 0, 2, 1, 0, 2});
      },
      {random_tensor({1, 3, 2, 3}, rng, -2.0, 2.0)});
}

TEST_CASE("softmax_ce_cols consistency and gradient") {
  Rng rng(13);
  const Tensor x = random_tensor({3, 7}, rng, -2.0, 2.0);
  // Columns [2,6) of x as their own matrix.
  Tensor sliced({3, 4});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) sliced.at(r, c) = x.at(r, 2 + c);
  const std::vector<int> labels{1, 3, 0};
  Tape t;
  const double cols =
      t.value(t.softmax_ce_cols(t.leaf(x), 2, 6, labels))[0];
  const double flat =
      t.value(t.softmax_cross_entropy(t.leaf(sliced), labels))[0];
  CHECK(cols == doctest::Approx(flat * 3.0).epsilon(1e-12));  // sum vs mean

  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.softmax_ce_cols(in[0], 2, 6, labels);
      },
      {x});
}

TEST_CASE("l1 losses") {
  Tape t;
  const Tensor pred = Tensor::from({2, 2}, {1.0, -2.0, 3.0, 0.5});
  const Tensor target = Tensor::from({2, 2}, {0.0, 0.0, 0.0, 0.0});
  CHECK(t.value(t.l1_loss(t.leaf(pred), target))[0] == 6.5);

  Rng rng(14);
  const Tensor x = random_signed({3, 6}, rng);
  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.l1_loss(in[0], Tensor({3, 6}));
      },
      {x});
  // l1_cols over [1,4): value equals manual sum.
  Tensor tgt({3, 3});
  double manual = 0.0;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) manual += std::abs(x.at(r, 1 + c));
  Tape t2;
  CHECK(t2.value(t2.l1_cols(t2.leaf(x), 1, 4, tgt))[0] ==
        doctest::Approx(manual).epsilon(1e-14));
  fd_check(
      [&](Tape& tp, const std::vector<NodeId>& in) {
        return tp.l1_cols(in[0], 1, 4, tgt);
      },
      {x});
}

TEST_CASE("mse value") {
  Tape t;
  const Tensor pred = Tensor::from({2}, {3.0, -1.0});
  const Tensor target = Tensor::from({2}, {1.0, 1.0});
  CHECK(t.value(t.mse_loss(t.leaf(pred), target))[0] == 4.0);  // (4+4)/2
}

TEST_CASE("dropout semantics") {
  Rng data_rng(15);
  const Tensor x = random_tensor({50, 20}, data_rng, 0.5, 1.5);

  // Eval mode and p=0 are the identity.
  {
    Rng rng(1);
    Tape t;
    const NodeId y = t.dropout(t.leaf(x), 0.5, false, rng);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(t.value(y)[i] == x[i]);
    Rng rng2(1);
    Tape t2;
    const NodeId y2 = t2.dropout(t2.leaf(x), 0.0, true, rng2);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(t2.value(y2)[i] == x[i]);
  }

  // Train mode: exact inverted scaling, drop fraction near p, and the
  // backward mask matches the forward mask.
  {
    const double p = 0.3;
    Rng rng(99);
    Tape t;
    const NodeId in = t.leaf(x, true);
    const NodeId y = t.dropout(in, p, true, rng);
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = t.value(y)[i];
      if (v == 0.0)
        ++dropped;
      else
        CHECK(v == doctest::Approx(x[i] / (1.0 - p)).epsilon(1e-15));
    }
    const double frac = static_cast<double>(dropped) / x.size();
    CHECK(frac == doctest::Approx(p).epsilon(0.15));

    t.backward(t.sum(y));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double want = t.value(y)[i] == 0.0 ? 0.0 : 1.0 / (1.0 - p);
      CHECK(t.grad(in)[i] == want);
    }
  }

  Tape t;
  Rng rng(1);
  CHECK_THROWS_AS(t.dropout(t.leaf(x), 1.0, true, rng), Error);
}

TEST_CASE("backward_with seeds an intermediate output") {
  Rng rng(16);
  const Tensor x = random_tensor({3, 3}, rng, -2.0, 2.0);
  const Tensor seed = random_tensor({3, 3}, rng);
  Tape t;
  const NodeId in = t.leaf(x, true);
  const NodeId y = t.sigmoid(in);
  t.backward_with(y, seed);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    CHECK(t.grad(in)[i] ==
          doctest::Approx(seed[i] * s * (1.0 - s)).epsilon(1e-12));
  }
}

TEST_CASE("diamond reuse accumulates") {
  Tape t;
  const NodeId a = t.leaf(Tensor::from({2}, {3.0, -4.0}), true);
  t.backward(t.sum(t.mul(a, a)));  // d/da sum(a^2) = 2a
  CHECK(t.grad(a)[0] == 6.0);
  CHECK(t.grad(a)[1] == -8.0);

  Tape t2;
  const NodeId b = t2.leaf(Tensor::from({2}, {1.0, 2.0}), true);
  t2.backward(t2.sum(t2.add(b, b)));
  CHECK(t2.grad(b)[0] == 2.0);
  CHECK(t2.grad(b)[1] == 2.0);
}

TEST_CASE("two-layer network end to end") {
  Rng rng(17);
  fd_check(
      [&](Tape& t, const std::vector<NodeId>& in) {
        const NodeId h = t.relu(t.linear(in[0], in[1], in[2]));
        const NodeId logits = t.linear(h, in[3], in[4]);
        return t.softmax_cross_entropy(logits, {0, 2, 1});
      },
      {random_tensor({3, 5}, rng), random_tensor({6, 5}, rng),
       random_signed({6}, rng), random_tensor({3, 6}, rng),
       random_signed({3}, rng)},
      1e-5, 5e-4);
}

TEST_CASE("backward requires a scalar root") {
  Tape t;
  const NodeId a = t.leaf(Tensor({2, 2}), true);
  CHECK_THROWS_AS(t.backward(t.relu(a)), Error);
}
