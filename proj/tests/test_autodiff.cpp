// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fdd/autodiff.hpp"
#include "fdd/layers.hpp"
#include "fdd/losses.hpp"
#include "support.hpp"

using namespace fdd;
using fdd::test::numeric_grad;
using fdd::test::random_tensor;
using fdd::test::rel_error;

TEST_CASE("conv1x1 identity, zero and loop oracle") {
  Rng rng = derive_rng(1, "conv");
  Tensor x = random_tensor({3, 2, 2}, rng);
  Tensor eye({3, 3}, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  CHECK(conv1x1(constant(x), constant(eye)).value() == x);
  CHECK(max_abs(conv1x1(constant(x), constant(Tensor({5, 3}, 0.0))).value()) == 0.0);

  Tensor w = random_tensor({4, 3}, rng);
  Tensor y = conv1x1(constant(x), constant(w)).value();
  REQUIRE(y.shape() == Shape{4, 2, 2});
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t p = 0; p < 4; ++p) {
      double acc = 0.0;
      for (std::size_t c = 0; c < 3; ++c) acc += w[o * 3 + c] * x[c * 4 + p];
      CHECK(y[o * 4 + p] == doctest::Approx(acc).epsilon(1e-12));
    }
  CHECK_THROWS_AS(conv1x1(constant(x), constant(Tensor({4, 2}))), ShapeError);
}

TEST_CASE("batch_norm examples") {
  BatchNormStats stats = BatchNormStats::identity(2);
  Var one = constant(Tensor({2}, 1.0)), zero = constant(Tensor({2}, 0.0));

  Tensor flat({4, 2, 3, 3}, 0.7);
  CHECK(max_abs(batch_norm(constant(flat), one, zero, stats, BatchNormMode::Train).value()) < 1e-12);

  // Per-channel mean 0, variance 1 by construction: +-1 pattern.
  Tensor x({2, 2, 1, 2});
  const double pattern[] = {1, -1, -1, 1, -1, 1, 1, -1};
  for (int i = 0; i < 8; ++i) x[i] = pattern[i];
  Tensor y = batch_norm(constant(x), constant(Tensor({2}, 2.0)), constant(Tensor({2}, 3.0)), stats,
                        BatchNormMode::Train, {.eps = 0.0})
                 .value();
  for (int i = 0; i < 8; ++i) CHECK(y[i] == doctest::Approx(2.0 * x[i] + 3.0).epsilon(1e-12));

  BatchNormStats id = BatchNormStats::identity(2);
  Rng rng = derive_rng(2, "bn");
  Tensor r = random_tensor({3, 2, 4, 4}, rng);
  CHECK(max_abs_diff(batch_norm(constant(r), one, zero, id, BatchNormMode::Eval).value(), r) < 1e-5);

  CHECK_THROWS_AS(batch_norm(constant(Tensor({1, 2, 2, 2})), one, zero, stats, BatchNormMode::Train), ShapeError);
}

TEST_CASE("relu and sigmoid") {
  Tensor x({3}, {-1.0, 0.0, 2.0});
  CHECK(relu(constant(x)).value() == Tensor({3}, {0.0, 0.0, 2.0}));
  CHECK(max_abs(relu(constant(Tensor({4}, -3.0))).value()) == 0.0);

  Var p = parameter(Tensor({2}, {-1.0, 2.0}));
  backward(sum(relu(p)));
  CHECK(p.grad() == Tensor({2}, {0.0, 1.0}));

  CHECK(sigmoid(constant(Tensor::scalar(0.0))).item() == 0.5);
  const double big = sigmoid(constant(Tensor::scalar(100.0))).item();
  CHECK(std::isfinite(big));
  CHECK(big <= 1.0);
  CHECK(big > 1.0 - 1e-15);
  const double small = sigmoid(constant(Tensor::scalar(-100.0))).item();
  CHECK(small > 0.0);
  for (double v : {-30.0, -1.0, 1.0, 30.0}) {
    const double s = sigmoid(constant(Tensor::scalar(v))).item();
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  Var z = parameter(Tensor::scalar(0.0));
  backward(sigmoid(z));
  CHECK(z.grad().item() == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("avg_pool_to") {
  CHECK(avg_pool_to(constant(Tensor({2, 8, 8}, 0.3)), 2, 4).value() == Tensor({2, 2, 4}, 0.3));

  Tensor q({1, 4, 4});
  for (std::size_t h = 0; h < 4; ++h)
    for (std::size_t w = 0; w < 4; ++w) q[h * 4 + w] = 1.0 + (h >= 2 ? 2.0 : 0.0) + (w >= 2 ? 1.0 : 0.0);
  CHECK(avg_pool_to(constant(q), 2, 2).value() == Tensor({1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));

  Rng rng = derive_rng(3, "pool");
  Tensor r = random_tensor({1, 8, 8}, rng);
  double flat = 0.0;
  for (double v : r.vec()) flat += v;
  CHECK(avg_pool_to(constant(r), 1, 1).item() == doctest::Approx(flat / 64.0).epsilon(1e-12));
  CHECK_THROWS_AS(avg_pool_to(constant(r), 3, 3), ShapeError);
}

TEST_CASE("fully_connected") {
  Rng rng = derive_rng(4, "fc");
  Tensor x = random_tensor({3}, rng);
  Tensor eye({3, 3}, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  CHECK(fully_connected(constant(x), constant(eye), constant(Tensor({3}, 0.0))).value() == x);
  Tensor b({2}, {0.5, -1.5});
  CHECK(fully_connected(constant(Tensor({3}, 0.0)), constant(Tensor({2, 3}, 1.0)), constant(b)).value() == b);

  Tensor w = random_tensor({2, 3}, rng);
  Tensor y = fully_connected(constant(x), constant(w), constant(b)).value();
  for (std::size_t l = 0; l < 2; ++l) {
    double acc = b[l];
    for (std::size_t k = 0; k < 3; ++k) acc += w[l * 3 + k] * x[k];
    CHECK(y[l] == doctest::Approx(acc).epsilon(1e-12));
  }
  CHECK_THROWS_AS(fully_connected(constant(x), constant(Tensor({2, 4}))), ShapeError);
}

TEST_CASE("softmax_t") {
  Tensor eq = softmax_t(constant(Tensor({4}, 1.7)), 3.0).value();
  for (double v : eq.vec()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  Tensor z({2}, {0.0, std::log(4.0)});
  Tensor p1 = softmax_t(constant(z), 1.0).value();
  CHECK(p1[0] == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(p1[1] == doctest::Approx(0.8).epsilon(1e-14));
  Tensor p4 = softmax_t(constant(z), 4.0).value();
  CHECK(std::abs(p4[0] - 0.5) < std::abs(p1[0] - 0.5));
  CHECK_THROWS_AS(softmax_t(constant(z), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_t(constant(z), -1.0), std::invalid_argument);
}

TEST_CASE("backward on linear maps") {
  Var x = parameter(Tensor({2, 3}, 0.4));
  backward(sum(x));
  CHECK(x.grad() == Tensor({2, 3}, 1.0));

  // sum(A (B x)) -> B^T A^T 1
  Rng rng = derive_rng(5, "linear");
  Tensor A = random_tensor({2, 3}, rng), B = random_tensor({3, 4}, rng);
  Var v = parameter(random_tensor({4}, rng));
  backward(sum(fully_connected(fully_connected(v, constant(B)), constant(A))));
  for (std::size_t j = 0; j < 4; ++j) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 3; ++k) expect += A[i * 3 + k] * B[k * 4 + j];
    CHECK(v.grad()[j] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK_THROWS_AS(backward(x), ShapeError);
}

TEST_CASE("composite graph matches central differences") {
  Rng rng = derive_rng(6, "composite");
  const std::vector<std::size_t> labels{0, 2, 1};
  Tensor w_conv = random_tensor({4, 3}, rng), w_fc = random_tensor({3, 4}, rng);
  Tensor scale = random_tensor({4}, rng, 0.5, 1.5), shift = random_tensor({4}, rng, -0.2, 0.2);
  auto loss_of = [&](const Var& x) {
    BatchNormStats st = BatchNormStats::identity(4);
    Var h = relu(batch_norm(conv1x1(x, constant(w_conv)), constant(scale), constant(shift), st, BatchNormMode::Train));
    Var pooled = reshape(avg_pool_to(h, 1, 1), {3, 4});
    Var z = fully_connected(pooled, constant(w_fc));
    return ce_loss(z, labels);  // ce over log_softmax_t(., 1)
  };
  int checked = 0;
  for (int attempt = 0; attempt < 50 && checked < 5; ++attempt) {
    Tensor x0 = random_tensor({3, 3, 2, 2}, rng);
    {
      SmoothnessProbe probe;
      NoGradGuard ng;
      loss_of(constant(x0));
      if (probe.min_margin() < 1e-4) continue;
    }
    Var x = parameter(x0);
    backward(loss_of(x));
    Tensor fd = numeric_grad([&](const Tensor& t) { NoGradGuard ng; return loss_of(constant(t)).item(); }, x0);
    CHECK(rel_error(x.grad(), fd) < 1e-4);
    ++checked;
  }
  CHECK(checked == 5);
}

TEST_CASE("forward passes are deterministic and non-finite values abort") {
  Rng a = derive_rng(9, "det"), b = derive_rng(9, "det");
  Tensor x1 = random_tensor({2, 3, 4, 4}, a), x2 = random_tensor({2, 3, 4, 4}, b);
  Rng wr = derive_rng(9, "w");
  Tensor w = random_tensor({5, 3}, wr);
  CHECK(relu(conv1x1(constant(x1), constant(w))).value() == relu(conv1x1(constant(x2), constant(w))).value());

  Tensor bad({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(scale(constant(bad), 2.0), NumericError);
  CHECK_THROWS_AS(scale(constant(Tensor({1}, 1e308)), 1e10), NumericError);
}

TEST_CASE("gradients are not recorded under NoGradGuard") {
  Var p = parameter(Tensor({2}, 1.0));
  NoGradGuard ng;
  Var y = mul(p, p);
  CHECK_FALSE(y.requires_grad());
  CHECK_FALSE(grad_enabled());
}
