// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "fdd/fusion.hpp"
#include "support.hpp"

using namespace fdd;
using fdd::test::random_tensor;

namespace {

std::vector<Var> stacks(const std::vector<std::size_t>& channels, std::size_t batch, Rng& rng) {
  std::vector<Var> out;
  std::size_t hw = 16;
  for (auto c : channels) {
    out.push_back(constant(random_tensor({batch, c, hw, hw}, rng)));
    if (hw > 4) hw /= 2;
  }
  return out;
}

}  // namespace

TEST_CASE("fuse") {
  Rng rng = derive_rng(1, "fuse");
  Var one = constant(random_tensor({2, 5, 4, 4}, rng));
  FusedPhase single = fuse({one});
  CHECK(single.data.value() == one.value());
  CHECK(single.channels() == 5);

  FusedPhase big = fuse(stacks({8, 16, 32, 64}, 1, rng));
  CHECK(big.channels() == 120);
  CHECK(big.data.shape() == Shape{1, 120, 4, 4});
  CHECK(big.block_offsets == std::vector<std::size_t>{0, 8, 24, 56, 120});
  CHECK(fuse(stacks({4, 8, 16, 32}, 1, rng)).channels() == 60);

  const double c[] = {0.5, -1.0, 2.0};
  FusedPhase cf = fuse({constant(Tensor({2, 2, 8, 8}, c[0])), constant(Tensor({2, 3, 4, 4}, c[1])),
                        constant(Tensor({2, 1, 2, 2}, c[2]))});
  REQUIRE(cf.data.shape() == Shape{2, 6, 2, 2});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t blk = 0; blk < 3; ++blk)
      for (std::size_t m = cf.block_offsets[blk]; m < cf.block_offsets[blk + 1]; ++m)
        for (std::size_t p = 0; p < 4; ++p) CHECK(cf.data.value()[(b * 6 + m) * 4 + p] == doctest::Approx(c[blk]));

  CHECK_THROWS_AS(fuse({constant(Tensor({1, 2, 3, 3})), constant(Tensor({1, 2, 2, 2}))}), ShapeError);
}

TEST_CASE("squeeze") {
  CHECK(squeeze(constant(Tensor({1, 2, 3, 3}, 1.5))).value() == Tensor({1, 2}, 1.5));
  CHECK(squeeze(constant(Tensor({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}))).item() == 2.5);
  Rng rng = derive_rng(2, "squeeze");
  Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor z = squeeze(constant(x)).value();
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t p = 0; p < 16; ++p) s += x[r * 16 + p];
    CHECK(z[r] == doctest::Approx(s / 16.0).epsilon(1e-12));
  }
}

TEST_CASE("attention") {
  Rng rng = derive_rng(3, "att");
  ActivationParams p = ActivationParams::init(8, rng);
  CHECK(attention(constant(Tensor({2, 8}, 0.0)), p).value() == Tensor({2, 8}, 0.5));

  ActivationParams q = ActivationParams::init(8, rng);
  q.w2.mutable_value().fill(0.0);
  CHECK(attention(constant(random_tensor({3, 8}, rng)), q).value() == Tensor({3, 8}, 0.5));

  Tensor z = random_tensor({2, 8}, rng, -3.0, 3.0);
  Tensor s = attention(constant(z), p).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t m = 0; m < 8; ++m) {
      double out = 0.0;
      for (std::size_t j = 0; j < 2; ++j) {
        double h = 0.0;
        for (std::size_t k = 0; k < 8; ++k) h += p.w1.value()[j * 8 + k] * z[b * 8 + k];
        out += p.w2.value()[m * 2 + j] * std::max(h, 0.0);
      }
      CHECK(s[b * 8 + m] == doctest::Approx(1.0 / (1.0 + std::exp(-out))).epsilon(1e-12));
    }

  for (int rep = 0; rep < 20; ++rep) {
    Tensor zz = random_tensor({4, 8}, rng, -5.0, 5.0);
    const Tensor s_zz = attention(constant(zz), p).value();
    for (double v : s_zz.vec()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("activate") {
  Rng rng = derive_rng(4, "activate");
  Tensor x = random_tensor({2, 3, 2, 2}, rng);
  CHECK(activate(constant(x), constant(Tensor({2, 3}, 1.0))).value() == x);
  Tensor half = activate(constant(x), constant(Tensor({2, 3}, 0.5))).value();
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(half[i] == x[i] / 2.0);

  Tensor s = random_tensor({2, 3}, rng, 0.0, 1.0);
  Tensor y = activate(constant(x), constant(s)).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t p = 0; p < 4; ++p) {
        const std::size_t i = (b * 3 + m) * 4 + p;
        CHECK(y[i] == doctest::Approx(x[i] * s[b * 3 + m]).epsilon(1e-12));
      }

  Tensor q = random_tensor({2, 3, 2, 2}, rng);
  Tensor lin(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) lin[i] = 1.5 * x[i] - 2.0 * q[i];
  Tensor lhs = activate(constant(lin), constant(s)).value();
  Tensor ax = activate(constant(x), constant(s)).value(), aq = activate(constant(q), constant(s)).value();
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(lhs[i] - (1.5 * ax[i] - 2.0 * aq[i])) < 1e-12);
}

TEST_CASE("map_features") {
  Rng rng = derive_rng(5, "map");
  FeatureMapParams p = FeatureMapParams::init(8, 16, rng);
  CHECK(max_abs(map_features(constant(Tensor({1, 8, 8, 8}, 0.0)), p).value()) == 0.0);
  Tensor x = random_tensor({1, 8, 8, 8}, rng);
  Tensor y = map_features(constant(x), p).value();
  CHECK(y.shape() == Shape{1, 16, 8, 8});
  Tensor ref = relu(conv1x1(relu(conv1x1(constant(x), p.w1)), p.w2)).value();
  CHECK(max_abs_diff(y, ref) < 1e-12);
  CHECK_THROWS_AS(map_features(constant(Tensor({1, 4, 2, 2})), p), ShapeError);
}

TEST_CASE("align_spatial pools the larger stack") {
  auto [s, t] = align_spatial(constant(Tensor({1, 2, 8, 8}, 1.0)), constant(Tensor({1, 3, 4, 4}, 2.0)));
  CHECK(s.shape() == Shape{1, 2, 4, 4});
  CHECK(t.shape() == Shape{1, 3, 4, 4});
}
