// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "fdd/spectral.hpp"
#include "support.hpp"

using namespace fdd;
using fdd::test::random_tensor;

namespace {

using cd = std::complex<double>;

// Direct double sum; forward carries 1/(HW).
std::vector<cd> naive(const std::vector<cd>& f, std::size_t H, std::size_t W, int sign) {
  std::vector<cd> out(H * W);
  const double scale = sign < 0 ? 1.0 / static_cast<double>(H * W) : 1.0;
  for (std::size_t u = 0; u < H; ++u)
    for (std::size_t v = 0; v < W; ++v) {
      cd acc = 0.0;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          const double ang = sign * 2.0 * std::numbers::pi *
                             (static_cast<double>(u * h) / static_cast<double>(H) +
                              static_cast<double>(v * w) / static_cast<double>(W));
          acc += f[h * W + w] * std::polar(1.0, ang);
        }
      out[u * W + v] = acc * scale;
    }
  return out;
}

std::vector<cd> as_complex(const Tensor& t) {
  std::vector<cd> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i];
  return out;
}

}  // namespace

TEST_CASE("dft2 examples") {
  ComplexSpectrum z = dft2(Tensor({3, 5}, 0.0));
  CHECK(max_abs(z.real) == 0.0);
  CHECK(max_abs(z.imag) == 0.0);

  for (auto [H, W] : {std::pair<std::size_t, std::size_t>{4, 4}, {3, 5}, {8, 2}}) {
    ComplexSpectrum c = dft2(Tensor({H, W}, 0.7));
    CHECK(c.real[0] == doctest::Approx(0.7).epsilon(1e-12));
    for (std::size_t i = 1; i < H * W; ++i) {
      CHECK(std::abs(c.real[i]) < 1e-12);
      CHECK(std::abs(c.imag[i]) < 1e-12);
    }
  }

  Rng rng = derive_rng(1, "dft");
  Tensor f = random_tensor({4, 4}, rng);
  ComplexSpectrum F = dft2(f);
  auto ref = naive(as_complex(f), 4, 4, -1);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(std::abs(F.real[i] - ref[i].real()) < 1e-10);
    CHECK(std::abs(F.imag[i] - ref[i].imag()) < 1e-10);
  }
  CHECK_THROWS_AS(dft2(Tensor({0, 4})), ShapeError);
}

TEST_CASE("fast and direct transforms agree") {
  Rng rng = derive_rng(2, "paths");
  for (std::size_t n : {2u, 8u, 16u}) {
    Tensor re = random_tensor({n, n}, rng), im = random_tensor({n, n}, rng);
    std::vector<cd> a(n * n), b;
    for (std::size_t i = 0; i < n * n; ++i) a[i] = {re[i], im[i]};
    b = a;
    fft2_planes(a.data(), 1, n, n, -1);
    dft2_planes_direct(b.data(), 1, n, n, -1);
    for (std::size_t i = 0; i < n * n; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-10);
  }
}

TEST_CASE("idft2 examples") {
  ComplexSpectrum dc{Tensor({4, 6}, 0.0), Tensor({4, 6}, 0.0)};
  dc.real[0] = -1.25;
  CHECK(max_abs_diff(idft2(dc), Tensor({4, 6}, -1.25)) < 1e-12);

  Rng rng = derive_rng(3, "idft");
  Tensor f = random_tensor({8, 8}, rng);
  CHECK(max_abs_diff(idft2(dft2(f)), f) < 1e-9);

  // Conjugate-symmetric spectrum: transform of a real signal, then perturbed symmetrically.
  Tensor g = random_tensor({4, 4}, rng);
  ComplexSpectrum G = dft2(g);
  std::vector<cd> spec(16);
  for (std::size_t i = 0; i < 16; ++i) spec[i] = {G.real[i], G.imag[i]};
  auto ref = naive(spec, 4, 4, +1);
  Tensor back = idft2(G);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(std::abs(back[i] - ref[i].real()) < 1e-10);
    CHECK(std::abs(ref[i].imag()) < 1e-10);
  }

  ComplexSpectrum bad{Tensor({4, 4}, 0.0), Tensor({4, 4}, 0.0)};
  bad.imag[1] = 0.5;  // no conjugate partner
  CHECK_THROWS_AS(idft2(bad), NumericError);
}

TEST_CASE("decouple and couple") {
  ComplexSpectrum s{Tensor({1, 3}, {3.0, 2.0, 0.0}), Tensor({1, 3}, {4.0, 0.0, 1.5})};
  AmplitudePhase ap = decouple(s);
  CHECK(ap.amplitude[0] == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(ap.phase[0] == doctest::Approx(0.9273).epsilon(1e-4));
  CHECK(ap.phase[0] == doctest::Approx(std::atan2(4.0, 3.0)).epsilon(1e-15));
  CHECK(ap.amplitude[1] == 2.0);
  CHECK(ap.phase[1] == 0.0);
  CHECK(ap.amplitude[2] == 1.5);
  CHECK(ap.phase[2] == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));

  CHECK(phase_of(-1.0, 0.0) == doctest::Approx(std::numbers::pi));
  CHECK(phase_of(-1.0, -0.0) == doctest::Approx(std::numbers::pi));
  CHECK(phase_of(0.0, 0.0) == 0.0);

  ComplexSpectrum zero = couple(Tensor({2, 2}, 0.0), Tensor({2, 2}, {0.3, -2.0, 3.1, 1.0}));
  CHECK(max_abs(zero.real) == 0.0);
  CHECK(max_abs(zero.imag) == 0.0);

  ComplexSpectrum back = couple(Tensor({1}, 5.0), Tensor({1}, std::atan2(4.0, 3.0)));
  CHECK(back.real[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(back.imag[0] == doctest::Approx(4.0).epsilon(1e-12));

  Rng rng = derive_rng(4, "polar");
  ComplexSpectrum r{random_tensor({5, 7}, rng), random_tensor({5, 7}, rng)};
  AmplitudePhase rp = decouple(r);
  ComplexSpectrum rr = couple(rp.amplitude, rp.phase);
  CHECK(max_abs_diff(rr.real, r.real) < 1e-9);
  CHECK(max_abs_diff(rr.imag, r.imag) < 1e-9);
  for (double p : rp.phase.vec()) {
    CHECK(p > -std::numbers::pi);
    CHECK(p <= std::numbers::pi);
  }
  for (double a : rp.amplitude.vec()) CHECK(a >= 0.0);

  CHECK_THROWS_AS(couple(Tensor({1}, -1.0), Tensor({1}, 0.0)), std::invalid_argument);
}

TEST_CASE("decouple_featuremap") {
  AmplitudePhase z = decouple_featuremap(Tensor({2, 4, 4}, 0.0));
  CHECK(max_abs(z.amplitude) == 0.0);
  CHECK(max_abs(z.phase) == 0.0);

  Tensor cst({2, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) {
    cst[i] = 0.5;
    cst[16 + i] = 2.0;
  }
  AmplitudePhase c = decouple_featuremap(cst);
  CHECK(c.amplitude[0] == doctest::Approx(0.5));
  CHECK(c.amplitude[16] == doctest::Approx(2.0));
  for (std::size_t i = 1; i < 16; ++i) {
    CHECK(c.amplitude[i] < 1e-12);
    CHECK(c.amplitude[16 + i] < 1e-12);
  }

  Rng rng = derive_rng(5, "fm");
  Tensor f = random_tensor({2, 4, 4}, rng);
  AmplitudePhase all = decouple_featuremap(f);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    Tensor plane({4, 4}, std::vector<double>(f.ptr() + ch * 16, f.ptr() + (ch + 1) * 16));
    AmplitudePhase one = decouple(dft2(plane));
    for (std::size_t i = 0; i < 16; ++i) {
      CHECK(all.amplitude[ch * 16 + i] == one.amplitude[i]);
      CHECK(all.phase[ch * 16 + i] == one.phase[i]);
    }
  }
}

TEST_CASE("Parseval and linearity") {
  Rng rng = derive_rng(6, "props");
  for (int rep = 0; rep < 20; ++rep) {
    Tensor f = random_tensor({8, 4}, rng), g = random_tensor({8, 4}, rng);
    ComplexSpectrum F = dft2(f), G = dft2(g);
    double ef = 0.0, es = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      ef += f[i] * f[i];
      es += F.real[i] * F.real[i] + F.imag[i] * F.imag[i];
    }
    CHECK(es * 32.0 == doctest::Approx(ef).epsilon(1e-10));

    Tensor mix(f.shape());
    for (std::size_t i = 0; i < f.size(); ++i) mix[i] = 2.0 * f[i] - 0.5 * g[i];
    ComplexSpectrum M = dft2(mix);
    for (std::size_t i = 0; i < f.size(); ++i) {
      CHECK(std::abs(M.real[i] - (2.0 * F.real[i] - 0.5 * G.real[i])) < 1e-12);
      CHECK(std::abs(M.imag[i] - (2.0 * F.imag[i] - 0.5 * G.imag[i])) < 1e-12);
    }
  }
}

TEST_CASE("differentiable forms agree with the plain ones") {
  Rng rng = derive_rng(7, "packed");
  Tensor f = random_tensor({2, 3, 4, 4}, rng);
  Var spec = dft2(constant(f));
  REQUIRE(spec.shape() == Shape{2, 3, 4, 4, 2});
  Tensor plane({4, 4}, std::vector<double>(f.ptr() + 16, f.ptr() + 32));
  ComplexSpectrum ref = dft2(plane);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(spec.value()[(16 + i) * 2] == doctest::Approx(ref.real[i]).epsilon(1e-14));
    CHECK(spec.value()[(16 + i) * 2 + 1] == doctest::Approx(ref.imag[i]).epsilon(1e-14));
  }
  Var back = idft2(couple(amplitude(spec), phase(spec)));
  CHECK(max_abs_diff(back.value(), f) < 1e-9);
}
