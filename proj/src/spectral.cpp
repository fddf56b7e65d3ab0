// SPDX-License-Identifier: Apache-2.0
#include "fdd/spectral.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_map>

namespace fdd {

namespace {

using cd = std::complex<double>;

inline cd cmul(cd a, cd b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

/// exp(-2 pi i k / n), exact at multiples of a quarter turn.
cd root_of_unity(std::size_t k, std::size_t n) {
  k %= n;
  if (k == 0) return {1.0, 0.0};
  if (4 * k == n) return {0.0, -1.0};
  if (2 * k == n) return {-1.0, 0.0};
  if (4 * k == 3 * n) return {0.0, 1.0};
  const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
  return {std::cos(a), std::sin(a)};
}

struct Plan {
  std::vector<cd> roots;  // exp(-2 pi i k / n), k < n
  std::vector<std::size_t> bitrev;
};

const Plan& plan_for(std::size_t n) {
  thread_local std::unordered_map<std::size_t, Plan> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Plan p;
  p.roots.resize(n);
  for (std::size_t k = 0; k < n; ++k) p.roots[k] = root_of_unity(k, n);
  if (is_power_of_two(n)) {
    p.bitrev.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b)
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      p.bitrev[i] = r;
    }
  }
  return cache.emplace(n, std::move(p)).first->second;
}

inline cd twiddle(const Plan& p, std::size_t k, int sign) {
  const cd r = p.roots[k];
  return sign < 0 ? r : cd{r.real(), -r.imag()};
}

void radix2(cd* x, std::size_t n, int sign) {
  const Plan& p = plan_for(n);
  for (std::size_t i = 0; i < n; ++i)
    if (i < p.bitrev[i]) std::swap(x[i], x[p.bitrev[i]]);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len)
      for (std::size_t j = 0; j < half; ++j) {
        const cd u = x[start + j];
        const cd v = cmul(x[start + j + half], twiddle(p, j * step, sign));
        x[start + j] = u + v;
        x[start + j + half] = u - v;
      }
  }
}

void direct_1d(cd* x, std::size_t n, int sign, std::vector<cd>& scratch) {
  const Plan& p = plan_for(n);
  scratch.assign(n, cd{});
  for (std::size_t k = 0; k < n; ++k) {
    cd acc{};
    for (std::size_t j = 0; j < n; ++j) acc += cmul(x[j], twiddle(p, (k * j) % n, sign));
    scratch[k] = acc;
  }
  std::copy(scratch.begin(), scratch.end(), x);
}

void transform_planes(cd* data, std::size_t planes, std::size_t h, std::size_t w, int sign, bool allow_fast) {
  if (h == 0 || w == 0) throw ShapeError("dft2: empty input");
  const bool fast_w = allow_fast && is_power_of_two(w);
  const bool fast_h = allow_fast && is_power_of_two(h);
  std::vector<cd> column(h), scratch;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    cd* plane = data + pl * h * w;
    for (std::size_t r = 0; r < h; ++r) {
      if (fast_w)
        radix2(plane + r * w, w, sign);
      else
        direct_1d(plane + r * w, w, sign, scratch);
    }
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t r = 0; r < h; ++r) column[r] = plane[r * w + c];
      if (fast_h)
        radix2(column.data(), h, sign);
      else
        direct_1d(column.data(), h, sign, scratch);
      for (std::size_t r = 0; r < h; ++r) plane[r * w + c] = column[r];
    }
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a rank-2 array, got " + shape_str(t.shape()));
}

std::pair<std::size_t, std::size_t> spatial_dims(const Shape& s, std::size_t trailing, const char* op) {
  if (s.size() < 2 + trailing) throw ShapeError(std::string(op) + ": input " + shape_str(s) + " lacks spatial axes");
  return {s[s.size() - 2 - trailing], s[s.size() - 1 - trailing]};
}

void require_packed(const Var& v, const char* op) {
  if (v.shape().empty() || v.shape().back() != 2)
    throw ShapeError(std::string(op) + ": expected a packed spectrum [...,2], got " + shape_str(v.shape()));
}

}  // namespace

bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

void fft2_planes(std::complex<double>* data, std::size_t planes, std::size_t h, std::size_t w, int sign) {
  transform_planes(data, planes, h, w, sign, true);
}

void dft2_planes_direct(std::complex<double>* data, std::size_t planes, std::size_t h, std::size_t w, int sign) {
  transform_planes(data, planes, h, w, sign, false);
}

double phase_of(double re, double im) noexcept {
  if (re == 0.0 && im == 0.0) return 0.0;
  const double p = std::atan2(im, re);
  return p <= -std::numbers::pi ? std::numbers::pi : p;
}

ComplexSpectrum dft2(const Tensor& f) {
  require_rank2(f, "dft2");
  const std::size_t h = f.dim(0), w = f.dim(1);
  std::vector<cd> buf(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) buf[i] = {f[i], 0.0};
  fft2_planes(buf.data(), 1, h, w, -1);
  const double norm = 1.0 / static_cast<double>(h * w);
  ComplexSpectrum out{Tensor(f.shape()), Tensor(f.shape())};
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.real[i] = buf[i].real() * norm;
    out.imag[i] = buf[i].imag() * norm;
  }
  return out;
}

Tensor idft2(const ComplexSpectrum& spectrum) {
  require_rank2(spectrum.real, "idft2");
  if (spectrum.real.shape() != spectrum.imag.shape()) throw ShapeError("idft2: real/imag shape mismatch");
  const std::size_t h = spectrum.real.dim(0), w = spectrum.real.dim(1);
  std::vector<cd> buf(spectrum.real.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = {spectrum.real[i], spectrum.imag[i]};
  fft2_planes(buf.data(), 1, h, w, +1);
  Tensor out(spectrum.real.shape());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    if (std::abs(buf[i].imag()) > kInverseImagTolerance)
      throw NumericError("idft2: imaginary residual " + std::to_string(std::abs(buf[i].imag())) +
                         " exceeds tolerance; spectrum is not conjugate-symmetric");
    out[i] = buf[i].real();
  }
  return out;
}

AmplitudePhase decouple(const ComplexSpectrum& spectrum) {
  if (spectrum.real.shape() != spectrum.imag.shape()) throw ShapeError("decouple: real/imag shape mismatch");
  AmplitudePhase out{Tensor(spectrum.real.shape()), Tensor(spectrum.real.shape())};
  for (std::size_t i = 0; i < spectrum.real.size(); ++i) {
    const double re = spectrum.real[i], im = spectrum.imag[i];
    out.amplitude[i] = std::hypot(re, im);
    out.phase[i] = phase_of(re, im);
  }
  return out;
}

ComplexSpectrum couple(const Tensor& amplitude, const Tensor& phase) {
  if (amplitude.shape() != phase.shape()) throw ShapeError("couple: amplitude/phase shape mismatch");
  ComplexSpectrum out{Tensor(amplitude.shape()), Tensor(amplitude.shape())};
  for (std::size_t i = 0; i < amplitude.size(); ++i) {
    if (amplitude[i] < 0.0) throw std::invalid_argument("couple: negative amplitude");
    out.real[i] = amplitude[i] * std::cos(phase[i]);
    out.imag[i] = amplitude[i] * std::sin(phase[i]);
  }
  return out;
}

AmplitudePhase decouple_featuremap(const Tensor& feature) {
  if (feature.rank() != 3) throw ShapeError("decouple_featuremap: expected [C,H,W], got " + shape_str(feature.shape()));
  const std::size_t C = feature.dim(0), H = feature.dim(1), W = feature.dim(2);
  AmplitudePhase out{Tensor(feature.shape()), Tensor(feature.shape())};
  for (std::size_t c = 0; c < C; ++c) {
    Tensor plane({H, W}, std::vector<double>(feature.ptr() + c * H * W, feature.ptr() + (c + 1) * H * W));
    const AmplitudePhase ap = decouple(dft2(plane));
    std::copy(ap.amplitude.ptr(), ap.amplitude.ptr() + H * W, out.amplitude.ptr() + c * H * W);
    std::copy(ap.phase.ptr(), ap.phase.ptr() + H * W, out.phase.ptr() + c * H * W);
  }
  return out;
}

// ---- differentiable ----------------------------------------------------------------

Var dft2(const Var& f) {
  const auto [h, w] = spatial_dims(f.shape(), 0, "dft2");
  const std::size_t planes = f.size() / (h * w);
  const double norm = 1.0 / static_cast<double>(h * w);
  std::vector<cd> buf(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) buf[i] = {f.value()[i], 0.0};
  fft2_planes(buf.data(), planes, h, w, -1);
  Shape os = f.shape();
  os.push_back(2);
  Tensor out(os);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out[2 * i] = buf[i].real() * norm;
    out[2 * i + 1] = buf[i].imag() * norm;
  }
  return make_op("dft2", std::move(out), {f}, [planes, h = h, w = w, norm](Node& self) {
    // d/df of Re/Im parts: (1/HW) Re(sum_uv G(u,v) exp(+i theta)).
    std::vector<cd> g(planes * h * w);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = {self.grad[2 * i], self.grad[2 * i + 1]};
    fft2_planes(g.data(), planes, h, w, +1);
    Tensor& gf = *self.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gf[i] += norm * g[i].real();
  });
}

Var idft2(const Var& spectrum) {
  require_packed(spectrum, "idft2");
  const auto [h, w] = spatial_dims(spectrum.shape(), 1, "idft2");
  const std::size_t n = spectrum.size() / 2;
  const std::size_t planes = n / (h * w);
  std::vector<cd> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = {spectrum.value()[2 * i], spectrum.value()[2 * i + 1]};
  fft2_planes(buf.data(), planes, h, w, +1);
  Shape os(spectrum.shape().begin(), spectrum.shape().end() - 1);
  Tensor out(os);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(buf[i].imag()) > kInverseImagTolerance)
      throw NumericError("idft2: imaginary residual " + std::to_string(std::abs(buf[i].imag())) +
                         " exceeds tolerance; spectrum is not conjugate-symmetric");
    out[i] = buf[i].real();
  }
  return make_op("idft2", std::move(out), {spectrum}, [planes, h = h, w = w, n](Node& self) {
    // d Re(sum F exp(+i theta)) / d(re, im) = sum g exp(-i theta).
    std::vector<cd> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = {self.grad[i], 0.0};
    fft2_planes(g.data(), planes, h, w, -1);
    Tensor& gs = *self.input_grad(0);
    for (std::size_t i = 0; i < n; ++i) {
      gs[2 * i] += g[i].real();
      gs[2 * i + 1] += g[i].imag();
    }
  });
}

Var amplitude(const Var& spectrum) {
  require_packed(spectrum, "amplitude");
  const std::size_t n = spectrum.size() / 2;
  Shape os(spectrum.shape().begin(), spectrum.shape().end() - 1);
  Tensor out(os);
  const Tensor& s = spectrum.value();
  for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(s[2 * i] * s[2 * i] + s[2 * i + 1] * s[2 * i + 1]);
  if (SmoothnessProbe::active()) {
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
      if (out[i] > 0.0) margin = std::min(margin, out[i]);
    SmoothnessProbe::report(margin);
  }
  Tensor a = out;
  return make_op("amplitude", std::move(out), {spectrum}, [n, a = std::move(a)](Node& self) {
    const Tensor& s = self.inputs[0]->value;
    Tensor& gs = *self.input_grad(0);
    for (std::size_t i = 0; i < n; ++i) {
      if (a[i] == 0.0) continue;
      gs[2 * i] += self.grad[i] * s[2 * i] / a[i];
      gs[2 * i + 1] += self.grad[i] * s[2 * i + 1] / a[i];
    }
  });
}

Var phase(const Var& spectrum) {
  require_packed(spectrum, "phase");
  const std::size_t n = spectrum.size() / 2;
  Shape os(spectrum.shape().begin(), spectrum.shape().end() - 1);
  Tensor out(os);
  const Tensor& s = spectrum.value();
  for (std::size_t i = 0; i < n; ++i) out[i] = phase_of(s[2 * i], s[2 * i + 1]);
  if (SmoothnessProbe::active()) {
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const double re = s[2 * i], im = s[2 * i + 1];
      const double a = std::hypot(re, im);
      if (a > 0.0) margin = std::min(margin, a);
      // Near the negative real axis the phase jumps between +pi and -pi.
      if (re < 0.0 && im != 0.0) margin = std::min(margin, std::abs(im));
    }
    SmoothnessProbe::report(margin);
  }
  return make_op("phase", std::move(out), {spectrum}, [n](Node& self) {
    const Tensor& s = self.inputs[0]->value;
    Tensor& gs = *self.input_grad(0);
    for (std::size_t i = 0; i < n; ++i) {
      const double re = s[2 * i], im = s[2 * i + 1];
      const double a2 = re * re + im * im;
      if (a2 == 0.0) continue;
      gs[2 * i] += -self.grad[i] * im / a2;
      gs[2 * i + 1] += self.grad[i] * re / a2;
    }
  });
}

Var couple(const Var& amp, const Var& ph) {
  if (amp.shape() != ph.shape())
    throw ShapeError("couple: amplitude " + shape_str(amp.shape()) + " and phase " + shape_str(ph.shape()) +
                     " differ");
  const std::size_t n = amp.size();
  Shape os = amp.shape();
  os.push_back(2);
  Tensor out(os);
  Tensor cs(Shape{n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const double a = amp.value()[i];
    if (a < 0.0) throw std::invalid_argument("couple: negative amplitude " + std::to_string(a));
    const double c = std::cos(ph.value()[i]), s = std::sin(ph.value()[i]);
    cs[2 * i] = c;
    cs[2 * i + 1] = s;
    out[2 * i] = a * c;
    out[2 * i + 1] = a * s;
  }
  return make_op("couple", std::move(out), {amp, ph}, [n, cs = std::move(cs)](Node& self) {
    const Tensor& a = self.inputs[0]->value;
    Tensor* ga = self.input_grad(0);
    Tensor* gp = self.input_grad(1);
    for (std::size_t i = 0; i < n; ++i) {
      const double gr = self.grad[2 * i], gi = self.grad[2 * i + 1];
      const double c = cs[2 * i], s = cs[2 * i + 1];
      if (ga) (*ga)[i] += gr * c + gi * s;
      if (gp) (*gp)[i] += a[i] * (gi * c - gr * s);
    }
  });
}

}  // namespace fdd
