// SPDX-License-Identifier: Apache-2.0
//
// Two-dimensional discrete Fourier transform and the amplitude/phase split.
//
// Normalization: the forward transform carries the 1/(HW) factor and the
// inverse carries none, so idft2(dft2(f)) == f.
//
// Phase is the four-quadrant arctangent atan2(imag, real) in (-pi, pi]; it is
// defined as 0 where the amplitude is exactly 0, and so is its gradient.
//
// Differentiable spectra are packed as [..., H, W, 2] with (real, imag) in the
// trailing axis.
#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "fdd/autodiff.hpp"
#include "fdd/tensor.hpp"

namespace fdd {

struct ComplexSpectrum {
  Tensor real;
  Tensor imag;
};

struct AmplitudePhase {
  Tensor amplitude;  // >= 0
  Tensor phase;      // in (-pi, pi]
};

/// Largest tolerated |imag| of an inverse transform before the spectrum is
/// treated as corrupted.
inline constexpr double kInverseImagTolerance = 1e-8;

bool is_power_of_two(std::size_t n) noexcept;

/// In-place transform of `planes` contiguous H x W complex planes.
/// sign = -1: forward kernel exp(-i...), sign = +1: inverse kernel. No scaling.
/// Uses radix-2 when both sizes are powers of two, a direct sum otherwise.
void fft2_planes(std::complex<double>* data, std::size_t planes, std::size_t h, std::size_t w, int sign);
/// Same as fft2_planes but always takes the direct-sum path.
void dft2_planes_direct(std::complex<double>* data, std::size_t planes, std::size_t h, std::size_t w, int sign);

ComplexSpectrum dft2(const Tensor& f);
Tensor idft2(const ComplexSpectrum& spectrum);
AmplitudePhase decouple(const ComplexSpectrum& spectrum);
ComplexSpectrum couple(const Tensor& amplitude, const Tensor& phase);

/// dft2 followed by decouple for each channel of a [C,H,W] feature map.
AmplitudePhase decouple_featuremap(const Tensor& feature);

/// atan2 with the (-pi, pi] convention and phase(0) = 0.
double phase_of(double re, double im) noexcept;

// ---- differentiable forms ------------------------------------------------------

/// [..., H, W] -> [..., H, W, 2]
Var dft2(const Var& f);
/// [..., H, W, 2] -> [..., H, W]; throws NumericError when the imaginary
/// residual exceeds kInverseImagTolerance.
Var idft2(const Var& spectrum);
/// [..., 2] -> [...]
Var amplitude(const Var& spectrum);
Var phase(const Var& spectrum);
/// Polar recomposition: (a cos p, a sin p). Rejects negative amplitudes.
Var couple(const Var& amplitude, const Var& phase);

}  // namespace fdd
