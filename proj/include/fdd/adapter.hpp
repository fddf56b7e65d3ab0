// SPDX-License-Identifier: Apache-2.0
//
// Fourier adapter placed after each frozen teacher block.
//
//   f_ad   = BN(W2 relu(BN(W1 f)))
//   alpha_ad          = |dft2(f_ad)|
//   (alpha, rho)      = decouple(dft2(f))
//   alpha_ref         = lambda * alpha_ad + (1 - lambda) * alpha
//   f_ift             = idft2(couple(alpha_ref, rho))
//
// with lambda = softmax(mix_logits / t)[0]. Phase always comes from the
// original feature; the adapter only ever touches amplitude.
#pragma once

#include <array>
#include <vector>

#include "fdd/autodiff.hpp"
#include "fdd/layers.hpp"
#include "fdd/network.hpp"

namespace fdd {

inline constexpr std::size_t kAdapterReduction = 4;

struct AdapterParams {
  std::size_t channels = 0;
  std::size_t reduction = kAdapterReduction;
  Var w1;  // [C/r, C]
  BatchNormLayer bn1;
  Var w2;  // [C, C/r]
  BatchNormLayer bn2;
  Var mix_logits;  // [2]
  double mix_temperature = 1.0;

  /// Kaiming-uniform convolutions, unit BN, mix logits (-2, +2).
  static AdapterParams init(std::size_t channels, Rng& rng, std::size_t reduction = kAdapterReduction);

  std::size_t hidden() const { return channels / reduction; }
  ParamList params(const std::string& prefix) const;
  std::vector<BatchNormLayer*> norms() { return {&bn1, &bn2}; }
  void set_mix_logits(double l0, double l1);
};

struct AdapterOutput {
  Var f_ift;
  Var phase;
  Var amplitude_refurbished;
};

/// Eq.-1 style bottleneck: BN(W2 relu(BN(W1 f))). f is [B,C,H,W].
Var adapt(const Var& f, AdapterParams& params, BatchNormMode mode, bool update_running = true);
/// lambda = exp(l0/t) / (exp(l0/t) + exp(l1/t)) as a single-element Var.
Var mixing_weight(const AdapterParams& params);
/// lambda * alpha_ad + (1 - lambda) * alpha.
Var refurbish(const Var& alpha, const Var& alpha_ad, const Var& lambda);
AdapterOutput adapter_forward(const Var& f, AdapterParams& params, BatchNormMode mode, bool update_running = true);

/// Teacher backbone with one adapter after each block.
struct AdaptedTeacher {
  Network backbone;
  std::vector<AdapterParams> adapters;

  ParamList adapter_params() const;
  std::vector<BatchNormLayer*> adapter_norms();
};

/// Freezes every backbone parameter and attaches fresh learnable adapters
/// sized to each block's output channels.
AdaptedTeacher attach_adapters(Network teacher, Rng& rng, std::size_t reduction = kAdapterReduction);

}  // namespace fdd
