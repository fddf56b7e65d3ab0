// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "fdd/autodiff.hpp"
#include "fdd/optim.hpp"

namespace fdd {

using Rng = std::mt19937_64;

/// Independent stream derived from a base seed and a purpose tag.
Rng derive_rng(std::uint64_t seed, std::string_view purpose);

/// Uniform(-b, b) with b = sqrt(6 / fan_in): Kaiming-uniform for ReLU nets.
Tensor kaiming_uniform(std::size_t rows, std::size_t cols, Rng& rng);
Tensor normal_tensor(Shape shape, double stddev, Rng& rng);
Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng);

/// Affine batch normalization with running statistics.
struct BatchNormLayer {
  Var scale;
  Var shift;
  BatchNormStats stats;

  explicit BatchNormLayer(std::size_t channels = 1);
  std::size_t channels() const { return scale.size(); }
  Var forward(const Var& x, BatchNormMode mode, bool update_running = true);
  void append_params(ParamList& out, const std::string& prefix) const;
};

/// Sets requires_grad on every listed parameter.
void set_trainable(const ParamList& params, bool trainable);
std::size_t count_elements(const ParamList& params);

}  // namespace fdd
