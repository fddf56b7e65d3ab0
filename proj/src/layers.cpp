// SPDX-License-Identifier: Apache-2.0
#include "fdd/layers.hpp"

#include <cmath>

namespace fdd {

Rng derive_rng(std::uint64_t seed, std::string_view purpose) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (char c : purpose) words.push_back(static_cast<unsigned char>(c));
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

Tensor kaiming_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(cols));
  return uniform_tensor({rows, cols}, -bound, bound, rng);
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

BatchNormLayer::BatchNormLayer(std::size_t channels)
    : scale(parameter(Tensor({channels}, 1.0))),
      shift(parameter(Tensor({channels}, 0.0))),
      stats(BatchNormStats::identity(channels)) {}

Var BatchNormLayer::forward(const Var& x, BatchNormMode mode, bool update_running) {
  BatchNormOptions opts;
  opts.update_running = update_running;
  return batch_norm(x, scale, shift, stats, mode, opts);
}

void BatchNormLayer::append_params(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".scale", scale});
  out.push_back({prefix + ".shift", shift});
}

void set_trainable(const ParamList& params, bool trainable) {
  for (const auto& p : params) p.var.node()->requires_grad = trainable;
}

std::size_t count_elements(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.size();
  return n;
}

}  // namespace fdd
