// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fdd/autodiff.hpp"

namespace fdd {

/// A learnable tensor together with its checkpoint name.
struct NamedParam {
  std::string name;
  Var var;
};

using ParamList = std::vector<NamedParam>;

void zero_grads(const ParamList& params);

/// Momentum SGD with L2 weight decay folded into the gradient:
///   v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
class Sgd {
 public:
  struct Options {
    double momentum = 0.9;
    double weight_decay = 5e-4;
  };

  Sgd(ParamList params, Options options);
  Sgd(ParamList params) : Sgd(std::move(params), Options{}) {}

  void step(double lr);
  void zero_grad() { zero_grads(params_); }

  const ParamList& params() const noexcept { return params_; }
  const Options& options() const noexcept { return options_; }
  std::vector<Tensor>& velocity() noexcept { return velocity_; }
  const std::vector<Tensor>& velocity() const noexcept { return velocity_; }
  std::uint64_t steps() const noexcept { return steps_; }
  void set_steps(std::uint64_t s) noexcept { steps_ = s; }

 private:
  ParamList params_;
  Options options_;
  std::vector<Tensor> velocity_;
  std::uint64_t steps_ = 0;
};

/// Adaptive moment estimation with bias correction.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(ParamList params, Options options);
  Adam(ParamList params) : Adam(std::move(params), Options{}) {}

  void step(double lr);
  void zero_grad() { zero_grads(params_); }

  const ParamList& params() const noexcept { return params_; }
  std::vector<Tensor>& first_moment() noexcept { return m_; }
  std::vector<Tensor>& second_moment() noexcept { return v_; }
  const std::vector<Tensor>& first_moment() const noexcept { return m_; }
  const std::vector<Tensor>& second_moment() const noexcept { return v_; }
  std::uint64_t steps() const noexcept { return t_; }
  void set_steps(std::uint64_t t) noexcept { t_ = t; }

 private:
  ParamList params_;
  Options options_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace fdd
