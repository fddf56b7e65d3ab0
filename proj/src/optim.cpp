// SPDX-License-Identifier: Apache-2.0
#include "fdd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fdd {

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Var v = p.var;
    v.zero_grad();
  }
}

namespace {
void check_lr(double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative, got " + std::to_string(lr));
}
}  // namespace

Sgd::Sgd(ParamList params, Options options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) velocity_.emplace_back(p.var.shape(), 0.0);
}

void Sgd::step(double lr) {
  check_lr(lr);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var var = params_[k].var;
    Tensor& w = var.mutable_value();
    Tensor& vel = velocity_[k];
    const Tensor* g = var.node()->grad.empty() ? nullptr : &var.node()->grad;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double grad = (g ? (*g)[i] : 0.0) + options_.weight_decay * w[i];
      vel[i] = options_.momentum * vel[i] + grad;
      w[i] -= lr * vel[i];
    }
  }
  ++steps_;
}

Adam::Adam(ParamList params, Options options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape(), 0.0);
    v_.emplace_back(p.var.shape(), 0.0);
  }
}

void Adam::step(double lr) {
  check_lr(lr);
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var var = params_[k].var;
    Tensor& w = var.mutable_value();
    const Tensor* g = var.node()->grad.empty() ? nullptr : &var.node()->grad;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double grad = g ? (*g)[i] : 0.0;
      m_[k][i] = options_.beta1 * m_[k][i] + (1.0 - options_.beta1) * grad;
      v_[k][i] = options_.beta2 * v_[k][i] + (1.0 - options_.beta2) * grad * grad;
      const double mhat = m_[k][i] / bc1;
      const double vhat = v_[k][i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

}  // namespace fdd
