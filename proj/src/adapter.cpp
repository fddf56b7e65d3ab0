// SPDX-License-Identifier: Apache-2.0
#include "fdd/adapter.hpp"

#include <stdexcept>

#include "fdd/spectral.hpp"

namespace fdd {

AdapterParams AdapterParams::init(std::size_t channels, Rng& rng, std::size_t reduction) {
  if (reduction == 0 || channels % reduction != 0)
    throw std::invalid_argument("adapter reduction " + std::to_string(reduction) + " must divide " +
                                std::to_string(channels) + " channels");
  AdapterParams p;
  p.channels = channels;
  p.reduction = reduction;
  const std::size_t hidden = channels / reduction;
  p.w1 = parameter(kaiming_uniform(hidden, channels, rng));
  p.bn1 = BatchNormLayer(hidden);
  p.w2 = parameter(kaiming_uniform(channels, hidden, rng));
  p.bn2 = BatchNormLayer(channels);
  p.mix_logits = parameter(Tensor({2}, {-2.0, 2.0}));
  return p;
}

ParamList AdapterParams::params(const std::string& prefix) const {
  ParamList out;
  out.push_back({prefix + ".w1", w1});
  bn1.append_params(out, prefix + ".bn1");
  out.push_back({prefix + ".w2", w2});
  bn2.append_params(out, prefix + ".bn2");
  out.push_back({prefix + ".mix_logits", mix_logits});
  return out;
}

void AdapterParams::set_mix_logits(double l0, double l1) {
  mix_logits.mutable_value()[0] = l0;
  mix_logits.mutable_value()[1] = l1;
}

Var adapt(const Var& f, AdapterParams& params, BatchNormMode mode, bool update_running) {
  const auto& s = f.shape();
  if (s.size() != 4 || s[1] != params.channels)
    throw ShapeError("adapt: feature " + shape_str(s) + " does not match adapter with " +
                     std::to_string(params.channels) + " channels");
  Var h = relu(params.bn1.forward(conv1x1(f, params.w1), mode, update_running));
  return params.bn2.forward(conv1x1(h, params.w2), mode, update_running);
}

Var mixing_weight(const AdapterParams& params) {
  if (!(params.mix_temperature > 0.0)) throw std::invalid_argument("mixing temperature must be positive");
  return element(softmax_t(params.mix_logits, params.mix_temperature), 0);
}

Var refurbish(const Var& alpha, const Var& alpha_ad, const Var& lambda) {
  if (alpha.shape() != alpha_ad.shape())
    throw ShapeError("refurbish: amplitude shapes " + shape_str(alpha.shape()) + " and " +
                     shape_str(alpha_ad.shape()) + " differ");
  const double l = lambda.item();
  if (!(l >= 0.0 && l <= 1.0)) throw std::invalid_argument("refurbish: lambda must lie in [0,1]");
  Var keep = sub(constant(Tensor::scalar(1.0)), lambda);
  return add(scale_by(alpha_ad, lambda), scale_by(alpha, keep));
}

AdapterOutput adapter_forward(const Var& f, AdapterParams& params, BatchNormMode mode, bool update_running) {
  Var f_ad = adapt(f, params, mode, update_running);
  // The adapted phase is never used downstream, so only its amplitude is formed.
  Var alpha_ad = amplitude(dft2(f_ad));
  Var spectrum = dft2(f);
  Var alpha = amplitude(spectrum);
  Var rho = phase(spectrum);
  Var alpha_ref = refurbish(alpha, alpha_ad, mixing_weight(params));
  Var f_ift = idft2(couple(alpha_ref, rho));
  return {f_ift, rho, alpha_ref};
}

ParamList AdaptedTeacher::adapter_params() const {
  ParamList out;
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    auto p = adapters[i].params("adapter" + std::to_string(i));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<BatchNormLayer*> AdaptedTeacher::adapter_norms() {
  std::vector<BatchNormLayer*> out;
  for (auto& a : adapters)
    for (auto* n : a.norms()) out.push_back(n);
  return out;
}

AdaptedTeacher attach_adapters(Network teacher, Rng& rng, std::size_t reduction) {
  AdaptedTeacher t{std::move(teacher), {}};
  set_trainable(t.backbone.params(), false);
  for (const auto& block : t.backbone.blocks()) {
    if (block.out_channels % reduction != 0)
      throw ShapeError("attach_adapters: block with " + std::to_string(block.out_channels) +
                       " channels is not divisible by reduction " + std::to_string(reduction));
    t.adapters.push_back(AdapterParams::init(block.out_channels, rng, reduction));
  }
  return t;
}

}  // namespace fdd
