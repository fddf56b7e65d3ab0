// SPDX-License-Identifier: Apache-2.0
#include "fdd/fusion.hpp"

#include <stdexcept>

namespace fdd {

FusedPhase fuse(const std::vector<Var>& phases) {
  if (phases.empty()) throw ShapeError("fuse: no phase stacks");
  const auto& last = phases.back().shape();
  if (last.size() != 4) throw ShapeError("fuse: phase stacks must be [B,C,H,W]");
  const std::size_t h = last[2], w = last[3];
  FusedPhase out;
  out.block_offsets.push_back(0);
  std::vector<Var> pooled;
  for (const auto& p : phases) {
    const auto& s = p.shape();
    if (s.size() != 4 || s[0] != last[0]) throw ShapeError("fuse: stack " + shape_str(s) + " incompatible with " + shape_str(last));
    pooled.push_back(s[2] == h && s[3] == w ? p : avg_pool_to(p, h, w));
    out.block_offsets.push_back(out.block_offsets.back() + s[1]);
  }
  out.data = pooled.size() == 1 ? pooled[0] : concat_channels(pooled);
  return out;
}

Var squeeze(const Var& fused) {
  const auto& s = fused.shape();
  if (s.size() != 4) throw ShapeError("squeeze: expected [B,M,H,W], got " + shape_str(s));
  return reshape(avg_pool_to(fused, 1, 1), {s[0], s[1]});
}

ActivationParams ActivationParams::init(std::size_t channels, Rng& rng, std::size_t reduction) {
  if (reduction == 0 || channels % reduction != 0)
    throw std::invalid_argument("activation reduction " + std::to_string(reduction) + " must divide " +
                                std::to_string(channels));
  ActivationParams p;
  p.channels = channels;
  p.reduction = reduction;
  p.w1 = parameter(kaiming_uniform(channels / reduction, channels, rng));
  p.w2 = parameter(kaiming_uniform(channels, channels / reduction, rng));
  return p;
}

ParamList ActivationParams::params(const std::string& prefix) const {
  return {{prefix + ".w1", w1}, {prefix + ".w2", w2}};
}

Var attention(const Var& z, const ActivationParams& params) {
  if (z.shape().size() != 2 || z.shape()[1] != params.channels)
    throw ShapeError("attention: statistics " + shape_str(z.shape()) + " do not match " +
                     std::to_string(params.channels) + " channels");
  return sigmoid(fully_connected(relu(fully_connected(z, params.w1)), params.w2));
}

Var activate(const Var& fused, const Var& s) { return scale_channels(fused, s); }

FeatureMapParams FeatureMapParams::init(std::size_t student_channels, std::size_t teacher_channels, Rng& rng,
                                        std::size_t reduction) {
  if (reduction == 0 || student_channels % reduction != 0)
    throw std::invalid_argument("mapping reduction " + std::to_string(reduction) + " must divide " +
                                std::to_string(student_channels));
  FeatureMapParams p;
  p.student_channels = student_channels;
  p.teacher_channels = teacher_channels;
  p.reduction = reduction;
  p.w1 = parameter(kaiming_uniform(student_channels / reduction, student_channels, rng));
  p.w2 = parameter(kaiming_uniform(teacher_channels, student_channels / reduction, rng));
  return p;
}

ParamList FeatureMapParams::params(const std::string& prefix) const {
  return {{prefix + ".w1", w1}, {prefix + ".w2", w2}};
}

Var map_features(const Var& student_fused, const FeatureMapParams& params) {
  if (student_fused.shape().size() != 4 || student_fused.shape()[1] != params.student_channels)
    throw ShapeError("map_features: input " + shape_str(student_fused.shape()) + " does not have " +
                     std::to_string(params.student_channels) + " channels");
  return relu(conv1x1(relu(conv1x1(student_fused, params.w1)), params.w2));
}

std::pair<Var, Var> align_spatial(const Var& student, const Var& teacher) {
  const auto& s = student.shape();
  const auto& t = teacher.shape();
  if (s.size() != 4 || t.size() != 4) throw ShapeError("align_spatial: expected [B,C,H,W] stacks");
  const std::size_t h = std::min(s[2], t[2]), w = std::min(s[3], t[3]);
  auto pool = [&](const Var& x) {
    const auto& xs = x.shape();
    return xs[2] == h && xs[3] == w ? x : avg_pool_to(x, h, w);
  };
  return {pool(student), pool(teacher)};
}

}  // namespace fdd
