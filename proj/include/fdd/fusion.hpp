// SPDX-License-Identifier: Apache-2.0
//
// Multi-block phase fusion and channel attention.
//
//   P_fuse = concat_i pool(P_i -> H_n x W_n)      [B, M, H_n, W_n], M = sum C_i
//   z      = spatial mean of P_fuse               [B, M]
//   S      = sigmoid(W2 relu(W1 z))               [B, M], bias-free
//   P_act  = P_fuse * S (per channel)
//
// The S computed from the teacher is applied to the student stack as well.
#pragma once

#include <vector>

#include "fdd/autodiff.hpp"
#include "fdd/layers.hpp"

namespace fdd {

inline constexpr std::size_t kActivationReduction = 4;
inline constexpr std::size_t kMappingReduction = 4;

struct FusedPhase {
  Var data;                                // [B, M, H_n, W_n]
  std::vector<std::size_t> block_offsets;  // size n + 1; block i owns [off[i], off[i+1])

  std::size_t channels() const { return block_offsets.empty() ? 0 : block_offsets.back(); }
};

/// phases: per block [B, C_i, H_i, W_i] with non-increasing spatial sizes.
FusedPhase fuse(const std::vector<Var>& phases);
/// [B, M, H, W] -> [B, M]
Var squeeze(const Var& fused);

struct ActivationParams {
  std::size_t channels = 0;
  std::size_t reduction = kActivationReduction;
  Var w1;  // [M/r, M]
  Var w2;  // [M, M/r]

  static ActivationParams init(std::size_t channels, Rng& rng, std::size_t reduction = kActivationReduction);
  ParamList params(const std::string& prefix) const;
};

/// S = sigmoid(W2 relu(W1 z)); z [B, M].
Var attention(const Var& z, const ActivationParams& params);
/// Channel m of fused scaled by S[:, m].
Var activate(const Var& fused, const Var& s);

/// Projection of the student's fused stack onto the teacher's channel count:
/// relu(W2 relu(W1 x)) with W1 [C_S/r, C_S], W2 [C_T, C_S/r].
struct FeatureMapParams {
  std::size_t student_channels = 0;
  std::size_t teacher_channels = 0;
  std::size_t reduction = kMappingReduction;
  Var w1;
  Var w2;

  static FeatureMapParams init(std::size_t student_channels, std::size_t teacher_channels, Rng& rng,
                               std::size_t reduction = kMappingReduction);
  ParamList params(const std::string& prefix) const;
};

Var map_features(const Var& student_fused, const FeatureMapParams& params);

/// Pools whichever of the two stacks is spatially larger down to the other's size.
std::pair<Var, Var> align_spatial(const Var& student, const Var& teacher);

}  // namespace fdd
