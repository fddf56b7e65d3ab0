// SPDX-License-Identifier: Apache-2.0
//
// Toy residual networks built from pointwise convolutions. Each block is
//   conv1x1 -> BN -> relu -> conv1x1 -> BN, + skip, relu, [2x2 avg pool]
// with an identity skip when channel counts match and a zero-padded channel
// skip otherwise. Every block but the last halves the spatial size.
#pragma once

#include <string>
#include <vector>

#include "fdd/autodiff.hpp"
#include "fdd/layers.hpp"
#include "fdd/optim.hpp"

namespace fdd {

enum class NetworkRole { Teacher, Student };

struct NetworkSpec {
  std::vector<std::size_t> block_channels;
  std::size_t in_channels = 3;
  std::size_t in_height = 32;
  std::size_t in_width = 32;
  std::size_t num_classes = 7;
  NetworkRole role = NetworkRole::Student;

  std::size_t n_blocks() const { return block_channels.size(); }
  /// Spatial size of each block's output.
  std::vector<std::pair<std::size_t, std::size_t>> block_output_sizes() const;
  void validate() const;

  static NetworkSpec default_teacher();
  static NetworkSpec default_student();
};

std::string role_name(NetworkRole role);
NetworkRole parse_role(const std::string& s);

struct Block {
  std::size_t in_channels;
  std::size_t out_channels;
  bool downsample;
  Var conv1;  // [out, in]
  BatchNormLayer bn1;
  Var conv2;  // [out, out]
  BatchNormLayer bn2;

  Var forward(const Var& x, BatchNormMode mode, bool update_running = true);
  void append_params(ParamList& out, const std::string& prefix) const;
  std::vector<BatchNormLayer*> norms() { return {&bn1, &bn2}; }
};

Block build_block(std::size_t channels_in, std::size_t channels_out, Rng& rng, bool downsample = true);

class Network {
 public:
  Network() = default;
  Network(NetworkSpec spec, Rng& rng);

  /// Deep copy with independent parameter storage.
  Network clone() const;

  struct Output {
    Var logits;
    std::vector<Var> block_outputs;
  };

  Var run_block(std::size_t i, const Var& x, BatchNormMode mode, bool update_running = true);
  Var classify(const Var& deepest);
  Output forward(const Var& x, BatchNormMode mode, bool update_running = true);

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::vector<Block>& blocks() noexcept { return blocks_; }
  ParamList params(const std::string& prefix = "") const;
  std::vector<BatchNormLayer*> norms();

 private:
  NetworkSpec spec_;
  std::vector<Block> blocks_;
  Var fc_weight;
  Var fc_bias;
};

/// Batch of images [B,C,H,W] as a constant.
Var input_batch(const Tensor& images, const std::vector<std::size_t>& indices);

}  // namespace fdd
