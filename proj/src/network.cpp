// SPDX-License-Identifier: Apache-2.0
#include "fdd/network.hpp"

#include <stdexcept>

#include "fdd/spectral.hpp"

namespace fdd {

std::vector<std::pair<std::size_t, std::size_t>> NetworkSpec::block_output_sizes() const {
  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  std::size_t h = in_height, w = in_width;
  for (std::size_t i = 0; i < block_channels.size(); ++i) {
    if (i + 1 < block_channels.size()) {
      h /= 2;
      w /= 2;
    }
    sizes.emplace_back(h, w);
  }
  return sizes;
}

void NetworkSpec::validate() const {
  if (block_channels.empty()) throw std::invalid_argument("network needs at least one block");
  for (auto c : block_channels)
    if (c == 0) throw std::invalid_argument("block channel counts must be positive");
  if (in_channels == 0 || num_classes == 0) throw std::invalid_argument("network input/classes must be positive");
  if (!is_power_of_two(in_height) || !is_power_of_two(in_width))
    throw std::invalid_argument("input size must be a power of two");
  const std::size_t halvings = block_channels.size() - 1;
  if ((in_height >> halvings) == 0 || (in_width >> halvings) == 0)
    throw std::invalid_argument("input too small for " + std::to_string(block_channels.size()) + " blocks");
  std::size_t prev = in_channels;
  for (auto c : block_channels) {
    if (c < prev) throw std::invalid_argument("block channels must be non-decreasing (zero-padded skip)");
    prev = c;
  }
}

NetworkSpec NetworkSpec::default_teacher() {
  NetworkSpec s;
  s.block_channels = {8, 16, 32, 64};
  s.role = NetworkRole::Teacher;
  return s;
}

NetworkSpec NetworkSpec::default_student() {
  NetworkSpec s;
  s.block_channels = {4, 8, 16, 32};
  s.role = NetworkRole::Student;
  return s;
}

std::string role_name(NetworkRole role) { return role == NetworkRole::Teacher ? "teacher" : "student"; }

NetworkRole parse_role(const std::string& s) {
  if (s == "teacher") return NetworkRole::Teacher;
  if (s == "student") return NetworkRole::Student;
  throw std::invalid_argument("unknown network role '" + s + "'");
}

Block build_block(std::size_t channels_in, std::size_t channels_out, Rng& rng, bool downsample) {
  if (channels_in == 0 || channels_out == 0) throw std::invalid_argument("build_block: channel counts must be positive");
  Block b{channels_in,
          channels_out,
          downsample,
          parameter(kaiming_uniform(channels_out, channels_in, rng)),
          BatchNormLayer(channels_out),
          parameter(kaiming_uniform(channels_out, channels_out, rng)),
          BatchNormLayer(channels_out)};
  return b;
}

Var Block::forward(const Var& x, BatchNormMode mode, bool update_running) {
  Var h = relu(bn1.forward(conv1x1(x, conv1), mode, update_running));
  h = bn2.forward(conv1x1(h, conv2), mode, update_running);
  Var skip = in_channels == out_channels ? x : zero_pad_channels(x, out_channels);
  Var out = relu(add(h, skip));
  if (!downsample) return out;
  const auto& s = out.shape();
  return avg_pool_to(out, s[s.size() - 2] / 2, s[s.size() - 1] / 2);
}

void Block::append_params(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".conv1", conv1});
  bn1.append_params(out, prefix + ".bn1");
  out.push_back({prefix + ".conv2", conv2});
  bn2.append_params(out, prefix + ".bn2");
}

Network::Network(NetworkSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t prev = spec_.in_channels;
  for (std::size_t i = 0; i < spec_.n_blocks(); ++i) {
    blocks_.push_back(build_block(prev, spec_.block_channels[i], rng, i + 1 < spec_.n_blocks()));
    prev = spec_.block_channels[i];
  }
  fc_weight = parameter(kaiming_uniform(spec_.num_classes, prev, rng));
  fc_bias = parameter(Tensor({spec_.num_classes}, 0.0));
}

namespace {
Var clone_var(const Var& v) {
  Var c = parameter(v.value());
  c.node()->requires_grad = v.requires_grad();
  return c;
}
}  // namespace

Network Network::clone() const {
  Network n;
  n.spec_ = spec_;
  for (const auto& b : blocks_) {
    Block c = b;
    c.conv1 = clone_var(b.conv1);
    c.conv2 = clone_var(b.conv2);
    for (auto [dst, src] : {std::pair{&c.bn1, &b.bn1}, std::pair{&c.bn2, &b.bn2}}) {
      dst->scale = clone_var(src->scale);
      dst->shift = clone_var(src->shift);
    }
    n.blocks_.push_back(std::move(c));
  }
  n.fc_weight = clone_var(fc_weight);
  n.fc_bias = clone_var(fc_bias);
  return n;
}

Var Network::run_block(std::size_t i, const Var& x, BatchNormMode mode, bool update_running) {
  return blocks_.at(i).forward(x, mode, update_running);
}

Var Network::classify(const Var& deepest) {
  const auto& s = deepest.shape();
  Var pooled = avg_pool_to(deepest, 1, 1);
  return fully_connected(reshape(pooled, {s[0], s[1]}), fc_weight, fc_bias);
}

Network::Output Network::forward(const Var& x, BatchNormMode mode, bool update_running) {
  Output out;
  Var h = x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = run_block(i, h, mode, update_running);
    out.block_outputs.push_back(h);
  }
  out.logits = classify(h);
  return out;
}

ParamList Network::params(const std::string& prefix) const {
  ParamList out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].append_params(out, prefix + "block" + std::to_string(i));
  out.push_back({prefix + "fc.weight", fc_weight});
  out.push_back({prefix + "fc.bias", fc_bias});
  return out;
}

std::vector<BatchNormLayer*> Network::norms() {
  std::vector<BatchNormLayer*> out;
  for (auto& b : blocks_)
    for (auto* n : b.norms()) out.push_back(n);
  return out;
}

Var input_batch(const Tensor& images, const std::vector<std::size_t>& indices) {
  if (images.rank() != 4) throw ShapeError("input_batch: images must be [N,C,H,W]");
  const std::size_t per = images.size() / images.dim(0);
  Tensor out({indices.size(), images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= images.dim(0)) throw std::out_of_range("input_batch: index out of range");
    std::copy(images.ptr() + indices[k] * per, images.ptr() + (indices[k] + 1) * per, out.ptr() + k * per);
  }
  return constant(std::move(out));
}

}  // namespace fdd
