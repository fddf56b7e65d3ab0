// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense double tensors.
//
// Every differentiable primitive produces a Var whose node keeps references
// to its inputs and a backward rule. When none of the inputs requires a
// gradient (or gradients are disabled through NoGradGuard) the result is a
// plain constant with no history, so frozen sub-graphs cost nothing extra.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fdd/tensor.hpp"

namespace fdd {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Backward rule: reads `self.grad` and accumulates into the input gradients.
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  BackwardFn backward;
  std::string op;
  std::uint64_t seq = 0;

  /// Gradient buffer of input `i`, allocated on demand; nullptr when that
  /// input does not take part in differentiation.
  Tensor* input_grad(std::size_t i);
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient, or zeros of the value's shape when nothing was accumulated.
  Tensor grad() const;
  void zero_grad();

  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

Var constant(Tensor value);
/// Leaf that accumulates gradients.
Var parameter(Tensor value);

/// Disables history recording in its scope; ops return constants.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds a result node. Used by every primitive, including the spectral ops.
Var make_op(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

/// Nodes reachable from a root, ordered so every node follows its inputs.
class ComputationTape {
 public:
  static ComputationTape record(const Var& root);

  const std::vector<Node*>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and replays backward rules in reverse order.
  void backward();

 private:
  std::vector<Node*> nodes_;
  Var root_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
/// Rejects non-scalar losses.
void backward(const Var& loss);

/// Records how close a forward pass came to a non-smooth point (ReLU kink,
/// phase branch cut, vanishing amplitude). Finite-difference checks use it to
/// discard samples that straddle a kink.
class SmoothnessProbe {
 public:
  SmoothnessProbe();
  ~SmoothnessProbe();
  SmoothnessProbe(const SmoothnessProbe&) = delete;
  SmoothnessProbe& operator=(const SmoothnessProbe&) = delete;

  double min_margin() const noexcept { return margin_; }
  static void report(double margin);
  static bool active() noexcept;

 private:
  double margin_;
  SmoothnessProbe* previous_;
};

// ---- layer primitives ------------------------------------------------------

/// Pointwise convolution. input [C_in,H,W] or [B,C_in,H,W], weight [C_out,C_in].
Var conv1x1(const Var& input, const Var& weight);

enum class BatchNormMode { Train, Eval };

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  static BatchNormStats identity(std::size_t channels);
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
  bool update_running = true;
};

/// Batch normalization over every axis but axis 1. input [B,C,...].
Var batch_norm(const Var& input, const Var& scale, const Var& shift, BatchNormStats& stats,
               BatchNormMode mode, const BatchNormOptions& options = {});

/// max(0, x); the gradient at exactly 0 is 0.
Var relu(const Var& input);
Var sigmoid(const Var& input);

/// Mean pooling of the two trailing axes down to (out_h, out_w).
Var avg_pool_to(const Var& input, std::size_t out_h, std::size_t out_w);

/// input [K] or [B,K], weight [L,K], optional bias [L].
Var fully_connected(const Var& input, const Var& weight, const std::optional<Var>& bias = std::nullopt);

/// Softmax of logits/tau along the last axis.
Var softmax_t(const Var& logits, double tau);
Var log_softmax_t(const Var& logits, double tau);

// ---- elementwise and structural helpers -------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
/// s * x where s is a single-element Var.
Var scale_by(const Var& x, const Var& s);
Var square(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);
/// Element `index` of a as a single-element Var.
Var element(const Var& a, std::size_t index);
/// x[b, labels[b]] for x [B,K].
Var pick(const Var& x, const std::vector<std::size_t>& labels);
/// Concatenates [B,C_i,...] tensors along axis 1.
Var concat_channels(const std::vector<Var>& parts);
/// Extends axis 1 of [B,C,...] to `channels` by appending zeros.
Var zero_pad_channels(const Var& x, std::size_t channels);
/// x [B,M,H,W] scaled by per-channel weights s [B,M].
Var scale_channels(const Var& x, const Var& s);

}  // namespace fdd
