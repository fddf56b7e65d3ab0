// SPDX-License-Identifier: Apache-2.0
#include "fdd/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace fdd {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_seq = 0;
thread_local SmoothnessProbe* g_probe = nullptr;

void require_finite(const Tensor& t, const std::string& op, const char* what) {
  if (!t.all_finite()) throw NumericError("non-finite " + std::string(what) + " in op '" + op + "'");
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

Tensor* Node::input_grad(std::size_t i) {
  Node& in = *inputs.at(i);
  if (!in.requires_grad) return nullptr;
  return &in.grad_buffer();
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Tensor Var::grad() const {
  if (!node_->grad.empty()) return node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "constant";
  n->seq = ++g_seq;
  return Var(n);
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->op = "parameter";
  n->seq = ++g_seq;
  return Var(n);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var make_op(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  require_finite(value, op, "output");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = std::move(op);
  n->seq = ++g_seq;
  const bool any = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                 [](const Var& v) { return v.requires_grad(); });
  if (any) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& v : inputs) n->inputs.push_back(v.node());
    n->backward = std::move(backward);
  }
  return Var(n);
}

ComputationTape ComputationTape::record(const Var& root) {
  ComputationTape tape;
  tape.root_ = root;
  if (!root.requires_grad()) return tape;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void ComputationTape::backward() {
  if (nodes_.empty()) return;
  Node& root = *root_.node();
  Tensor& seed = root.grad_buffer();
  for (auto& g : seed.data()) g += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (!n.backward || n.grad.empty()) continue;
    n.backward(n);
    for (std::size_t i = 0; i < n.inputs.size(); ++i)
      if (n.inputs[i]->requires_grad && !n.inputs[i]->grad.empty())
        require_finite(n.inputs[i]->grad, n.op, "gradient");
    // Intermediate gradients are no longer needed once propagated.
    if (!n.inputs.empty()) n.grad = Tensor();
  }
}

void backward(const Var& loss) {
  if (loss.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  ComputationTape::record(loss).backward();
}

SmoothnessProbe::SmoothnessProbe() : margin_(std::numeric_limits<double>::infinity()), previous_(g_probe) {
  g_probe = this;
}
SmoothnessProbe::~SmoothnessProbe() { g_probe = previous_; }
bool SmoothnessProbe::active() noexcept { return g_probe != nullptr; }

void SmoothnessProbe::report(double margin) {
  for (auto* p = g_probe; p; p = p->previous_) p->margin_ = std::min(p->margin_, margin);
}

// ---- layers -----------------------------------------------------------------

Var conv1x1(const Var& input, const Var& weight) {
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  if (ws.size() != 2) throw ShapeError("conv1x1: weight must be rank 2, got " + shape_str(ws));
  if (xs.size() != 3 && xs.size() != 4) throw ShapeError("conv1x1: input must be [C,H,W] or [B,C,H,W]");
  const bool batched = xs.size() == 4;
  const std::size_t B = batched ? xs[0] : 1;
  const std::size_t cin = xs[batched ? 1 : 0];
  const std::size_t P = xs[xs.size() - 1] * xs[xs.size() - 2];
  const std::size_t cout = ws[0];
  if (ws[1] != cin)
    throw ShapeError("conv1x1: weight has " + std::to_string(ws[1]) + " input channels but input has " +
                     std::to_string(cin));
  Shape os = xs;
  os[batched ? 1 : 0] = cout;
  Tensor out(os);
  CMapR W(weight.value().ptr(), cout, cin);
  for (std::size_t b = 0; b < B; ++b) {
    CMapR X(input.value().ptr() + b * cin * P, cin, P);
    MapR Y(out.ptr() + b * cout * P, cout, P);
    Y.noalias() = W * X;
  }
  return make_op("conv1x1", std::move(out), {input, weight}, [B, cin, cout, P](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    const Tensor& w = self.inputs[1]->value;
    CMapR W(w.ptr(), cout, cin);
    Tensor* gx = self.input_grad(0);
    Tensor* gw = self.input_grad(1);
    for (std::size_t b = 0; b < B; ++b) {
      CMapR G(self.grad.ptr() + b * cout * P, cout, P);
      if (gx) MapR(gx->ptr() + b * cin * P, cin, P).noalias() += W.transpose() * G;
      if (gw) MapR(gw->ptr(), cout, cin).noalias() += G * CMapR(x.ptr() + b * cin * P, cin, P).transpose();
    }
  });
}

BatchNormStats BatchNormStats::identity(std::size_t channels) {
  return {Tensor({channels}, 0.0), Tensor({channels}, 1.0)};
}

Var batch_norm(const Var& input, const Var& scale, const Var& shift, BatchNormStats& stats, BatchNormMode mode,
               const BatchNormOptions& options) {
  const auto& xs = input.shape();
  if (xs.size() < 2) throw ShapeError("batch_norm: input must have a batch and channel axis");
  const std::size_t B = xs[0], C = xs[1];
  const std::size_t inner = input.size() / (B * C);
  if (scale.size() != C || shift.size() != C || stats.running_mean.size() != C || stats.running_var.size() != C)
    throw ShapeError("batch_norm: per-channel parameters do not match " + std::to_string(C) + " channels");
  if (mode == BatchNormMode::Train && B < 2) throw ShapeError("batch_norm: train mode needs batch size >= 2");

  const double n = static_cast<double>(B * inner);
  std::vector<double> mu(C), inv_std(C);
  const double* x = input.value().ptr();
  if (mode == BatchNormMode::Train) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = x + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double m = s / n;
      double v = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = x + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= n;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + options.eps);
      if (options.update_running) {
        const double unbiased = n > 1 ? v * n / (n - 1) : v;
        stats.running_mean[c] = (1 - options.momentum) * stats.running_mean[c] + options.momentum * m;
        stats.running_var[c] = (1 - options.momentum) * stats.running_var[c] + options.momentum * unbiased;
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + options.eps);
    }
  }

  Tensor xhat(xs);
  Tensor out(xs);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (b * C + c) * inner;
      const double g = scale.value()[c], s = shift.value()[c];
      for (std::size_t i = 0; i < inner; ++i) {
        const double h = (x[off + i] - mu[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = g * h + s;
      }
    }

  const bool train = mode == BatchNormMode::Train;
  return make_op("batch_norm", std::move(out), {input, scale, shift},
                 [B, C, inner, n, train, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   const Tensor& g = self.grad;
                   const Tensor& gamma = self.inputs[1]->value;
                   Tensor* gx = self.input_grad(0);
                   Tensor* gg = self.input_grad(1);
                   Tensor* gb = self.input_grad(2);
                   for (std::size_t c = 0; c < C; ++c) {
                     double sg = 0.0, sgx = 0.0;
                     for (std::size_t b = 0; b < B; ++b) {
                       const std::size_t off = (b * C + c) * inner;
                       for (std::size_t i = 0; i < inner; ++i) {
                         sg += g[off + i];
                         sgx += g[off + i] * xhat[off + i];
                       }
                     }
                     if (gg) (*gg)[c] += sgx;
                     if (gb) (*gb)[c] += sg;
                     if (!gx) continue;
                     const double k = gamma[c] * inv_std[c];
                     for (std::size_t b = 0; b < B; ++b) {
                       const std::size_t off = (b * C + c) * inner;
                       for (std::size_t i = 0; i < inner; ++i) {
                         if (train)
                           (*gx)[off + i] += k * (g[off + i] - sg / n - xhat[off + i] * sgx / n);
                         else
                           (*gx)[off + i] += k * g[off + i];
                       }
                     }
                   }
                 });
}

Var relu(const Var& input) {
  Tensor out(input.shape());
  const Tensor& x = input.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (g_probe) {
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] != 0.0) margin = std::min(margin, std::abs(x[i]));
    SmoothnessProbe::report(margin);
  }
  return make_op("relu", std::move(out), {input}, [](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    Tensor& gx = *self.input_grad(0);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0) gx[i] += self.grad[i];
  });
}

Var sigmoid(const Var& input) {
  Tensor out(input.shape());
  const Tensor& x = input.value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    } else {
      const double e = std::exp(x[i]);
      out[i] = e / (1.0 + e);
    }
  }
  Tensor y = out;
  return make_op("sigmoid", std::move(out), {input}, [y = std::move(y)](Node& self) {
    Tensor& gx = *self.input_grad(0);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += self.grad[i] * y[i] * (1.0 - y[i]);
  });
}

Var avg_pool_to(const Var& input, std::size_t out_h, std::size_t out_w) {
  const auto& xs = input.shape();
  if (xs.size() < 2) throw ShapeError("avg_pool_to: input needs two spatial axes");
  const std::size_t H = xs[xs.size() - 2], W = xs[xs.size() - 1];
  if (out_h == 0 || out_w == 0 || out_h > H || out_w > W || H % out_h != 0 || W % out_w != 0)
    throw ShapeError("avg_pool_to: cannot pool " + std::to_string(H) + "x" + std::to_string(W) + " to " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  const std::size_t kh = H / out_h, kw = W / out_w;
  const std::size_t planes = input.size() / (H * W);
  Shape os = xs;
  os[os.size() - 2] = out_h;
  os[os.size() - 1] = out_w;
  Tensor out(os, 0.0);
  const double inv = 1.0 / static_cast<double>(kh * kw);
  const double* x = input.value().ptr();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) out[(p * out_h + h / kh) * out_w + w / kw] += x[(p * H + h) * W + w];
  for (auto& v : out.data()) v *= inv;
  return make_op("avg_pool_to", std::move(out), {input}, [planes, H, W, out_h, out_w, kh, kw, inv](Node& self) {
    Tensor& gx = *self.input_grad(0);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          gx[(p * H + h) * W + w] += inv * self.grad[(p * out_h + h / kh) * out_w + w / kw];
  });
}

Var fully_connected(const Var& input, const Var& weight, const std::optional<Var>& bias) {
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  if (ws.size() != 2) throw ShapeError("fully_connected: weight must be rank 2");
  if (xs.size() != 1 && xs.size() != 2) throw ShapeError("fully_connected: input must be [K] or [B,K]");
  const std::size_t B = xs.size() == 2 ? xs[0] : 1;
  const std::size_t K = xs.back();
  const std::size_t L = ws[0];
  if (ws[1] != K)
    throw ShapeError("fully_connected: weight " + shape_str(ws) + " does not accept input width " + std::to_string(K));
  if (bias && bias->size() != L) throw ShapeError("fully_connected: bias length must be " + std::to_string(L));
  Shape os = xs;
  os.back() = L;
  Tensor out(os);
  MapR Y(out.ptr(), B, L);
  Y.noalias() = CMapR(input.value().ptr(), B, K) * CMapR(weight.value().ptr(), L, K).transpose();
  if (bias)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) Y(b, l) += (*bias).value()[l];
  std::vector<Var> ins{input, weight};
  if (bias) ins.push_back(*bias);
  return make_op("fully_connected", std::move(out), std::move(ins), [B, K, L](Node& self) {
    CMapR G(self.grad.ptr(), B, L);
    if (Tensor* gx = self.input_grad(0))
      MapR(gx->ptr(), B, K).noalias() += G * CMapR(self.inputs[1]->value.ptr(), L, K);
    if (Tensor* gw = self.input_grad(1))
      MapR(gw->ptr(), L, K).noalias() += G.transpose() * CMapR(self.inputs[0]->value.ptr(), B, K);
    if (self.inputs.size() > 2)
      if (Tensor* gb = self.input_grad(2))
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t l = 0; l < L; ++l) (*gb)[l] += G(b, l);
  });
}

namespace {
void check_tau(double tau, const char* op) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw std::invalid_argument(std::string(op) + ": temperature must be positive, got " + std::to_string(tau));
}
}  // namespace

Var softmax_t(const Var& logits, double tau) {
  check_tau(tau, "softmax_t");
  const std::size_t K = logits.shape().back();
  const std::size_t rows = logits.size() / K;
  Tensor out(logits.shape());
  const double* z = logits.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z + r * K;
    double* pr = out.ptr() + r * K;
    const double m = *std::max_element(zr, zr + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += (pr[k] = std::exp((zr[k] - m) / tau));
    for (std::size_t k = 0; k < K; ++k) pr[k] /= s;
  }
  Tensor p = out;
  return make_op("softmax_t", std::move(out), {logits}, [rows, K, tau, p = std::move(p)](Node& self) {
    Tensor& gz = *self.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t k = 0; k < K; ++k) dot += p[r * K + k] * self.grad[r * K + k];
      for (std::size_t k = 0; k < K; ++k) gz[r * K + k] += p[r * K + k] * (self.grad[r * K + k] - dot) / tau;
    }
  });
}

Var log_softmax_t(const Var& logits, double tau) {
  check_tau(tau, "log_softmax_t");
  const std::size_t K = logits.shape().back();
  const std::size_t rows = logits.size() / K;
  Tensor out(logits.shape());
  Tensor p(logits.shape());
  const double* z = logits.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z + r * K;
    const double m = *std::max_element(zr, zr + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp((zr[k] - m) / tau);
    const double lse = std::log(s);
    for (std::size_t k = 0; k < K; ++k) {
      out[r * K + k] = (zr[k] - m) / tau - lse;
      p[r * K + k] = std::exp(out[r * K + k]);
    }
  }
  return make_op("log_softmax_t", std::move(out), {logits}, [rows, K, tau, p = std::move(p)](Node& self) {
    Tensor& gz = *self.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += self.grad[r * K + k];
      for (std::size_t k = 0; k < K; ++k) gz[r * K + k] += (self.grad[r * K + k] - p[r * K + k] * s) / tau;
    }
  });
}

// ---- elementwise --------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op("add", std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Tensor* g = self.input_grad(k))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op("sub", std::move(out), {a, b}, [](Node& self) {
    if (Tensor* g = self.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (Tensor* g = self.input_grad(1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op("mul", std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (Tensor* g = self.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (Tensor* g = self.input_grad(1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

Var scale(const Var& a, double factor) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * a.value()[i];
  return make_op("scale", std::move(out), {a}, [factor](Node& self) {
    Tensor& g = *self.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var scale_by(const Var& x, const Var& s) {
  if (s.size() != 1) throw ShapeError("scale_by: factor must be a single element");
  const double k = s.value()[0];
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * x.value()[i];
  return make_op("scale_by", std::move(out), {x, s}, [](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const double k = self.inputs[1]->value[0];
    if (Tensor* g = self.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += k * self.grad[i];
    if (Tensor* g = self.input_grad(1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += self.grad[i] * xv[i];
      (*g)[0] += acc;
    }
  });
}

Var square(const Var& a) { return mul(a, a); }

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_op("sum", Tensor::scalar(s), {a}, [](Node& self) {
    Tensor& g = *self.input_grad(0);
    const double d = self.grad[0];
    for (auto& v : g.data()) v += d;
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op("reshape", std::move(out), {a}, [](Node& self) {
    Tensor& g = *self.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var element(const Var& a, std::size_t index) {
  if (index >= a.size()) throw ShapeError("element: index out of range");
  return make_op("element", Tensor::scalar(a.value()[index]), {a}, [index](Node& self) {
    (*self.input_grad(0))[index] += self.grad[0];
  });
}

Var pick(const Var& x, const std::vector<std::size_t>& labels) {
  if (x.shape().size() != 2) throw ShapeError("pick: input must be [B,K]");
  const std::size_t B = x.shape()[0], K = x.shape()[1];
  if (labels.size() != B) throw ShapeError("pick: label count does not match batch size");
  Tensor out({B});
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= K)
      throw std::out_of_range("label " + std::to_string(labels[b]) + " outside [0," + std::to_string(K) + ")");
    out[b] = x.value()[b * K + labels[b]];
  }
  return make_op("pick", std::move(out), {x}, [labels, K](Node& self) {
    Tensor& g = *self.input_grad(0);
    for (std::size_t b = 0; b < labels.size(); ++b) g[b * K + labels[b]] += self.grad[b];
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
  const Shape& s0 = parts[0].shape();
  if (s0.size() < 2) throw ShapeError("concat_channels: inputs need a channel axis");
  const std::size_t B = s0[0];
  const std::size_t inner = parts[0].size() / (B * s0[1]);
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size() || s[0] != B || p.size() / (B * s[1]) != inner)
      throw ShapeError("concat_channels: incompatible part " + shape_str(s) + " vs " + shape_str(s0));
    channels.push_back(s[1]);
    total += s[1];
  }
  Shape os = s0;
  os[1] = total;
  Tensor out(os);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const double* src = parts[k].value().ptr() + b * channels[k] * inner;
      std::copy(src, src + channels[k] * inner, out.ptr() + (b * total + off) * inner);
      off += channels[k];
    }
  }
  return make_op("concat_channels", std::move(out), parts, [B, inner, total, channels](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < channels.size(); ++k) {
      if (Tensor* g = self.input_grad(k))
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < channels[k] * inner; ++i)
            (*g)[b * channels[k] * inner + i] += self.grad[(b * total + off) * inner + i];
      off += channels[k];
    }
  });
}

Var zero_pad_channels(const Var& x, std::size_t channels) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("zero_pad_channels: input needs a channel axis");
  const std::size_t B = s[0], C = s[1];
  if (channels < C) throw ShapeError("zero_pad_channels: cannot shrink channels");
  const std::size_t inner = x.size() / (B * C);
  Shape os = s;
  os[1] = channels;
  Tensor out(os, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    std::copy(x.value().ptr() + b * C * inner, x.value().ptr() + (b + 1) * C * inner,
              out.ptr() + b * channels * inner);
  return make_op("zero_pad_channels", std::move(out), {x}, [B, C, channels, inner](Node& self) {
    Tensor& g = *self.input_grad(0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < C * inner; ++i) g[b * C * inner + i] += self.grad[b * channels * inner + i];
  });
}

Var scale_channels(const Var& x, const Var& s) {
  const Shape& xs = x.shape();
  if (xs.size() < 2 || s.shape().size() != 2 || s.shape()[0] != xs[0] || s.shape()[1] != xs[1])
    throw ShapeError("scale_channels: weights " + shape_str(s.shape()) + " do not match input " + shape_str(xs));
  const std::size_t B = xs[0], M = xs[1];
  const std::size_t inner = x.size() / (B * M);
  Tensor out(xs);
  for (std::size_t bm = 0; bm < B * M; ++bm) {
    const double k = s.value()[bm];
    for (std::size_t i = 0; i < inner; ++i) out[bm * inner + i] = k * x.value()[bm * inner + i];
  }
  return make_op("scale_channels", std::move(out), {x, s}, [B, M, inner](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& sv = self.inputs[1]->value;
    Tensor* gx = self.input_grad(0);
    Tensor* gs = self.input_grad(1);
    for (std::size_t bm = 0; bm < B * M; ++bm) {
      double acc = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        if (gx) (*gx)[bm * inner + i] += sv[bm] * self.grad[bm * inner + i];
        acc += xv[bm * inner + i] * self.grad[bm * inner + i];
      }
      if (gs) (*gs)[bm] += acc;
    }
  });
}

}  // namespace fdd
