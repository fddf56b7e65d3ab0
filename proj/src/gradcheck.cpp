// SPDX-License-Identifier: Apache-2.0
#include "fdd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

#include "fdd/adapter.hpp"
#include "fdd/autodiff.hpp"
#include "fdd/fusion.hpp"
#include "fdd/layers.hpp"
#include "fdd/losses.hpp"
#include "fdd/spectral.hpp"

namespace fdd {

namespace {

constexpr double kErrorFloor = 1e-6;
constexpr std::size_t kMaxRedraws = 200;
constexpr double kPi = std::numbers::pi;

struct Instance {
  std::vector<Var> inputs;
  std::function<Var()> loss;
};

using Builder = std::function<Instance(Rng&, bool faulty)>;

double uni(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
std::size_t pick_size(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); }

Var randn(Shape s, Rng& rng, double sd = 1.0) { return parameter(normal_tensor(std::move(s), sd, rng)); }
Var randu(Shape s, double lo, double hi, Rng& rng) { return parameter(uniform_tensor(std::move(s), lo, hi, rng)); }

// Scalar reduction with fixed random weights so every output element matters.
std::function<Var(const Var&)> projector(Rng& rng) {
  auto seed = rng();
  return [seed](const Var& out) {
    Rng r(seed);
    return sum(mul(out, constant(uniform_tensor(out.shape(), -1.0, 1.0, r))));
  };
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng() % k;
  return y;
}

// couple with a sign-flipped backward; used to prove the checker catches faults.
Var faulty_couple(const Var& amp, const Var& ph) {
  Tensor value;
  {
    NoGradGuard no_grad;
    value = couple(constant(amp.value()), constant(ph.value())).value();
  }
  return make_op("couple", std::move(value), {amp, ph}, [](Node& self) {
    const Tensor& a = self.inputs[0]->value;
    const Tensor& p = self.inputs[1]->value;
    Tensor* ga = self.input_grad(0);
    Tensor* gp = self.input_grad(1);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double gr = self.grad[2 * i], gi = self.grad[2 * i + 1];
      const double c = std::cos(p[i]), s = std::sin(p[i]);
      if (ga) (*ga)[i] -= gr * c + gi * s;
      if (gp) (*gp)[i] -= a[i] * (gi * c - gr * s);
    }
  });
}

// Real-valued, conjugate-symmetric mask so idft2 of a masked real spectrum stays real.
Tensor symmetric_mask(std::size_t h, std::size_t w, Rng& rng) {
  Tensor r = uniform_tensor({h, w}, 0.2, 1.5, rng);
  Tensor m({h, w, 2});
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      const double g = r[u * w + v] + r[((h - u) % h) * w + (w - v) % w];
      m[(u * w + v) * 2] = g;
      m[(u * w + v) * 2 + 1] = g;
    }
  return m;
}

Var broadcast_mask(const Tensor& mask, std::size_t planes) {
  Shape s{planes};
  s.insert(s.end(), mask.shape().begin(), mask.shape().end());
  Tensor out(s);
  for (std::size_t p = 0; p < planes; ++p) std::copy(mask.ptr(), mask.ptr() + mask.size(), out.ptr() + p * mask.size());
  return constant(std::move(out));
}

std::vector<std::pair<std::string, Builder>> builders() {
  std::vector<std::pair<std::string, Builder>> b;

  b.emplace_back("conv1x1", [](Rng& r, bool) {
    Var x = randn({pick_size(r, 1, 3), 3, 2, 3}, r), w = randn({4, 3}, r);
    auto proj = projector(r);
    return Instance{{x, w}, [=] { return proj(conv1x1(x, w)); }};
  });
  b.emplace_back("batch_norm_train", [](Rng& r, bool) {
    Var x = randn({3, 2, 2, 2}, r), g = randu({2}, 0.5, 1.5, r), s = randn({2}, r);
    auto proj = projector(r);
    return Instance{{x, g, s}, [=] {
                      BatchNormStats st = BatchNormStats::identity(2);
                      return proj(batch_norm(x, g, s, st, BatchNormMode::Train, {.update_running = false}));
                    }};
  });
  b.emplace_back("batch_norm_eval", [](Rng& r, bool) {
    Var x = randn({3, 2, 2, 2}, r), g = randu({2}, 0.5, 1.5, r), s = randn({2}, r);
    BatchNormStats st{normal_tensor({2}, 1.0, r), uniform_tensor({2}, 0.5, 1.5, r)};
    auto proj = projector(r);
    return Instance{{x, g, s}, [=]() mutable {
                      return proj(batch_norm(x, g, s, st, BatchNormMode::Eval, {.update_running = false}));
                    }};
  });
  b.emplace_back("relu", [](Rng& r, bool) {
    Var x = randn({2, 3, 3}, r);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(relu(x)); }};
  });
  b.emplace_back("sigmoid", [](Rng& r, bool) {
    Var x = randn({2, 5}, r, 3.0);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(sigmoid(x)); }};
  });
  b.emplace_back("avg_pool_to", [](Rng& r, bool) {
    Var x = randn({2, 2, 4, 4}, r);
    const std::size_t oh = std::size_t{1} << (r() % 3), ow = std::size_t{1} << (r() % 3);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(avg_pool_to(x, oh, ow)); }};
  });
  b.emplace_back("fully_connected", [](Rng& r, bool) {
    Var x = randn({3, 5}, r), w = randn({4, 5}, r), bias = randn({4}, r);
    auto proj = projector(r);
    return Instance{{x, w, bias}, [=] { return proj(fully_connected(x, w, bias)); }};
  });
  b.emplace_back("softmax_t", [](Rng& r, bool) {
    Var x = randn({3, 5}, r, 2.0);
    const double tau = uni(r, 0.5, 4.0);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(softmax_t(x, tau)); }};
  });
  b.emplace_back("log_softmax_t", [](Rng& r, bool) {
    Var x = randn({3, 5}, r, 2.0);
    const double tau = uni(r, 0.5, 4.0);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(log_softmax_t(x, tau)); }};
  });
  b.emplace_back("add", [](Rng& r, bool) {
    Var x = randn({2, 3, 2}, r), y = randn({2, 3, 2}, r);
    auto proj = projector(r);
    return Instance{{x, y}, [=] { return proj(add(x, y)); }};
  });
  b.emplace_back("sub", [](Rng& r, bool) {
    Var x = randn({2, 3, 2}, r), y = randn({2, 3, 2}, r);
    auto proj = projector(r);
    return Instance{{x, y}, [=] { return proj(sub(x, y)); }};
  });
  b.emplace_back("mul", [](Rng& r, bool) {
    Var x = randn({2, 3, 2}, r), y = randn({2, 3, 2}, r);
    auto proj = projector(r);
    return Instance{{x, y}, [=] { return proj(mul(x, y)); }};
  });
  b.emplace_back("scale", [](Rng& r, bool) {
    Var x = randn({2, 4}, r);
    const double k = uni(r, -3.0, 3.0);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(scale(x, k)); }};
  });
  b.emplace_back("scale_by", [](Rng& r, bool) {
    Var x = randn({2, 4}, r), k = randn({1}, r);
    auto proj = projector(r);
    return Instance{{x, k}, [=] { return proj(scale_by(x, k)); }};
  });
  b.emplace_back("square", [](Rng& r, bool) {
    Var x = randn({2, 4}, r);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(square(x)); }};
  });
  b.emplace_back("sum", [](Rng& r, bool) {
    Var x = randn({2, 4}, r);
    const double k = uni(r, -2.0, 2.0);
    return Instance{{x}, [=] { return scale(square(sum(x)), k); }};
  });
  b.emplace_back("mean", [](Rng& r, bool) {
    Var x = randn({2, 4}, r);
    const double k = uni(r, -2.0, 2.0);
    return Instance{{x}, [=] { return scale(square(mean(x)), k); }};
  });
  b.emplace_back("reshape", [](Rng& r, bool) {
    Var x = randn({2, 6}, r);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(square(reshape(x, {3, 4}))); }};
  });
  b.emplace_back("element", [](Rng& r, bool) {
    Var x = randn({2, 3}, r);
    const std::size_t i = r() % 6;
    return Instance{{x}, [=] { return square(element(x, i)); }};
  });
  b.emplace_back("pick", [](Rng& r, bool) {
    Var x = randn({4, 3}, r);
    const auto y = random_labels(4, 3, r);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(square(pick(x, y))); }};
  });
  b.emplace_back("concat_channels", [](Rng& r, bool) {
    Var x = randn({2, 1, 2, 2}, r), y = randn({2, 3, 2, 2}, r);
    auto proj = projector(r);
    return Instance{{x, y}, [=] { return proj(concat_channels({x, y})); }};
  });
  b.emplace_back("zero_pad_channels", [](Rng& r, bool) {
    Var x = randn({2, 2, 2, 2}, r);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(square(zero_pad_channels(x, 5))); }};
  });
  b.emplace_back("scale_channels", [](Rng& r, bool) {
    Var x = randn({2, 3, 2, 2}, r), s = randn({2, 3}, r);
    auto proj = projector(r);
    return Instance{{x, s}, [=] { return proj(scale_channels(x, s)); }};
  });
  b.emplace_back("dft2", [](Rng& r, bool) {
    // Alternates between the radix-2 and the direct-sum path.
    const bool pow2 = r() % 2 == 0;
    Var x = randn({2, pow2 ? 4u : 3u, pow2 ? 4u : 5u}, r);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(dft2(x)); }};
  });
  b.emplace_back("idft2", [](Rng& r, bool) {
    Var x = randn({2, 4, 4}, r);
    Var mask = broadcast_mask(symmetric_mask(4, 4, r), 2);
    auto proj = projector(r);
    return Instance{{x}, [=] { return proj(idft2(mul(dft2(x), mask))); }};
  });
  b.emplace_back("amplitude", [](Rng& r, bool) {
    Var z = randn({2, 3, 3, 2}, r);
    auto proj = projector(r);
    return Instance{{z}, [=] { return proj(amplitude(z)); }};
  });
  b.emplace_back("phase", [](Rng& r, bool) {
    Var z = randn({2, 3, 3, 2}, r);
    auto proj = projector(r);
    return Instance{{z}, [=] { return proj(phase(z)); }};
  });
  b.emplace_back("couple", [](Rng& r, bool faulty) {
    Var a = randu({2, 3, 3}, 0.2, 1.5, r), p = randu({2, 3, 3}, -kPi, kPi, r);
    auto proj = projector(r);
    return Instance{{a, p}, [=] { return proj(faulty ? faulty_couple(a, p) : couple(a, p)); }};
  });
  b.emplace_back("mixing_refurbish", [](Rng& r, bool) {
    AdapterParams ap = AdapterParams::init(4, r);
    ap.mix_logits.mutable_value() = uniform_tensor({2}, -3.0, 3.0, r);
    ap.mix_temperature = uni(r, 0.5, 2.0);
    Var alpha = randu({2, 4, 3, 3}, 0.0, 2.0, r), alpha_ad = randu({2, 4, 3, 3}, 0.0, 2.0, r);
    auto proj = projector(r);
    return Instance{{alpha, alpha_ad, ap.mix_logits},
                    [=] { return proj(refurbish(alpha, alpha_ad, mixing_weight(ap))); }};
  });
  b.emplace_back("ce_loss", [](Rng& r, bool) {
    Var z = randn({4, 5}, r, 2.0);
    const auto y = random_labels(4, 5, r);
    return Instance{{z}, [=] { return ce_loss(z, y); }};
  });
  b.emplace_back("kt_loss", [](Rng& r, bool) {
    Var target = constant(normal_tensor({4, 5}, 2.0, r));
    Var learner = randn({4, 5}, r, 2.0);
    const double tau = uni(r, 1.0, 5.0);
    const KlDirection dir = r() % 2 ? KlDirection::TargetFirst : KlDirection::LearnerFirst;
    return Instance{{learner}, [=] { return kt_loss(target, learner, tau, dir); }};
  });
  b.emplace_back("dikt_loss", [](Rng& r, bool) {
    Var s = randn({2, 3, 2, 2}, r);
    Var t = constant(normal_tensor({2, 3, 2, 2}, 1.0, r));
    return Instance{{s}, [=] { return dikt_loss(s, t); }};
  });
  b.emplace_back("attention", [](Rng& r, bool) {
    ActivationParams ap = ActivationParams::init(8, r);
    Var z = randn({3, 8}, r, 2.0);
    auto proj = projector(r);
    return Instance{{z, ap.w1, ap.w2}, [=] { return proj(attention(z, ap)); }};
  });
  b.emplace_back("map_features", [](Rng& r, bool) {
    FeatureMapParams mp = FeatureMapParams::init(8, 12, r);
    Var x = randn({2, 8, 2, 2}, r);
    auto proj = projector(r);
    return Instance{{x, mp.w1, mp.w2}, [=] { return proj(map_features(x, mp)); }};
  });

  // ---- composite chains ----
  b.emplace_back("chain:adapter_pipeline", [](Rng& r, bool) {
    AdapterParams ap = AdapterParams::init(8, r);
    ap.mix_logits.mutable_value() = uniform_tensor({2}, -2.0, 2.0, r);
    ap.bn1.shift.mutable_value() = normal_tensor({ap.hidden()}, 0.5, r);
    Var f = randn({3, 8, 4, 4}, r);
    auto proj = projector(r);
    return Instance{{f, ap.w1, ap.w2, ap.bn1.scale, ap.bn1.shift, ap.bn2.scale, ap.bn2.shift, ap.mix_logits},
                    [=]() mutable { return proj(adapter_forward(f, ap, BatchNormMode::Train, false).f_ift); }};
  });
  b.emplace_back("chain:fusion_activation", [](Rng& r, bool) {
    std::vector<Var> tp{randu({2, 4, 4, 4}, -kPi, kPi, r), randu({2, 8, 2, 2}, -kPi, kPi, r)};
    std::vector<Var> sp{randu({2, 4, 4, 4}, -kPi, kPi, r), randu({2, 4, 2, 2}, -kPi, kPi, r)};
    ActivationParams ap = ActivationParams::init(12, r);
    FeatureMapParams mp = FeatureMapParams::init(8, 12, r);
    auto proj_s = projector(r), proj_t = projector(r);
    std::vector<Var> inputs = tp;
    inputs.insert(inputs.end(), sp.begin(), sp.end());
    inputs.insert(inputs.end(), {ap.w1, ap.w2, mp.w1, mp.w2});
    return Instance{inputs, [=] {
                      Var t = fuse(tp).data;
                      auto [s, t2] = align_spatial(fuse(sp).data, t);
                      Var st = attention(squeeze(t2), ap);
                      return add(proj_s(activate(map_features(s, mp), st)), proj_t(activate(t2, st)));
                    }};
  });
  b.emplace_back("chain:teacher_total", [](Rng& r, bool) {
    Var zt = randn({4, 7}, r, 2.0);
    Var zs = constant(normal_tensor({4, 7}, 2.0, r));
    const auto y = random_labels(4, 7, r);
    LossOptions o;
    o.beta = uni(r, 0.01, 2.0);
    o.tau = uni(r, 1.0, 5.0);
    return Instance{{zt}, [=] { return teacher_total(zt, zs, y, o).total; }};
  });
  b.emplace_back("chain:student_total", [](Rng& r, bool) {
    Var zs = randn({4, 7}, r, 2.0);
    Var zt = constant(normal_tensor({4, 7}, 2.0, r));
    Var sa = randn({4, 6, 2, 2}, r);
    Var ta = constant(normal_tensor({4, 6, 2, 2}, 1.0, r));
    const auto y = random_labels(4, 7, r);
    LossOptions o;
    o.beta = uni(r, 0.01, 2.0);
    o.gamma = uni(r, 0.01, 2.0);
    o.tau = uni(r, 1.0, 5.0);
    return Instance{{zs, sa}, [=] { return student_total(zs, zt, y, sa, ta, o).total; }};
  });
  b.emplace_back("chain:network", [](Rng& r, bool) {
    Var x = randn({4, 3, 2, 2}, r), w = randn({5, 3}, r), g = randu({5}, 0.5, 1.5, r), s = randn({5}, r);
    Var fw = randn({6, 5}, r), fb = randn({6}, r);
    const auto y = random_labels(4, 6, r);
    return Instance{{x, w, g, s, fw, fb}, [=] {
                      BatchNormStats st = BatchNormStats::identity(5);
                      Var h = relu(batch_norm(conv1x1(x, w), g, s, st, BatchNormMode::Train, {.update_running = false}));
                      Var pooled = reshape(avg_pool_to(h, 1, 1), {4, 5});
                      return ce_loss(fully_connected(pooled, fw, fb), y);
                    }};
  });
  return b;
}

double evaluate_loss(const Instance& inst) {
  NoGradGuard no_grad;
  return inst.loss().item();
}

// Worst relative error of one instance; nullopt when the instance sits too close to a kink.
std::optional<double> check_instance(const Instance& inst, const GradCheckOptions& opt) {
  {
    NoGradGuard no_grad;
    SmoothnessProbe probe;
    (void)inst.loss();
    if (probe.min_margin() < opt.min_margin) return std::nullopt;
  }
  for (const auto& v : inst.inputs) Var(v).zero_grad();
  backward(inst.loss());
  double diff2 = 0.0, tape2 = 0.0, fd2 = 0.0;
  for (const auto& v : inst.inputs) {
    const Tensor g = v.grad();
    Var x = v;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x.value()[i];
      x.mutable_value()[i] = orig + opt.step;
      const double up = evaluate_loss(inst);
      x.mutable_value()[i] = orig - opt.step;
      const double down = evaluate_loss(inst);
      x.mutable_value()[i] = orig;
      const double fd = (up - down) / (2.0 * opt.step);
      diff2 += (g[i] - fd) * (g[i] - fd);
      tape2 += g[i] * g[i];
      fd2 += fd * fd;
    }
  }
  return std::sqrt(diff2) / std::max({std::sqrt(tape2), std::sqrt(fd2), kErrorFloor});
}

}  // namespace

const std::vector<std::string>& gradcheck_operations() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, _] : builders()) n.push_back(name);
    return n;
  }();
  return names;
}

const std::vector<std::string>& gradcheck_fault_targets() {
  static const std::vector<std::string> names{"couple"};
  return names;
}

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options,
                                           const std::function<void(const GradCheckResult&)>& on_result) {
  if (options.inject_fault && std::find(gradcheck_fault_targets().begin(), gradcheck_fault_targets().end(),
                                        *options.inject_fault) == gradcheck_fault_targets().end())
    throw std::invalid_argument("no fault fixture for '" + *options.inject_fault + "'");
  for (const auto& o : options.only)
    if (std::find(gradcheck_operations().begin(), gradcheck_operations().end(), o) == gradcheck_operations().end())
      throw std::invalid_argument("unknown operation '" + o + "'");

  std::vector<GradCheckResult> results;
  for (const auto& [name, build] : builders()) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), name) == options.only.end())
      continue;
    const bool faulty = options.inject_fault && *options.inject_fault == name;
    GradCheckResult res;
    res.op = name;
    for (std::size_t c = 0; c < options.cases; ++c) {
      Rng rng = derive_rng(options.seed, "gradcheck/" + name + "/" + std::to_string(c));
      std::optional<double> err;
      for (std::size_t attempt = 0; attempt <= kMaxRedraws && !err; ++attempt) {
        err = check_instance(build(rng, faulty), options);
        if (!err) ++res.redraws;
      }
      if (!err) throw std::runtime_error("gradcheck: no smooth instance found for " + name);
      res.worst_error = std::max(res.worst_error, *err);
      ++res.cases;
    }
    res.passed = res.worst_error < options.tolerance;
    if (on_result) on_result(res);
    results.push_back(res);
  }
  return results;
}

}  // namespace fdd
