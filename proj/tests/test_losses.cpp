// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "fdd/losses.hpp"
#include "support.hpp"

using namespace fdd;
using fdd::test::random_tensor;

namespace {

// Flat KL(p || q) over softened rows, batch mean.
double kl_oracle(const Tensor& target, const Tensor& learner, double tau) {
  const std::size_t B = target.dim(0), K = target.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> p(K), q(K);
    double sp = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      p[k] = std::exp(target[b * K + k] / tau);
      q[k] = std::exp(learner[b * K + k] / tau);
      sp += p[k];
      sq += q[k];
    }
    for (std::size_t k = 0; k < K; ++k) total += p[k] / sp * std::log((p[k] / sp) / (q[k] / sq));
  }
  return total / static_cast<double>(B);
}

}  // namespace

TEST_CASE("ce_loss") {
  Tensor peaked({2, 3}, 0.0);
  peaked[1] = 100.0;
  peaked[3 + 2] = 100.0;
  CHECK(ce_loss(constant(peaked), {1, 2}).item() < 1e-6);
  CHECK(ce_loss(constant(Tensor({4, 7}, 0.3)), {0, 1, 5, 6}).item() == doctest::Approx(std::log(7.0)).epsilon(1e-14));
  Tensor two({1, 2}, {0.0, std::log(3.0)});
  CHECK(ce_loss(constant(two), {1}).item() == doctest::Approx(-std::log(0.75)).epsilon(1e-14));
  CHECK(ce_loss(constant(two), {1}).item() == doctest::Approx(0.2877).epsilon(1e-4));
  CHECK_THROWS_AS(ce_loss(constant(two), {0, 1}), ShapeError);
}

TEST_CASE("kt_loss") {
  Rng rng = derive_rng(1, "kt");
  Tensor a = random_tensor({3, 5}, rng, -4.0, 4.0);
  CHECK(std::abs(kt_loss(constant(a), constant(a), 4.0).item()) < 1e-15);

  Var kl = kt_loss(constant(Tensor({1, 2}, {std::log(3.0), 0.0})), constant(Tensor({1, 2}, 0.0)), 1.0);
  const double expect = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(kl.item() == doctest::Approx(expect).epsilon(1e-14));
  CHECK(kl.item() == doctest::Approx(0.1308).epsilon(1e-3));

  for (int rep = 0; rep < 50; ++rep) {
    Tensor t = random_tensor({4, 7}, rng, -10.0, 10.0), l = random_tensor({4, 7}, rng, -10.0, 10.0);
    const double v = kt_loss(constant(t), constant(l), 4.0).item();
    CHECK(v >= 0.0);
    CHECK(v == doctest::Approx(kl_oracle(t, l, 4.0)).epsilon(1e-10));
    CHECK(kt_loss(constant(l), constant(t), 4.0, KlDirection::LearnerFirst).item() == doctest::Approx(v).epsilon(1e-12));
  }

  // Higher temperature is closer to uniform in max-norm.
  Tensor z = random_tensor({1, 7}, rng, -3.0, 3.0);
  auto dist = [&](double tau) {
    double d = 0.0;
    const Tensor probs = softmax_t(constant(z), tau).value();
    for (double p : probs.vec()) d = std::max(d, std::abs(p - 1.0 / 7.0));
    return d;
  };
  CHECK(dist(4.0) < dist(1.0));

  Var target = parameter(a), learner = parameter(random_tensor({3, 5}, rng));
  backward(kt_loss(target, learner, 4.0));
  CHECK(max_abs(target.grad()) == 0.0);
  CHECK(max_abs(learner.grad()) > 0.0);
}

TEST_CASE("dikt_loss") {
  Rng rng = derive_rng(2, "dikt");
  Tensor s = random_tensor({2, 6, 4, 4}, rng);
  CHECK(dikt_loss(constant(s), constant(s)).item() == 0.0);
  Tensor shifted = s;
  for (auto& v : shifted.data()) v += 0.3;
  CHECK(dikt_loss(constant(shifted), constant(s)).item() == doctest::Approx(0.09).epsilon(1e-12));

  Tensor t = random_tensor({2, 6, 4, 4}, rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) acc += (s[i] - t[i]) * (s[i] - t[i]);
  CHECK(dikt_loss(constant(s), constant(t)).item() == doctest::Approx(acc / static_cast<double>(s.size())).epsilon(1e-12));

  Var sv = parameter(s), tv = parameter(t);
  backward(dikt_loss(sv, tv));
  CHECK(max_abs(tv.grad()) == 0.0);
  CHECK(max_abs(sv.grad()) > 0.0);
}

TEST_CASE("total objectives") {
  Rng rng = derive_rng(3, "totals");
  const std::vector<std::size_t> y{0, 3, 2, 6};
  Tensor zt = random_tensor({4, 7}, rng, -2.0, 2.0), zs = random_tensor({4, 7}, rng, -2.0, 2.0);
  Tensor pt = random_tensor({4, 5, 2, 2}, rng), ps = random_tensor({4, 5, 2, 2}, rng);

  LossOptions o;
  o.beta = 0.0;
  CHECK(teacher_total(constant(zt), constant(zs), y, o).parts.total == ce_loss(constant(zt), y).item());
  o.gamma = 0.0;
  CHECK(student_total(constant(zs), constant(zt), y, constant(ps), constant(pt), o).parts.total ==
        ce_loss(constant(zs), y).item());

  Tensor perfect({4, 7}, 0.0);
  for (std::size_t b = 0; b < 4; ++b) perfect[b * 7 + y[b]] = 200.0;
  LossOptions d;
  CHECK(teacher_total(constant(perfect), constant(perfect), y, d).parts.total < 1e-6);
  CHECK(student_total(constant(perfect), constant(perfect), y, constant(pt), constant(pt), d).parts.total < 1e-6);

  const double ce_t = ce_loss(constant(zt), y).item(), ce_s = ce_loss(constant(zs), y).item();
  const double kt_t = kt_loss(constant(zs), constant(zt), 4.0).item();
  const double kt_s = kt_loss(constant(zt), constant(zs), 4.0).item();
  const double dk = dikt_loss(constant(ps), constant(pt)).item();
  for (double beta : {0.0, 1.0, 2.0})
    for (double gamma : {0.0, 0.1, 2.0}) {
      LossOptions w;
      w.beta = beta;
      w.gamma = gamma;
      LossResult t = teacher_total(constant(zt), constant(zs), y, w);
      LossResult s = student_total(constant(zs), constant(zt), y, constant(ps), constant(pt), w);
      CHECK(t.parts.total == doctest::Approx(ce_t + beta * kt_t).epsilon(1e-12));
      CHECK(s.parts.total == doctest::Approx(ce_s + beta * kt_s + gamma * dk).epsilon(1e-12));
      CHECK(t.total.item() == t.parts.total);
    }

  // Disabled terms are skipped.
  LossOptions off;
  off.use_dikt = false;
  off.use_kt = false;
  CHECK(student_total(constant(zs), constant(zt), y, Var{}, Var{}, off).parts.total == ce_s);
  LossOptions need;
  CHECK_THROWS_AS(student_total(constant(zs), constant(zt), y, Var{}, Var{}, need), std::invalid_argument);

  // Stop-gradient contract.
  Var lt = parameter(zt), ls = parameter(zs);
  backward(teacher_total(lt, ls, y, LossOptions{}).total);
  CHECK(max_abs(ls.grad()) == 0.0);
  Var lt2 = parameter(zt), ls2 = parameter(zs), pt2 = parameter(pt);
  backward(student_total(ls2, lt2, y, constant(ps), pt2, LossOptions{}).total);
  CHECK(max_abs(lt2.grad()) == 0.0);
  CHECK(max_abs(pt2.grad()) == 0.0);
}
