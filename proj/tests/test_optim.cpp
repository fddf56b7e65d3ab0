// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "fdd/optim.hpp"

using namespace fdd;

namespace {

void set_grad(Var& p, double g) {
  p.node()->grad_buffer().fill(g);
}

}  // namespace

TEST_CASE("sgd step") {
  Var p = parameter(Tensor::scalar(1.0));
  Sgd still({{"p", p}}, {.momentum = 0.9, .weight_decay = 0.0});
  set_grad(p, 0.0);
  still.step(0.1);
  CHECK(p.item() == 1.0);

  Var q = parameter(Tensor::scalar(1.0));
  Sgd plain({{"q", q}}, {.momentum = 0.0, .weight_decay = 0.0});
  set_grad(q, 0.5);
  plain.step(0.1);
  CHECK(q.item() == doctest::Approx(0.95).epsilon(1e-15));

  Var r = parameter(Tensor::scalar(1.0));
  Sgd mom({{"r", r}}, {.momentum = 0.9, .weight_decay = 0.0});
  set_grad(r, 0.5);
  mom.step(0.1);
  const double d1 = 1.0 - r.item();
  const double before = r.item();
  mom.step(0.1);
  const double d2 = before - r.item();
  CHECK(d2 / d1 == doctest::Approx(1.9).epsilon(1e-12));

  CHECK_THROWS_AS(mom.step(-0.1), std::invalid_argument);
}

TEST_CASE("sgd weight decay folds into the gradient") {
  Var p = parameter(Tensor::scalar(2.0));
  Sgd opt({{"p", p}}, {.momentum = 0.0, .weight_decay = 0.5});
  set_grad(p, 0.0);
  opt.step(0.1);
  CHECK(p.item() == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-15));
}

TEST_CASE("adam step") {
  Var p = parameter(Tensor::scalar(0.3));
  Adam still({{"p", p}});
  set_grad(p, 0.0);
  still.step(0.01);
  CHECK(p.item() == 0.3);

  Var q = parameter(Tensor::scalar(0.0));
  Adam one({{"q", q}});
  set_grad(q, 1.0);
  one.step(0.01);
  CHECK(q.item() == doctest::Approx(-0.01).epsilon(1e-6));

  for (double g : {1e-3, 1.0, 250.0}) {
    Var r = parameter(Tensor::scalar(0.0));
    Adam opt({{"r", r}});
    double prev = 0.0, last_step = 0.0;
    for (int s = 0; s < 1000; ++s) {
      set_grad(r, -g);
      opt.step(0.01);
      last_step = r.item() - prev;
      prev = r.item();
    }
    CHECK(last_step == doctest::Approx(0.01).epsilon(1e-4));
  }
  CHECK_THROWS_AS(one.step(-1.0), std::invalid_argument);
}
