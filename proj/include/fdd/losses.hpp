// SPDX-License-Identifier: Apache-2.0
//
// Objectives of the interactive training.
//
//   teacher: ce(z_T) + beta * KL(soft(z_S) || soft(z_T))
//   student: ce(z_S) + beta * KL(soft(z_T) || soft(z_S)) + gamma * mse(P_act_S, P_act_T)
//
// soft(z) = softmax(z / tau). In every KL term the first distribution is the
// target and is held constant; gradients reach only the learner. No tau^2
// rescaling is applied. All reductions are batch means.
#pragma once

#include <string>
#include <vector>

#include "fdd/autodiff.hpp"

namespace fdd {

enum class KlDirection {
  TargetFirst,   // KL(target || learner)
  LearnerFirst,  // KL(learner || target)
};

std::string kl_direction_name(KlDirection d);
KlDirection parse_kl_direction(const std::string& s);

struct LossBreakdown {
  double ce = 0.0;
  double kt = 0.0;
  double dikt = 0.0;
  double total = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double tau = 1.0;
};

struct LossResult {
  Var total;
  LossBreakdown parts;
};

Var ce_loss(const Var& logits, const std::vector<std::size_t>& labels);
/// KL between softened distributions; `target` is treated as a constant.
Var kt_loss(const Var& target_logits, const Var& learner_logits, double tau,
            KlDirection direction = KlDirection::TargetFirst);
/// Mean squared difference; `teacher_act` is treated as a constant.
Var dikt_loss(const Var& student_act, const Var& teacher_act);

struct LossOptions {
  double beta = 1.0;
  double gamma = 0.1;
  double tau = 4.0;
  KlDirection direction = KlDirection::TargetFirst;
  bool use_ce = true;
  bool use_kt = true;
  bool use_dikt = true;
};

LossResult teacher_total(const Var& teacher_logits, const Var& student_logits, const std::vector<std::size_t>& labels,
                         const LossOptions& opts);
/// student_act / teacher_act may be empty Vars when dikt is disabled.
LossResult student_total(const Var& student_logits, const Var& teacher_logits, const std::vector<std::size_t>& labels,
                         const Var& student_act, const Var& teacher_act, const LossOptions& opts);

}  // namespace fdd
