// SPDX-License-Identifier: Apache-2.0
#include "fdd/losses.hpp"

#include <stdexcept>

namespace fdd {

std::string kl_direction_name(KlDirection d) {
  return d == KlDirection::TargetFirst ? "target_first" : "learner_first";
}

KlDirection parse_kl_direction(const std::string& s) {
  if (s == "target_first") return KlDirection::TargetFirst;
  if (s == "learner_first") return KlDirection::LearnerFirst;
  throw std::invalid_argument("unknown kl_direction '" + s + "' (expected target_first|learner_first)");
}

Var ce_loss(const Var& logits, const std::vector<std::size_t>& labels) {
  if (logits.shape().size() != 2 || logits.shape()[0] != labels.size())
    throw ShapeError("ce_loss: logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  Var picked = pick(log_softmax_t(logits, 1.0), labels);
  return scale(sum(picked), -1.0 / static_cast<double>(labels.size()));
}

Var kt_loss(const Var& target_logits, const Var& learner_logits, double tau, KlDirection direction) {
  if (!(tau > 0.0)) throw std::invalid_argument("kt_loss: tau must be positive");
  if (target_logits.shape() != learner_logits.shape() || target_logits.shape().size() != 2)
    throw ShapeError("kt_loss: logits " + shape_str(target_logits.shape()) + " and " +
                     shape_str(learner_logits.shape()) + " must be equal [B,K]");
  const double inv_b = 1.0 / static_cast<double>(target_logits.shape()[0]);
  Var target = constant(target_logits.value());
  Var log_p = log_softmax_t(target, tau);
  Var log_q = log_softmax_t(learner_logits, tau);
  if (direction == KlDirection::TargetFirst) {
    Var p = softmax_t(target, tau);
    return scale(sum(mul(p, sub(log_p, log_q))), inv_b);
  }
  Var q = softmax_t(learner_logits, tau);
  return scale(sum(mul(q, sub(log_q, log_p))), inv_b);
}

Var dikt_loss(const Var& student_act, const Var& teacher_act) {
  if (student_act.shape() != teacher_act.shape())
    throw ShapeError("dikt_loss: stacks " + shape_str(student_act.shape()) + " and " +
                     shape_str(teacher_act.shape()) + " differ");
  return mean(square(sub(student_act, constant(teacher_act.value()))));
}

namespace {

void check_weights(const LossOptions& opts) {
  if (!(opts.beta >= 0.0) || !(opts.gamma >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
  if (!(opts.tau > 0.0)) throw std::invalid_argument("tau must be positive");
}

LossBreakdown blank(const LossOptions& opts) {
  LossBreakdown b;
  b.beta = opts.beta;
  b.gamma = opts.gamma;
  b.tau = opts.tau;
  return b;
}

Var accumulate(const Var& acc, const Var& term) { return acc ? add(acc, term) : term; }

LossResult finish(Var total, LossBreakdown parts) {
  if (!total) total = constant(Tensor::scalar(0.0));
  parts.total = total.item();
  return {total, parts};
}

}  // namespace

LossResult teacher_total(const Var& teacher_logits, const Var& student_logits, const std::vector<std::size_t>& labels,
                         const LossOptions& opts) {
  check_weights(opts);
  LossBreakdown parts = blank(opts);
  Var total;
  if (opts.use_ce) {
    Var ce = ce_loss(teacher_logits, labels);
    parts.ce = ce.item();
    total = accumulate(total, ce);
  }
  if (opts.use_kt) {
    Var kt = kt_loss(student_logits, teacher_logits, opts.tau, opts.direction);
    parts.kt = kt.item();
    total = accumulate(total, scale(kt, opts.beta));
  }
  return finish(total, parts);
}

LossResult student_total(const Var& student_logits, const Var& teacher_logits, const std::vector<std::size_t>& labels,
                         const Var& student_act, const Var& teacher_act, const LossOptions& opts) {
  check_weights(opts);
  LossBreakdown parts = blank(opts);
  Var total;
  if (opts.use_ce) {
    Var ce = ce_loss(student_logits, labels);
    parts.ce = ce.item();
    total = accumulate(total, ce);
  }
  if (opts.use_kt) {
    Var kt = kt_loss(teacher_logits, student_logits, opts.tau, opts.direction);
    parts.kt = kt.item();
    total = accumulate(total, scale(kt, opts.beta));
  }
  if (opts.use_dikt) {
    if (!student_act || !teacher_act) throw std::invalid_argument("student_total: dikt enabled without phase stacks");
    Var d = dikt_loss(student_act, teacher_act);
    parts.dikt = d.item();
    total = accumulate(total, scale(d, opts.gamma));
  }
  return finish(total, parts);
}

}  // namespace fdd
