// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of every differentiable operation.
//
// Each case draws a small random instance, reduces the op output to a scalar
// with a random weighting, and compares the tape gradient against central
// differences. Error is measured on whole gradient vectors:
//   |g_tape - g_fd| / max(|g_tape|, |g_fd|, floor)
// Instances whose forward pass comes within `min_margin` of a kink are redrawn.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fdd {

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t cases = 50;
  double step = 1e-5;
  double tolerance = 1e-4;
  double min_margin = 1e-4;
  /// Name of an operation whose backward is replaced by a sign-flipped one.
  std::optional<std::string> inject_fault;
  /// Restricts the run to these operations; empty means all.
  std::vector<std::string> only;
};

struct GradCheckResult {
  std::string op;
  std::size_t cases = 0;
  std::size_t redraws = 0;
  double worst_error = 0.0;
  bool passed = true;
};

/// Operation names in reporting order, composite chains last.
const std::vector<std::string>& gradcheck_operations();
/// Operations that accept --inject-fault.
const std::vector<std::string>& gradcheck_fault_targets();

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options,
                                           const std::function<void(const GradCheckResult&)>& on_result = {});

}  // namespace fdd
