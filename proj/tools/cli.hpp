// SPDX-License-Identifier: Apache-2.0
//
// fdd command line. Exit codes: 0 success, 1 runtime or I/O failure,
// 2 invalid arguments.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fdd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Default output root when FDD_OUTPUT_ROOT is unset.
inline constexpr const char* kDefaultOutputRoot = "fdd-runs";

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fdd::cli
