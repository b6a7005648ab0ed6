#pragma once

#include <string>
#include <vector>

namespace stackgen {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0;
  bool passed = false;
};

struct GradCheckReport {
  double tolerance = 1e-4;
  std::vector<GradCheckResult> checks;

  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return !checks.empty();
  }
};

// Compares every differentiable op and both full models (at desk dims)
// against central finite differences with step 1e-5, at 64-bit, across
// n_seeds fixed random draws. Relative error uses a 1e-2 denominator floor.
GradCheckReport run_gradcheck(int n_seeds = 5);

}  // namespace stackgen
