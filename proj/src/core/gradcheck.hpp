#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/graph.hpp"

namespace scpc::autodiff::gradcheck {

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct Options {
  double step = 1e-5;        // central-difference half step
  double tolerance = 1e-4;   // max relative error
  int points = 5;            // random evaluation points per check
  // Fault injection: negate the backward rule of one op kind so the suite
  // demonstrably catches a broken gradient.
  std::optional<OpKind> flip_sign_of;
};

// Finite-difference checks for every differentiable op plus composed
// similarity/representation encoder passes. Relative error uses
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
std::vector<CheckResult> run_all(const Options& options = {});

bool all_passed(const std::vector<CheckResult>& results);

// One line per check with the max relative error at 2 significant digits.
std::string render_report(const std::vector<CheckResult>& results);

}  // namespace scpc::autodiff::gradcheck
