#pragma once

#include <string>
#include <vector>

namespace dmc {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick self-test of the library's invariants on seeded random inputs:
/// SPD roots, transport exactness, metric symmetry, map composition,
/// analytic-vs-numeric gradients, metric formulas and run determinism.
std::vector<CheckResult> run_invariant_checks();

}  // namespace dmc
