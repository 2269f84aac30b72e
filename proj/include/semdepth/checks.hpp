#pragma once

// Verification suites behind the `grad-check` and `oracle-check` CLI
// subcommands and the acceptance tests: finite-difference gradient checks for
// every differentiable op, and brute-force scalar oracles for the composite
// operations.

#include <string>
#include <vector>

namespace semdepth::checks {

struct CheckResult {
  std::string name;
  double worst = 0;   // max error observed
  double limit = 0;   // pass threshold
  bool passed = false;
};

// module: all | ops | geometry | losses | sgt | cma | network
std::vector<CheckResult> run_gradient_checks(const std::string& module,
                                             int instances = 20);

std::vector<CheckResult> run_oracle_checks(int instances = 50);

bool all_passed(const std::vector<CheckResult>& results);
void print_results(const std::vector<CheckResult>& results);

}  // namespace semdepth::checks
