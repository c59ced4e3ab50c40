#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sftmix {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Property suites behind the `check` command: softmax and cross-entropy
// contracts, backward-vs-finite-difference on random op compositions, Beta
// sampler moments, the closed-form head gradient, the softmax
// non-decomposition witness, mixup endpoint reduction and interpolation
// invariants. All deterministic given the seed.
std::vector<CheckResult> run_selfchecks(std::uint64_t seed = 20240915);

}  // namespace sftmix
