#pragma once

// Finite-difference verification of every smooth primitive and of full network graphs.

#include <cstdint>
#include <string>
#include <vector>

namespace allmargin::verify {

struct GradientCase {
  std::string name;
  std::size_t checks = 0;     // (point, leaf) pairs compared
  std::size_t nonsmooth = 0;  // pairs skipped because the stencil crossed a kink
  std::size_t refined = 0;    // pairs re-checked with the finer step
  double max_rel_error = 0.0;
};

struct GradientSuiteReport {
  std::vector<GradientCase> cases;
  double max_rel_error = 0.0;
  std::size_t points = 0;
  double tolerance = 1e-5;
  bool passed() const { return max_rel_error <= tolerance; }
};

// Every case is checked at `points` seeded random points on every continuous leaf,
// with central differences of step 1e-4. A pair above tolerance is re-checked
// with step 1e-5 and keeps the smaller error.
GradientSuiteReport gradient_suite(std::uint64_t seed = 1, std::size_t points = 100);

}  // namespace allmargin::verify
