#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ucrn {

struct GradCase {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;  // parameter elements compared against finite differences
};

struct GradReport {
  std::vector<GradCase> cases;
  double max_rel_err = 0.0;
  double seconds = 0.0;
};

// Central-difference verification (step 1e-5) of every differentiable op,
// composite blocks, and the adapter-through-frozen-model path. Vector outputs
// are projected onto fixed random coefficients to get scalar losses.
GradReport run_gradient_checks(std::uint64_t seed);

inline constexpr double kGradCheckTolerance = 1e-4;

}  // namespace ucrn
