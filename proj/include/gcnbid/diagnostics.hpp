#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gcnbid::diagnostics {

struct GradCheckCase {
  std::string name;
  int configs = 0;
  double max_error = 0;
  double tolerance = 0;
  bool passed() const { return max_error < tolerance; }
};

/// Finite-difference checks over random configurations of dense nets, GCN
/// stacks, linear nets, the critic loss and the actor loss. Configurations
/// with a ReLU pre-activation (or an actor output) too close to a kink are
/// redrawn.
std::vector<GradCheckCase> run_gradcheck_suite(int configs, std::uint64_t seed);

}  // namespace gcnbid::diagnostics
