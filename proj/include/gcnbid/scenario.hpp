#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcnbid/grid.hpp"
#include "gcnbid/market.hpp"
#include "gcnbid/rl.hpp"

namespace gcnbid::sim {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// d(t) = base + amplitude * sin(2 pi t / period) + jitter(t), clamped into
/// [lower, upper] when `clamp` is set. jitter(t) is a pure function of (seed, t).
struct DemandProfile {
  double base = 0;
  double amplitude = 0;
  double period = 24;
  double jitter_sigma = 0;
  std::uint64_t seed = 0;
  bool clamp = true;
  double lower = 0;
  double upper = 0;
};

double demand_at(const DemandProfile& profile, std::int64_t t);

struct TrainingParams {
  int episodes = 50;
  int steps = 720;
  rl::AgentConfig agent;
  double noise_start = 0.3;
  double noise_end = 0.02;
};

/// Exploration sigma for a 0-based episode, linear from noise_start to noise_end.
double noise_for_episode(const TrainingParams& p, int episode);

struct Scenario {
  std::string name;
  std::filesystem::path case_path;
  std::filesystem::path units_path;
  grid::GridTopology base_topology;  // as loaded
  grid::GridTopology topology;       // with removed lines applied
  std::vector<grid::Line> removed_lines;
  std::vector<market::GenerationUnit> units;
  TrainingParams training;
  DemandProfile demand;
  rl::Method method = rl::Method::gcn;
  std::uint64_t agent_seed_base = 1;
  std::vector<std::uint64_t> agent_seeds;  // explicit per-unit seeds, optional
  std::optional<rl::Scales> scales;        // overrides the default reference scales
  bool subtract_fixed_cost = false;
  int eval_episodes = 1;
  /// Reading of the ambiguous "4,6- 2-5" token in the ten-line fault.
  std::vector<grid::Line> ten_line_pairs{grid::Line::make(3, 5), grid::Line::make(1, 4)};

  rl::Scales effective_scales() const;
  std::uint64_t agent_seed(int unit) const;
  /// Throws ScenarioError when an invariant does not hold.
  void validate() const;
};

/// Parses the INFO-format scenario text; relative paths resolve against base_dir.
Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir,
                        const std::string& default_name = "scenario");
Scenario load_scenario(const std::filesystem::path& path);

/// Line sets removed by the 3-, 5- and 10-line fault cases (0-based).
std::vector<grid::Line> fault_lines(int fault_id, const Scenario& base);
Scenario apply_fault_scenario(const Scenario& base, int fault_id);

}  // namespace gcnbid::sim
