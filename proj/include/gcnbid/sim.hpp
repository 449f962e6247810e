#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "gcnbid/market.hpp"
#include "gcnbid/rl.hpp"
#include "gcnbid/scenario.hpp"

namespace gcnbid::sim {

struct StepRecord {
  int episode = 0;  // 0-based
  int step = 0;     // 0-based within the episode
  double demand = 0;
  double price = 0;
  std::vector<double> bids;
  std::vector<double> dispatch;
  std::vector<double> rewards;
};

struct EpisodeLog {
  int episode = 0;
  std::vector<StepRecord> steps;
  // streaming aggregates, accumulated while the episode runs
  std::vector<double> avg_profit;  // per unit, mean reported profit per step
  std::vector<double> avg_bid;     // per unit
};

struct TrainingResult {
  std::vector<EpisodeLog> logs;
  std::vector<rl::Agent> agents;
  std::size_t clearing_calls = 0;
  std::size_t updates = 0;
};

struct StepObserver {
  /// Called after every step with the record and the transitions stored for it.
  std::function<void(const StepRecord&, const market::ClearingResult&,
                     const std::vector<rl::Transition>&)>
      on_step;
};

/// Runs the training loop: per step every agent acts, the market clears once,
/// rewards are computed, transitions stored and, once the buffer holds a
/// full batch, critic, actor and targets are updated.
TrainingResult run_training(const Scenario& scenario, const StepObserver* observer = nullptr);

/// Maps each unit of `scenario` to a policy: unit i uses agents[i % agents.size()].
/// Throws std::invalid_argument when the networks do not fit the scenario's features.
std::vector<EpisodeLog> run_evaluation(const std::vector<rl::Agent>& agents,
                                       const Scenario& scenario);

/// Whether the agents' actor and critic widths match the scenario's encoder.
void check_feature_width(const std::vector<rl::Agent>& agents, const Scenario& scenario);

struct Metrics {
  std::vector<std::vector<double>> unit_profit;  // [episode][unit]
  std::vector<std::vector<double>> unit_bid;     // [episode][unit]
  std::vector<double> overall_profit;            // [episode], mean over units
  std::vector<double> overall_bid;               // [episode], mean over units
  double first_window_profit = 0;                // mean overall_profit over first <= 5 episodes
  double last_window_profit = 0;                 // mean overall_profit over last <= 5 episodes
  double mean_profit = 0;                        // mean overall_profit over all episodes
};

/// Recomputes every aggregate from the per-step records. Throws on empty logs.
Metrics compute_metrics(const std::vector<EpisodeLog>& logs, const Scenario& scenario,
                        int window = 5);

/// episode,step,demand,price,unit,bid,dispatch,reward (1-based episode, step, unit)
void write_steps_csv(std::ostream& out, const std::vector<EpisodeLog>& logs);
/// episode,unit,avg_profit,avg_bid
void write_summary_csv(std::ostream& out, const std::vector<EpisodeLog>& logs);

/// Reported profit for one step (the reward, minus the fixed cost when enabled).
double reported_profit(const Scenario& scenario, int unit, double reward);

}  // namespace gcnbid::sim
