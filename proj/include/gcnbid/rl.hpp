#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gcnbid/grid.hpp"
#include "gcnbid/market.hpp"
#include "gcnbid/nn.hpp"

namespace gcnbid::rl {

using nn::Index;
using nn::Tensor2;

/// s(t) = (lambda(t-1), d(t-1))
struct MarketState {
  double prev_price = 0;
  double prev_demand = 0;
};

struct Transition {
  MarketState state;
  MarketState next_state;
  double action = 1;
  double reward = 0;
  bool terminal = false;  // last step of an episode: no bootstrap
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 10000);

  void push(const Transition& t);
  std::size_t size() const { return records_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return records_.at(i); }
  /// Uniform sample of `n` distinct records. Throws if size() < n.
  std::vector<Transition> sample(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> records_;
};

enum class Method { gcn, mlp };
std::string to_string(Method m);
Method parse_method(const std::string& s);

/// Fixed reference scales for state and reward normalization.
struct Scales {
  double price = 1;
  double demand = 1;
  double reward = 1;
};
/// price = max_i k_max * marginal_cost, demand = sum g_max, reward = price * demand / N.
Scales default_scales(const std::vector<market::GenerationUnit>& units);

/// Per-node feature columns.
inline constexpr Index kPrice = 0;
inline constexpr Index kDemand = 1;
inline constexpr Index kIsGenerator = 2;
inline constexpr Index kCapacity = 3;
inline constexpr Index kCost = 4;
inline constexpr Index kActionSlot = 5;
inline constexpr Index kNodeFeatures = 6;

struct AgentAction {
  int unit = 0;
  double value = 1;
};

/// Rows per bus: [lambda/price_ref, d/demand_ref, is_generator, g_max/demand_ref,
/// marginal_cost/price_ref, action]. The action slot is non-zero only on the
/// acting unit's bus, and only when an action is supplied (critic input).
Tensor2 build_node_features(const MarketState& state, const grid::GridTopology& topo,
                            const std::vector<market::GenerationUnit>& units,
                            const std::optional<AgentAction>& action, const Scales& scales);

/// Turns market states into network inputs for one method on one grid.
class Encoder {
 public:
  Encoder(Method method, const grid::GridTopology& topo,
          const std::vector<market::GenerationUnit>& units, const Scales& scales);

  Method method() const { return method_; }
  const Scales& scales() const { return scales_; }
  /// Rows per sample: the bus count for GCN, 1 for the MLP.
  Index rows_per_sample() const;
  Index actor_width() const;
  Index critic_width() const;
  const grid::NormalizedAdjacency& adjacency() const { return adjacency_; }
  int unit_bus(int unit) const;

  /// Stacked actor input for a batch of states.
  Tensor2 actor_input(std::span<const MarketState> states) const;
  /// Stacked critic input for `unit`; actions[b] pairs with states[b].
  Tensor2 critic_input(std::span<const MarketState> states, std::span<const double> actions,
                       int unit) const;
  /// (row, column) of the action entry for sample b in a critic input.
  std::pair<Index, Index> action_entry(Index b, int unit) const;

 private:
  Method method_;
  Scales scales_;
  Tensor2 node_template_;
  grid::NormalizedAdjacency adjacency_;
  std::vector<int> unit_bus_;
};

struct AgentConfig {
  double gamma = 0.9;
  double lr_critic = 0.1;
  double lr_actor = 0.1;
  double tau = 0.01;
  std::size_t batch_size = 32;
  std::size_t buffer_capacity = 10000;
  nn::InitScheme init = nn::InitScheme::fan_in;
  // starting actor output as a fraction of [1, k_max] (fan_in init only)
  double initial_bid = 0.5;
  std::vector<Index> gcn_widths{16, 16};
  std::vector<Index> head_widths{15, 10};
};

struct Agent {
  int id = 0;
  double k_max = 2;
  Method method = Method::gcn;
  nn::Network actor;
  nn::Network critic;
  nn::Network target_actor;
  nn::Network target_critic;
  double gamma = 0.9;
  double lr_critic = 0.1;
  double lr_actor = 0.1;
  std::size_t batch_size = 32;
  std::mt19937_64 rng;
  ReplayBuffer buffer;
};

/// Builds online and target networks for `unit`. The actor's output bias
/// starts at 1 + initial_bid * (k_max - 1).
Agent make_agent(const market::GenerationUnit& unit, Method method, const AgentConfig& cfg,
                 std::uint64_t seed);

/// max(min(raw, k_max), 1); NaN maps to 1.
double clip_action(double raw, double k_max);

/// Unclipped actor output mu(s) for one state.
double actor_output(const Agent& agent, const MarketState& state, const Encoder& enc);

/// clip(mu(s) + noise, 1, k_max); noise ~ N(0, noise_sigma^2) when noise_sigma > 0.
double select_action(Agent& agent, const MarketState& state, const Encoder& enc,
                     double noise_sigma);

/// r / reward_scale + gamma * Q'(s', clip(mu'(s'))), or the scaled reward alone
/// for terminal transitions.
std::vector<double> critic_targets(const Agent& agent, std::span<const Transition> batch,
                                   const Encoder& enc);
double critic_target(const Agent& agent, const Transition& t, const Encoder& enc);

struct LossAndGradient {
  double loss = 0;
  nn::Gradients grads;
};

/// Mean squared residual between targets and Q(s, a) over the batch.
LossAndGradient critic_loss_and_gradient(const Agent& agent, std::span<const Transition> batch,
                                         std::span<const double> targets, const Encoder& enc);
/// -mean Q(s, clip(mu(s))) and its gradient w.r.t. the actor parameters.
LossAndGradient actor_loss_and_gradient(const Agent& agent, std::span<const Transition> batch,
                                        const Encoder& enc);

/// One gradient step on the critic; returns the pre-update loss.
double update_critic(Agent& agent, std::span<const Transition> batch, const Encoder& enc);
/// One gradient step on the actor with the critic fixed; returns the pre-update loss.
double update_actor(Agent& agent, std::span<const Transition> batch, const Encoder& enc);

void soft_update_targets(Agent& agent, double tau);

}  // namespace gcnbid::rl
