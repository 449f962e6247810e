#include "gcnbid/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace gcnbid::rl {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("replay buffer capacity must be positive");
  records_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
}

void ReplayBuffer::push(const Transition& t) {
  if (records_.size() < capacity_) {
    records_.push_back(t);
  } else {
    records_[next_] = t;
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  if (records_.size() < n)
    throw std::invalid_argument(
        fmt::format("cannot sample {} records from a buffer of {}", n, records_.size()));
  std::vector<std::size_t> idx(records_.size());
  std::iota(idx.begin(), idx.end(), 0);
  // partial Fisher-Yates: the first n slots end up a uniform n-subset
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<Transition> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(records_[idx[i]]);
  return out;
}

std::string to_string(Method m) { return m == Method::gcn ? "gcn" : "mlp"; }

Method parse_method(const std::string& s) {
  if (s == "gcn") return Method::gcn;
  if (s == "mlp" || s == "mlp-baseline") return Method::mlp;
  throw std::invalid_argument(fmt::format("unknown method '{}' (expected gcn or mlp)", s));
}

Scales default_scales(const std::vector<market::GenerationUnit>& units) {
  if (units.empty()) throw std::invalid_argument("default_scales: no units");
  Scales s;
  s.price = 0.0;
  for (const auto& u : units) s.price = std::max(s.price, u.k_max * u.marginal_cost);
  s.demand = market::total_max(units);
  s.reward = s.price * s.demand / static_cast<double>(units.size());
  return s;
}

namespace {

// Static columns (generator flag, capacity, cost) for every bus.
Tensor2 node_template(const grid::GridTopology& topo,
                      const std::vector<market::GenerationUnit>& units, const Scales& scales) {
  const int n = topo.n_buses();
  Tensor2 t = Tensor2::Zero(n, kNodeFeatures);
  std::vector<double> cap(n, 0.0), cost_weighted(n, 0.0);
  for (const auto& u : units) {
    if (u.bus < 0 || u.bus >= n)
      throw std::invalid_argument(fmt::format("unit {} on bus {} outside the {}-bus grid", u.id + 1,
                                              u.bus + 1, n));
    cap[u.bus] += u.g_max;
    cost_weighted[u.bus] += u.g_max * u.marginal_cost;
  }
  for (const auto& u : units) t(u.bus, kIsGenerator) = 1.0;
  for (int b = 0; b < n; ++b) {
    if (t(b, kIsGenerator) == 0.0) continue;
    t(b, kCapacity) = cap[b] / scales.demand;
    // capacity-weighted cost when several units share a bus
    const double cost = cap[b] > 0.0 ? cost_weighted[b] / cap[b] : 0.0;
    t(b, kCost) = cost / scales.price;
  }
  return t;
}

}  // namespace

Tensor2 build_node_features(const MarketState& state, const grid::GridTopology& topo,
                            const std::vector<market::GenerationUnit>& units,
                            const std::optional<AgentAction>& action, const Scales& scales) {
  Tensor2 x = node_template(topo, units, scales);
  x.col(kPrice).setConstant(state.prev_price / scales.price);
  x.col(kDemand).setConstant(state.prev_demand / scales.demand);
  if (action) {
    auto it = std::find_if(units.begin(), units.end(),
                           [&](const auto& u) { return u.id == action->unit; });
    if (it == units.end()) throw std::invalid_argument("build_node_features: unknown unit");
    x(it->bus, kActionSlot) = action->value;
  }
  return x;
}

Encoder::Encoder(Method method, const grid::GridTopology& topo,
                 const std::vector<market::GenerationUnit>& units, const Scales& scales)
    : method_(method), scales_(scales) {
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (units[i].id != static_cast<int>(i))
      throw std::invalid_argument("Encoder: unit ids must be 0..N-1 in order");
    unit_bus_.push_back(units[i].bus);
  }
  if (method_ == Method::gcn) {
    node_template_ = node_template(topo, units, scales);
    adjacency_ = grid::normalize_adjacency(grid::build_adjacency(topo));
  } else {
    adjacency_ = grid::NormalizedAdjacency(Tensor2::Identity(1, 1));
  }
}

Index Encoder::rows_per_sample() const { return method_ == Method::gcn ? node_template_.rows() : 1; }
Index Encoder::actor_width() const { return method_ == Method::gcn ? kNodeFeatures : 2; }
Index Encoder::critic_width() const { return method_ == Method::gcn ? kNodeFeatures : 3; }

int Encoder::unit_bus(int unit) const {
  if (unit < 0 || unit >= static_cast<int>(unit_bus_.size()))
    throw std::invalid_argument(fmt::format("Encoder: unknown unit {}", unit));
  return unit_bus_[unit];
}

Tensor2 Encoder::actor_input(std::span<const MarketState> states) const {
  const Index batch = static_cast<Index>(states.size());
  if (method_ == Method::mlp) {
    Tensor2 x(batch, 2);
    for (Index b = 0; b < batch; ++b) {
      x(b, 0) = states[b].prev_price / scales_.price;
      x(b, 1) = states[b].prev_demand / scales_.demand;
    }
    return x;
  }
  const Index n = node_template_.rows();
  Tensor2 x(batch * n, kNodeFeatures);
  for (Index b = 0; b < batch; ++b) {
    auto block = x.middleRows(b * n, n);
    block = node_template_;
    block.col(kPrice).setConstant(states[b].prev_price / scales_.price);
    block.col(kDemand).setConstant(states[b].prev_demand / scales_.demand);
  }
  return x;
}

std::pair<Index, Index> Encoder::action_entry(Index b, int unit) const {
  if (method_ == Method::mlp) return {b, 2};
  return {b * node_template_.rows() + unit_bus(unit), kActionSlot};
}

Tensor2 Encoder::critic_input(std::span<const MarketState> states, std::span<const double> actions,
                              int unit) const {
  if (states.size() != actions.size())
    throw std::invalid_argument("critic_input: states and actions differ in length");
  const Index batch = static_cast<Index>(states.size());
  Tensor2 x;
  if (method_ == Method::mlp) {
    x.resize(batch, 3);
    x.leftCols(2) = actor_input(states);
  } else {
    x = actor_input(states);
  }
  for (Index b = 0; b < batch; ++b) {
    auto [r, c] = action_entry(b, unit);
    x(r, c) = actions[b];
  }
  return x;
}

Agent make_agent(const market::GenerationUnit& unit, Method method, const AgentConfig& cfg,
                 std::uint64_t seed) {
  if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) throw std::invalid_argument("gamma must be in [0, 1)");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(cfg.initial_bid >= 0.0 && cfg.initial_bid <= 1.0))
    throw std::invalid_argument("initial_bid must be in [0, 1]");
  Agent a;
  a.id = unit.id;
  a.k_max = unit.k_max;
  a.method = method;
  a.gamma = cfg.gamma;
  a.lr_critic = cfg.lr_critic;
  a.lr_actor = cfg.lr_actor;
  a.batch_size = cfg.batch_size;
  a.rng = std::mt19937_64(seed);
  a.buffer = ReplayBuffer(cfg.buffer_capacity);

  nn::Architecture arch;
  arch.gcn_widths = method == Method::gcn ? cfg.gcn_widths : std::vector<Index>{};
  arch.head_widths = cfg.head_widths;
  arch.output_width = 1;
  arch.input_width = method == Method::gcn ? kNodeFeatures : 2;
  a.actor = nn::make_network(arch, cfg.init, a.rng);
  if (cfg.init == nn::InitScheme::fan_in)
    a.actor.head_layers.back().bias(0) = 1.0 + cfg.initial_bid * (unit.k_max - 1.0);
  arch.input_width = method == Method::gcn ? kNodeFeatures : 3;
  a.critic = nn::make_network(arch, cfg.init, a.rng);
  a.target_actor = a.actor;
  a.target_critic = a.critic;
  return a;
}

double clip_action(double raw, double k_max) {
  if (std::isnan(raw)) return 1.0;  // a diverged actor bids competitively
  return std::max(std::min(raw, k_max), 1.0);
}

double actor_output(const Agent& agent, const MarketState& state, const Encoder& enc) {
  Tensor2 x = enc.actor_input(std::span<const MarketState>(&state, 1));
  return nn::forward(agent.actor, x, enc.adjacency())(0, 0);
}

double select_action(Agent& agent, const MarketState& state, const Encoder& enc,
                     double noise_sigma) {
  double raw = actor_output(agent, state, enc);
  if (noise_sigma > 0.0) raw += std::normal_distribution<double>(0.0, noise_sigma)(agent.rng);
  return clip_action(raw, agent.k_max);
}

namespace {

std::vector<MarketState> states_of(std::span<const Transition> batch, bool next) {
  std::vector<MarketState> out;
  out.reserve(batch.size());
  for (const auto& t : batch) out.push_back(next ? t.next_state : t.state);
  return out;
}

void require_batch(const Agent& agent, std::span<const Transition> batch) {
  if (batch.size() < agent.batch_size)
    throw std::invalid_argument(
        fmt::format("batch of {} is smaller than N_s = {}", batch.size(), agent.batch_size));
}

}  // namespace

std::vector<double> critic_targets(const Agent& agent, std::span<const Transition> batch,
                                   const Encoder& enc) {
  const Index n = static_cast<Index>(batch.size());
  std::vector<MarketState> next = states_of(batch, true);
  Tensor2 raw = nn::forward(agent.target_actor, enc.actor_input(next), enc.adjacency(), n);
  std::vector<double> next_actions(n);
  for (Index b = 0; b < n; ++b) next_actions[b] = clip_action(raw(b, 0), agent.k_max);
  Tensor2 q_next = nn::forward(agent.target_critic, enc.critic_input(next, next_actions, agent.id),
                               enc.adjacency(), n);
  std::vector<double> y(n);
  for (Index b = 0; b < n; ++b) {
    const double r = batch[b].reward / enc.scales().reward;
    y[b] = batch[b].terminal ? r : r + agent.gamma * q_next(b, 0);
  }
  return y;
}

double critic_target(const Agent& agent, const Transition& t, const Encoder& enc) {
  return critic_targets(agent, std::span<const Transition>(&t, 1), enc).front();
}

LossAndGradient critic_loss_and_gradient(const Agent& agent, std::span<const Transition> batch,
                                         std::span<const double> targets, const Encoder& enc) {
  const Index n = static_cast<Index>(batch.size());
  if (targets.size() != batch.size()) throw std::invalid_argument("target count mismatch");
  std::vector<MarketState> states = states_of(batch, false);
  std::vector<double> actions(n);
  for (Index b = 0; b < n; ++b) actions[b] = batch[b].action;

  nn::ForwardCache cache;
  Tensor2 q = nn::forward(agent.critic, enc.critic_input(states, actions, agent.id),
                          enc.adjacency(), n, &cache);
  LossAndGradient out;
  Tensor2 dq(n, 1);
  for (Index b = 0; b < n; ++b) {
    const double resid = targets[b] - q(b, 0);
    out.loss += resid * resid;
    dq(b, 0) = -2.0 * resid / static_cast<double>(n);
  }
  out.loss /= static_cast<double>(n);
  out.grads = nn::backward(agent.critic, cache, enc.adjacency(), dq, nn::BackwardParts::parameters).grads;
  return out;
}

LossAndGradient actor_loss_and_gradient(const Agent& agent, std::span<const Transition> batch,
                                        const Encoder& enc) {
  const Index n = static_cast<Index>(batch.size());
  std::vector<MarketState> states = states_of(batch, false);

  nn::ForwardCache actor_cache;
  Tensor2 raw = nn::forward(agent.actor, enc.actor_input(states), enc.adjacency(), n, &actor_cache);
  std::vector<double> actions(n);
  for (Index b = 0; b < n; ++b) actions[b] = clip_action(raw(b, 0), agent.k_max);

  nn::ForwardCache critic_cache;
  Tensor2 q = nn::forward(agent.critic, enc.critic_input(states, actions, agent.id), enc.adjacency(),
                          n, &critic_cache);
  LossAndGradient out;
  out.loss = -q.mean();

  Tensor2 dq = Tensor2::Constant(n, 1, -1.0 / static_cast<double>(n));
  Tensor2 dx = nn::backward(agent.critic, critic_cache, enc.adjacency(), dq, nn::BackwardParts::input)
                    .input_gradient;
  Tensor2 draw(n, 1);
  for (Index b = 0; b < n; ++b) {
    auto [r, c] = enc.action_entry(b, agent.id);
    const bool interior = raw(b, 0) > 1.0 && raw(b, 0) < agent.k_max;
    draw(b, 0) = interior ? dx(r, c) : 0.0;
  }
  out.grads = nn::backward(agent.actor, actor_cache, enc.adjacency(), draw, nn::BackwardParts::parameters)
                  .grads;
  return out;
}

double update_critic(Agent& agent, std::span<const Transition> batch, const Encoder& enc) {
  require_batch(agent, batch);
  std::vector<double> y = critic_targets(agent, batch, enc);
  LossAndGradient lg = critic_loss_and_gradient(agent, batch, y, enc);
  nn::sgd_step(agent.critic, lg.grads, agent.lr_critic);
  return lg.loss;
}

double update_actor(Agent& agent, std::span<const Transition> batch, const Encoder& enc) {
  require_batch(agent, batch);
  LossAndGradient lg = actor_loss_and_gradient(agent, batch, enc);
  nn::sgd_step(agent.actor, lg.grads, agent.lr_actor);
  return lg.loss;
}

void soft_update_targets(Agent& agent, double tau) {
  nn::soft_update(agent.target_actor, agent.actor, tau);
  nn::soft_update(agent.target_critic, agent.critic, tau);
}

}  // namespace gcnbid::rl
