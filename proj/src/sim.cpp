#include "gcnbid/sim.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace gcnbid::sim {

double reported_profit(const Scenario& scenario, int unit, double reward) {
  return scenario.subtract_fixed_cost ? reward - scenario.units.at(unit).fixed_cost : reward;
}

namespace {

rl::MarketState initial_state(const Scenario& s, std::int64_t t0) {
  const double d0 = demand_at(s.demand, t0 - 1);
  const std::vector<double> competitive(s.units.size(), 1.0);
  return {market::clear_market(s.units, competitive, d0).price, d0};
}

void finish_aggregates(EpisodeLog& log, std::size_t n_units) {
  const double steps = static_cast<double>(log.steps.size());
  for (std::size_t i = 0; i < n_units; ++i) {
    log.avg_profit[i] /= steps;
    log.avg_bid[i] /= steps;
  }
}

}  // namespace

TrainingResult run_training(const Scenario& scenario, const StepObserver* observer) {
  scenario.validate();
  const auto& units = scenario.units;
  const std::size_t n = units.size();
  const rl::Encoder enc(scenario.method, scenario.topology, units, scenario.effective_scales());
  const int T = scenario.training.steps;

  TrainingResult res;
  res.agents.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    res.agents.push_back(rl::make_agent(units[i], scenario.method, scenario.training.agent,
                                        scenario.agent_seed(static_cast<int>(i))));

  std::vector<double> bids(n);
  std::vector<rl::Transition> stored(n);
  for (int ep = 0; ep < scenario.training.episodes; ++ep) {
    const double sigma = noise_for_episode(scenario.training, ep);
    const std::int64_t t0 = static_cast<std::int64_t>(ep) * T;
    rl::MarketState state = initial_state(scenario, t0);

    EpisodeLog log;
    log.episode = ep;
    log.steps.reserve(T);
    log.avg_profit.assign(n, 0.0);
    log.avg_bid.assign(n, 0.0);

    for (int step = 0; step < T; ++step) {
      const std::int64_t t = t0 + step;
      for (std::size_t i = 0; i < n; ++i) bids[i] = rl::select_action(res.agents[i], state, enc, sigma);

      const double demand = demand_at(scenario.demand, t);
      const market::ClearingResult cleared = market::clear_market(units, bids, demand);
      ++res.clearing_calls;
      const rl::MarketState next{cleared.price, demand};

      StepRecord rec{ep, step, demand, cleared.price, bids, cleared.dispatch, std::vector<double>(n)};
      for (std::size_t i = 0; i < n; ++i) {
        rec.rewards[i] = market::compute_reward(units[i], cleared.price, cleared.dispatch[i]);
        stored[i] = rl::Transition{state, next, bids[i], rec.rewards[i], step == T - 1};
        res.agents[i].buffer.push(stored[i]);
        log.avg_profit[i] += reported_profit(scenario, static_cast<int>(i), rec.rewards[i]);
        log.avg_bid[i] += bids[i];
      }

      for (auto& agent : res.agents) {
        if (agent.buffer.size() < agent.batch_size) continue;
        const auto batch = agent.buffer.sample(agent.batch_size, agent.rng);
        rl::update_critic(agent, batch, enc);
        rl::update_actor(agent, batch, enc);
        rl::soft_update_targets(agent, scenario.training.agent.tau);
        ++res.updates;
      }

      if (observer && observer->on_step) observer->on_step(rec, cleared, stored);
      log.steps.push_back(std::move(rec));
      state = next;
    }
    finish_aggregates(log, n);
    res.logs.push_back(std::move(log));
  }
  return res;
}

void check_feature_width(const std::vector<rl::Agent>& agents, const Scenario& scenario) {
  if (agents.empty()) throw std::invalid_argument("no agents to evaluate");
  const rl::Encoder enc(agents.front().method, scenario.topology, scenario.units,
                        scenario.effective_scales());
  for (const auto& a : agents) {
    if (a.method != agents.front().method)
      throw std::invalid_argument("checkpoint mixes methods across agents");
    a.actor.validate();
    a.critic.validate();
    if (a.actor.input_width() != enc.actor_width() || a.critic.input_width() != enc.critic_width())
      throw std::invalid_argument(fmt::format(
          "feature width mismatch for agent {}: networks take {}/{} features, scenario provides {}/{}",
          a.id + 1, a.actor.input_width(), a.critic.input_width(), enc.actor_width(),
          enc.critic_width()));
    if (a.actor.output_width() != 1 || a.critic.output_width() != 1)
      throw std::invalid_argument("actor and critic must have a single output");
  }
}

std::vector<EpisodeLog> run_evaluation(const std::vector<rl::Agent>& agents,
                                       const Scenario& scenario) {
  check_feature_width(agents, scenario);
  const auto& units = scenario.units;
  const std::size_t n = units.size();
  const rl::Encoder enc(agents.front().method, scenario.topology, units, scenario.effective_scales());
  const int T = scenario.training.steps;

  std::vector<EpisodeLog> logs;
  std::vector<double> bids(n);
  for (int ep = 0; ep < scenario.eval_episodes; ++ep) {
    const std::int64_t t0 = static_cast<std::int64_t>(ep) * T;
    rl::MarketState state = initial_state(scenario, t0);
    EpisodeLog log;
    log.episode = ep;
    log.avg_profit.assign(n, 0.0);
    log.avg_bid.assign(n, 0.0);
    for (int step = 0; step < T; ++step) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto& policy = agents[i % agents.size()];
        bids[i] = rl::clip_action(rl::actor_output(policy, state, enc), units[i].k_max);
      }
      const double demand = demand_at(scenario.demand, t0 + step);
      const auto cleared = market::clear_market(units, bids, demand);
      StepRecord rec{ep, step, demand, cleared.price, bids, cleared.dispatch, std::vector<double>(n)};
      for (std::size_t i = 0; i < n; ++i) {
        rec.rewards[i] = market::compute_reward(units[i], cleared.price, cleared.dispatch[i]);
        log.avg_profit[i] += reported_profit(scenario, static_cast<int>(i), rec.rewards[i]);
        log.avg_bid[i] += bids[i];
      }
      log.steps.push_back(std::move(rec));
      state = {cleared.price, demand};
    }
    finish_aggregates(log, n);
    logs.push_back(std::move(log));
  }
  return logs;
}

Metrics compute_metrics(const std::vector<EpisodeLog>& logs, const Scenario& scenario, int window) {
  if (logs.empty()) throw std::invalid_argument("compute_metrics: no episodes");
  Metrics m;
  for (const auto& log : logs) {
    if (log.steps.empty()) throw std::invalid_argument("compute_metrics: empty episode");
    const std::size_t n = log.steps.front().rewards.size();
    std::vector<double> profit(n, 0.0), bid(n, 0.0);
    for (const auto& rec : log.steps) {
      for (std::size_t i = 0; i < n; ++i) {
        profit[i] += reported_profit(scenario, static_cast<int>(i), rec.rewards[i]);
        bid[i] += rec.bids[i];
      }
    }
    double p_sum = 0.0, b_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      profit[i] /= static_cast<double>(log.steps.size());
      bid[i] /= static_cast<double>(log.steps.size());
      p_sum += profit[i];
      b_sum += bid[i];
    }
    m.overall_profit.push_back(p_sum / static_cast<double>(n));
    m.overall_bid.push_back(b_sum / static_cast<double>(n));
    m.unit_profit.push_back(std::move(profit));
    m.unit_bid.push_back(std::move(bid));
  }
  const auto count = static_cast<std::ptrdiff_t>(m.overall_profit.size());
  const auto w = std::min<std::ptrdiff_t>(window, count);
  auto mean = [](auto first, auto last) {
    double s = 0.0;
    for (auto it = first; it != last; ++it) s += *it;
    return s / static_cast<double>(std::distance(first, last));
  };
  m.first_window_profit = mean(m.overall_profit.begin(), m.overall_profit.begin() + w);
  m.last_window_profit = mean(m.overall_profit.end() - w, m.overall_profit.end());
  m.mean_profit = mean(m.overall_profit.begin(), m.overall_profit.end());
  return m;
}

void write_steps_csv(std::ostream& out, const std::vector<EpisodeLog>& logs) {
  out << "episode,step,demand,price,unit,bid,dispatch,reward\n";
  for (const auto& log : logs)
    for (const auto& r : log.steps)
      for (std::size_t i = 0; i < r.bids.size(); ++i)
        fmt::print(out, "{},{},{},{},{},{},{},{}\n", r.episode + 1, r.step + 1, r.demand, r.price,
                   i + 1, r.bids[i], r.dispatch[i], r.rewards[i]);
}

void write_summary_csv(std::ostream& out, const std::vector<EpisodeLog>& logs) {
  out << "episode,unit,avg_profit,avg_bid\n";
  for (const auto& log : logs)
    for (std::size_t i = 0; i < log.avg_profit.size(); ++i)
      fmt::print(out, "{},{},{},{}\n", log.episode + 1, i + 1, log.avg_profit[i], log.avg_bid[i]);
}

}  // namespace gcnbid::sim
