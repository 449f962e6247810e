#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gcnbid/scenario.hpp"
#include "gcnbid/sim.hpp"

using namespace gcnbid;
using sim::DemandProfile;
using sim::Scenario;

namespace {

const std::string kCase30 = std::string(GCNBID_SOURCE_DIR) + "/data/case30.txt";
const std::string kUnits30 = std::string(GCNBID_SOURCE_DIR) + "/data/units30.csv";

std::string small_scenario_text(int episodes, int steps, const std::string& extra = "") {
  return "name small\n"
         "topology\n{\n    case " + kCase30 + "\n}\n"
         "units\n{\n    file " + kUnits30 + "\n}\n"
         "training\n{\n    episodes " + std::to_string(episodes) + "\n    steps " +
         std::to_string(steps) + "\n    batch_size 8\n}\n" + extra;
}

Scenario small_scenario(int episodes, int steps, const std::string& extra = "") {
  return sim::parse_scenario(small_scenario_text(episodes, steps, extra), ".");
}

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  auto dir = std::filesystem::temp_directory_path() / "gcnbid_test_sim";
  std::filesystem::create_directories(dir);
  auto path = dir / name;
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST_CASE("demand_at examples") {
  DemandProfile p{.base = 100, .amplitude = 0, .period = 24, .jitter_sigma = 0, .seed = 1,
                  .clamp = true, .lower = 0, .upper = 1000};
  for (int t : {0, 5, 17, 1000}) CHECK(sim::demand_at(p, t) == 100.0);
  p.amplitude = 20;
  CHECK(sim::demand_at(p, 6) == doctest::Approx(120.0).epsilon(1e-14));
  CHECK(sim::demand_at(p, 18) == doctest::Approx(80.0).epsilon(1e-14));
  CHECK(sim::demand_at(p, 0) == doctest::Approx(100.0).epsilon(1e-14));
}

TEST_CASE("default 30-bus demand spans [134, 268] without jitter") {
  auto s = sim::load_scenario("scenarios/30bus_s1.cfg");
  CHECK(s.demand.base == doctest::Approx(201.0));
  CHECK(s.demand.amplitude == doctest::Approx(67.0));
  CHECK(s.demand.jitter_sigma == doctest::Approx(6.7));
  CHECK(s.demand.lower == 30.0);
  CHECK(s.demand.upper == 335.0);
  s.demand.jitter_sigma = 0;
  double lo = 1e9, hi = -1e9;
  for (int t = 0; t < 48; ++t) {
    lo = std::min(lo, sim::demand_at(s.demand, t));
    hi = std::max(hi, sim::demand_at(s.demand, t));
  }
  CHECK(lo == doctest::Approx(134.0));
  CHECK(hi == doctest::Approx(268.0));
}

TEST_CASE("demand jitter is a pure function of seed and time") {
  DemandProfile p{.base = 200, .amplitude = 50, .period = 24, .jitter_sigma = 5, .seed = 7,
                  .clamp = true, .lower = 30, .upper = 335};
  DemandProfile q = p;
  q.seed = 8;
  int differing = 0;
  for (int t = 0; t < 100; ++t) {
    CHECK(sim::demand_at(p, t) == sim::demand_at(p, t));
    differing += sim::demand_at(p, t) != sim::demand_at(q, t);
  }
  CHECK(differing == 100);
  // evaluation order does not matter
  const double later = sim::demand_at(p, 99);
  sim::demand_at(p, 3);
  CHECK(sim::demand_at(p, 99) == later);
}

TEST_CASE("property: demand stays within total generation bounds") {
  DemandProfile p{.base = 200, .amplitude = 150, .period = 24, .jitter_sigma = 80, .seed = 3,
                  .clamp = true, .lower = 30, .upper = 335};
  for (std::int64_t t = -500; t < 5000; ++t) {
    const double d = sim::demand_at(p, t);
    REQUIRE(d >= 30.0);
    REQUIRE(d <= 335.0);
  }
}

TEST_CASE("scenario files load with the capacity table") {
  auto s1 = sim::load_scenario("scenarios/30bus_s1.cfg");
  auto s2 = sim::load_scenario("scenarios/30bus_s2.cfg");
  auto s3 = sim::load_scenario("scenarios/30bus_s3.cfg");
  auto caps = [](const Scenario& s) {
    std::vector<double> c;
    for (const auto& u : s.units) c.push_back(u.g_max);
    return c;
  };
  CHECK(caps(s1) == std::vector<double>{80, 80, 50, 50, 35, 40});
  CHECK(caps(s2) == std::vector<double>{150, 150, 50, 50, 30, 40});
  CHECK(caps(s3) == std::vector<double>{80, 80, 50, 50, 35, 100});
  CHECK(s1.training.episodes == 50);
  CHECK(s1.training.agent.gamma == 0.9);
  CHECK(s1.training.agent.lr_critic == 0.1);
  CHECK(s1.training.agent.lr_actor == 0.1);
  CHECK(s1.training.agent.gcn_widths == std::vector<nn::Index>{16, 16});
  CHECK(s1.topology.lines().size() == 41);

  auto s39 = sim::load_scenario("scenarios/39bus.cfg");
  CHECK(s39.topology.n_buses() == 39);
  CHECK(s39.units.size() == 9);
}

TEST_CASE("scenario parse errors") {
  CHECK_THROWS_AS(sim::parse_scenario(small_scenario_text(0, 5), "."), sim::ScenarioError);
  CHECK_THROWS_AS(sim::parse_scenario(small_scenario_text(1, 0), "."), sim::ScenarioError);
  CHECK_THROWS_AS(sim::parse_scenario(small_scenario_text(1, 1, "bogus 1\n"), "."),
                  sim::ScenarioError);
  CHECK_THROWS_AS(sim::parse_scenario(small_scenario_text(1, 1, "method\n{\n type cnn\n}\n"), "."),
                  sim::ScenarioError);
  CHECK_THROWS_AS(sim::load_scenario("scenarios/does_not_exist.cfg"), sim::ScenarioError);
  // capacity override for a unit that does not exist
  const std::string text = "topology\n{\n case " + kCase30 + "\n}\nunits\n{\n file " + kUnits30 +
                           "\n capacities \"1,2,3\"\n}\n";
  CHECK_THROWS_AS(sim::parse_scenario(text, "."), sim::ScenarioError);
}

TEST_CASE("one episode of one step with one unit stores one transition and never updates") {
  auto units = write_temp("one_unit.csv",
                          "id,marginal_cost,g_min,g_max,k_max,fixed_cost,bus\n1,2,5,80,2,120,1\n");
  const std::string text = "topology\n{\n case " + kCase30 + "\n}\nunits\n{\n file " +
                           units.string() + "\n}\ntraining\n{\n episodes 1\n steps 1\n}\n";
  auto s = sim::parse_scenario(text, ".");
  int calls = 0;
  std::vector<rl::Transition> seen;
  sim::StepObserver obs{[&](const sim::StepRecord&, const market::ClearingResult&,
                            const std::vector<rl::Transition>& stored) {
    ++calls;
    seen = stored;
  }};
  auto res = sim::run_training(s, &obs);
  CHECK(calls == 1);
  REQUIRE(res.agents.size() == 1);
  CHECK(res.agents[0].buffer.size() == 1);
  CHECK(res.updates == 0);
  CHECK(res.clearing_calls == 1);
  REQUIRE(seen.size() == 1);
  CHECK(seen[0].terminal);
  // a lone unit is always marginal and is paid its own effective bid
  const auto& rec = res.logs[0].steps[0];
  CHECK(rec.dispatch[0] == rec.demand);
  CHECK(rec.price == doctest::Approx(rec.bids[0] * 2.0));
}

TEST_CASE("training loop follows the per-step protocol") {
  auto s = small_scenario(2, 12);
  int calls = 0;
  double last_price = -1, last_demand = -1;
  int last_step = -1;
  sim::StepObserver obs{[&](const sim::StepRecord& rec, const market::ClearingResult& cleared,
                            const std::vector<rl::Transition>& stored) {
    ++calls;
    REQUIRE(stored.size() == s.units.size());
    CHECK(cleared.price == rec.price);
    for (std::size_t i = 0; i < stored.size(); ++i) {
      // reward is exactly compute_reward on this step's clearing
      CHECK(stored[i].reward ==
            market::compute_reward(s.units[i], cleared.price, cleared.dispatch[i]));
      CHECK(stored[i].action == rec.bids[i]);
      CHECK(stored[i].next_state.prev_price == cleared.price);
      CHECK(stored[i].next_state.prev_demand == rec.demand);
      CHECK(stored[i].terminal == (rec.step == 11));
      REQUIRE(rec.bids[i] >= 1.0);
      REQUIRE(rec.bids[i] <= s.units[i].k_max);
      if (rec.step > 0) {
        CHECK(stored[i].state.prev_price == last_price);
        CHECK(stored[i].state.prev_demand == last_demand);
      }
    }
    CHECK(rec.step == (last_step + 1) % 12);
    last_step = rec.step;
    last_price = cleared.price;
    last_demand = rec.demand;
  }};
  auto res = sim::run_training(s, &obs);
  CHECK(calls == 24);
  CHECK(res.clearing_calls == 24);
  REQUIRE(res.logs.size() == 2);
  for (const auto& log : res.logs) CHECK(log.steps.size() == 12);
  // the buffer reaches a batch of 8 after 8 steps; from then on every step updates every agent
  CHECK(res.updates == (24 - 7) * s.units.size());
  // episodes tile the demand horizon
  for (int ep = 0; ep < 2; ++ep)
    for (int t = 0; t < 12; ++t)
      CHECK(res.logs[ep].steps[t].demand == sim::demand_at(s.demand, ep * 12 + t));
}

TEST_CASE("fixed seeds reproduce the run exactly") {
  auto s = small_scenario(2, 15);
  auto a = sim::run_training(s);
  auto b = sim::run_training(s);
  std::ostringstream ca, cb;
  sim::write_steps_csv(ca, a.logs);
  sim::write_steps_csv(cb, b.logs);
  CHECK(ca.str() == cb.str());
  s.agent_seed_base = 2;
  auto c = sim::run_training(s);
  std::ostringstream cc;
  sim::write_steps_csv(cc, c.logs);
  CHECK(cc.str() != ca.str());
}

TEST_CASE("property: changing an agent seed leaves the demand trajectory unchanged") {
  auto s = small_scenario(1, 20);
  auto a = sim::run_training(s);
  s.agent_seeds = {99, 98, 97, 96, 95, 94};
  auto b = sim::run_training(s);
  for (int t = 0; t < 20; ++t) CHECK(a.logs[0].steps[t].demand == b.logs[0].steps[t].demand);
}

TEST_CASE("compute_metrics examples") {
  auto s = small_scenario(1, 1);
  s.units.resize(1);
  sim::EpisodeLog log;
  log.steps.push_back({0, 0, 50, 2, {1.0}, {50}, {50.0}});
  auto m = sim::compute_metrics({log}, s);
  CHECK(m.unit_profit[0][0] == 50.0);
  CHECK(m.overall_profit[0] == 50.0);
  CHECK(m.mean_profit == 50.0);

  log.steps[0].rewards = {0.0};
  log.steps[0].bids = {0.0};
  m = sim::compute_metrics({log}, s);
  CHECK(m.mean_profit == 0.0);
  CHECK(m.overall_bid[0] == 0.0);
  CHECK_THROWS_AS(sim::compute_metrics({}, s), std::invalid_argument);
}

TEST_CASE("compute_metrics on a synthetic log matches hand sums") {
  auto s = small_scenario(1, 1);
  s.units.resize(2);
  std::vector<sim::EpisodeLog> logs(7);
  // rewards r(ep, step, unit) = 10 ep + step + 100 unit; bids 1 + 0.1 unit
  for (int ep = 0; ep < 7; ++ep) {
    logs[ep].episode = ep;
    for (int st = 0; st < 3; ++st)
      logs[ep].steps.push_back({ep, st, 100, 2, {1.0, 1.1}, {50, 50},
                                {10.0 * ep + st, 10.0 * ep + st + 100}});
  }
  auto m = sim::compute_metrics(logs, s);
  for (int ep = 0; ep < 7; ++ep) {
    CHECK(m.unit_profit[ep][0] == doctest::Approx(10.0 * ep + 1));
    CHECK(m.unit_profit[ep][1] == doctest::Approx(10.0 * ep + 101));
    CHECK(m.overall_profit[ep] == doctest::Approx(10.0 * ep + 51));
    CHECK(m.overall_bid[ep] == doctest::Approx(1.05));
  }
  CHECK(m.first_window_profit == doctest::Approx((51 + 61 + 71 + 81 + 91) / 5.0));
  CHECK(m.last_window_profit == doctest::Approx((71 + 81 + 91 + 101 + 111) / 5.0));
  CHECK(m.mean_profit == doctest::Approx(81.0));

  s.subtract_fixed_cost = true;
  auto fixed = sim::compute_metrics(logs, s);
  CHECK(fixed.unit_profit[0][0] == doctest::Approx(1.0 - s.units[0].fixed_cost));
}

TEST_CASE("property: streaming aggregates equal recomputation from step records") {
  auto s = small_scenario(3, 10);
  s.subtract_fixed_cost = true;
  auto res = sim::run_training(s);
  auto m = sim::compute_metrics(res.logs, s);
  for (std::size_t ep = 0; ep < res.logs.size(); ++ep) {
    for (std::size_t i = 0; i < s.units.size(); ++i) {
      CHECK(std::abs(res.logs[ep].avg_profit[i] - m.unit_profit[ep][i]) <= 1e-9);
      CHECK(std::abs(res.logs[ep].avg_bid[i] - m.unit_bid[ep][i]) <= 1e-9);
    }
  }
}

TEST_CASE("exploration noise decays linearly") {
  sim::TrainingParams p;
  CHECK(sim::noise_for_episode(p, 0) == 0.3);
  CHECK(sim::noise_for_episode(p, 49) == doctest::Approx(0.02));
  CHECK(sim::noise_for_episode(p, 49 / 2.0) == doctest::Approx(0.16).epsilon(0.02));
}

TEST_CASE("fault scenarios remove the listed lines") {
  auto base = sim::load_scenario("scenarios/30bus_s1.cfg");
  auto has = [](const Scenario& s, int a, int b) {
    return s.topology.has_line(grid::Line::make(a - 1, b - 1));
  };
  auto f3 = sim::apply_fault_scenario(base, 3);
  CHECK(f3.topology.lines().size() == 41 - 3);
  for (auto [a, b] : {std::pair{3, 4}, {8, 6}, {10, 21}}) CHECK_FALSE(has(f3, a, b));

  auto f5 = sim::apply_fault_scenario(base, 5);
  CHECK(f5.topology.lines().size() == 41 - 5);
  for (auto [a, b] : {std::pair{3, 4}, {7, 6}, {16, 17}, {10, 21}, {24, 25}}) CHECK_FALSE(has(f5, a, b));

  auto f10 = sim::apply_fault_scenario(base, 10);
  CHECK(f10.topology.lines().size() == 41 - 10);
  for (auto [a, b] : {std::pair{1, 2}, {3, 4}, {4, 6}, {2, 5}, {1, 3}, {2, 4}, {4, 12}, {29, 30},
                      {27, 28}, {19, 20}})
    CHECK_FALSE(has(f10, a, b));

  CHECK(f10.units.size() == base.units.size());
  CHECK_THROWS_AS(sim::apply_fault_scenario(base, 7), sim::ScenarioError);
  CHECK_THROWS_AS(sim::apply_fault_scenario(sim::load_scenario("scenarios/39bus.cfg"), 3),
                  sim::ScenarioError);
}

TEST_CASE("evaluation on the training grid gives finite profits") {
  auto s = small_scenario(1, 10);
  auto trained = sim::run_training(s);
  s.eval_episodes = 2;
  auto logs = sim::run_evaluation(trained.agents, s);
  REQUIRE(logs.size() == 2);
  for (const auto& log : logs) {
    CHECK(log.steps.size() == 10);
    for (double p : log.avg_profit) CHECK(std::isfinite(p));
  }
  // frozen policies: evaluation twice gives the same records
  auto again = sim::run_evaluation(trained.agents, s);
  std::ostringstream a, b;
  sim::write_steps_csv(a, logs);
  sim::write_steps_csv(b, again);
  CHECK(a.str() == b.str());
}

TEST_CASE("30-bus policies evaluate on the 39-bus grid without reshaping") {
  for (const char* method : {"gcn", "mlp"}) {
    CAPTURE(method);
    auto s = small_scenario(1, 8, std::string("method\n{\n type ") + method + "\n}\n");
    auto trained = sim::run_training(s);
    std::vector<std::size_t> shapes;
    for (auto block : trained.agents[0].actor.parameter_blocks()) shapes.push_back(block.size());

    auto target = sim::load_scenario("scenarios/39bus.cfg");
    target.method = s.method;
    target.training.steps = 8;
    auto logs = sim::run_evaluation(trained.agents, target);
    REQUIRE(logs.size() == 1);
    CHECK(logs[0].avg_profit.size() == 9);
    for (double p : logs[0].avg_profit) CHECK(std::isfinite(p));

    std::vector<std::size_t> after;
    for (auto block : trained.agents[0].actor.parameter_blocks()) after.push_back(block.size());
    CHECK(after == shapes);
  }
}

TEST_CASE("evaluation rejects networks with the wrong feature width") {
  auto s = small_scenario(1, 8);
  auto trained = sim::run_training(s);
  auto agents = trained.agents;
  agents[2].actor.gcn_layers[0].weights = nn::Tensor2::Zero(5, 16);
  CHECK_THROWS_AS(sim::run_evaluation(agents, s), std::invalid_argument);
  CHECK_THROWS_AS(sim::run_evaluation({}, s), std::invalid_argument);
}

TEST_CASE("csv writers") {
  sim::EpisodeLog log;
  log.episode = 0;
  log.steps.push_back({0, 0, 150, 1.75, {1, 1.5}, {80, 70}, {0, 17.5}});
  log.avg_profit = {0, 17.5};
  log.avg_bid = {1, 1.5};
  std::ostringstream steps, summary;
  sim::write_steps_csv(steps, {log});
  sim::write_summary_csv(summary, {log});
  CHECK(steps.str() ==
        "episode,step,demand,price,unit,bid,dispatch,reward\n"
        "1,1,150,1.75,1,1,80,0\n"
        "1,1,150,1.75,2,1.5,70,17.5\n");
  CHECK(summary.str() == "episode,unit,avg_profit,avg_bid\n1,1,0,1\n1,2,17.5,1.5\n");
}
