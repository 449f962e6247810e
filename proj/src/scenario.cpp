#include "gcnbid/scenario.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <boost/property_tree/info_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace gcnbid::sim {

namespace pt = boost::property_tree;

double demand_at(const DemandProfile& p, std::int64_t t) {
  double d = p.base;
  if (p.amplitude != 0.0)
    d += p.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / p.period);
  if (p.jitter_sigma > 0.0) {
    std::seed_seq seq{static_cast<std::uint32_t>(p.seed), static_cast<std::uint32_t>(p.seed >> 32),
                      static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32)};
    std::mt19937_64 eng(seq);
    d += std::normal_distribution<double>(0.0, p.jitter_sigma)(eng);
  }
  if (p.clamp) d = std::clamp(d, p.lower, p.upper);
  return d;
}

double noise_for_episode(const TrainingParams& p, int episode) {
  if (p.episodes <= 1) return p.noise_start;
  const double frac = static_cast<double>(episode) / static_cast<double>(p.episodes - 1);
  return p.noise_start + (p.noise_end - p.noise_start) * frac;
}

rl::Scales Scenario::effective_scales() const { return scales ? *scales : rl::default_scales(units); }

std::uint64_t Scenario::agent_seed(int unit) const {
  if (unit < static_cast<int>(agent_seeds.size())) return agent_seeds[unit];
  return agent_seed_base * 1000003ULL + static_cast<std::uint64_t>(unit) * 7919ULL + 17ULL;
}

void Scenario::validate() const {
  if (training.episodes < 1) throw ScenarioError("training.episodes must be >= 1");
  if (training.steps < 1) throw ScenarioError("training.steps must be >= 1");
  if (eval_episodes < 1) throw ScenarioError("evaluation.episodes must be >= 1");
  if (units.empty()) throw ScenarioError("scenario has no units");
  if (!(training.agent.gamma >= 0.0 && training.agent.gamma < 1.0))
    throw ScenarioError("training.gamma must be in [0, 1)");
  if (!(training.agent.initial_bid >= 0.0 && training.agent.initial_bid <= 1.0))
    throw ScenarioError("training.initial_bid must be in [0, 1]");
  if (!(training.agent.tau > 0.0 && training.agent.tau <= 1.0))
    throw ScenarioError("training.tau must be in (0, 1]");
  if (training.agent.batch_size == 0 || training.agent.buffer_capacity < training.agent.batch_size)
    throw ScenarioError("need 0 < training.batch_size <= training.buffer_capacity");
  if (!(demand.period > 0.0)) throw ScenarioError("demand.period must be positive");
  for (const auto& u : units) {
    if (u.bus >= topology.n_buses())
      throw ScenarioError(fmt::format("unit {} sits on bus {} but the grid has {} buses", u.id + 1,
                                      u.bus + 1, topology.n_buses()));
    auto it = topology.generator_buses().find(u.id);
    if (it != topology.generator_buses().end() && it->second != u.bus)
      throw ScenarioError(fmt::format("unit {}: units file says bus {}, case file says bus {}",
                                      u.id + 1, u.bus + 1, it->second + 1));
  }
}

namespace {

void check_keys(const pt::ptree& tree, const std::string& where, const std::set<std::string>& allowed) {
  for (const auto& [key, child] : tree) {
    if (!allowed.count(key))
      throw ScenarioError(fmt::format("unknown key '{}' in {}", key, where.empty() ? "top level" : where));
  }
}

template <typename T>
T get_or(const pt::ptree& tree, const std::string& key, T fallback) {
  try {
    return tree.get<T>(key, fallback);
  } catch (const pt::ptree_error& e) {
    throw ScenarioError(fmt::format("bad value for '{}': {}", key, e.what()));
  }
}

std::vector<double> parse_doubles(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ScenarioError(fmt::format("bad number '{}' in {}", tok, key));
    }
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (double v : parse_doubles(text, "seeds.agents")) out.push_back(static_cast<std::uint64_t>(v));
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir,
                        const std::string& default_name) {
  pt::ptree root;
  try {
    std::istringstream in(text);
    pt::read_info(in, root);
  } catch (const pt::info_parser_error& e) {
    throw ScenarioError(fmt::format("scenario parse error at line {}: {}", e.line(), e.message()));
  }
  check_keys(root, "", {"name", "topology", "units", "training", "demand", "faults", "method",
                        "seeds", "evaluation", "scales", "reporting"});

  Scenario s;
  s.name = get_or<std::string>(root, "name", default_name);

  const pt::ptree empty;
  const auto& topo = root.get_child("topology", empty);
  check_keys(topo, "topology", {"case", "remove_lines"});
  const auto case_file = topo.get_optional<std::string>("case");
  if (!case_file) throw ScenarioError("topology.case is required");
  s.case_path = resolve(base_dir, *case_file);

  const auto& units = root.get_child("units", empty);
  check_keys(units, "units", {"file", "capacities"});
  const auto units_file = units.get_optional<std::string>("file");
  if (!units_file) throw ScenarioError("units.file is required");
  s.units_path = resolve(base_dir, *units_file);

  try {
    s.base_topology = grid::load_case(s.case_path);
    s.units = market::load_units(s.units_path);
    s.removed_lines = grid::parse_line_list(get_or<std::string>(topo, "remove_lines", ""));
    s.topology = grid::remove_lines(s.base_topology, s.removed_lines);
  } catch (const grid::GridError& e) {
    throw ScenarioError(e.what());
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(e.what());
  }

  if (auto caps = units.get_optional<std::string>("capacities")) {
    auto values = parse_doubles(*caps, "units.capacities");
    if (values.size() != s.units.size())
      throw ScenarioError(fmt::format("units.capacities lists {} values for {} units", values.size(),
                                      s.units.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
      s.units[i].g_max = values[i];
      try {
        market::check_unit(s.units[i]);
      } catch (const std::invalid_argument& e) {
        throw ScenarioError(e.what());
      }
    }
  }

  const auto& tr = root.get_child("training", empty);
  check_keys(tr, "training", {"episodes", "steps", "gamma", "lr_critic", "lr_actor", "tau",
                              "batch_size", "buffer_capacity", "noise_start", "noise_end", "init",
                              "initial_bid",
                              "gcn_widths", "head_widths"});
  auto& t = s.training;
  t.episodes = get_or(tr, "episodes", t.episodes);
  t.steps = get_or(tr, "steps", t.steps);
  t.agent.gamma = get_or(tr, "gamma", t.agent.gamma);
  t.agent.lr_critic = get_or(tr, "lr_critic", t.agent.lr_critic);
  t.agent.lr_actor = get_or(tr, "lr_actor", t.agent.lr_actor);
  t.agent.tau = get_or(tr, "tau", t.agent.tau);
  t.agent.batch_size = get_or(tr, "batch_size", t.agent.batch_size);
  t.agent.buffer_capacity = get_or(tr, "buffer_capacity", t.agent.buffer_capacity);
  t.agent.initial_bid = get_or(tr, "initial_bid", t.agent.initial_bid);
  t.noise_start = get_or(tr, "noise_start", t.noise_start);
  t.noise_end = get_or(tr, "noise_end", t.noise_end);
  const auto init = get_or<std::string>(tr, "init", "fan_in");
  if (init == "fan_in") {
    t.agent.init = nn::InitScheme::fan_in;
  } else if (init == "paper") {
    t.agent.init = nn::InitScheme::paper;
  } else {
    throw ScenarioError(fmt::format("training.init must be fan_in or paper, got '{}'", init));
  }
  auto widths = [&](const std::string& key, std::vector<nn::Index>& out) {
    if (auto w = tr.get_optional<std::string>(key)) {
      out.clear();
      for (double v : parse_doubles(*w, "training." + key)) {
        if (v < 1) throw ScenarioError(fmt::format("training.{} entries must be >= 1", key));
        out.push_back(static_cast<nn::Index>(v));
      }
    }
  };
  widths("gcn_widths", t.agent.gcn_widths);
  widths("head_widths", t.agent.head_widths);

  const double g_lo = market::total_min(s.units);
  const double g_hi = market::total_max(s.units);
  const auto& dm = root.get_child("demand", empty);
  check_keys(dm, "demand", {"base", "amplitude", "jitter", "base_fraction", "amplitude_fraction",
                            "jitter_fraction", "period", "clamp"});
  s.demand.base = get_or(dm, "base", get_or(dm, "base_fraction", 0.6) * g_hi);
  s.demand.amplitude = get_or(dm, "amplitude", get_or(dm, "amplitude_fraction", 0.2) * g_hi);
  s.demand.jitter_sigma = get_or(dm, "jitter", get_or(dm, "jitter_fraction", 0.02) * g_hi);
  s.demand.period = get_or(dm, "period", 24.0);
  s.demand.clamp = get_or(dm, "clamp", true);
  s.demand.lower = g_lo;
  s.demand.upper = g_hi;

  const auto& fl = root.get_child("faults", empty);
  check_keys(fl, "faults", {"ambiguous_pairs"});
  if (auto pairs = fl.get_optional<std::string>("ambiguous_pairs")) {
    try {
      s.ten_line_pairs = grid::parse_line_list(*pairs);
    } catch (const grid::GridError& e) {
      throw ScenarioError(e.what());
    }
  }

  const auto& md = root.get_child("method", empty);
  check_keys(md, "method", {"type"});
  try {
    s.method = rl::parse_method(get_or<std::string>(md, "type", "gcn"));
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(e.what());
  }

  const auto& sd = root.get_child("seeds", empty);
  check_keys(sd, "seeds", {"base", "demand", "agents"});
  s.agent_seed_base = get_or<std::uint64_t>(sd, "base", 1);
  s.demand.seed = get_or<std::uint64_t>(sd, "demand", 1000);
  if (auto a = sd.get_optional<std::string>("agents")) s.agent_seeds = parse_seeds(*a);

  const auto& ev = root.get_child("evaluation", empty);
  check_keys(ev, "evaluation", {"episodes"});
  s.eval_episodes = get_or(ev, "episodes", 1);

  if (auto sc = root.get_child_optional("scales")) {
    check_keys(*sc, "scales", {"price", "demand", "reward"});
    rl::Scales def = rl::default_scales(s.units);
    s.scales = rl::Scales{get_or(*sc, "price", def.price), get_or(*sc, "demand", def.demand),
                          get_or(*sc, "reward", def.reward)};
  }

  const auto& rp = root.get_child("reporting", empty);
  check_keys(rp, "reporting", {"subtract_fixed_cost"});
  s.subtract_fixed_cost = get_or(rp, "subtract_fixed_cost", false);

  s.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(fmt::format("cannot open scenario file {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path.parent_path(), path.stem().string());
}

std::vector<grid::Line> fault_lines(int fault_id, const Scenario& base) {
  auto lines = [](std::initializer_list<std::pair<int, int>> pairs) {
    std::vector<grid::Line> out;
    for (auto [a, b] : pairs) out.push_back(grid::Line::make(a - 1, b - 1));
    return out;
  };
  switch (fault_id) {
    case 3:
      return lines({{3, 4}, {8, 6}, {10, 21}});
    case 5:
      return lines({{3, 4}, {7, 6}, {16, 17}, {10, 21}, {24, 25}});
    case 10: {
      auto out = lines({{1, 2}, {3, 4}});
      out.insert(out.end(), base.ten_line_pairs.begin(), base.ten_line_pairs.end());
      auto rest = lines({{1, 3}, {2, 4}, {4, 12}, {29, 30}, {27, 28}, {19, 20}});
      out.insert(out.end(), rest.begin(), rest.end());
      return out;
    }
    default:
      throw ScenarioError(fmt::format("unknown fault id {} (expected 3, 5 or 10)", fault_id));
  }
}

Scenario apply_fault_scenario(const Scenario& base, int fault_id) {
  auto removed = fault_lines(fault_id, base);
  if (base.base_topology.n_buses() != 30)
    throw ScenarioError("fault scenarios are defined on the 30-bus system");
  Scenario s = base;
  s.name = fmt::format("{}_fault{}", base.name, fault_id);
  s.removed_lines = removed;
  try {
    s.topology = grid::remove_lines(base.base_topology, removed);
  } catch (const grid::GridError& e) {
    throw ScenarioError(e.what());
  }
  return s;
}

}  // namespace gcnbid::sim
