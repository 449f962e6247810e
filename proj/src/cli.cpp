#include "gcnbid/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "gcnbid/checkpoint.hpp"
#include "gcnbid/diagnostics.hpp"
#include "gcnbid/market.hpp"
#include "gcnbid/scenario.hpp"
#include "gcnbid/sim.hpp"

namespace gcnbid::cli {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kToolVersion = "1.0.0";

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

namespace {

struct Exit {
  int status;
  std::string message;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Exit{kBadInput, fmt::format("cannot read {}", p.string())};
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Exit{kFailure, fmt::format("cannot write {}", p.string())};
  out << text;
}

fs::path output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("GCNBID_OUT"); env && *env) return env;
  return "runs";
}

sim::Scenario load_scenario_or_exit(const std::string& path) {
  if (path.empty()) throw Exit{kBadInput, "a scenario file is required (--scenario)"};
  try {
    return sim::load_scenario(path);
  } catch (const sim::ScenarioError& e) {
    throw Exit{kBadInput, e.what()};
  }
}

checkpoint::Checkpoint load_checkpoint_or_exit(const std::string& path) {
  try {
    return checkpoint::load(path);
  } catch (const checkpoint::CheckpointError& e) {
    throw Exit{kCheckpoint, fmt::format("{}: {}", path, e.what())};
  }
}

json manifest(const std::string& command, const std::string& scenario_path, const sim::Scenario& s,
              const std::vector<std::string>& checkpoints) {
  json m{{"tool", "gcnbid"},
         {"version", kToolVersion},
         {"command", command},
         {"scenario", scenario_path},
         {"scenario_sha256", sha256_hex(read_file(scenario_path))},
         {"scenario_name", s.name},
         {"method", rl::to_string(s.method)},
         {"seeds", {{"agent_base", s.agent_seed_base}, {"demand", s.demand.seed}, {"agents", s.agent_seeds}}},
         {"checkpoints", json::array()}};
  for (const auto& c : checkpoints) m["checkpoints"].push_back({{"path", c}, {"sha256", sha256_hex(read_file(c))}});
  return m;
}

template <typename Fn>
auto guard_run(Fn&& fn) {
  try {
    return fn();
  } catch (const market::ClearingError& e) {
    throw Exit{kInfeasible, e.what()};
  }
}

void write_logs(const fs::path& dir, const std::string& suffix, const std::vector<sim::EpisodeLog>& logs) {
  std::ostringstream steps, summary;
  sim::write_steps_csv(steps, logs);
  sim::write_summary_csv(summary, logs);
  write_file(dir / fmt::format("steps{}.csv", suffix), steps.str());
  write_file(dir / fmt::format("summary{}.csv", suffix), summary.str());
}

std::vector<sim::EpisodeLog> evaluate_or_exit(const std::vector<rl::Agent>& agents, const sim::Scenario& s) {
  try {
    sim::check_feature_width(agents, s);
  } catch (const std::invalid_argument& e) {
    throw Exit{kCheckpoint, e.what()};
  }
  return guard_run([&] { return sim::run_evaluation(agents, s); });
}

struct Options {
  std::string scenario;
  std::string positional;
  std::string out;
  std::vector<std::string> checkpoints;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  std::string method;
  std::vector<int> faults;
  std::string units;
  std::string bids;
  double demand = 0;
  bool json = false;
  int configs = 100;
};

int cmd_train(const Options& o, bool seed_given, std::ostream& out, std::ostream& err) {
  const std::string path = o.scenario.empty() ? o.positional : o.scenario;
  sim::Scenario base = load_scenario_or_exit(path);
  if (!o.method.empty()) {
    try {
      base.method = rl::parse_method(o.method);
    } catch (const std::invalid_argument& e) {
      throw Exit{kBadInput, e.what()};
    }
  }
  std::vector<std::uint64_t> seeds = o.seeds;
  if (seeds.empty()) seeds.push_back(seed_given ? o.seed : base.agent_seed_base);

  const fs::path root = output_root(o.out) / base.name;
  for (std::uint64_t seed : seeds) {
    sim::Scenario s = base;
    if (seed != base.agent_seed_base || !o.seeds.empty() || seed_given) {
      s.agent_seed_base = seed;
      s.agent_seeds.clear();
    }
    const fs::path dir = seeds.size() > 1 ? root / fmt::format("seed_{}", seed) : root;
    fs::create_directories(dir);
    err << fmt::format("training {} ({}, seed {}) -> {}\n", s.name, rl::to_string(s.method), seed, dir.string());
    auto result = guard_run([&] { return sim::run_training(s); });

    write_logs(dir, "", result.logs);
    checkpoint::save(dir / "checkpoint.json", {s.method, s.name, result.agents});
    write_file(dir / "manifest.json", manifest("train", path, s, {}).dump(2) + "\n");

    const auto m = sim::compute_metrics(result.logs, s);
    fmt::print(out, "{},{},{},{},{},{}\n", s.name, rl::to_string(s.method), seed, m.first_window_profit,
               m.last_window_profit, m.mean_profit);
  }
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.checkpoints.size() != 1) throw Exit{kBadInput, "eval takes exactly one --checkpoint"};
  const std::string path = o.scenario.empty() ? o.positional : o.scenario;
  sim::Scenario s = load_scenario_or_exit(path);
  auto ckpt = load_checkpoint_or_exit(o.checkpoints.front());
  s.method = ckpt.method;
  auto logs = evaluate_or_exit(ckpt.agents, s);

  const fs::path dir = output_root(o.out) / fmt::format("{}_eval", s.name);
  fs::create_directories(dir);
  err << fmt::format("evaluating {} on {} -> {}\n", o.checkpoints.front(), s.name, dir.string());
  write_logs(dir, "", logs);
  write_file(dir / "manifest.json", manifest("eval", path, s, o.checkpoints).dump(2) + "\n");
  const auto m = sim::compute_metrics(logs, s);
  fmt::print(out, "{},{},{}\n", s.name, rl::to_string(s.method), m.mean_profit);
  return kOk;
}

int cmd_transfer(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.checkpoints.empty()) throw Exit{kBadInput, "transfer needs at least one --checkpoint"};
  const std::string path = o.scenario.empty() ? o.positional : o.scenario;
  const sim::Scenario target = load_scenario_or_exit(path);
  const fs::path dir = output_root(o.out) / fmt::format("{}_transfer", target.name);
  fs::create_directories(dir);

  std::string table = "method,avg_profit\n";
  std::map<std::string, int> seen;
  for (const auto& c : o.checkpoints) {
    auto ckpt = load_checkpoint_or_exit(c);
    sim::Scenario s = target;
    s.method = ckpt.method;
    auto logs = evaluate_or_exit(ckpt.agents, s);
    std::string label = rl::to_string(ckpt.method);
    if (int n = ++seen[label]; n > 1) label += fmt::format("_{}", n);
    err << fmt::format("transfer {} ({}) -> {}\n", c, label, target.name);
    write_logs(dir, "_" + label, logs);
    table += fmt::format("{},{}\n", label, sim::compute_metrics(logs, s).mean_profit);
  }
  write_file(dir / "comparison.csv", table);
  write_file(dir / "manifest.json", manifest("transfer", path, target, o.checkpoints).dump(2) + "\n");
  out << table;
  return kOk;
}

int cmd_fault(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.checkpoints.empty()) throw Exit{kBadInput, "fault needs at least one --checkpoint"};
  std::vector<int> ids = o.faults.empty() ? std::vector<int>{3, 5, 10} : o.faults;
  for (int id : ids)
    if (id != 3 && id != 5 && id != 10) throw Exit{kBadInput, fmt::format("unknown fault id {} (expected 3, 5 or 10)", id)};
  const std::string path = o.scenario.empty() ? o.positional : o.scenario;
  const sim::Scenario base = load_scenario_or_exit(path);

  std::vector<checkpoint::Checkpoint> ckpts;
  for (const auto& c : o.checkpoints) ckpts.push_back(load_checkpoint_or_exit(c));

  const fs::path dir = output_root(o.out) / fmt::format("{}_faults", base.name);
  fs::create_directories(dir);
  std::string table = "n_disconnected,method,avg_profit\n";
  for (int id : ids) {
    sim::Scenario faulted;
    try {
      faulted = sim::apply_fault_scenario(base, id);
    } catch (const sim::ScenarioError& e) {
      throw Exit{kBadInput, e.what()};
    }
    for (const auto& ckpt : ckpts) {
      faulted.method = ckpt.method;
      auto logs = evaluate_or_exit(ckpt.agents, faulted);
      const std::string label = rl::to_string(ckpt.method);
      err << fmt::format("fault {} ({}): {} lines removed\n", id, label, faulted.removed_lines.size());
      write_logs(dir, fmt::format("_fault{}_{}", id, label), logs);
      table += fmt::format("{},{},{}\n", faulted.removed_lines.size(), label,
                           sim::compute_metrics(logs, faulted).mean_profit);
    }
  }
  write_file(dir / "table.csv", table);
  write_file(dir / "manifest.json", manifest("fault", path, base, o.checkpoints).dump(2) + "\n");
  out << table;
  return kOk;
}

int cmd_clear(const Options& o, std::ostream& out) {
  std::vector<market::GenerationUnit> units;
  try {
    units = market::load_units(o.units);
  } catch (const std::invalid_argument& e) {
    throw Exit{kBadInput, e.what()};
  }
  std::vector<double> bids;
  std::istringstream in(o.bids);
  for (std::string tok; std::getline(in, tok, ',');) {
    try {
      bids.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw Exit{kBadInput, fmt::format("bad bid '{}'", tok)};
    }
  }
  if (bids.empty()) bids.assign(units.size(), 1.0);
  if (bids.size() == 1) bids.assign(units.size(), bids.front());

  market::ClearingResult r;
  try {
    r = market::clear_market(units, bids, o.demand);
  } catch (const market::ClearingError& e) {
    if (e.kind() == market::ClearingError::Kind::invalid_bid) throw Exit{kBadInput, e.what()};
    throw Exit{kInfeasible, fmt::format("infeasible: {}", e.what())};
  }
  if (o.json) {
    json j{{"price", r.price}, {"total_cost", r.total_cost}, {"dispatch", r.dispatch}, {"demand", o.demand}};
    j["marginal_unit"] = r.marginal_unit ? json(*r.marginal_unit + 1) : json(nullptr);
    out << j.dump() << "\n";
    return kOk;
  }
  fmt::print(out, "price {}\n", r.price);
  if (r.marginal_unit) fmt::print(out, "marginal_unit {}\n", *r.marginal_unit + 1);
  else fmt::print(out, "marginal_unit none\n");
  fmt::print(out, "total_cost {}\nunit,dispatch\n", r.total_cost);
  for (std::size_t i = 0; i < r.dispatch.size(); ++i) fmt::print(out, "{},{}\n", i + 1, r.dispatch[i]);
  return kOk;
}

int cmd_gradcheck(const Options& o, bool seed_given, std::ostream& out) {
  if (o.configs < 1) throw Exit{kBadInput, "--configs must be >= 1"};
  const auto cases = diagnostics::run_gradcheck_suite(o.configs, seed_given ? o.seed : 1);
  bool ok = true;
  out << "case,configs,max_rel_error,tolerance,status\n";
  for (const auto& c : cases) {
    fmt::print(out, "{},{},{:.3e},{:.0e},{}\n", c.name, c.configs, c.max_error, c.tolerance,
               c.passed() ? "pass" : "FAIL");
    ok &= c.passed();
  }
  return ok ? kOk : kFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-agent electricity-market bidding simulator with GCN actor-critic agents", "gcnbid"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "train agents on a scenario");
  auto* eval = app.add_subcommand("eval", "roll out a checkpoint on a scenario without learning");
  auto* transfer = app.add_subcommand("transfer", "evaluate checkpoints on another topology and compare methods");
  auto* fault = app.add_subcommand("fault", "evaluate checkpoints with line-disconnection faults");
  auto* clear = app.add_subcommand("clear", "clear the market once and print the result");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient diagnostics");

  CLI::Option* seed_opt = nullptr;
  for (auto* sub : {train, eval, transfer, fault}) {
    sub->add_option("scenario_file", o.positional, "scenario file");
    sub->add_option("--scenario", o.scenario, "scenario file");
    sub->add_option("--out", o.out, "output root (default: $GCNBID_OUT or ./runs)");
  }
  seed_opt = train->add_option("--seed", o.seed, "agent seed base");
  train->add_option("--seeds", o.seeds, "independent runs, one per seed")->delimiter(',');
  train->add_option("--method", o.method, "gcn or mlp")->check(CLI::IsMember({"gcn", "mlp"}));
  for (auto* sub : {eval, transfer, fault}) sub->add_option("--checkpoint", o.checkpoints, "checkpoint file");
  fault->add_option("--fault", o.faults, "fault id(s): 3, 5, 10 (default: all)")->delimiter(',');
  clear->add_option("--units", o.units, "unit parameter CSV")->required();
  clear->add_option("--bids", o.bids, "comma-separated bids, or one value for all (default 1)");
  clear->add_option("--demand", o.demand, "demand in MW")->required();
  clear->add_flag("--json", o.json, "machine-readable output");
  auto* gc_seed = gradcheck->add_option("--seed", o.seed, "random seed");
  gradcheck->add_option("--configs", o.configs, "random configurations per case");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    err << "error: " << msg << "\n" << "run with --help for usage\n";
    return kBadInput;
  }

  try {
    if (*train) return cmd_train(o, seed_opt->count() > 0, out, err);
    if (*eval) return cmd_eval(o, out, err);
    if (*transfer) return cmd_transfer(o, out, err);
    if (*fault) return cmd_fault(o, out, err);
    if (*clear) return cmd_clear(o, out);
    if (*gradcheck) return cmd_gradcheck(o, gc_seed->count() > 0, out);
  } catch (const Exit& e) {
    err << "error: " << e.message << "\n";
    return e.status;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kBadInput;
}

}  // namespace gcnbid::cli
