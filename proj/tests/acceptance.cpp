// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gcnbid/checkpoint.hpp"
#include "gcnbid/cli.hpp"
#include "gcnbid/diagnostics.hpp"
#include "gcnbid/grid.hpp"
#include "gcnbid/market.hpp"
#include "gcnbid/scenario.hpp"
#include "gcnbid/sim.hpp"
#include "lp_oracle.hpp"

using namespace gcnbid;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = GCNBID_SOURCE_DIR;
const fs::path kData = kSource / "data";

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

struct CliRun {
  int status = 0;
  std::string out;
  std::string err;
};

CliRun gcnbid(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int status = cli::run(args, out, err);
  return {status, out.str(), err.str()};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) rows.push_back(line);
  return rows;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::istringstream in(line);
  for (std::string cell; std::getline(in, cell, ',');) cells.push_back(cell);
  return cells;
}

// Copies a shipped scenario with absolute data paths and optional overrides of
// keys inside the training block.
fs::path scenario_copy(const fs::path& dir, const std::string& shipped,
                       const std::map<std::string, std::string>& training = {},
                       const std::string& rename = "") {
  std::string text = slurp(kSource / "scenarios" / (shipped + ".cfg"));
  text = std::regex_replace(text, std::regex(R"(\.\./data/)"), (kData / "").string());
  for (const auto& [key, value] : training) {
    const std::regex line("(\\n\\s+)" + key + " [^\\n]*");
    if (std::regex_search(text, line)) {
      text = std::regex_replace(text, line, "$1" + key + " " + value);
    } else if (text.find("\ntraining\n{") != std::string::npos) {
      text = std::regex_replace(text, std::regex("\\ntraining\\n\\{"), "\ntraining\n{\n    " + key + " " + value);
    } else {
      text += "\ntraining\n{\n    " + key + " " + value + "\n}\n";
    }
  }
  if (!rename.empty()) text = std::regex_replace(text, std::regex("\\nname [^\\n]*"), "\nname " + rename);
  const fs::path path = dir / ((rename.empty() ? shipped : rename) + ".cfg");
  spit(path, text);
  return path;
}

// ---------------------------------------------------------------------------

Verdict clearing_oracle() {
  std::mt19937_64 rng(20240611);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  Stopwatch clock;
  double worst_cost = 0.0, worst_price = 0.0;
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 10)(rng);
    std::vector<market::GenerationUnit> units;
    std::vector<double> bids;
    for (int i = 0; i < n; ++i) {
      market::GenerationUnit g{i, u(0.5, 5.0), u(0.0, 20.0), 0.0, u(1.0, 3.0), 0.0, 0};
      g.g_max = g.g_min + u(1.0, 100.0);
      units.push_back(g);
      bids.push_back(u(1.0, g.k_max));
    }
    const double demand = u(market::total_min(units), market::total_max(units));
    const auto r = market::clear_market(units, bids, demand);
    const auto lp = oracle::solve_by_vertex_enumeration(units, bids, demand);
    if (!lp) {
      ++mismatches;
      continue;
    }
    const double dc = std::abs(r.total_cost - lp->cost);
    const double dp = std::max({0.0, lp->dual_lo - r.price, r.price - lp->dual_hi});
    worst_cost = std::max(worst_cost, dc);
    worst_price = std::max(worst_price, dp);
    if (dc > 1e-9 || dp > 1e-9) ++mismatches;
  }
  const double t = clock.seconds();
  return {mismatches == 0 && t < 10.0,
          fmt::format("1000 instances, {} mismatches, max |cost diff| {:.2e}, max price gap {:.2e}, {:.2f} s",
                      mismatches, worst_cost, worst_price, t)};
}

Verdict worked_dispatch() {
  const auto units = market::load_units(kData / "units30.csv");
  const auto r = market::clear_market(units, std::vector<double>(units.size(), 1.0), 150.0);
  const std::vector<double> expected{5, 80, 50, 5, 5, 5};
  return {r.price == 1.75 && r.dispatch == expected,
          fmt::format("price {}, dispatch [{}]", r.price, fmt::join(r.dispatch, ","))};
}

Verdict normalization() {
  const auto topo = grid::load_case(kData / "case30.txt");
  const auto s = grid::normalize_adjacency(grid::build_adjacency(topo)).dense();
  const int n = topo.n_buses();
  std::vector<std::vector<double>> a_hat(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) a_hat[i][i] = 1.0;
  for (const auto& l : topo.lines()) a_hat[l.a][l.b] = a_hat[l.b][l.a] = 1.0;
  std::vector<double> degree(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) degree[i] += a_hat[i][j];
  double formula = 0.0, asym = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      formula = std::max(formula, std::abs(s(i, j) - a_hat[i][j] / std::sqrt(degree[i] * degree[j])));
      asym = std::max(asym, std::abs(s(i, j) - s(j, i)));
    }
  return {n == 30 && s.rows() == 30 && formula <= 1e-12 && asym <= 1e-12,
          fmt::format("{} buses, {} lines, max formula error {:.1e}, max asymmetry {:.1e}", n,
                      topo.lines().size(), formula, asym)};
}

Verdict gradient_fidelity() {
  Stopwatch clock;
  const auto cases = diagnostics::run_gradcheck_suite(100, 7);
  const double t = clock.seconds();
  bool ok = t < 60.0;
  std::string detail;
  for (const auto& c : cases) {
    const double limit = c.name.find("linear") != std::string::npos ? 1e-8 : 1e-4;
    ok &= c.configs == 100 && c.max_error < limit && c.passed();
    detail += fmt::format("{} {:.1e}, ", c.name, c.max_error);
  }
  return {ok, detail + fmt::format("{:.2f} s", t)};
}

// One large strategic unit is always marginal; two small units with k_max = 1
// form a fringe whose bid is pinned at 1 and which is always fully dispatched.
Verdict monopoly(const fs::path& dir) {
  spit(dir / "monopoly_units.csv",
       "id,marginal_cost,g_min,g_max,k_max,fixed_cost,bus\n"
       "1,1,0,300,2,0,1\n2,0.5,0,20,1,0,2\n3,0.5,0,20,1,0,5\n");
  const std::string cfg = "name monopoly\n"
                          "topology\n{\n    case " + (kData / "case30.txt").string() + "\n}\n"
                          "units\n{\n    file " + (dir / "monopoly_units.csv").string() + "\n}\n"
                          "training\n{\n    episodes 20\n    steps 360\n}\n"
                          "demand\n{\n    base 150\n    amplitude 40\n    jitter 3\n}\n";
  const auto scenario = sim::parse_scenario(cfg, dir, "monopoly");
  Stopwatch clock;
  int hits = 0;
  std::string bids;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto s = scenario;
    s.agent_seed_base = seed;
    const auto result = sim::run_training(s);
    const double final_bid = result.logs.back().avg_bid[0];
    if (final_bid >= 0.95 * s.units[0].k_max) ++hits;
    bids += fmt::format("{}seed {}: {:.4f}", bids.empty() ? "" : ", ", seed, final_bid);
  }
  const double t = clock.seconds();
  return {hits >= 2 && t < 300.0,
          fmt::format("final-episode mean bid ({}), threshold 1.9, {}/3 seeds, {:.0f} s", bids, hits, t)};
}

struct SeedMetrics {
  double first5 = 0, last5 = 0, mean = 0;
};

std::map<std::uint64_t, SeedMetrics> parse_train_output(const std::string& out) {
  std::map<std::uint64_t, SeedMetrics> m;
  for (const auto& line : lines_of(out)) {
    const auto c = split(line);
    if (c.size() != 6) continue;
    m[std::stoull(c[2])] = {std::stod(c[3]), std::stod(c[4]), std::stod(c[5])};
  }
  return m;
}

Verdict paper_trends(const fs::path& dir) {
  Stopwatch clock;
  const auto s1 = scenario_copy(dir, "30bus_s1");
  const auto s2 = scenario_copy(dir, "30bus_s2");
  const auto r1 = gcnbid({"train", s1.string(), "--seeds", "1,2,3", "--out", (dir / "runs").string()});
  const auto r2 = gcnbid({"train", s2.string(), "--seeds", "1,2,3", "--out", (dir / "runs").string()});
  const double t = clock.seconds();
  if (r1.status != 0 || r2.status != 0) return {false, "training failed: " + r1.err + r2.err};
  const auto m1 = parse_train_output(r1.out);
  const auto m2 = parse_train_output(r2.out);
  int improves = 0, capacity = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto& a = m1.at(seed);
    const auto& b = m2.at(seed);
    improves += a.last5 > a.first5;
    capacity += b.last5 > a.last5;
    detail += fmt::format("seed {}: s1 first5 {:.2f} last5 {:.2f}, s2 last5 {:.2f}; ", seed, a.first5, a.last5,
                          b.last5);
  }
  return {improves >= 2 && capacity >= 2 && t < 1800.0,
          detail + fmt::format("(a) {}/3, (b) {}/3, {:.0f} s", improves, capacity, t)};
}

Verdict transfer(const fs::path& dir) {
  const auto runs = (dir / "runs").string();
  const auto gcn_ckpt = dir / "runs/30bus_s1/seed_1/checkpoint.json";
  if (!fs::exists(gcn_ckpt)) return {false, "no 30-bus GCN checkpoint (criterion 6 did not train)"};
  const auto s1 = scenario_copy(dir, "30bus_s1", {}, "30bus_s1_mlp");
  const auto mlp = gcnbid({"train", s1.string(), "--method", "mlp", "--seed", "1", "--out", runs});
  if (mlp.status != 0) return {false, "mlp training failed: " + mlp.err};
  const auto mlp_ckpt = dir / "runs/30bus_s1_mlp/checkpoint.json";

  // structural node-count independence: the 39-bus encoder accepts the stored
  // networks as they are
  const auto ckpt = checkpoint::load(gcn_ckpt);
  const auto s39 = sim::load_scenario(scenario_copy(dir, "39bus"));
  rl::Encoder enc39(rl::Method::gcn, s39.topology, s39.units, s39.effective_scales());
  bool shapes = enc39.rows_per_sample() == 39;
  for (const auto& a : ckpt.agents)
    shapes &= a.actor.input_width() == enc39.actor_width() && a.critic.input_width() == enc39.critic_width();

  Stopwatch clock;
  const auto r = gcnbid({"transfer", (dir / "39bus.cfg").string(), "--checkpoint", gcn_ckpt.string(),
                         "--checkpoint", mlp_ckpt.string(), "--out", runs});
  const double t = clock.seconds();
  const auto rows = lines_of(slurp(dir / "runs/39bus_transfer/comparison.csv"));
  const bool csv = rows.size() == 3 && rows[0] == "method,avg_profit" && rows[1].rfind("gcn,", 0) == 0 &&
                   rows[2].rfind("mlp,", 0) == 0;
  return {r.status == 0 && shapes && csv && t < 120.0,
          fmt::format("status {}, 39-node input accepted without reshaping: {}, comparison.csv [{}], {:.1f} s",
                      r.status, shapes ? "yes" : "no", fmt::join(rows, " | "), t)};
}

Verdict faults(const fs::path& dir) {
  const auto base = sim::load_scenario(dir / "30bus_s1.cfg");
  const std::map<int, std::vector<std::pair<int, int>>> expected{
      {3, {{3, 4}, {8, 6}, {10, 21}}},
      {5, {{3, 4}, {7, 6}, {16, 17}, {10, 21}, {24, 25}}},
      {10, {{1, 2}, {3, 4}, {4, 6}, {2, 5}, {1, 3}, {2, 4}, {4, 12}, {29, 30}, {27, 28}, {19, 20}}}};
  bool ok = true;
  std::string detail;
  for (const auto& [id, pairs] : expected) {
    const auto f = sim::apply_fault_scenario(base, id);
    std::set<grid::Line> want;
    for (auto [a, b] : pairs) want.insert(grid::Line::make(a - 1, b - 1));
    const std::set<grid::Line> got(f.removed_lines.begin(), f.removed_lines.end());
    const auto drop = base.topology.lines().size() - f.topology.lines().size();
    ok &= drop == static_cast<std::size_t>(id) && got == want;
    for (const auto& l : want) ok &= !f.topology.has_line(l);
    detail += fmt::format("fault {}: {} -> {} lines; ", id, base.topology.lines().size(), f.topology.lines().size());
  }
  const auto r = gcnbid({"fault", (dir / "30bus_s1.cfg").string(), "--checkpoint",
                         (dir / "runs/30bus_s1/seed_1/checkpoint.json").string(), "--checkpoint",
                         (dir / "runs/30bus_s1_mlp/checkpoint.json").string(), "--out", (dir / "runs").string()});
  const auto rows = lines_of(slurp(dir / "runs/30bus_s1_faults/table.csv"));
  bool table = r.status == 0 && rows.size() == 7 && rows[0] == "n_disconnected,method,avg_profit";
  for (std::size_t i = 1; table && i < rows.size(); ++i) table &= split(rows[i]).size() == 3;
  return {ok && table, detail + fmt::format("table.csv {} data rows", rows.empty() ? 0 : rows.size() - 1)};
}

std::vector<fs::path> csv_files(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && (e.path().extension() == ".csv" || e.path().filename() == "checkpoint.json"))
      files.push_back(fs::relative(e.path(), root));
  std::sort(files.begin(), files.end());
  return files;
}

Verdict determinism(const fs::path& dir) {
  const auto short_run = scenario_copy(dir, "30bus_s1", {{"episodes", "3"}, {"steps", "48"}}, "det30");
  const auto gcn_ckpt = (dir / "runs/30bus_s1/seed_1/checkpoint.json").string();
  const auto mlp_ckpt = (dir / "runs/30bus_s1_mlp/checkpoint.json").string();
  for (const char* pass : {"a", "b"}) {
    const auto out = (dir / "determinism" / pass).string();
    gcnbid({"train", short_run.string(), "--seeds", "1,2", "--out", out});
    gcnbid({"eval", short_run.string(), "--checkpoint", gcn_ckpt, "--out", out});
    gcnbid({"transfer", (dir / "39bus.cfg").string(), "--checkpoint", gcn_ckpt, "--checkpoint", mlp_ckpt, "--out", out});
    gcnbid({"fault", (dir / "30bus_s1.cfg").string(), "--checkpoint", gcn_ckpt, "--fault", "3", "--out", out});
  }
  const auto a = csv_files(dir / "determinism/a");
  const auto b = csv_files(dir / "determinism/b");
  int differ = 0;
  for (const auto& f : a)
    if (slurp(dir / "determinism/a" / f) != slurp(dir / "determinism/b" / f)) ++differ;
  return {a == b && differ == 0 && a.size() >= 10,
          fmt::format("{} files compared across train/eval/transfer/fault reruns, {} differ", a.size(), differ)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string out_dir;
  std::vector<int> only;
  app.add_option("--out", out_dir, "working directory (default: a fresh temporary directory)");
  app.add_option("--only", only, "run only these criteria (6-9 depend on each other's artifacts)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path dir = out_dir.empty() ? fs::temp_directory_path() / "gcnbid_acceptance" : fs::path(out_dir);
  if (out_dir.empty()) fs::remove_all(dir);
  fs::create_directories(dir);
  scenario_copy(dir, "30bus_s1");
  scenario_copy(dir, "39bus");

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"clearing matches LP oracle", clearing_oracle},
      {"worked dispatch", worked_dispatch},
      {"GCN normalization", normalization},
      {"gradient fidelity", gradient_fidelity},
      {"monopoly convergence", [&] { return monopoly(dir); }},
      {"training trends", [&] { return paper_trends(dir); }},
      {"transfer 30 -> 39 buses", [&] { return transfer(dir); }},
      {"fault harness", [&] { return faults(dir); }},
      {"determinism", [&] { return determinism(dir); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, fmt::format("exception: {}", e.what())};
    }
    failed += !v.pass;
    std::printf("criterion %d (%s): %s: %s\n", number, criteria[i].first.c_str(), v.pass ? "PASS" : "FAIL",
                v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
