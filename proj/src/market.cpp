#include "gcnbid/market.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

namespace gcnbid::market {

void check_unit(const GenerationUnit& u) {
  if (!(u.g_min >= 0.0 && u.g_min <= u.g_max))
    throw std::invalid_argument(fmt::format("unit {}: need 0 <= g_min <= g_max", u.id + 1));
  if (!(u.marginal_cost > 0.0))
    throw std::invalid_argument(fmt::format("unit {}: marginal cost must be positive", u.id + 1));
  if (!(u.k_max >= 1.0))
    throw std::invalid_argument(fmt::format("unit {}: k_max must be >= 1", u.id + 1));
}

std::vector<BidViolation> validate_bids(const std::vector<GenerationUnit>& units,
                                        const std::vector<double>& bids) {
  std::vector<BidViolation> out;
  if (units.size() != bids.size()) {
    out.push_back({-1, static_cast<double>(bids.size()), static_cast<double>(units.size())});
    return out;
  }
  for (std::size_t i = 0; i < units.size(); ++i) {
    // negated form also rejects NaN
    if (!(bids[i] >= 1.0 && bids[i] <= units[i].k_max))
      out.push_back({static_cast<int>(i), bids[i], units[i].k_max});
  }
  return out;
}

double total_min(const std::vector<GenerationUnit>& units) {
  return std::accumulate(units.begin(), units.end(), 0.0,
                         [](double s, const GenerationUnit& u) { return s + u.g_min; });
}

double total_max(const std::vector<GenerationUnit>& units) {
  return std::accumulate(units.begin(), units.end(), 0.0,
                         [](double s, const GenerationUnit& u) { return s + u.g_max; });
}

ClearingResult clear_market(const std::vector<GenerationUnit>& units,
                            const std::vector<double>& bids, double demand) {
  if (auto bad = validate_bids(units, bids); !bad.empty()) {
    const auto& v = bad.front();
    if (v.unit < 0)
      throw ClearingError(ClearingError::Kind::invalid_bid,
                          fmt::format("{} bids for {} units", bids.size(), units.size()));
    throw ClearingError(ClearingError::Kind::invalid_bid,
                        fmt::format("unit {} bid {} outside [1, {}]", v.unit + 1, v.bid, v.k_max));
  }
  if (units.empty()) throw ClearingError(ClearingError::Kind::infeasible_high, "no units");

  const double lo = total_min(units);
  const double hi = total_max(units);
  if (demand < lo)
    throw ClearingError(ClearingError::Kind::infeasible_low,
                        fmt::format("demand {} below total minimum generation {}", demand, lo));
  if (demand > hi)
    throw ClearingError(ClearingError::Kind::infeasible_high,
                        fmt::format("demand {} above total capacity {}", demand, hi));

  const std::size_t n = units.size();
  std::vector<double> effective(n);
  for (std::size_t i = 0; i < n; ++i) effective[i] = bids[i] * units[i].marginal_cost;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return effective[a] < effective[b]; });

  ClearingResult res;
  res.dispatch.resize(n);
  for (std::size_t i = 0; i < n; ++i) res.dispatch[i] = units[i].g_min;

  double residual = demand - lo;
  for (std::size_t idx : order) {
    if (residual <= 0.0) break;
    const double room = units[idx].g_max - units[idx].g_min;
    if (room <= 0.0) continue;
    if (room <= residual) {
      res.dispatch[idx] = units[idx].g_max;
      residual -= room;
    } else {
      res.dispatch[idx] += residual;
      residual = 0.0;
    }
    res.marginal_unit = static_cast<int>(idx);
  }
  // marginal dispatch re-derived from the balance row to absorb rounding
  if (res.marginal_unit) {
    const int m = *res.marginal_unit;
    double others = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (static_cast<int>(i) != m) others += res.dispatch[i];
    res.dispatch[m] = std::clamp(demand - others, units[m].g_min, units[m].g_max);
    res.price = effective[m];
  } else {
    res.price = *std::min_element(effective.begin(), effective.end());
  }

  for (std::size_t i = 0; i < n; ++i) res.total_cost += effective[i] * res.dispatch[i];
  return res;
}

double compute_reward(const GenerationUnit& unit, double price, double dispatch) {
  return (price - unit.marginal_cost) * dispatch;
}

namespace {

std::vector<std::string> split_csv(const std::string& row) {
  std::vector<std::string> out;
  std::istringstream in(row);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    auto first = cell.find_first_not_of(" \t\r");
    auto last = cell.find_last_not_of(" \t\r");
    out.push_back(first == std::string::npos ? "" : cell.substr(first, last - first + 1));
  }
  return out;
}

}  // namespace

std::vector<GenerationUnit> parse_units_csv(const std::string& text) {
  static const std::vector<std::string> kHeader{"id",    "marginal_cost", "g_min", "g_max",
                                                "k_max", "fixed_cost",    "bus"};
  std::istringstream in(text);
  std::string row;
  std::size_t line_no = 0;
  bool seen_header = false;
  std::vector<GenerationUnit> units;
  while (std::getline(in, row)) {
    ++line_no;
    if (row.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (row[row.find_first_not_of(" \t")] == '#') continue;
    auto cells = split_csv(row);
    if (!seen_header) {
      if (cells != kHeader)
        throw std::invalid_argument(
            fmt::format("line {}: expected header {}", line_no, fmt::join(kHeader, ",")));
      seen_header = true;
      continue;
    }
    if (cells.size() != kHeader.size())
      throw std::invalid_argument(fmt::format("line {}: expected 7 fields", line_no));
    GenerationUnit u;
    try {
      u.id = std::stoi(cells[0]) - 1;
      u.marginal_cost = std::stod(cells[1]);
      u.g_min = std::stod(cells[2]);
      u.g_max = std::stod(cells[3]);
      u.k_max = std::stod(cells[4]);
      u.fixed_cost = std::stod(cells[5]);
      u.bus = std::stoi(cells[6]) - 1;
    } catch (const std::exception&) {
      throw std::invalid_argument(fmt::format("line {}: malformed number", line_no));
    }
    if (u.id != static_cast<int>(units.size()))
      throw std::invalid_argument(
          fmt::format("line {}: unit ids must be consecutive from 1", line_no));
    try {
      check_unit(u);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(fmt::format("line {}: {}", line_no, e.what()));
    }
    units.push_back(u);
  }
  if (!seen_header) throw std::invalid_argument("units file has no header");
  return units;
}

std::vector<GenerationUnit> load_units(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument(fmt::format("cannot open units file {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_units_csv(buf.str());
}

}  // namespace gcnbid::market
