#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcnbid::market {

struct GenerationUnit {
  int id = 0;                 // 0-based
  double marginal_cost = 0;   // currency / MWh
  double g_min = 0;           // MW
  double g_max = 0;           // MW
  double k_max = 1;           // bid cap
  double fixed_cost = 0;      // carried, not used by clearing or reward
  int bus = 0;                // 0-based
};

/// Throws std::invalid_argument if the unit violates its parameter bounds.
void check_unit(const GenerationUnit& unit);

struct ClearingResult {
  std::vector<double> dispatch;
  double price = 0;
  double total_cost = 0;
  std::optional<int> marginal_unit;
};

class ClearingError : public std::runtime_error {
 public:
  enum class Kind { infeasible_low, infeasible_high, invalid_bid };
  ClearingError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct BidViolation {
  int unit = 0;
  double bid = 0;
  double k_max = 0;
};

/// Every unit whose bid lies outside [1, k_max], plus a size mismatch as unit -1.
std::vector<BidViolation> validate_bids(const std::vector<GenerationUnit>& units,
                                        const std::vector<double>& bids);

/// Solves  min sum_i k_i c_i g_i  s.t.  sum_i g_i = demand,  g_min <= g <= g_max
/// by merit order. The price is the effective bid of the marginal unit (the
/// last one receiving residual demand, ties by ascending id); when demand
/// equals sum g_min the price is the lowest effective bid.
ClearingResult clear_market(const std::vector<GenerationUnit>& units,
                            const std::vector<double>& bids, double demand);

/// price * g - marginal_cost * g
double compute_reward(const GenerationUnit& unit, double price, double dispatch);

double total_min(const std::vector<GenerationUnit>& units);
double total_max(const std::vector<GenerationUnit>& units);

/// CSV with header id,marginal_cost,g_min,g_max,k_max,fixed_cost,bus; ids and
/// buses 1-based in the file. Lines starting with '#' are skipped.
std::vector<GenerationUnit> parse_units_csv(const std::string& text);
std::vector<GenerationUnit> load_units(const std::filesystem::path& path);

}  // namespace gcnbid::market
