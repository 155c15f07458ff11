#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lbm/core/error.hpp"
#include "lbm/core/hash.hpp"

namespace lbm::market {

struct ImpressionOpportunity {
  double value = 0.0;                   // predicted conversion value v_i, in [0, 1]
  std::vector<double> competitor_bids;  // non-empty, all >= 0
  std::vector<double> constraint_perf;  // p_ij per constraint; empty means constant 1

  double perf(std::size_t j) const { return j < constraint_perf.size() ? constraint_perf[j] : 1.0; }

  void validate() const {
    if (!(value >= 0.0 && value <= 1.0)) throw InvalidArgument("impression value outside [0, 1]");
    if (competitor_bids.empty()) throw InvalidArgument("invalid opportunity: no competitor bids");
    for (double b : competitor_bids)
      if (!(b >= 0.0)) throw InvalidArgument("invalid opportunity: negative competitor bid");
  }
};

struct AuctionOutcome {
  bool won = false;
  double cost = 0.0;
  double conversion_value = 0.0;
};

struct EpisodeConfig {
  double budget = 10000.0;
  double cpa_constraint = 8.0;
  int num_steps = 48;
  int impressions_per_step = 1000;
  bool sparse_mode = false;
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (!(budget > 0.0)) throw InvalidArgument("budget must be positive");
    if (!(cpa_constraint > 0.0)) throw InvalidArgument("cpa constraint must be positive");
    if (num_steps < 1) throw InvalidArgument("num_steps must be >= 1");
    if (impressions_per_step < 0) throw InvalidArgument("impressions_per_step must be >= 0");
  }
};

// Frozen 16-feature roster. Order is part of the dataset and checkpoint format.
inline constexpr std::size_t kStateDim = 16;

inline constexpr std::array<std::string_view, kStateDim> kFeatureRoster = {
    "time_left",              // fraction of intervals remaining
    "budget_left",            // fraction of budget remaining
    "budget_consumption_speed",  // last interval spend / (B / T)
    "current_cpa_ratio",      // (total cost / total conversions) / C, sentinel when no conversions
    "cumulative_conversions",
    "cumulative_cost",
    "last_action",
    "mean_impression_value",  // last interval
    "impression_count_forecast",  // expected opportunities in the coming interval
    "win_rate_recent",        // last interval
    "last_interval_conversions",
    "last_interval_cost",
    "mean_win_cost_recent",   // last interval cost per won impression
    "mean_market_price_recent",  // last interval mean highest competing bid
    "win_rate_3",             // 3-interval rolling mean
    "consumption_speed_3",    // 3-interval rolling mean
};

namespace feature {
enum : std::size_t {
  time_left = 0,
  budget_left,
  budget_consumption_speed,
  current_cpa_ratio,
  cumulative_conversions,
  cumulative_cost,
  last_action,
  mean_impression_value,
  impression_count_forecast,
  win_rate_recent,
  last_interval_conversions,
  last_interval_cost,
  mean_win_cost_recent,
  mean_market_price_recent,
  win_rate_3,
  consumption_speed_3,
};
}  // namespace feature

inline std::uint64_t roster_hash() {
  std::uint64_t h = fnv1a64("roster-v1");
  for (auto name : kFeatureRoster) h = fnv1a64(name, fnv1a64("|", h));
  return h;
}

using EpisodeState = std::array<double, kStateDim>;

struct TrajectoryMeta {
  std::uint64_t id = 0;
  double budget = 0.0;
  double cpa_constraint = 0.0;
  std::uint64_t seed = 0;
  std::string policy;
  int period = 0;
};

// One episode of T interval decisions. costs/conversions are per interval and
// feed the CPA-aware return reweighting.
struct Trajectory {
  TrajectoryMeta meta;
  std::vector<std::array<float, kStateDim>> states;
  std::vector<float> actions;
  std::vector<float> rewards;
  std::vector<float> returns_to_go;
  std::vector<float> costs;

  std::size_t length() const { return actions.size(); }

  void validate() const {
    const auto n = actions.size();
    if (states.size() != n || rewards.size() != n || returns_to_go.size() != n || costs.size() != n)
      throw InvalidArgument("trajectory field lengths disagree");
  }
};

// R_t = sum_{i >= t} r_i, accumulated in double then stored as float.
inline std::vector<float> plain_returns_to_go(const std::vector<float>& rewards) {
  std::vector<float> out(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc += rewards[i];
    out[i] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace lbm::market
