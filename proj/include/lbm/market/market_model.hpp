#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "lbm/core/rng.hpp"
#include "lbm/market/types.hpp"

namespace lbm::market {

// Parameters of the synthetic impression stream. Competing bids are log-normal
// around a market CPA whose log-scale drifts sinusoidally over the day.
struct MarketParams {
  int num_competitors = 3;
  double value_alpha = 0.6;  // Beta(alpha, beta) impression values
  double value_beta = 12.0;
  double market_cpa = 10.0;
  double bid_log_sigma = 0.6;
  double drift_amplitude = 0.35;  // amplitude of the log-scale drift
  double drift_phase = 0.0;
  double competitor_value_corr = 0.3;  // weight of the true value in competitors' estimates
  double traffic_amplitude = 0.3;      // relative swing of opportunities per interval
  bool perf_is_value = true;           // CPA constraint perf p_i1 = v_i (else constant 1)
};

// Shape of the day: multiplier on impressions_per_step for interval t.
inline double traffic_multiplier(const MarketParams& p, int t, int num_steps) {
  const double phase = 2.0 * std::numbers::pi * (t + 0.5) / num_steps;
  return 1.0 + p.traffic_amplitude * std::sin(phase - std::numbers::pi / 2.0);
}

inline int expected_impressions(const MarketParams& p, int impressions_per_step, int t, int num_steps) {
  if (t >= num_steps) return 0;
  return static_cast<int>(std::lround(impressions_per_step * traffic_multiplier(p, t, num_steps)));
}

// Yields the opportunities of one interval.
using ImpressionSource = std::function<std::vector<ImpressionOpportunity>(int step, Rng& rng)>;

inline ImpressionSource synthetic_market(MarketParams p, int impressions_per_step, int num_steps) {
  return [p, impressions_per_step, num_steps](int t, Rng& rng) {
    const int n = expected_impressions(p, impressions_per_step, t, num_steps);
    std::gamma_distribution<double> ga(p.value_alpha, 1.0), gb(p.value_beta, 1.0);
    const double drift =
        p.drift_amplitude * std::sin(2.0 * std::numbers::pi * t / num_steps + p.drift_phase);
    std::lognormal_distribution<double> noise(drift, p.bid_log_sigma);
    std::vector<ImpressionOpportunity> out(static_cast<std::size_t>(n));
    for (auto& opp : out) {
      const double x = ga(rng), y = gb(rng);
      opp.value = (x + y) > 0.0 ? x / (x + y) : 0.0;
      opp.competitor_bids.resize(static_cast<std::size_t>(p.num_competitors));
      for (auto& b : opp.competitor_bids) {
        const double xo = ga(rng), yo = gb(rng);
        const double own = (xo + yo) > 0.0 ? xo / (xo + yo) : 0.0;
        const double est = p.competitor_value_corr * opp.value + (1.0 - p.competitor_value_corr) * own;
        b = p.market_cpa * est * noise(rng);
      }
      if (p.perf_is_value) opp.constraint_perf = {opp.value};
    }
    return out;
  };
}

}  // namespace lbm::market
