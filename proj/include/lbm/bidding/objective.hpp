#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "lbm/core/error.hpp"
#include "lbm/market/types.hpp"

namespace lbm::bidding {

struct BidParams {
  double lambda0 = 0.0;
  std::vector<double> lambdas;  // one per constraint j = 1..J

  void validate() const {
    if (!(lambda0 >= 0.0)) throw InvalidArgument("lambda0 must be non-negative");
    for (double l : lambdas)
      if (!(l >= 0.0)) throw InvalidArgument("lambda_j must be non-negative");
  }
};

// b* = lambda0 * v + sum_j lambda_j * p_ij * C_j
inline double compute_bid(const BidParams& params, const market::ImpressionOpportunity& opp,
                          std::span<const double> constraints) {
  if (params.lambdas.size() != constraints.size())
    throw InvalidArgument("bid params carry " + std::to_string(params.lambdas.size()) +
                          " constraint multipliers but " + std::to_string(constraints.size()) +
                          " constraints were given");
  double bid = params.lambda0 * opp.value;
  for (std::size_t j = 0; j < constraints.size(); ++j)
    bid += params.lambdas[j] * opp.perf(j) * constraints[j];
  return std::max(bid, 0.0);
}

struct CpaOptions {
  double eps_div = 1e-9;
  double sentinel_ratio = 10.0;  // reported when nothing has converted yet
};

// (total_cost / total_perf) / C. Zero spend with zero perf is ratio 0.
inline double cpa_ratio(double total_cost, double total_perf, double cpa_constraint,
                        const CpaOptions& opt = {}) {
  if (!(cpa_constraint > 0.0)) throw InvalidArgument("CPA constraint must be positive");
  if (total_cost < 0.0 || total_perf < 0.0) throw InvalidArgument("negative cost or performance");
  if (total_perf <= 0.0) return total_cost > 0.0 ? opt.sentinel_ratio : 0.0;
  return (total_cost / std::max(total_perf, opt.eps_div)) / cpa_constraint;
}

// min{(1/ratio)^2, 1}; ratio 0 maps to 1.
inline double penalty(double ratio) {
  if (ratio <= 1.0) return 1.0;
  const double inv = 1.0 / ratio;
  return std::min(inv * inv, 1.0);
}

inline double score(double conversions, double ratio) { return conversions * penalty(ratio); }

}  // namespace lbm::bidding
