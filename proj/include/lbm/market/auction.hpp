#pragma once

#include <algorithm>

#include "lbm/core/rng.hpp"
#include "lbm/market/types.hpp"

namespace lbm::market {

// Second-price resolution. The bid must strictly exceed the highest competing
// bid; ties lose. The winner pays the highest competing bid.
inline AuctionOutcome run_auction(double bid, const ImpressionOpportunity& opp, bool sparse_mode,
                                  Rng& rng) {
  if (opp.competitor_bids.empty()) throw InvalidArgument("invalid opportunity: no competitor bids");
  if (!(bid >= 0.0)) throw InvalidArgument("bid must be non-negative");
  const double price = *std::max_element(opp.competitor_bids.begin(), opp.competitor_bids.end());
  AuctionOutcome out;
  if (!(bid > price)) return out;
  out.won = true;
  out.cost = price;
  out.conversion_value = sparse_mode ? (bernoulli(rng, opp.value) ? 1.0 : 0.0) : opp.value;
  return out;
}

}  // namespace lbm::market
