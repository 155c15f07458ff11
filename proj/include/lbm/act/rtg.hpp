#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "lbm/bidding/objective.hpp"
#include "lbm/market/types.hpp"

namespace lbm::act {

// rtg_w(t) = sum_{i>=t} r_i / scale + w * penalty_{t:T}, where penalty_{t:T}
// applies the CPA penalty to the cost and conversions accumulated from t to
// the end. w = 0 and scale = 1 give the plain return-to-go.
inline std::vector<float> rtg_reweight(const market::Trajectory& traj, double w, double scale = 1.0,
                                       int expected_steps = -1, const bidding::CpaOptions& opt = {}) {
  traj.validate();
  if (traj.length() == 0) throw InvalidArgument("incomplete trajectory: no steps");
  if (expected_steps >= 0 && static_cast<int>(traj.length()) != expected_steps)
    throw InvalidArgument("incomplete trajectory: " + std::to_string(traj.length()) + " of " +
                          std::to_string(expected_steps) + " steps");
  if (!(scale > 0.0)) throw InvalidArgument("return scale must be positive");
  std::vector<float> out(traj.length());
  double r = 0.0, c = 0.0;
  for (std::size_t i = traj.length(); i-- > 0;) {
    r += traj.rewards[i];
    c += traj.costs[i];
    double pen = 1.0;
    if (w != 0.0) pen = bidding::penalty(bidding::cpa_ratio(c, r, traj.meta.cpa_constraint, opt));
    out[i] = static_cast<float>(r / scale + w * pen);
  }
  return out;
}

// Conditioning goal at inference: the largest dataset return, scaled, with the
// penalty term set to 1.
struct RtgSchedule {
  double max_return = 0.0;
  double scale = 2000.0;
  double w = 0.0;

  static RtgSchedule from_dataset(const std::vector<market::Trajectory>& data, double scale, double w) {
    if (data.empty()) throw InvalidArgument("return-to-go initialisation needs dataset statistics");
    RtgSchedule s;
    s.scale = scale;
    s.w = w;
    s.max_return = -std::numeric_limits<double>::infinity();
    for (const auto& t : data) s.max_return = std::max(s.max_return, std::accumulate(t.rewards.begin(), t.rewards.end(), 0.0));
    return s;
  }

  double initial() const { return max_return / scale + w; }
  // R_{t+1} = R_t - r_t / scale
  double next(double current, double reward) const { return current - reward / scale; }
};

}  // namespace lbm::act
