#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <numeric>
#include <utility>

#include "lbm/bidding/objective.hpp"
#include "lbm/core/rng.hpp"
#include "lbm/market/auction.hpp"
#include "lbm/market/market_model.hpp"
#include "lbm/market/types.hpp"

namespace lbm::market {

struct EnvOptions {
  double action_min = 0.0;
  double action_max = 10.0;
  double lambda0 = 0.0;  // fixed value coefficient; the scalar action drives lambda_1
  bidding::CpaOptions cpa;
  MarketParams market;
  // Called once per resolved auction; used by invariant checks.
  std::function<void(double bid, const AuctionOutcome&)> on_auction;
};

struct IntervalStats {
  int opportunities = 0;
  int wins = 0;
  double cost = 0.0;
  double conversions = 0.0;
  double value_sum = 0.0;   // sum of v_i over all opportunities offered
  double price_sum = 0.0;   // sum of highest competing bids
  bool halted = false;      // budget ran out mid-interval
};

struct StepResult {
  EpisodeState state{};
  double reward = 0.0;
  double applied_action = 0.0;
  bool clamped = false;
  IntervalStats stats;
};

// Single advertiser facing a stream of second-price auctions over num_steps
// intervals. Not thread-safe; distinct instances are independent.
class Environment {
 public:
  Environment(EpisodeConfig cfg, ImpressionSource source, EnvOptions opts = {})
      : cfg_(cfg), source_(std::move(source)), opts_(std::move(opts)), rng_(cfg.rng_seed) {
    cfg_.validate();
    if (!(opts_.action_max > opts_.action_min)) throw InvalidArgument("empty action range");
    remaining_ = cfg_.budget;
  }

  static Environment synthetic(const EpisodeConfig& cfg, EnvOptions opts = {}) {
    auto src = synthetic_market(opts.market, cfg.impressions_per_step, cfg.num_steps);
    return Environment(cfg, std::move(src), std::move(opts));
  }

  const EpisodeConfig& config() const { return cfg_; }
  const EnvOptions& options() const { return opts_; }
  int current_step() const { return t_; }
  bool done() const { return t_ >= cfg_.num_steps; }
  double remaining_budget() const { return remaining_; }
  double total_cost() const { return total_cost_; }
  double total_conversions() const { return total_conv_; }
  const std::vector<IntervalStats>& history() const { return history_; }

  double cpa_ratio() const {
    return bidding::cpa_ratio(total_cost_, total_conv_, cfg_.cpa_constraint, opts_.cpa);
  }

  EpisodeState build_state() const {
    EpisodeState s{};
    const double T = cfg_.num_steps;
    const double per_step_budget = cfg_.budget / T;
    s[feature::time_left] = (T - t_) / T;
    s[feature::budget_left] = std::clamp(remaining_ / cfg_.budget, 0.0, 1.0);
    s[feature::current_cpa_ratio] = std::min(cpa_ratio(), opts_.cpa.sentinel_ratio);
    s[feature::cumulative_conversions] = total_conv_;
    s[feature::cumulative_cost] = total_cost_;
    s[feature::last_action] = last_action_;
    s[feature::impression_count_forecast] =
        expected_impressions(opts_.market, cfg_.impressions_per_step, t_, cfg_.num_steps);
    if (!history_.empty()) {
      const auto& h = history_.back();
      s[feature::budget_consumption_speed] = h.cost / per_step_budget;
      s[feature::mean_impression_value] = h.opportunities ? h.value_sum / h.opportunities : 0.0;
      s[feature::win_rate_recent] = h.opportunities ? double(h.wins) / h.opportunities : 0.0;
      s[feature::last_interval_conversions] = h.conversions;
      s[feature::last_interval_cost] = h.cost;
      s[feature::mean_win_cost_recent] = h.wins ? h.cost / h.wins : 0.0;
      s[feature::mean_market_price_recent] = h.opportunities ? h.price_sum / h.opportunities : 0.0;
      const std::size_t k = std::min<std::size_t>(3, history_.size());
      double wr = 0.0, sp = 0.0;
      for (std::size_t i = history_.size() - k; i < history_.size(); ++i) {
        const auto& r = history_[i];
        wr += r.opportunities ? double(r.wins) / r.opportunities : 0.0;
        sp += r.cost / per_step_budget;
      }
      s[feature::win_rate_3] = wr / k;
      s[feature::consumption_speed_3] = sp / k;
    }
    return s;
  }

  StepResult step(double action) {
    if (done()) throw EpisodeFinished("step() called on a finished episode");
    StepResult res;
    res.applied_action = std::clamp(action, opts_.action_min, opts_.action_max);
    res.clamped = res.applied_action != action;

    bidding::BidParams params{opts_.lambda0, {res.applied_action}};
    const double constraints[1] = {cfg_.cpa_constraint};
    IntervalStats st;
    auto opps = source_(t_, rng_);
    st.opportunities = static_cast<int>(opps.size());
    for (const auto& opp : opps) {
      opp.validate();
      st.value_sum += opp.value;
      st.price_sum += *std::max_element(opp.competitor_bids.begin(), opp.competitor_bids.end());
    }
    for (const auto& opp : opps) {
      const double bid = bidding::compute_bid(params, opp, constraints);
      AuctionOutcome out = run_auction(bid, opp, cfg_.sparse_mode, rng_);
      if (out.won && out.cost > remaining_) {
        st.halted = true;
        break;
      }
      if (opts_.on_auction) opts_.on_auction(bid, out);
      if (!out.won) continue;
      remaining_ -= out.cost;
      st.wins += 1;
      st.cost += out.cost;
      st.conversions += out.conversion_value;
    }
    total_cost_ += st.cost;
    total_conv_ += st.conversions;
    last_action_ = res.applied_action;
    history_.push_back(st);
    ++t_;
    res.reward = st.conversions;
    res.stats = st;
    res.state = build_state();
    return res;
  }

 private:
  EpisodeConfig cfg_;
  ImpressionSource source_;
  EnvOptions opts_;
  Rng rng_;
  int t_ = 0;
  double remaining_ = 0.0;
  double total_cost_ = 0.0;
  double total_conv_ = 0.0;
  double last_action_ = 0.0;
  std::vector<IntervalStats> history_;
};

}  // namespace lbm::market
