#pragma once

#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lbm/act/sequence.hpp"
#include "lbm/bidding/objective.hpp"
#include "lbm/core/numfmt.hpp"

namespace lbm::think {

inline constexpr const char* kPromptVersion = "prompt-v1";
inline constexpr int kDefaultHistory = 4;

// Performance indicators of one past interval, as shown to the reasoner.
struct IndicatorRow {
  int t = 0;
  double conversions = 0.0;
  double spend = 0.0;
  double remaining_budget = 0.0;
  double predicted_value = 0.0;  // mean impression value x opportunity count
  double action = 0.0;
};

struct PromptContext {
  std::vector<IndicatorRow> history;  // oldest first, at most H rows
  double cpa_constraint = 0.0;
  double budget = 0.0;
  double total_cost = 0.0;         // realized CPA components up to t
  double total_conversions = 0.0;
  int t = 0;
  int num_steps = 48;

  // Ratio implied by the numbers in the prompt; the reasoner must recompute it.
  double computed_cpa_ratio(const bidding::CpaOptions& opt = {}) const {
    return bidding::cpa_ratio(total_cost, total_conversions, cpa_constraint, opt);
  }

  void validate() const {
    if (history.empty()) throw InvalidArgument("prompt context has no history");
    for (const auto& r : history)
      for (double v : {r.conversions, r.spend, r.remaining_budget, r.predicted_value, r.action})
        if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("prompt indicators must be finite and non-negative");
    if (!(cpa_constraint > 0.0)) throw InvalidArgument("prompt context needs a positive CPA constraint");
  }
};

// Values shown to the reasoner are rounded to two decimals, and the context
// holds exactly the shown values so the ratio check compares like with like.
inline double shown(double v) { return std::round(v * 100.0) / 100.0; }

// Context for the decision at step t from the states s_0..s_t and actions
// a_0..a_{t-1} of the running episode. Row i reads interval i's results from
// s_{i+1}. At t = 0 the history is empty.
inline PromptContext context_from_states(std::span<const act::StateRow> states, std::span<const float> actions,
                                         int t, double cpa_constraint, double budget, int num_steps,
                                         int history = kDefaultHistory) {
  namespace f = market::feature;
  if (t < 0 || static_cast<std::size_t>(t) >= states.size() || static_cast<std::size_t>(t) > actions.size())
    throw InvalidArgument("prompt context index out of range");
  PromptContext ctx;
  ctx.cpa_constraint = cpa_constraint;
  ctx.budget = budget;
  ctx.t = t;
  ctx.num_steps = num_steps;
  ctx.total_cost = shown(states[t][f::cumulative_cost]);
  ctx.total_conversions = shown(states[t][f::cumulative_conversions]);
  for (int i = std::max(0, t - history); i < t; ++i) {
    const auto& before = states[i];
    const auto& after = states[i + 1];
    IndicatorRow r;
    r.t = i;
    r.conversions = shown(after[f::last_interval_conversions]);
    r.spend = shown(after[f::last_interval_cost]);
    r.remaining_budget = shown(std::max(0.0, double(after[f::budget_left]) * budget));
    r.predicted_value = shown(double(after[f::mean_impression_value]) * before[f::impression_count_forecast]);
    r.action = shown(actions[i]);
    ctx.history.push_back(r);
  }
  return ctx;
}

inline std::string build_prompt(const PromptContext& ctx) {
  ctx.validate();
  auto n = [](double v) { return format_roundtrip(v); };
  std::ostringstream os;
  os << "[" << kPromptVersion << "]\n"
     << "You adjust the bid parameter of an advertising campaign once per interval.\n"
     << "Campaign: budget " << n(ctx.budget) << ", CPA constraint " << n(ctx.cpa_constraint) << ", next interval "
     << ctx.t << " of " << ctx.num_steps << ".\n"
     << "Recent intervals, oldest first:\n"
     << "interval | conversions | spend | remaining budget | predicted impression value | bid parameter\n";
  for (const auto& r : ctx.history)
    os << r.t << " | " << n(r.conversions) << " | " << n(r.spend) << " | " << n(r.remaining_budget) << " | "
       << n(r.predicted_value) << " | " << n(r.action) << "\n";
  os << "Cumulative spend " << n(ctx.total_cost) << ", cumulative conversions " << n(ctx.total_conversions) << ".\n"
     << "Work out the CPA ratio, (cumulative spend / cumulative conversions) / CPA constraint, from these numbers and "
        "write it as \"CPA ratio = <value>\".\n"
     << "Summarize the recent trend, then decide whether the bid parameter should go up or down.\n"
     << "Finish with exactly one line: DIRECTION: INCREASE or DIRECTION: DECREASE\n";
  return os.str();
}

}  // namespace lbm::think
