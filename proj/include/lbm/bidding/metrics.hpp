#pragma once

#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/bidding/objective.hpp"
#include "lbm/core/numfmt.hpp"
#include "lbm/market/types.hpp"

namespace lbm::bidding {

struct MetricReport {
  double conversions = 0.0;
  double budget_utilization = 0.0;
  double cpa_ratio = 0.0;
  double penalty = 1.0;
  double score = 0.0;
};

inline void to_json(nlohmann::json& j, const MetricReport& m) {
  j = nlohmann::json{{"conversions", m.conversions},
                     {"budget_utilization", m.budget_utilization},
                     {"cpa_ratio", m.cpa_ratio},
                     {"penalty", m.penalty},
                     {"score", m.score}};
}

inline void from_json(const nlohmann::json& j, MetricReport& m) {
  j.at("conversions").get_to(m.conversions);
  j.at("budget_utilization").get_to(m.budget_utilization);
  j.at("cpa_ratio").get_to(m.cpa_ratio);
  j.at("penalty").get_to(m.penalty);
  j.at("score").get_to(m.score);
}

inline const char* metric_csv_header() { return "conversions,budget_utilization,cpa_ratio,penalty,score"; }

inline std::string to_csv_row(const MetricReport& m) {
  std::ostringstream os;
  os << format_roundtrip(m.conversions) << ',' << format_roundtrip(m.budget_utilization) << ','
     << format_roundtrip(m.cpa_ratio) << ',' << format_roundtrip(m.penalty) << ','
     << format_roundtrip(m.score);
  return os.str();
}

// Per-interval spend and conversions of one episode.
struct EpisodeLog {
  std::vector<double> costs;
  std::vector<double> conversions;
  int num_steps = 0;  // intervals the episode is supposed to run
};

inline MetricReport make_report(double conversions, double spend, double cpa_constraint,
                                double budget, const CpaOptions& opt = {}) {
  if (!(budget > 0.0)) throw InvalidArgument("budget must be positive");
  MetricReport r;
  r.conversions = conversions;
  r.budget_utilization = spend / budget;
  r.cpa_ratio = bidding::cpa_ratio(spend, conversions, cpa_constraint, opt);
  r.penalty = bidding::penalty(r.cpa_ratio);
  r.score = conversions * r.penalty;
  return r;
}

inline MetricReport evaluate_episode(const EpisodeLog& log, double cpa_constraint, double budget,
                                     const CpaOptions& opt = {}) {
  if (log.costs.size() != log.conversions.size())
    throw InvalidArgument("episode log cost/conversion lengths differ");
  if (static_cast<int>(log.costs.size()) != log.num_steps)
    throw InvalidArgument("incomplete episode: " + std::to_string(log.costs.size()) + " of " +
                          std::to_string(log.num_steps) + " intervals recorded");
  const double spend = std::accumulate(log.costs.begin(), log.costs.end(), 0.0);
  const double conv = std::accumulate(log.conversions.begin(), log.conversions.end(), 0.0);
  return make_report(conv, spend, cpa_constraint, budget, opt);
}

inline MetricReport evaluate_episode(const market::Trajectory& traj, int num_steps,
                                     const CpaOptions& opt = {}) {
  traj.validate();
  EpisodeLog log;
  log.num_steps = num_steps;
  log.costs.assign(traj.costs.begin(), traj.costs.end());
  log.conversions.assign(traj.rewards.begin(), traj.rewards.end());
  return evaluate_episode(log, traj.meta.cpa_constraint, traj.meta.budget, opt);
}

inline MetricReport mean_report(const std::vector<MetricReport>& rows) {
  MetricReport m{0, 0, 0, 0, 0};
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.conversions += r.conversions;
    m.budget_utilization += r.budget_utilization;
    m.cpa_ratio += r.cpa_ratio;
    m.penalty += r.penalty;
    m.score += r.score;
  }
  const double n = static_cast<double>(rows.size());
  m.conversions /= n;
  m.budget_utilization /= n;
  m.cpa_ratio /= n;
  m.penalty /= n;
  m.score /= n;
  return m;
}

}  // namespace lbm::bidding
