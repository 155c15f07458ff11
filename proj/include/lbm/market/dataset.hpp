#pragma once

#include <string>
#include <vector>

#include "lbm/core/hash.hpp"
#include "lbm/core/parallel.hpp"
#include "lbm/market/environment.hpp"
#include "lbm/market/policies.hpp"
#include "lbm/market/trajectory_io.hpp"

namespace lbm::market {

struct DatasetSpec {
  EpisodeConfig episode;              // num_steps, impressions, sparse flag; budget/C overridden per period
  double budget_min = 6000.0;
  double budget_max = 14000.0;
  double cpa_min = 6.0;
  double cpa_max = 12.0;
  EnvOptions env;
  std::vector<std::string> policies = {"random-walk", "noisy-pid", "constraint-aware"};
  int num_periods = 10;
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

// Plays one episode with `policy`, recording pre-decision states.
inline Trajectory rollout(Environment& env, BehaviorPolicy& policy, Rng& policy_rng) {
  Trajectory traj;
  policy.reset(policy_rng);
  EpisodeState s = env.build_state();
  while (!env.done()) {
    const double a = policy.act(s, policy_rng);
    const auto res = env.step(a);
    std::array<float, kStateDim> sf{};
    for (std::size_t i = 0; i < kStateDim; ++i) sf[i] = static_cast<float>(s[i]);
    traj.states.push_back(sf);
    traj.actions.push_back(static_cast<float>(res.applied_action));
    traj.rewards.push_back(static_cast<float>(res.reward));
    traj.costs.push_back(static_cast<float>(res.stats.cost));
    s = res.state;
  }
  traj.returns_to_go = plain_returns_to_go(traj.rewards);
  traj.meta.budget = env.config().budget;
  traj.meta.cpa_constraint = env.config().cpa_constraint;
  traj.meta.seed = env.config().rng_seed;
  return traj;
}

// Every policy plays every period. A period fixes the market realization
// (impression stream seed), budget and CPA constraint shared by its policies.
inline std::vector<Trajectory> generate_trajectories(const DatasetSpec& spec) {
  if (spec.num_periods <= 0) throw InvalidArgument("num_periods must be positive");
  if (spec.policies.empty()) throw InvalidArgument("at least one behavior policy is required");
  const ActionRange range{spec.env.action_min, spec.env.action_max};
  for (const auto& p : spec.policies) (void)make_policy(p, range);

  const std::size_t k = spec.policies.size();
  std::vector<Trajectory> out(static_cast<std::size_t>(spec.num_periods) * k);
  parallel_for(static_cast<std::size_t>(spec.num_periods), spec.workers, [&](std::size_t period) {
    Rng period_rng(mix_seed(spec.seed, period));
    EpisodeConfig ep = spec.episode;
    ep.budget = spec.budget_min + (spec.budget_max - spec.budget_min) * uniform01(period_rng);
    ep.cpa_constraint = spec.cpa_min + (spec.cpa_max - spec.cpa_min) * uniform01(period_rng);
    ep.rng_seed = mix_seed(spec.seed ^ 0x5eed, period);
    for (std::size_t j = 0; j < k; ++j) {
      auto policy = make_policy(spec.policies[j], range);
      Rng policy_rng(mix_seed(spec.seed + 7919 * (j + 1), period));
      auto env = Environment::synthetic(ep, spec.env);
      Trajectory t = rollout(env, *policy, policy_rng);
      t.meta.id = period * k + j;
      t.meta.policy = policy->id();
      t.meta.period = static_cast<int>(period);
      out[period * k + j] = std::move(t);
    }
  });
  return out;
}

inline TrajectoryDataset generate_dataset(const DatasetSpec& spec, const std::string& config_hash = {}) {
  TrajectoryDataset ds;
  ds.header.num_steps = spec.episode.num_steps;
  ds.header.config_hash = config_hash;
  ds.header.seed = spec.seed;
  ds.header.extra = {{"num_periods", spec.num_periods},
                     {"policies", spec.policies},
                     {"sparse", spec.episode.sparse_mode},
                     {"impressions_per_step", spec.episode.impressions_per_step}};
  ds.trajectories = generate_trajectories(spec);
  return ds;
}

}  // namespace lbm::market
