#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/core/parallel.hpp"
#include "lbm/gqpo/select.hpp"
#include "lbm/gqpo/sft.hpp"
#include "lbm/think/backend.hpp"

namespace lbm::gqpo {

struct GqpoConfig {
  int group_size = 3;
  double beta = 1.0;
  int target_count = 2000;
  std::uint64_t seed = 0;
  int history = think::kDefaultHistory;

  void validate() const {
    if (group_size < 2) throw ConfigError("gqpo group_size must be at least 2");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("gqpo beta must be finite and non-negative");
    if (target_count < 1) throw ConfigError("gqpo target_count must be positive");
    if (history < 1) throw ConfigError("gqpo history must be positive");
  }
};

// Lower bucket edges of the delta-Q histogram; the first bucket is open below.
inline const std::vector<double>& delta_q_bucket_edges() {
  static const std::vector<double> e{-0.1, -0.01, -0.001, 0.0, 0.001, 0.01, 0.1};
  return e;
}

struct GqpoReport {
  std::size_t pairs_available = 0;
  std::size_t pairs_examined = 0;
  std::size_t accepted = 0;
  std::size_t rejected_groups = 0;
  std::size_t duplicates_collapsed = 0;
  std::size_t candidates_scored = 0;
  std::size_t out_of_distribution = 0;
  double sum_accepted_delta_q = 0.0;
  std::vector<std::size_t> histogram = std::vector<std::size_t>(delta_q_bucket_edges().size() + 1, 0);
  std::map<std::string, std::size_t> chosen_directions{{"INCREASE", 0}, {"DECREASE", 0}, {"NONE", 0}};
  std::map<std::string, std::size_t> candidate_directions{{"INCREASE", 0}, {"DECREASE", 0}, {"NONE", 0}};
  bool target_reached = false;
  std::string backend_error;

  double acceptance_rate() const { return pairs_examined ? double(accepted) / double(pairs_examined) : 0.0; }
  double mean_accepted_delta_q() const { return accepted ? sum_accepted_delta_q / double(accepted) : 0.0; }

  void add_to_histogram(double dq) {
    const auto& e = delta_q_bucket_edges();
    const auto it = std::upper_bound(e.begin(), e.end(), dq);
    ++histogram[static_cast<std::size_t>(it - e.begin())];
  }

  nlohmann::json to_json() const {
    nlohmann::json buckets = nlohmann::json::array();
    const auto& e = delta_q_bucket_edges();
    for (std::size_t i = 0; i < histogram.size(); ++i) {
      nlohmann::json b = {{"count", histogram[i]}};
      b["lower"] = i == 0 ? nlohmann::json(nullptr) : nlohmann::json(e[i - 1]);
      b["upper"] = i == e.size() ? nlohmann::json(nullptr) : nlohmann::json(e[i]);
      buckets.push_back(b);
    }
    return {{"pairs_available", pairs_available},
            {"pairs_examined", pairs_examined},
            {"accepted", accepted},
            {"rejected_groups", rejected_groups},
            {"acceptance_rate", acceptance_rate()},
            {"mean_accepted_delta_q", mean_accepted_delta_q()},
            {"duplicates_collapsed", duplicates_collapsed},
            {"candidates_scored", candidates_scored},
            {"out_of_distribution_evaluations", out_of_distribution},
            {"delta_q_histogram", buckets},
            {"chosen_directions", chosen_directions},
            {"candidate_directions", candidate_directions},
            {"target_reached", target_reached},
            {"backend_error", backend_error.empty() ? nlohmann::json(nullptr) : nlohmann::json(backend_error)}};
  }
};

struct GqpoResult {
  std::vector<GqpoRecord> records;
  GqpoReport report;
};

// Every (trajectory index, t) with t >= 1, shuffled with the config seed.
inline std::vector<std::pair<std::size_t, int>> sample_state_pairs(const std::vector<market::Trajectory>& data,
                                                                   std::uint64_t seed) {
  std::vector<std::pair<std::size_t, int>> pairs;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (int t = 1; t < static_cast<int>(data[i].length()); ++t) pairs.emplace_back(i, t);
  std::mt19937_64 rng(seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  return pairs;
}

// Scores one group: duplicates (identical text) collapse to their first
// occurrence, each survivor gets delta-Q, and the best positive one is chosen.
struct ScoredGroup {
  std::vector<think::CotResponse> unique;
  std::vector<double> actions;
  std::vector<double> delta_q;
  std::optional<std::size_t> best;
  std::size_t duplicates = 0;
};

template <Actor A, Critic C>
ScoredGroup score_group(A& actor, C& critic, const market::Trajectory& tr, int t,
                        const std::vector<think::CotResponse>& group) {
  ScoredGroup s;
  std::set<std::string> seen;
  for (const auto& c : group) {
    if (!seen.insert(c.text).second) {
      ++s.duplicates;
      continue;
    }
    s.unique.push_back(c);
  }
  const double a = tr.actions[static_cast<std::size_t>(t)];
  for (const auto& c : s.unique) {
    const double act = static_cast<double>(actor(tr, t, c.text));
    s.actions.push_back(act);
    s.delta_q.push_back(relative_q(critic, tr, t, act, a));
  }
  s.best = select_best(s.delta_q);
  return s;
}

// Samples state pairs without replacement until target_count records are
// accepted or the pairs run out. Groups for up to `parallel_groups` pairs are
// generated concurrently when the backend is asynchronous; scoring, selection
// and output order follow the sampled order. A backend failure stops the run
// and keeps everything accepted before it.
template <Actor A, Critic C>
GqpoResult run_pipeline(const std::vector<market::Trajectory>& data, A& actor, C& critic,
                        think::ThinkBackend& backend, const GqpoConfig& cfg, unsigned parallel_groups = 1) {
  cfg.validate();
  GqpoResult out;
  auto& rep = out.report;
  const auto pairs = sample_state_pairs(data, cfg.seed);
  rep.pairs_available = pairs.size();
  const std::size_t chunk = backend.synchronous() ? 1 : std::max(1u, parallel_groups);

  struct Generated {
    think::PromptContext ctx;
    std::string prompt;
    std::vector<think::CotResponse> group;
    std::string error;
  };

  std::size_t next = 0;
  while (next < pairs.size() && out.records.size() < static_cast<std::size_t>(cfg.target_count)) {
    const std::size_t n = std::min(chunk, pairs.size() - next);
    std::vector<Generated> gen(n);
    parallel_for(n, static_cast<unsigned>(n), [&](std::size_t k) {
      const auto& [ti, t] = pairs[next + k];
      const auto& tr = data[ti];
      auto& g = gen[k];
      g.ctx = think::context_from_states(tr.states, tr.actions, t, tr.meta.cpa_constraint, tr.meta.budget,
                                         static_cast<int>(tr.length()), cfg.history);
      g.prompt = think::build_prompt(g.ctx);
      try {
        g.group = backend.generate(g.ctx, g.prompt, cfg.group_size);
      } catch (const std::exception& e) {
        g.error = e.what();
      }
    });
    for (std::size_t k = 0; k < n && out.records.size() < static_cast<std::size_t>(cfg.target_count); ++k) {
      auto& g = gen[k];
      if (!g.error.empty()) {
        rep.backend_error = g.error;
        next = pairs.size();
        break;
      }
      const auto& [ti, t] = pairs[next + k];
      const auto& tr = data[ti];
      ++rep.pairs_examined;
      const auto s = score_group(actor, critic, tr, t, g.group);
      rep.duplicates_collapsed += s.duplicates;
      rep.candidates_scored += s.unique.size();
      for (std::size_t i = 0; i < s.unique.size(); ++i) {
        rep.add_to_histogram(s.delta_q[i]);
        ++rep.candidate_directions[think::to_string(s.unique[i].direction)];
      }
      if (!s.best) {
        ++rep.rejected_groups;
        continue;
      }
      const std::size_t j = *s.best;
      GqpoRecord r;
      r.prompt = g.prompt;
      r.response = s.unique[j].text;
      r.delta_q = s.delta_q[j];
      r.weight = std::exp(cfg.beta * r.delta_q);
      r.traj_id = tr.meta.id;
      r.t = t;
      r.direction = s.unique[j].direction;
      r.cot_action = s.actions[j];
      r.dataset_action = tr.actions[static_cast<std::size_t>(t)];
      r.group_delta_q = s.delta_q;
      r.rejected = static_cast<int>(g.group.size()) - 1;
      rep.sum_accepted_delta_q += r.delta_q;
      ++rep.chosen_directions[think::to_string(r.direction)];
      out.records.push_back(std::move(r));
    }
    if (rep.backend_error.empty()) next += n;
  }
  rep.accepted = out.records.size();
  rep.target_reached = out.records.size() >= static_cast<std::size_t>(cfg.target_count);
  return out;
}

}  // namespace lbm::gqpo
