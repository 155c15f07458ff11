#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <vector>

#include "lbm/act/bundle.hpp"
#include "lbm/bidding/metrics.hpp"
#include "lbm/harness/config.hpp"
#include "lbm/market/environment.hpp"
#include "lbm/think/scheduler.hpp"

namespace lbm::harness {

// One evaluation episode: market realization, budget and constraint.
struct EpisodeSetup {
  int index = 0;
  std::uint64_t seed = 0;
  market::EpisodeConfig episode;
};

// Episode i draws budget and C from the dataset ranges with its own seed; the
// budget ratio scales the drawn budget. Paired arms share index and seed.
inline EpisodeSetup make_episode(const RunConfig& cfg, int index, double budget_ratio) {
  EpisodeSetup s;
  s.index = index;
  s.seed = mix_seed(cfg.stage_seed(stream::eval), static_cast<std::uint64_t>(index));
  Rng rng(s.seed);
  const auto& sim = cfg.simulator;
  s.episode = sim.episode;
  s.episode.budget = (sim.budget_min + (sim.budget_max - sim.budget_min) * uniform01(rng)) * budget_ratio;
  s.episode.cpa_constraint = sim.cpa_min + (sim.cpa_max - sim.cpa_min) * uniform01(rng);
  s.episode.rng_seed = mix_seed(s.seed, 1);
  return s;
}

enum class CotMode { Think, Empty };

struct EpisodeOptions {
  CotMode mode = CotMode::Think;
  std::optional<think::Direction> override_direction;  // scripted CoT with a forced direction
  std::chrono::milliseconds deadline{200};
  int history = think::kDefaultHistory;
};

struct StepTrace {
  int t = 0;
  double cpa_ratio = 0.0;  // computed from the prompt context at t (0 at t = 0)
  double action = 0.0;
  double delta_action = 0.0;
  think::Direction direction = think::Direction::None;  // of the CoT used
  bool cot_used = false;
};

struct EpisodeOutcome {
  EpisodeSetup setup;
  bidding::MetricReport metrics;
  think::SchedulerStats think;
  std::vector<StepTrace> steps;
  double wall_ms = 0.0;
};

// Asynchronous inference: after interval t-1 resolves, the CoT for t is
// requested; at decision time t the Act model consumes whatever arrived by
// the deadline (empty CoT otherwise). Conditioning return starts at the
// dataset maximum and decreases by the scaled reward.
inline EpisodeOutcome run_episode(act::ActBundle& model, think::ThinkBackend* backend, const EpisodeSetup& setup,
                                  const market::EnvOptions& env_opts, const EpisodeOptions& opt) {
  if (opt.mode == CotMode::Think && !opt.override_direction && !backend)
    throw InvalidArgument("CoT evaluation needs a think backend");
  const auto start = think::Clock::now();
  EpisodeOutcome out;
  out.setup = setup;
  auto env = market::Environment::synthetic(setup.episode, env_opts);
  const int T = setup.episode.num_steps;
  const int L = model.model.cfg.seq_len;
  std::vector<act::StateRow> states;
  std::vector<float> actions, rtg;
  bidding::EpisodeLog log;
  log.num_steps = T;

  std::unique_ptr<think::ThinkScheduler> sched;
  if (opt.mode == CotMode::Think && !opt.override_direction) sched = std::make_unique<think::ThinkScheduler>(*backend, opt.deadline);

  auto state_row = [](const market::EpisodeState& s) {
    act::StateRow r;
    for (std::size_t i = 0; i < market::kStateDim; ++i) r[i] = static_cast<float>(s[i]);
    return r;
  };

  states.push_back(state_row(env.build_state()));
  rtg.push_back(static_cast<float>(model.rtg.initial()));
  for (int t = 0; t < T; ++t) {
    StepTrace tr;
    tr.t = t;
    std::string cot;
    if (t >= 1) {
      const auto ctx = think::context_from_states(states, actions, t, setup.episode.cpa_constraint,
                                                  setup.episode.budget, T, opt.history);
      tr.cpa_ratio = ctx.computed_cpa_ratio();
      if (opt.mode == CotMode::Think) {
        if (opt.override_direction) {
          cot = think::scripted_cot_text(ctx, *opt.override_direction);
          tr.direction = *opt.override_direction;
        } else {
          const auto r = sched->take(t);
          cot = r.text;
          tr.direction = r.direction;
        }
      }
    }
    tr.cot_used = !cot.empty();
    const auto seq = act::make_window(states, actions, rtg, t, L, model.normalizer);
    const double a = model.model.predict(model.tokenizer.encode(cot, model.model.cfg.max_cot_len), seq);
    const auto res = env.step(a);
    tr.action = res.applied_action;
    tr.delta_action = t > 0 ? res.applied_action - actions.back() : 0.0;
    actions.push_back(static_cast<float>(res.applied_action));
    states.push_back(state_row(res.state));
    rtg.push_back(static_cast<float>(model.rtg.next(rtg.back(), res.reward)));
    log.costs.push_back(res.stats.cost);
    log.conversions.push_back(res.stats.conversions);
    out.steps.push_back(tr);
    if (sched && t + 1 < T) {
      const auto ctx = think::context_from_states(states, actions, t + 1, setup.episode.cpa_constraint,
                                                  setup.episode.budget, T, opt.history);
      sched->request(t + 1, ctx);
    }
  }
  if (sched) {
    sched->join();
    out.think = sched->stats();
  }
  out.metrics = bidding::evaluate_episode(log, setup.episode.cpa_constraint, setup.episode.budget, env_opts.cpa);
  out.wall_ms = std::chrono::duration<double, std::milli>(think::Clock::now() - start).count();
  return out;
}

}  // namespace lbm::harness
