#pragma once

#include <map>
#include <string>
#include <vector>

#include "lbm/act/bundle.hpp"
#include "lbm/iql/bundle.hpp"

namespace lbm::gqpo {

// Act model as an Actor: the dataset window at t, conditioned on the CoT.
class BundleActor {
 public:
  explicit BundleActor(act::ActBundle& b) : b_(b) {}

  double operator()(const market::Trajectory& tr, int t, const std::string& cot) {
    auto it = rtg_.find(tr.meta.id);
    if (it == rtg_.end())
      it = rtg_.emplace(tr.meta.id, act::rtg_reweight(tr, b_.rtg.w, b_.normalizer.return_scale)).first;
    const auto seq = act::make_window(tr.states, tr.actions, it->second, t, b_.model.cfg.seq_len, b_.normalizer);
    return b_.model.predict(b_.tokenizer.encode(cot, b_.model.cfg.max_cot_len), seq);
  }

 private:
  act::ActBundle& b_;
  std::map<std::uint64_t, std::vector<float>> rtg_;
};

// Trained Q network as a Critic; counts out-of-distribution action queries.
class BundleCritic {
 public:
  explicit BundleCritic(iql::CriticBundle& b) : b_(b) {}

  double operator()(const market::Trajectory& tr, int t, double action) {
    const auto q = iql::q_value(b_, tr.states, tr.actions, t, action);
    if (q.out_of_distribution) ++ood_;
    return q.value;
  }

  std::size_t out_of_distribution() const { return ood_; }

 private:
  iql::CriticBundle& b_;
  std::size_t ood_ = 0;
};

}  // namespace lbm::gqpo
