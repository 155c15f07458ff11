#pragma once

#include <random>
#include <vector>

#include "lbm/act/anchor.hpp"
#include "lbm/act/model.hpp"
#include "lbm/act/rtg.hpp"
#include "lbm/act/tokenizer.hpp"
#include "lbm/nn/optim.hpp"
#include "lbm/think/cot_file.hpp"

namespace lbm::act {

struct ActSample {
  std::uint64_t traj_id = 0;
  int t = 0;
  std::vector<int> cot;  // empty when absent or rejected by the anchor filter
  think::Direction direction = think::Direction::None;  // direction of the kept CoT
  DecisionSequence seq;
  float label = 0.0f;
  float prev_action = 0.0f;
};

struct SampleStats {
  std::size_t total = 0;
  std::size_t with_cot = 0;
  std::size_t rejected = 0;  // CoT dropped by the anchor filter
  std::size_t missing = 0;   // no side-file entry for (id, t)
};

// One sample per (trajectory, t). CoTs that contradict the logged adjustment
// are replaced by the empty CoT; the sample itself is kept.
inline std::vector<ActSample> build_act_samples(const std::vector<market::Trajectory>& data,
                                                const think::CotFile* cots, const Tokenizer& tok,
                                                const Normalizer& norm, const ActModelConfig& cfg, double rtg_w,
                                                SampleStats* stats = nullptr) {
  SampleStats st;
  std::vector<ActSample> out;
  for (const auto& traj : data) {
    const auto rtg = rtg_reweight(traj, rtg_w, norm.return_scale);
    for (int t = 0; t < static_cast<int>(traj.length()); ++t) {
      ActSample s;
      s.traj_id = traj.meta.id;
      s.t = t;
      s.seq = make_window(traj.states, traj.actions, rtg, t, cfg.seq_len, norm);
      s.label = traj.actions[t];
      s.prev_action = t > 0 ? traj.actions[t - 1] : traj.actions[t];
      const think::CotEntry* e = (cots && t > 0) ? cots->find(traj.meta.id, t) : nullptr;
      if (t > 0 && cots && !e) ++st.missing;
      if (e) {
        if (anchor_accepts(e->direction, traj.actions[t], traj.actions[t - 1])) {
          s.cot = tok.encode(e->text, cfg.max_cot_len);
          s.direction = e->direction;
          ++st.with_cot;
        } else {
          ++st.rejected;
        }
      }
      ++st.total;
      out.push_back(std::move(s));
    }
  }
  if (stats) *stats = st;
  return out;
}

struct ActTrainConfig {
  int steps = 2000;
  int batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  int log_every = 50;
};

template <class T>
class ActTrainer {
 public:
  ActTrainer(ActModel<T>& model, const ActTrainConfig& cfg)
      : model_(model), cfg_(cfg), opt_({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}), rng_(cfg.seed) {
    params_ = model_.params();
  }

  nn::AdamW<T>& optimizer() { return opt_; }

  // Mean |a_pred - a| over the batch, then one AdamW step.
  double train_step(const std::vector<const ActSample*>& batch) {
    if (batch.empty()) throw InvalidArgument("empty training batch");
    nn::zero_grads(params_);
    nn::Graph<T> g;
    g.training = true;
    std::vector<nn::Tensor<T>> preds;
    std::vector<T> labels;
    preds.reserve(batch.size());
    for (const auto* s : batch) {
      preds.push_back(model_.forward(g, s->cot, s->seq, rng_));
      labels.push_back(static_cast<T>(s->label));
    }
    auto pred = preds.size() == 1 ? preds.front() : nn::concat_rows(preds);
    const int n = static_cast<int>(labels.size());
    auto loss = nn::l1_loss(nn::sub(pred, g.constant({n, 1}, std::move(labels))));
    g.backward(loss);
    g.accumulate_param_grads();
    if (cfg_.grad_clip > 0.0) nn::clip_grad_norm(params_, cfg_.grad_clip);
    opt_.step(params_);
    return static_cast<double>(loss.item());
  }

  // Uniform minibatches with replacement. Returns the per-step loss curve.
  std::vector<double> train(const std::vector<ActSample>& samples, int steps = -1) {
    if (samples.empty()) throw InvalidArgument("no training samples");
    if (steps < 0) steps = cfg_.steps;
    std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
    std::vector<double> curve;
    curve.reserve(static_cast<std::size_t>(steps));
    std::vector<const ActSample*> batch(static_cast<std::size_t>(cfg_.batch_size));
    for (int s = 0; s < steps; ++s) {
      for (auto& b : batch) b = &samples[pick(rng_)];
      curve.push_back(train_step(batch));
    }
    return curve;
  }

 private:
  ActModel<T>& model_;
  ActTrainConfig cfg_;
  nn::AdamW<T> opt_;
  std::mt19937_64 rng_;
  nn::ParamList<T> params_;
};

}  // namespace lbm::act
