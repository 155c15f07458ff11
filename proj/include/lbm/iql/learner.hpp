#pragma once

#include <functional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/iql/critic.hpp"
#include "lbm/nn/optim.hpp"

namespace lbm::iql {

struct IqlLogRow {
  int step = 0;
  double v_loss = 0.0;
  double q_loss = 0.0;
};

inline nlohmann::json to_json(const IqlLogRow& r) {
  return {{"step", r.step}, {"v_loss", r.v_loss}, {"q_loss", r.q_loss}};
}

// Q, target-Q and V trained jointly. Each step: one V step against the frozen
// target-Q, one Q step against the updated V, then a Polyak update of the target.
template <class T>
class IqlLearner {
 public:
  explicit IqlLearner(const IqlConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    q = CriticNet<T>("q", cfg_, true, rng_);
    v = CriticNet<T>("v", cfg_, false, rng_);
    q_target = q;
    q_target_rename();
    nn::AdamWConfig oc;
    oc.lr = cfg_.lr;
    oc.weight_decay = cfg_.weight_decay;
    opt_q_ = nn::AdamW<T>(oc);
    opt_v_ = nn::AdamW<T>(oc);
  }

  IqlLearner(const IqlLearner&) = delete;
  IqlLearner& operator=(const IqlLearner&) = delete;

  CriticNet<T> q, q_target, v;

  const IqlConfig& config() const { return cfg_; }
  nn::AdamW<T>& q_optimizer() { return opt_q_; }
  nn::AdamW<T>& v_optimizer() { return opt_v_; }

  // E[L2_tau(Qbar(s, a) - V(s))] without updating anything.
  double v_loss(const std::vector<const Transition*>& batch) {
    nn::Graph<T> g;
    return static_cast<double>(v_loss_graph(g, batch).item());
  }

  // E[(r + gamma * V(s') - Q(s, a))^2], V(s') = 0 at terminal steps.
  double q_loss(const std::vector<const Transition*>& batch) {
    nn::Graph<T> g;
    return static_cast<double>(q_loss_graph(g, batch).item());
  }

  IqlLogRow train_step(const std::vector<const Transition*>& batch) {
    IqlLogRow row;
    row.step = ++steps_;
    {
      auto ps = v.params();
      nn::zero_grads(ps);
      nn::Graph<T> g;
      g.training = true;
      auto loss = v_loss_graph(g, batch);
      row.v_loss = static_cast<double>(loss.item());
      g.backward(loss);
      g.accumulate_param_grads();
      if (cfg_.grad_clip > 0.0) nn::clip_grad_norm(ps, cfg_.grad_clip);
      opt_v_.step(ps);
    }
    {
      auto ps = q.params();
      nn::zero_grads(ps);
      nn::Graph<T> g;
      g.training = true;
      auto loss = q_loss_graph(g, batch);
      row.q_loss = static_cast<double>(loss.item());
      g.backward(loss);
      g.accumulate_param_grads();
      if (cfg_.grad_clip > 0.0) nn::clip_grad_norm(ps, cfg_.grad_clip);
      opt_q_.step(ps);
    }
    polyak_update(q_target.params(), q.params(), cfg_.polyak_tau);
    return row;
  }

  // Uniform minibatches with replacement. `log` receives every log_every-th row
  // and the last one.
  std::vector<IqlLogRow> train(const std::vector<Transition>& data, int steps = -1,
                               const std::function<void(const IqlLogRow&)>& log = {}) {
    if (data.size() < static_cast<std::size_t>(cfg_.batch_size))
      throw InvalidArgument("dataset of " + std::to_string(data.size()) + " transitions is smaller than one batch of " +
                            std::to_string(cfg_.batch_size));
    if (steps < 0) steps = cfg_.steps;
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::vector<const Transition*> batch(static_cast<std::size_t>(cfg_.batch_size));
    std::vector<IqlLogRow> rows;
    for (int s = 0; s < steps; ++s) {
      for (auto& b : batch) b = &data[pick(rng_)];
      const auto row = train_step(batch);
      if (cfg_.log_every > 0 && (row.step % cfg_.log_every == 0 || s + 1 == steps)) {
        rows.push_back(row);
        if (log) log(row);
      }
    }
    return rows;
  }

  int steps() const { return steps_; }

 private:
  void q_target_rename() {
    auto src = q.params();
    auto dst = q_target.params();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->name = "q_target" + src[i]->name.substr(1);
  }

  static void check_batch(const std::vector<const Transition*>& batch) {
    if (batch.empty()) throw InvalidArgument("empty IQL batch");
    for (const auto* t : batch)
      if (!t->terminal && t->next.states.empty()) throw InvalidArgument("non-terminal transition is missing its next state");
  }

  nn::Tensor<T> column(nn::Graph<T>& g, std::vector<T> values) {
    const int n = static_cast<int>(values.size());
    return g.constant({n, 1}, std::move(values));
  }

  nn::Tensor<T> stack(nn::Graph<T>& g, CriticNet<T>& net, const std::vector<const CriticWindow*>& ws) {
    std::vector<nn::Tensor<T>> out;
    out.reserve(ws.size());
    for (const auto* w : ws) out.push_back(net.forward(g, *w, rng_));
    return out.size() == 1 ? out.front() : nn::concat_rows(out);
  }

  nn::Tensor<T> v_loss_graph(nn::Graph<T>& g, const std::vector<const Transition*>& batch) {
    check_batch(batch);
    std::vector<T> qbar;
    std::vector<const CriticWindow*> ws;
    for (const auto* t : batch) {
      qbar.push_back(static_cast<T>(q_target.value(t->current)));
      ws.push_back(&t->current);
    }
    auto V = stack(g, v, ws);
    return nn::expectile_loss(nn::sub(column(g, std::move(qbar)), V), static_cast<T>(cfg_.expectile));
  }

  nn::Tensor<T> q_loss_graph(nn::Graph<T>& g, const std::vector<const Transition*>& batch) {
    check_batch(batch);
    std::vector<T> y;
    std::vector<const CriticWindow*> ws;
    for (const auto* t : batch) {
      const double vn = t->terminal ? 0.0 : v.value(t->next);
      y.push_back(static_cast<T>(t->reward + cfg_.gamma * vn));
      ws.push_back(&t->current);
    }
    auto Q = stack(g, q, ws);
    return nn::mse_loss(nn::sub(column(g, std::move(y)), Q));
  }

  IqlConfig cfg_;
  std::mt19937_64 rng_;
  nn::AdamW<T> opt_q_, opt_v_;
  int steps_ = 0;
};

}  // namespace lbm::iql
