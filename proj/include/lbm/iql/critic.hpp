#pragma once

#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/iql/window.hpp"
#include "lbm/nn/layers.hpp"

namespace lbm::iql {

struct IqlConfig {
  double gamma = 0.99;
  double polyak_tau = 0.01;
  double expectile = 0.7;
  nn::TransformerConfig transformer{.d_model = 64, .n_heads = 4, .n_layers = 2, .max_seq_len = 20};
  int seq_len = 10;
  double return_scale = 2000.0;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  int batch_size = 64;
  int steps = 20000;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int log_every = 100;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("iql gamma must lie in (0, 1]");
    if (!(expectile > 0.0 && expectile < 1.0)) throw ConfigError("iql expectile must lie in (0, 1)");
    if (!(polyak_tau > 0.0 && polyak_tau <= 1.0)) throw ConfigError("iql polyak_tau must lie in (0, 1]");
    if (seq_len < 1) throw ConfigError("iql seq_len must be positive");
    if (!(return_scale > 0.0)) throw ConfigError("iql return_scale must be positive");
    if (!(lr > 0.0)) throw ConfigError("iql lr must be positive");
    if (batch_size < 1 || steps < 0) throw ConfigError("iql batch_size must be positive and steps non-negative");
    if (transformer.max_seq_len < 2 * seq_len) throw ConfigError("iql max_seq_len must cover 2 * seq_len items");
    try {
      transformer.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("iql ") + e.what());
    }
  }
};

inline nlohmann::json to_json(const IqlConfig& c) {
  const auto& t = c.transformer;
  return {{"gamma", c.gamma},
          {"polyak_tau", c.polyak_tau},
          {"expectile", c.expectile},
          {"d_model", t.d_model},
          {"n_heads", t.n_heads},
          {"n_layers", t.n_layers},
          {"max_seq_len", t.max_seq_len},
          {"dropout", t.dropout_rate},
          {"seq_len", c.seq_len},
          {"return_scale", c.return_scale},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"grad_clip", c.grad_clip},
          {"seed", c.seed},
          {"log_every", c.log_every}};
}

inline IqlConfig iql_config_from_json(const nlohmann::json& j) {
  IqlConfig c;
  auto& t = c.transformer;
  c.gamma = j.value("gamma", c.gamma);
  c.polyak_tau = j.value("polyak_tau", c.polyak_tau);
  c.expectile = j.value("expectile", c.expectile);
  t.d_model = j.value("d_model", t.d_model);
  t.n_heads = j.value("n_heads", t.n_heads);
  t.n_layers = j.value("n_layers", t.n_layers);
  t.max_seq_len = j.value("max_seq_len", t.max_seq_len);
  t.dropout_rate = j.value("dropout", t.dropout_rate);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.return_scale = j.value("return_scale", c.return_scale);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  c.log_every = j.value("log_every", c.log_every);
  c.validate();
  return c;
}

// Transformer critic over a window. With actions (Q) the items are
// s, a interleaved per step and the head reads a_t; without (V) the items are
// the states and the head reads s_t.
template <class T>
struct CriticNet {
  bool with_actions = true;
  int L = 10;
  nn::Linear<T> state_proj, action_proj;
  nn::Param<T> pos;  // [items, d]
  nn::Transformer<T> transformer;
  nn::Mlp<T> head;

  CriticNet() = default;
  template <class Rng>
  CriticNet(const std::string& name, const IqlConfig& cfg, bool actions, Rng& rng)
      : with_actions(actions),
        L(cfg.seq_len),
        state_proj(name + ".state_proj", static_cast<int>(market::kStateDim), cfg.transformer.d_model, rng),
        action_proj(name + ".action_proj", 1, cfg.transformer.d_model, rng),
        pos(name + ".pos", {(actions ? 2 : 1) * cfg.seq_len, cfg.transformer.d_model}),
        transformer(name + ".transformer", cfg.transformer, rng),
        head(name + ".head", cfg.transformer.d_model, {1}, rng) {
    nn::init_trunc_normal(pos, nn::kInitStd, rng);
  }

  int item_count() const { return (with_actions ? 2 : 1) * L; }

  nn::ParamList<T> params() {
    nn::ParamList<T> ps;
    state_proj.collect(ps);
    action_proj.collect(ps);
    ps.push_back(&pos);
    transformer.collect(ps);
    head.collect(ps);
    return ps;
  }

  // [1, 1] value for one window.
  template <class Rng>
  nn::Tensor<T> forward(nn::Graph<T>& g, const CriticWindow& w, Rng& rng) {
    w.validate();
    if (w.L != L) throw InvalidArgument("critic window length differs from the network's");
    std::vector<T> sv, av;
    sv.reserve(static_cast<std::size_t>(L) * market::kStateDim);
    for (const auto& s : w.states) sv.insert(sv.end(), s.begin(), s.end());
    av.assign(w.actions.begin(), w.actions.end());
    auto S = state_proj(g, g.constant({L, static_cast<int>(market::kStateDim)}, std::move(sv)));
    nn::Tensor<T> x = S;
    std::vector<unsigned char> valid = w.step_valid();
    if (with_actions) {
      auto A = action_proj(g, g.constant({L, 1}, std::move(av)));
      std::vector<nn::Tensor<T>> rows;
      rows.reserve(static_cast<std::size_t>(2 * L));
      std::vector<unsigned char> v2;
      for (int k = 0; k < L; ++k) {
        rows.push_back(nn::slice_rows(S, k, 1));
        rows.push_back(nn::slice_rows(A, k, 1));
        v2.push_back(valid[k]);
        v2.push_back(valid[k]);
      }
      x = nn::concat_rows(rows);
      valid = std::move(v2);
    }
    x = nn::add(x, g.param(pos));
    auto h = transformer(g, x, valid, /*last_only=*/true, rng);
    return head(g, h);
  }

  double value(const CriticWindow& w) {
    nn::Graph<T> g;
    std::mt19937_64 unused(0);
    return static_cast<double>(forward(g, w, unused).item());
  }
};

// target <- (1 - tau) * target + tau * online, parameter-wise.
template <class T>
void polyak_update(const nn::ParamList<T>& target, const nn::ParamList<T>& online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("polyak tau must lie in [0, 1]");
  if (target.size() != online.size()) throw InvalidArgument("polyak: architectures differ");
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i]->shape != online[i]->shape) throw InvalidArgument("polyak: shape mismatch at " + target[i]->name);
    auto& tv = target[i]->value;
    const auto& ov = online[i]->value;
    for (std::size_t k = 0; k < tv.size(); ++k)
      tv[k] = static_cast<T>((1.0 - tau) * static_cast<double>(tv[k]) + tau * static_cast<double>(ov[k]));
  }
}

}  // namespace lbm::iql
