#pragma once

#include <limits>
#include <random>
#include <string>

#include "lbm/core/hash.hpp"
#include "lbm/iql/learner.hpp"
#include "lbm/nn/checkpoint.hpp"

namespace lbm::iql {

// Trained critic for inference: Q, target-Q and V with the normalization and
// the action range seen in training.
struct CriticBundle {
  IqlConfig config;
  CriticNet<float> q, q_target, v;
  act::Normalizer normalizer;
  double action_min = 0.0;
  double action_max = 0.0;
  std::uint64_t roster_hash = market::roster_hash();
  nlohmann::json provenance = nlohmann::json::object();

  nn::ParamList<float> all_params() {
    auto ps = q.params();
    for (auto* p : q_target.params()) ps.push_back(p);
    for (auto* p : v.params()) ps.push_back(p);
    return ps;
  }
};

inline CriticBundle make_critic_bundle(IqlLearner<float>& learner, const act::Normalizer& norm,
                                       const std::vector<market::Trajectory>& data) {
  CriticBundle b;
  b.config = learner.config();
  b.q = learner.q;
  b.q_target = learner.q_target;
  b.v = learner.v;
  b.normalizer = norm;
  b.action_min = std::numeric_limits<double>::infinity();
  b.action_max = -std::numeric_limits<double>::infinity();
  for (const auto& t : data)
    for (float a : t.actions) {
      b.action_min = std::min<double>(b.action_min, a);
      b.action_max = std::max<double>(b.action_max, a);
    }
  if (b.action_min > b.action_max) b.action_min = b.action_max = 0.0;
  return b;
}

inline void save_critic_bundle(const std::string& path, CriticBundle& b) {
  const nlohmann::json meta = {{"kind", "critic"},
                               {"iql", to_json(b.config)},
                               {"normalizer", b.normalizer.to_json()},
                               {"action_range", {b.action_min, b.action_max}},
                               {"roster_hash", hex64(b.roster_hash)},
                               {"provenance", b.provenance}};
  nn::save_checkpoint(path, meta, b.all_params());
}

inline CriticBundle load_critic_bundle(const std::string& path) {
  const auto meta = nn::read_checkpoint_meta(path);
  if (meta.value("kind", std::string{}) != "critic")
    throw MissingArtifact("critic checkpoint '" + path + "' has kind '" + meta.value("kind", std::string{}) + "'");
  CriticBundle b;
  b.config = iql_config_from_json(meta.at("iql"));
  std::mt19937_64 rng(0);
  b.q = CriticNet<float>("q", b.config, true, rng);
  b.q_target = CriticNet<float>("q_target", b.config, true, rng);
  b.v = CriticNet<float>("v", b.config, false, rng);
  b.normalizer = act::Normalizer::from_json(meta.at("normalizer"));
  b.action_min = meta.at("action_range").at(0);
  b.action_max = meta.at("action_range").at(1);
  b.roster_hash = std::stoull(meta.at("roster_hash").get<std::string>(), nullptr, 16);
  b.provenance = meta.value("provenance", nlohmann::json::object());
  nn::load_checkpoint(path, b.all_params());
  return b;
}

struct QValue {
  double value = 0.0;
  bool out_of_distribution = false;  // action outside the training range
};

// Q(window ending at t with a_t = action). Deterministic; the network is only
// read, so concurrent calls on one bundle are safe.
inline QValue q_value(CriticBundle& b, std::span<const StateRow> states, std::span<const float> actions, int t,
                      double action) {
  const auto w = make_critic_window(states, actions, t, b.config.seq_len, b.normalizer, static_cast<float>(action));
  return {b.q.value(w), action < b.action_min || action > b.action_max};
}

}  // namespace lbm::iql
