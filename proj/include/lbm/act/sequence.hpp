#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/core/error.hpp"
#include "lbm/market/types.hpp"

namespace lbm::act {

using StateRow = std::array<float, market::kStateDim>;

// Per-feature standardization of states and actions plus the return divisor.
struct Normalizer {
  std::array<double, market::kStateDim> state_mean{};
  std::array<double, market::kStateDim> state_std{};
  double action_mean = 0.0;
  double action_std = 1.0;
  double return_scale = 2000.0;

  Normalizer() { state_std.fill(1.0); }

  static Normalizer fit(const std::vector<market::Trajectory>& data, double return_scale) {
    if (data.empty()) throw InvalidArgument("cannot fit normalizer on an empty dataset");
    if (!(return_scale > 0.0)) throw InvalidArgument("return_scale must be positive");
    Normalizer n;
    n.return_scale = return_scale;
    std::array<double, market::kStateDim> s1{}, s2{};
    double a1 = 0.0, a2 = 0.0, count = 0.0;
    for (const auto& t : data)
      for (std::size_t i = 0; i < t.length(); ++i) {
        for (std::size_t f = 0; f < market::kStateDim; ++f) {
          s1[f] += t.states[i][f];
          s2[f] += double(t.states[i][f]) * t.states[i][f];
        }
        a1 += t.actions[i];
        a2 += double(t.actions[i]) * t.actions[i];
        count += 1.0;
      }
    if (count == 0.0) throw InvalidArgument("cannot fit normalizer on empty trajectories");
    auto sd = [](double m1, double m2) {
      const double v = m2 - m1 * m1;
      return v > 1e-12 ? std::sqrt(v) : 1.0;  // constant features pass through centred
    };
    for (std::size_t f = 0; f < market::kStateDim; ++f) {
      n.state_mean[f] = s1[f] / count;
      n.state_std[f] = sd(n.state_mean[f], s2[f] / count);
    }
    n.action_mean = a1 / count;
    n.action_std = sd(n.action_mean, a2 / count);
    return n;
  }

  float state(std::size_t f, float x) const { return static_cast<float>((x - state_mean[f]) / state_std[f]); }
  float action(float a) const { return static_cast<float>((a - action_mean) / action_std); }

  nlohmann::json to_json() const {
    return {{"state_mean", state_mean}, {"state_std", state_std}, {"action_mean", action_mean},
            {"action_std", action_std}, {"return_scale", return_scale}};
  }
  static Normalizer from_json(const nlohmann::json& j) {
    Normalizer n;
    n.state_mean = j.at("state_mean").get<std::array<double, market::kStateDim>>();
    n.state_std = j.at("state_std").get<std::array<double, market::kStateDim>>();
    n.action_mean = j.at("action_mean").get<double>();
    n.action_std = j.at("action_std").get<double>();
    n.return_scale = j.at("return_scale").get<double>();
    return n;
  }
};

// Numeric window {R_{t-L..t}, s_{t-L..t}, a_{t-L..t-1}} as 3(L+1)-1 items
// ordered R, s, a per step. Steps before the episode start are left padding:
// zero-filled and marked invalid.
struct DecisionSequence {
  int L = 10;
  int valid_steps = 0;         // real steps in the window, 1..L+1
  std::vector<float> rtg;      // L+1
  std::vector<StateRow> states;  // L+1
  std::vector<float> actions;  // L
  bool normalized = false;

  int item_count() const { return 3 * (L + 1) - 1; }
  int first_valid_step() const { return L + 1 - valid_steps; }

  std::vector<unsigned char> item_valid() const {
    std::vector<unsigned char> v;
    v.reserve(static_cast<std::size_t>(item_count()));
    for (int k = 0; k <= L; ++k) {
      const unsigned char ok = k >= first_valid_step() ? 1 : 0;
      v.push_back(ok);
      v.push_back(ok);
      if (k < L) v.push_back(ok);
    }
    return v;
  }

  void validate() const {
    if (L < 0) throw InvalidArgument("window length must be non-negative");
    if (valid_steps < 1 || valid_steps > L + 1) throw InvalidArgument("window needs 1..L+1 valid steps");
    if (rtg.size() != static_cast<std::size_t>(L + 1) || states.size() != static_cast<std::size_t>(L + 1) ||
        actions.size() != static_cast<std::size_t>(L))
      throw InvalidArgument("malformed decision window");
  }
};

// Builds the normalized window ending at step t. `rtg_scaled` holds the
// already-scaled conditioning returns; states and actions are raw.
inline DecisionSequence make_window(std::span<const StateRow> states, std::span<const float> actions,
                                    std::span<const float> rtg_scaled, int t, int L, const Normalizer& norm) {
  if (t < 0 || static_cast<std::size_t>(t) >= states.size() || static_cast<std::size_t>(t) >= rtg_scaled.size() ||
      static_cast<std::size_t>(t) > actions.size())
    throw InvalidArgument("decision window index out of range");
  DecisionSequence seq;
  seq.L = L;
  seq.valid_steps = std::min(t, L) + 1;
  seq.rtg.assign(static_cast<std::size_t>(L + 1), 0.0f);
  seq.states.assign(static_cast<std::size_t>(L + 1), StateRow{});
  seq.actions.assign(static_cast<std::size_t>(L), 0.0f);
  for (int k = seq.first_valid_step(); k <= L; ++k) {
    const int i = t - L + k;
    seq.rtg[k] = rtg_scaled[i];
    for (std::size_t f = 0; f < market::kStateDim; ++f) seq.states[k][f] = norm.state(f, states[i][f]);
    if (k < L) seq.actions[k] = norm.action(actions[i]);
  }
  seq.normalized = true;
  return seq;
}

}  // namespace lbm::act
