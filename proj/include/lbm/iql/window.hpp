#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lbm/act/sequence.hpp"

namespace lbm::iql {

using act::StateRow;

// Last L steps ending at t: states s_{t-L+1..t} and actions a_{t-L+1..t}.
// Steps before the episode start are left padding, zero-filled and invalid.
// The V network reads only the states.
struct CriticWindow {
  int L = 10;
  int valid_steps = 0;  // 1..L
  std::vector<StateRow> states;  // L
  std::vector<float> actions;    // L
  bool normalized = false;

  int first_valid_step() const { return L - valid_steps; }

  std::vector<unsigned char> step_valid() const {
    std::vector<unsigned char> v(static_cast<std::size_t>(L), 0);
    for (int k = first_valid_step(); k < L; ++k) v[k] = 1;
    return v;
  }

  void validate() const {
    if (L < 1) throw InvalidArgument("critic window length must be positive");
    if (valid_steps < 1 || valid_steps > L) throw InvalidArgument("critic window needs 1..L valid steps");
    if (states.size() != static_cast<std::size_t>(L) || actions.size() != static_cast<std::size_t>(L))
      throw InvalidArgument("malformed critic window");
    if (!normalized) throw InvalidArgument("critic window is not normalized");
  }
};

// Window ending at t. `action_override` replaces a_t (the CoT-conditioned
// action under evaluation); states and other actions are raw dataset values.
inline CriticWindow make_critic_window(std::span<const StateRow> states, std::span<const float> actions, int t, int L,
                                       const act::Normalizer& norm, std::optional<float> action_override = {}) {
  if (L < 1) throw InvalidArgument("critic window length must be positive");
  if (t < 0 || static_cast<std::size_t>(t) >= states.size())
    throw InvalidArgument("critic window index out of range");
  if (!action_override && static_cast<std::size_t>(t) >= actions.size())
    throw InvalidArgument("critic window needs a_t");
  CriticWindow w;
  w.L = L;
  w.valid_steps = std::min(t + 1, L);
  w.states.assign(static_cast<std::size_t>(L), StateRow{});
  w.actions.assign(static_cast<std::size_t>(L), 0.0f);
  for (int k = w.first_valid_step(); k < L; ++k) {
    const int i = t - (L - 1) + k;
    for (std::size_t f = 0; f < market::kStateDim; ++f) w.states[k][f] = norm.state(f, states[i][f]);
    const float a = (i == t && action_override) ? *action_override : actions[i];
    w.actions[k] = norm.action(a);
  }
  w.normalized = true;
  return w;
}

// One TD sample: (s, a) window at t, the state window at t+1 (unused when
// terminal) and the scaled reward r_t / return_scale.
struct Transition {
  CriticWindow current;
  CriticWindow next;
  float reward = 0.0f;
  bool terminal = false;
};

// Every step of every trajectory; the final step is terminal.
inline std::vector<Transition> build_transitions(const std::vector<market::Trajectory>& data, int L,
                                                 const act::Normalizer& norm) {
  std::vector<Transition> out;
  for (const auto& traj : data) {
    traj.validate();
    const int T = static_cast<int>(traj.length());
    for (int t = 0; t < T; ++t) {
      Transition tr;
      tr.current = make_critic_window(traj.states, traj.actions, t, L, norm);
      tr.terminal = t + 1 == T;
      if (!tr.terminal) tr.next = make_critic_window(traj.states, traj.actions, t + 1, L, norm);
      tr.reward = static_cast<float>(traj.rewards[t] / norm.return_scale);
      out.push_back(std::move(tr));
    }
  }
  return out;
}

}  // namespace lbm::iql
