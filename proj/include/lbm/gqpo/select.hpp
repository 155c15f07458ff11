#pragma once

#include <cmath>
#include <concepts>
#include <optional>
#include <string>
#include <vector>

#include "lbm/core/error.hpp"
#include "lbm/market/types.hpp"

namespace lbm::gqpo {

// Action chosen for step t of a dataset trajectory when conditioned on a CoT.
template <class A>
concept Actor = requires(A a, const market::Trajectory& tr, int t, const std::string& cot) {
  { a(tr, t, cot) } -> std::convertible_to<double>;
};

// Q of step t of a dataset trajectory with a_t replaced by `action`.
template <class C>
concept Critic = requires(C c, const market::Trajectory& tr, int t, double action) {
  { c(tr, t, action) } -> std::convertible_to<double>;
};

// Q(s_t, cot_action) - Q(s_t, dataset_action).
template <Critic C>
double relative_q(C& critic, const market::Trajectory& tr, int t, double cot_action, double dataset_action) {
  if (t < 0 || static_cast<std::size_t>(t) >= tr.length()) throw InvalidArgument("relative_q: step out of range");
  if (cot_action == dataset_action) return 0.0;
  return static_cast<double>(critic(tr, t, cot_action)) - static_cast<double>(critic(tr, t, dataset_action));
}

// Index of the largest strictly positive value, lowest index on ties; nullopt
// when none is positive.
inline std::optional<std::size_t> select_best(const std::vector<double>& delta_q) {
  if (delta_q.empty()) throw InvalidArgument("select_best: empty group");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < delta_q.size(); ++i) {
    if (!(delta_q[i] > 0.0)) continue;
    if (!best || delta_q[i] > delta_q[*best]) best = i;
  }
  return best;
}

}  // namespace lbm::gqpo
