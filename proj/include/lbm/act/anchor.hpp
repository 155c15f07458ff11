#pragma once

#include "lbm/think/direction.hpp"

namespace lbm::act {

// A CoT direction is kept only if it agrees with the logged adjustment
// a_t - a_prev. A zero adjustment agrees with either direction; NONE carries no
// claim and is always kept.
inline bool anchor_accepts(think::Direction dir, double a_t, double a_prev) {
  const double delta = a_t - a_prev;
  if (dir == think::Direction::Increase) return !(delta < 0.0);
  if (dir == think::Direction::Decrease) return !(delta > 0.0);
  return true;
}

}  // namespace lbm::act
