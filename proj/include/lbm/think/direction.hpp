#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace lbm::think {

enum class Direction { Increase, Decrease, None };

inline const char* to_string(Direction d) {
  switch (d) {
    case Direction::Increase: return "INCREASE";
    case Direction::Decrease: return "DECREASE";
    default: return "NONE";
  }
}

inline std::optional<Direction> direction_from_string(std::string_view s) {
  if (s == "INCREASE") return Direction::Increase;
  if (s == "DECREASE") return Direction::Decrease;
  if (s == "NONE") return Direction::None;
  return std::nullopt;
}

inline Direction flip(Direction d) {
  if (d == Direction::Increase) return Direction::Decrease;
  if (d == Direction::Decrease) return Direction::Increase;
  return d;
}

}  // namespace lbm::think
