#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lbm/core/numfmt.hpp"
#include "lbm/think/direction.hpp"
#include "lbm/think/prompt.hpp"

namespace lbm::think {

struct CotResponse {
  std::string text;
  std::optional<double> claimed_cpa_ratio;
  Direction direction = Direction::None;
  std::vector<std::string> diagnostics;

  bool empty() const { return text.empty(); }
};

namespace detail {

inline std::string upper(std::string_view s) {
  std::string u(s);
  for (auto& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return u;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Longest decimal literal starting at s[i]: digits, optional fraction, optional exponent.
inline std::size_t number_end(std::string_view s, std::size_t i) {
  std::size_t j = i;
  while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
  if (j == i) return i;
  if (j + 1 < s.size() && s[j] == '.' && std::isdigit(static_cast<unsigned char>(s[j + 1]))) {
    ++j;
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
  }
  if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
    std::size_t k = j + 1;
    if (k < s.size() && (s[k] == '+' || s[k] == '-')) ++k;
    std::size_t m = k;
    while (m < s.size() && std::isdigit(static_cast<unsigned char>(s[m]))) ++m;
    if (m > k) j = m;
  }
  return j;
}

}  // namespace detail

// Total: never throws. The last "DIRECTION:" line decides; anything other than
// a single INCREASE or DECREASE keyword on it yields NONE. The claimed ratio is
// the first number after the last "CPA ratio" mention, if any.
inline CotResponse parse_cot(std::string_view text) {
  CotResponse r;
  r.text = std::string(text);
  const std::string up = detail::upper(text);
  int found = 0;
  std::string last;
  std::size_t pos = 0;
  while (pos <= up.size()) {
    std::size_t nl = up.find('\n', pos);
    if (nl == std::string::npos) nl = up.size();
    auto line = detail::trim(std::string_view(up).substr(pos, nl - pos));
    if (line.rfind("DIRECTION:", 0) == 0) {
      ++found;
      last = std::string(detail::trim(line.substr(10)));
    }
    pos = nl + 1;
  }
  if (found == 0) {
    r.diagnostics.push_back("no DIRECTION line");
  } else {
    if (found > 1) r.diagnostics.push_back("multiple DIRECTION lines; last one used");
    while (!last.empty() && (last.back() == '.' || last.back() == '!')) last.pop_back();
    if (last == "INCREASE") r.direction = Direction::Increase;
    else if (last == "DECREASE") r.direction = Direction::Decrease;
    else r.diagnostics.push_back("unrecognised direction '" + last + "'");
  }

  const std::size_t at = up.rfind("CPA RATIO");
  if (at != std::string::npos) {
    std::size_t i = at + 9;
    while (i < up.size() && !std::isdigit(static_cast<unsigned char>(up[i])) && up[i] != '\n') ++i;
    const std::size_t j = detail::number_end(text, i);
    if (j > i) {
      if (auto v = parse_double(text.substr(i, j - i))) r.claimed_cpa_ratio = *v;
    }
    if (!r.claimed_cpa_ratio) r.diagnostics.push_back("CPA ratio mentioned without a value");
  }
  return r;
}

struct HallucinationResult {
  bool pass = true;
  bool warning = false;  // no claim to check
  double computed = 0.0;
  double relative_error = 0.0;
};

// Fails when the claimed ratio deviates from the one implied by the context by
// more than tol (relative).
inline HallucinationResult hallucination_check(const PromptContext& ctx, const CotResponse& cot, double tol = 0.05,
                                               double eps = 1e-9, const bidding::CpaOptions& opt = {}) {
  HallucinationResult h;
  h.computed = ctx.computed_cpa_ratio(opt);
  if (!cot.claimed_cpa_ratio) {
    h.warning = true;
    return h;
  }
  h.relative_error = std::abs(*cot.claimed_cpa_ratio - h.computed) / std::max(h.computed, eps);
  h.pass = !(h.relative_error > tol);
  return h;
}

}  // namespace lbm::think
