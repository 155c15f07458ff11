#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "lbm/core/rng.hpp"
#include "lbm/market/types.hpp"

namespace lbm::market {

struct ActionRange {
  double min = 0.0;
  double max = 10.0;
  double clamp(double a) const { return std::clamp(a, min, max); }
};

// Logging policy used to fill offline datasets.
class BehaviorPolicy {
 public:
  virtual ~BehaviorPolicy() = default;
  virtual std::string id() const = 0;
  virtual void reset(Rng& rng) = 0;
  virtual double act(const EpisodeState& s, Rng& rng) = 0;
};

// Bidding parameter follows a clipped Gaussian random walk.
class RandomWalkPolicy final : public BehaviorPolicy {
 public:
  RandomWalkPolicy(ActionRange range, double init_lo = 0.4, double init_hi = 2.5, double step_std = 0.15)
      : range_(range), init_lo_(init_lo), init_hi_(init_hi), step_std_(step_std) {}
  std::string id() const override { return "random-walk"; }
  void reset(Rng& rng) override { a_ = init_lo_ + (init_hi_ - init_lo_) * uniform01(rng); first_ = true; }
  double act(const EpisodeState&, Rng& rng) override {
    if (!first_) a_ = range_.clamp(a_ + normal(rng, 0.0, step_std_));
    first_ = false;
    return a_;
  }

 private:
  ActionRange range_;
  double init_lo_, init_hi_, step_std_;
  double a_ = 1.0;
  bool first_ = true;
};

// Multiplicative PI controller pacing spend toward a uniform budget curve, with
// multiplicative noise on its output.
class NoisyPidPolicy final : public BehaviorPolicy {
 public:
  NoisyPidPolicy(ActionRange range, double kp = 0.8, double ki = 0.1, double noise = 0.08)
      : range_(range), kp_(kp), ki_(ki), noise_(noise) {}
  std::string id() const override { return "noisy-pid"; }
  void reset(Rng& rng) override {
    a_ = 0.7 + 1.3 * uniform01(rng);
    integ_ = 0.0;
  }
  double act(const EpisodeState& s, Rng& rng) override {
    const double spent_frac = 1.0 - s[feature::budget_left];
    const double elapsed = 1.0 - s[feature::time_left];
    const double err = elapsed - spent_frac;  // > 0 means under-pacing
    integ_ += err;
    a_ = range_.clamp(a_ * std::exp(kp_ * err + ki_ * integ_ * 0.1 + normal(rng, 0.0, noise_)));
    return a_;
  }

 private:
  ActionRange range_;
  double kp_, ki_, noise_;
  double a_ = 1.0, integ_ = 0.0;
};

// Raises the parameter while the realized CPA is under the constraint and lowers
// it when the constraint is violated.
class ConstraintAwarePolicy final : public BehaviorPolicy {
 public:
  ConstraintAwarePolicy(ActionRange range, double rate = 0.08, double noise = 0.05)
      : range_(range), rate_(rate), noise_(noise) {}
  std::string id() const override { return "constraint-aware"; }
  void reset(Rng& rng) override { a_ = 0.6 + 1.2 * uniform01(rng); first_ = true; }
  double act(const EpisodeState& s, Rng& rng) override {
    if (!first_) {
      const double ratio = s[feature::current_cpa_ratio];
      const double dir = ratio > 1.0 ? -1.0 : 1.0;
      a_ = range_.clamp(a_ * std::exp(dir * rate_ + normal(rng, 0.0, noise_)));
    }
    first_ = false;
    return a_;
  }

 private:
  ActionRange range_;
  double rate_, noise_;
  double a_ = 1.0;
  bool first_ = true;
};

inline std::unique_ptr<BehaviorPolicy> make_policy(const std::string& name, ActionRange range) {
  if (name == "random-walk") return std::make_unique<RandomWalkPolicy>(range);
  if (name == "noisy-pid") return std::make_unique<NoisyPidPolicy>(range);
  if (name == "constraint-aware") return std::make_unique<ConstraintAwarePolicy>(range);
  throw InvalidArgument("unknown behavior policy '" + name + "'");
}

}  // namespace lbm::market
