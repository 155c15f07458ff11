#pragma once

#include <cmath>
#include <vector>

#include "lbm/nn/layers.hpp"

namespace lbm::nn {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

// AdamW with decoupled weight decay: w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w).
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  }

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) {
    if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
    cfg_.lr = lr;
  }
  long steps() const { return t_; }

  void step(const ParamList<T>& params) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw InvalidArgument("optimizer state does not match parameter list");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      if (p.grad.size() != p.value.size() || m_[i].size() != p.value.size())
        throw InvalidArgument("gradient/state shape mismatch for " + p.name);
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = static_cast<double>(p.grad[k]);
        m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g;
        v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g * g;
        const double mh = m_[i][k] / bc1, vh = v_[i][k] / bc2;
        const double w = static_cast<double>(p.value[k]);
        p.value[k] = static_cast<T>(w - cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w));
      }
    }
  }

  // State access for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Rescales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <class T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params)
    for (T g : p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto* p : params)
      for (T& g : p->grad) g *= s;
  }
  return norm;
}

}  // namespace lbm::nn
