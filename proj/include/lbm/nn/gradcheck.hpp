#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lbm/nn/layers.hpp"

namespace lbm::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // coordinates whose perturbation crossed a nondifferentiable point
  // Worst coordinate, for diagnostics.
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares reverse-mode gradients of a scalar loss against central finite
// differences over every coordinate of `params`. `loss_fn` must rebuild the
// loss from the current parameter values on the graph it is given.
// Relative error per coordinate is |a - n| / max(|a|, |n|, floor). The floor
// keeps coordinates with an exactly zero gradient (e.g. key biases, which
// softmax cancels) from turning finite-difference roundoff into a large ratio.
template <class T>
GradCheckResult grad_check(const std::function<Tensor<T>(Graph<T>&)>& loss_fn, const ParamList<T>& params,
                           double eps = 1e-6, double floor = 1e-5) {
  GradCheckResult res;
  zero_grads(params);
  std::vector<signed char> base_kinks;
  {
    Graph<T> g;
    g.kink_log = &base_kinks;
    Tensor<T> loss = loss_fn(g);
    g.backward(loss);
    g.accumulate_param_grads();
  }
  auto eval = [&](std::vector<signed char>& kinks) {
    Graph<T> g;
    g.kink_log = &kinks;
    return static_cast<double>(loss_fn(g).item());
  };
  for (auto* p : params) {
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const T saved = p->value[k];
      std::vector<signed char> kp, km;
      p->value[k] = static_cast<T>(static_cast<double>(saved) + eps);
      const double lp = eval(kp);
      p->value[k] = static_cast<T>(static_cast<double>(saved) - eps);
      const double lm = eval(km);
      p->value[k] = saved;
      if (kp != base_kinks || km != base_kinks) {
        ++res.skipped_kinks;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * eps);
      const double analytic = static_cast<double>(p->grad[k]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p->name;
        res.worst_index = k;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace lbm::nn
