#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lupi/common.hpp"
#include "lupi/tensor.hpp"

namespace lupi::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

using LossBuilder = std::function<Tensor(const std::map<std::string, Tensor>&)>;

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Central-difference oracle: runs the builder once on a tape for the analytic
// gradients, then re-evaluates it untracked at perturbed inputs. The builder
// must be a pure function of its inputs.
inline GradCheck grad_check(const LossBuilder& build,
                            const std::map<std::string, Tensor>& inputs,
                            double h = 1e-5) {
  GradMap analytic;
  {
    Tape tape;
    std::map<std::string, Tensor> tracked;
    for (const auto& [name, t] : inputs) tracked.emplace(name, tape.watch(name, t));
    Tensor loss = build(tracked);
    analytic = tape.backward(loss);
  }

  GradCheck result;
  for (const auto& [name, t] : inputs) {
    const Tensor& grad = analytic.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::map<std::string, Tensor> shifted = inputs;
      std::vector<double> vals(t.data().begin(), t.data().end());
      vals[i] += h;
      shifted[name] = Tensor::from_data(t.shape(), vals);
      const double up = build(shifted).item();
      vals[i] -= 2.0 * h;
      shifted[name] = Tensor::from_data(t.shape(), vals);
      const double down = build(shifted).item();
      const double numeric = (up - down) / (2.0 * h);
      const double a = grad.data()[i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double err = std::abs(a - numeric);
      const double rel = err <= 1e-7 ? 0.0 : err / std::max(scale, 1e-3);
      if (rel > result.max_rel_err) result.max_rel_err = rel;
      ++result.checked;
    }
  }
  return result;
}

}  // namespace lupi::testing
