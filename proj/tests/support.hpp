#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ntta/rng.hpp"
#include "ntta/tensor.hpp"

namespace ntta::testing {

inline Tensor<double> randn(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = sd * rng.normal();
  return t;
}

inline Tensor<float> randn_f(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(sd * rng.normal());
  return t;
}

/// Max relative error between reverse-mode and central-difference gradients of
/// the scalar loss(inputs) with respect to every input scalar.
inline double max_grad_error(std::vector<Tensor<double>> inputs,
                             const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& loss,
                             double step = 1e-5) {
  auto& tape = GradTape<double>::current();
  tape.clear();
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  backward(loss(inputs));
  double worst = 0.0;
  NoGradGuard guard;
  for (auto& t : inputs) {
    std::vector<double> g(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), g.begin());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t[i];
      t[i] = orig + step;
      const double lp = loss(inputs).item();
      t[i] = orig - step;
      const double lm = loss(inputs).item();
      t[i] = orig;
      const double num = (lp - lm) / (2 * step);
      worst = std::max(worst, std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-6}));
    }
  }
  tape.clear();
  return worst;
}

}  // namespace ntta::testing
