#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ntta/layers.hpp"

namespace ntta {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;  // decoupled; applied to weight matrices only
};

/// Adam with decoupled weight decay. Moments are kept in double.
template <typename T>
class AdamW {
 public:
  AdamW(ParamList<T> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  /// Applies one update from the accumulated gradients, then clears them.
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].tensor;
      if (!p.has_grad()) continue;
      const bool decay = params_[i].role == ParamRole::weight && opts_.weight_decay > 0.0;
      auto w = p.data();
      auto g = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gj;
        v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gj * gj;
        double wj = static_cast<double>(w[j]);
        if (decay) wj -= opts_.lr * opts_.weight_decay * wj;
        wj -= opts_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opts_.eps);
        w[j] = static_cast<T>(wj);
      }
      p.clear_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
  }

  std::size_t steps() const { return t_; }

 private:
  ParamList<T> params_;
  AdamWOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace ntta
