#pragma once

#include <cstddef>
#include <vector>

#include "ntta/rng.hpp"
#include "ntta/tensor.hpp"

// Differentiable operations. Each records a backward closure on the calling
// thread's GradTape when any input requires grad and recording is enabled.
// Gradients accumulate (+=) into inputs.

namespace ntta {

inline constexpr double kGeluCoeff = 0.044715;

/// [m,k]·[k,n] -> [m,n], or batched [b,m,k]·[b,k,n] -> [b,m,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// a·bᵀ: [m,k]·[n,k]ᵀ -> [m,n], or batched [b,m,k]·[b,n,k]ᵀ -> [b,m,n].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

/// x·wᵀ + bias over the trailing axis. `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Binary ops broadcast the smaller operand when its shape, with leading 1s
// stripped, is a suffix of the other's shape.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
/// Throws DomainError on any non-positive input.
template <typename T>
Tensor<T> log(const Tensor<T>& x);
/// tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
/// max(x, floor); gradient is zero where the floor is active.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T floor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// Reduces one axis away. A fully reduced result has shape {1}.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);

/// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);

/// Average pooling over the trailing (time) axis: T' = floor((T - k) / s) + 1.
template <typename T>
Tensor<T> avg_pool1d(const Tensor<T>& x, std::size_t kernel, std::size_t stride);

/// Normalizes every row over the trailing axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Per-feature statistics over all rows (every axis but the trailing one).
template <typename T>
struct BatchStats {
  std::vector<T> mean;
  std::vector<T> var;  // biased (divide by row count)
  std::size_t rows = 0;
};

/// Batch normalization with statistics from the current batch; gradients flow through them.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                     BatchStats<T>* stats_out = nullptr);

/// Batch normalization with fixed (running) statistics.
template <typename T>
Tensor<T> batch_norm_fixed(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const Tensor<T>& mean, const Tensor<T>& var, T eps);

/// Inverted dropout. Identity when !training or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng);

/// Value copy cut off from the tape.
template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return x.clone();
}

}  // namespace ntta
