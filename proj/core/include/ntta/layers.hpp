#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ntta/ops.hpp"
#include "ntta/rng.hpp"
#include "ntta/tensor.hpp"

namespace ntta {

/// How a forward pass treats dropout and batch-norm statistics.
///   train: dropout on, batch statistics + running-average update
///   infer: dropout off, running statistics
///   adapt: dropout off, batch statistics, running averages untouched
enum class Mode { train, infer, adapt };

enum class ParamRole { weight, bias, embedding, norm_gamma, norm_beta };

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  ParamRole role;
};

template <typename T>
using ParamList = std::vector<ParamEntry<T>>;

/// Non-trainable state that still belongs in a checkpoint (running statistics).
template <typename T>
struct BufferEntry {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using BufferList = std::vector<BufferEntry<T>>;

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
class Linear {
 public:
  Linear() = default;
  /// weight ~ U(-sqrt(1/in), sqrt(1/in)), bias likewise.
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void collect(ParamList<T>& out, const std::string& prefix) const;

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out] or undefined
};

enum class NormKind { layer_norm, batch_norm };

/// Layer or batch normalization with affine gamma/beta. These two tensors are
/// the only parameters touched by test-time adaptation.
template <typename T>
class NormLayer {
 public:
  NormLayer() = default;
  NormLayer(NormKind kind, std::size_t features);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  void collect(ParamList<T>& out, const std::string& prefix) const;
  void collect_buffers(BufferList<T>& out, const std::string& prefix) const;

  NormKind kind = NormKind::layer_norm;
  Tensor<T> gamma;         // [F], ones
  Tensor<T> beta;          // [F], zeros
  Tensor<T> running_mean;  // [F], batch_norm only
  Tensor<T> running_var;   // [F], batch_norm only
  T eps = static_cast<T>(kNormEps);
  T momentum = static_cast<T>(kBatchNormMomentum);
  /// batch_norm only: always normalize with current-batch statistics and never
  /// touch the running averages, whatever the forward mode.
  bool adapt_mode = false;

 private:
  bool warned_single_ = false;
};

/// Pre-norm multi-head self-attention with residual: x + Wo·MHA(LN(x)).
template <typename T>
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(std::size_t d_model, std::size_t heads, Rng& rng);

  /// `weights_out`, when given, receives the attention probabilities [B, H, L, L].
  Tensor<T> forward(const Tensor<T>& x, Mode mode, double dropout_rate, Rng& rng,
                    Tensor<T>* weights_out = nullptr);
  void collect(ParamList<T>& out, const std::string& prefix) const;

  std::size_t heads() const { return heads_; }

  NormLayer<T> norm;
  Linear<T> query, key, value, output;

 private:
  std::size_t heads_ = 1;
};

/// Pre-norm position-wise feed-forward with residual: x + W2·gelu(W1·LN(x)).
template <typename T>
class FeedForwardBlock {
 public:
  FeedForwardBlock() = default;
  FeedForwardBlock(std::size_t d_model, std::size_t hidden, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode, double dropout_rate, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;

  NormLayer<T> norm;
  Linear<T> fc1, fc2;
};

}  // namespace ntta
