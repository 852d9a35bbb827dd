#include "ntta/layers.hpp"

#include <cmath>

#include "ntta/errors.hpp"
#include "ntta/log.hpp"

namespace ntta {

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  if (in == 0 || out == 0) throw ConfigError("Linear: extents must be positive");
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  weight = uniform_tensor<T>({out, in}, bound, rng).set_requires_grad(true);
  if (with_bias) bias = uniform_tensor<T>({out}, bound, rng).set_requires_grad(true);
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, ParamRole::weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, ParamRole::bias});
}

template <typename T>
NormLayer<T>::NormLayer(NormKind k, std::size_t features) : kind(k) {
  if (features == 0) throw ConfigError("NormLayer: feature extent must be positive");
  gamma = Tensor<T>({features}, T(1)).set_requires_grad(true);
  beta = Tensor<T>({features}, T(0)).set_requires_grad(true);
  if (kind == NormKind::batch_norm) {
    running_mean = Tensor<T>({features}, T(0));
    running_var = Tensor<T>({features}, T(1));
  }
}

template <typename T>
Tensor<T> NormLayer<T>::forward(const Tensor<T>& x, Mode mode) {
  if (kind == NormKind::layer_norm) return layer_norm(x, gamma, beta, eps);

  if (adapt_mode || mode == Mode::adapt) {
    if (x.dim(0) == 1 && !warned_single_) {
      warned_single_ = true;
      log_warn("batch_norm: estimating statistics from a batch of one sample");
    }
    return batch_norm(x, gamma, beta, eps);
  }
  if (mode == Mode::train) {
    BatchStats<T> stats;
    auto y = batch_norm(x, gamma, beta, eps, &stats);
    const T correction = stats.rows > 1 ? static_cast<T>(stats.rows) / static_cast<T>(stats.rows - 1) : T(1);
    for (std::size_t j = 0; j < stats.mean.size(); ++j) {
      running_mean[j] = (T(1) - momentum) * running_mean[j] + momentum * stats.mean[j];
      running_var[j] = (T(1) - momentum) * running_var[j] + momentum * stats.var[j] * correction;
    }
    return y;
  }
  return batch_norm_fixed(x, gamma, beta, running_mean, running_var, eps);
}

template <typename T>
void NormLayer<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma, ParamRole::norm_gamma});
  out.push_back({prefix + ".beta", beta, ParamRole::norm_beta});
}

template <typename T>
void NormLayer<T>::collect_buffers(BufferList<T>& out, const std::string& prefix) const {
  if (kind != NormKind::batch_norm) return;
  out.push_back({prefix + ".running_mean", running_mean});
  out.push_back({prefix + ".running_var", running_var});
}

template <typename T>
AttentionBlock<T>::AttentionBlock(std::size_t d_model, std::size_t heads, Rng& rng)
    : norm(NormKind::layer_norm, d_model), heads_(heads) {
  if (heads == 0 || d_model % heads != 0)
    throw ConfigError("AttentionBlock: d_model " + std::to_string(d_model) +
                      " is not divisible by head count " + std::to_string(heads));
  query = Linear<T>(d_model, d_model, rng);
  key = Linear<T>(d_model, d_model, rng);
  value = Linear<T>(d_model, d_model, rng);
  output = Linear<T>(d_model, d_model, rng);
}

template <typename T>
Tensor<T> AttentionBlock<T>::forward(const Tensor<T>& x, Mode mode, double dropout_rate, Rng& rng,
                                     Tensor<T>* weights_out) {
  if (x.rank() != 3) throw ShapeError("attention: expected [B, L, D], got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2), h = heads_, dh = d / h;
  auto split_heads = [&](const Tensor<T>& t) {
    return reshape(permute(reshape(t, {b, l, h, dh}), {0, 2, 1, 3}), {b * h, l, dh});
  };
  const auto normed = norm.forward(x, mode);
  const auto q = split_heads(query.forward(normed));
  const auto k = split_heads(key.forward(normed));
  const auto v = split_heads(value.forward(normed));
  const auto scores = scale(matmul_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  const auto weights = softmax(scores, 2);
  if (weights_out) *weights_out = reshape(detach(weights), {b, h, l, l});
  const auto mixed = reshape(permute(reshape(matmul(weights, v), {b, h, l, dh}), {0, 2, 1, 3}), {b, l, d});
  const bool training = mode == Mode::train;
  return add(x, dropout(output.forward(mixed), dropout_rate, training, rng));
}

template <typename T>
void AttentionBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  norm.collect(out, prefix + ".norm");
  query.collect(out, prefix + ".query");
  key.collect(out, prefix + ".key");
  value.collect(out, prefix + ".value");
  output.collect(out, prefix + ".output");
}

template <typename T>
FeedForwardBlock<T>::FeedForwardBlock(std::size_t d_model, std::size_t hidden, Rng& rng)
    : norm(NormKind::layer_norm, d_model), fc1(d_model, hidden, rng), fc2(hidden, d_model, rng) {}

template <typename T>
Tensor<T> FeedForwardBlock<T>::forward(const Tensor<T>& x, Mode mode, double dropout_rate, Rng& rng) {
  const auto hidden = gelu(fc1.forward(norm.forward(x, mode)));
  return add(x, dropout(fc2.forward(hidden), dropout_rate, mode == Mode::train, rng));
}

template <typename T>
void FeedForwardBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  norm.collect(out, prefix + ".norm");
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

template class Linear<float>;
template class Linear<double>;
template class NormLayer<float>;
template class NormLayer<double>;
template class AttentionBlock<float>;
template class AttentionBlock<double>;
template class FeedForwardBlock<float>;
template class FeedForwardBlock<double>;

}  // namespace ntta
