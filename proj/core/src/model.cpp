#include "ntta/model.hpp"

#include <cmath>

#include "ntta/errors.hpp"

namespace ntta {

void ModelConfig::validate() const {
  if (channels == 0 || time_len == 0 || patch_len == 0 || d_model == 0 || ff_hidden == 0)
    throw ConfigError("model: extents must be positive");
  if (time_len % patch_len != 0)
    throw ConfigError("model: time_len " + std::to_string(time_len) + " is not divisible by patch_len " +
                      std::to_string(patch_len));
  if (n_heads == 0 || d_model % n_heads != 0)
    throw ConfigError("model: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  if (n_layers == 0) throw ConfigError("model: n_layers must be >= 1");
  if (n_classes < 2) throw ConfigError("model: n_classes must be >= 2");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must lie in [0, 1)");
  if (sd_enabled && n_layers < 2) throw ConfigError("model: self-distillation needs at least 2 layers");
  if (mdm) mdm->validate(time_len);
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed), dropout_rng_(derive_seed(seed, 1)) {
  cfg_.validate();
  Rng rng(derive_seed(seed, 0));
  if (cfg_.mdm) mdm.emplace(*cfg_.mdm, cfg_.time_len, rng);
  patch_proj = Linear<T>(cfg_.channels * cfg_.patch_len, cfg_.d_model, rng);
  token_norm = NormLayer<T>(NormKind::batch_norm, cfg_.d_model);
  pos_embedding = Tensor<T>({cfg_.n_tokens(), cfg_.d_model});
  for (auto& v : pos_embedding.data()) v = static_cast<T>(rng.uniform(-0.02, 0.02));
  pos_embedding.set_requires_grad(true);
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    attention.emplace_back(cfg_.d_model, cfg_.n_heads, rng);
    feed_forward.emplace_back(cfg_.d_model, cfg_.ff_hidden, rng);
  }
  head_norm = NormLayer<T>(NormKind::layer_norm, cfg_.d_model);
  // Zero-initialized classifiers start at exactly uniform predictions.
  auto zero_head = [&] {
    Linear<T> l(cfg_.d_model, cfg_.n_classes, rng);
    for (auto& v : l.weight.data()) v = T(0);
    for (auto& v : l.bias.data()) v = T(0);
    return l;
  };
  head = zero_head();
  if (cfg_.sd_enabled)
    for (std::size_t i = 0; i + 1 < cfg_.n_layers; ++i) sd_heads.push_back(zero_head());
}

template <typename T>
Model<T> Model<T>::clone() const {
  Model copy(cfg_, seed_);
  copy.copy_state_from(*this);
  copy.dropout_rng_ = dropout_rng_;
  return copy;
}

template <typename T>
void Model<T>::copy_state_from(const Model& other) {
  auto dst = parameters();
  auto src = other.parameters();
  if (dst.size() != src.size()) throw ConfigError("copy_state_from: parameter lists differ");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i].tensor.assign(src[i].tensor);
  auto dbuf = buffers();
  auto sbuf = other.buffers();
  for (std::size_t i = 0; i < dbuf.size(); ++i) dbuf[i].tensor.assign(sbuf[i].tensor);
  auto dnorm = norm_layers();
  auto snorm = const_cast<Model&>(other).norm_layers();
  for (std::size_t i = 0; i < dnorm.size(); ++i) dnorm[i]->adapt_mode = snorm[i]->adapt_mode;
}

template <typename T>
Tensor<T> Model<T>::tokenize(const Tensor<T>& x, Mode mode) {
  if (x.rank() != 3 || x.dim(1) != cfg_.channels || x.dim(2) != cfg_.time_len)
    throw ShapeError("tokenize: expected [B, " + std::to_string(cfg_.channels) + ", " +
                     std::to_string(cfg_.time_len) + "], got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), c = cfg_.channels, l = cfg_.n_tokens(), p = cfg_.patch_len;
  const auto patches = reshape(permute(reshape(x, {b, c, l, p}), {0, 2, 1, 3}), {b, l, c * p});
  const auto projected = token_norm.forward(patch_proj.forward(patches), mode);
  return add(projected, pos_embedding);
}

template <typename T>
LayerOutputs<T> Model<T>::encode(const Tensor<T>& tokens, Mode mode) {
  LayerOutputs<T> out;
  auto z = tokens;
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    z = attention[i].forward(z, mode, cfg_.dropout, dropout_rng_);
    z = feed_forward[i].forward(z, mode, cfg_.dropout, dropout_rng_);
    out.hidden.push_back(z);
  }
  return out;
}

template <typename T>
Tensor<T> Model<T>::pool(const Tensor<T>& z, Mode mode) {
  return head_norm.forward(mean_axis(z, 1), mode);
}

template <typename T>
Tensor<T> Model<T>::classify(const Tensor<T>& z, Mode mode) {
  return head.forward(pool(z, mode));
}

template <typename T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& x, Mode mode, bool keep_layers) {
  const auto mixed = mdm ? mdm->forward(x) : x;
  auto layers = encode(tokenize(mixed, mode), mode);
  ForwardResult<T> result;
  result.logits = classify(layers.hidden.back(), mode);
  if (keep_layers) {
    if (cfg_.sd_enabled)
      for (std::size_t i = 0; i < sd_heads.size(); ++i)
        result.aux_logits.push_back(sd_heads[i].forward(pool(layers.hidden[i], mode)));
    result.layers = std::move(layers);
  }
  return result;
}

template <typename T>
ParamList<T> Model<T>::parameters() const {
  ParamList<T> out;
  if (mdm) mdm->collect(out, "mdm");
  patch_proj.collect(out, "tokenizer.proj");
  token_norm.collect(out, "tokenizer.norm");
  out.push_back({"tokenizer.pos_embedding", pos_embedding, ParamRole::embedding});
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    const auto p = "encoder." + std::to_string(i);
    attention[i].collect(out, p + ".attn");
    feed_forward[i].collect(out, p + ".ff");
  }
  head_norm.collect(out, "head.norm");
  head.collect(out, "head.fc");
  for (std::size_t i = 0; i < sd_heads.size(); ++i) sd_heads[i].collect(out, "sd_heads." + std::to_string(i));
  return out;
}

template <typename T>
BufferList<T> Model<T>::buffers() const {
  BufferList<T> out;
  token_norm.collect_buffers(out, "tokenizer.norm");
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
std::vector<NormLayer<T>*> Model<T>::norm_layers() {
  std::vector<NormLayer<T>*> out{&token_norm};
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    out.push_back(&attention[i].norm);
    out.push_back(&feed_forward[i].norm);
  }
  out.push_back(&head_norm);
  return out;
}

template <typename T>
void Model<T>::set_adapt_mode(bool on) {
  for (auto* n : norm_layers()) n->adapt_mode = on;
}

template class Model<float>;
template class Model<double>;

}  // namespace ntta
