#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ntta/layers.hpp"
#include "ntta/mdm.hpp"

namespace ntta {

struct ModelConfig {
  std::size_t channels = 8;
  std::size_t time_len = 128;
  std::size_t patch_len = 16;
  std::size_t d_model = 64;
  std::size_t n_layers = 8;
  std::size_t n_heads = 4;
  std::size_t n_classes = 10;
  std::size_t ff_hidden = 128;
  double dropout = 0.1;
  std::optional<MdmConfig> mdm = MdmConfig{};  // absent: no multi-scale front-end
  bool sd_enabled = true;                      // auxiliary heads for self-distillation

  std::size_t n_tokens() const { return time_len / patch_len; }
  bool mdm_active() const { return mdm.has_value() && mdm->levels > 1; }
  /// Throws ConfigError naming the violated constraint.
  void validate() const;
};

/// Hidden state after every encoder block, shallowest first.
template <typename T>
struct LayerOutputs {
  std::vector<Tensor<T>> hidden;  // n_layers x [B, L, D]
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;                  // [B, K]
  LayerOutputs<T> layers;            // filled when requested
  std::vector<Tensor<T>> aux_logits; // n_layers - 1 entries when requested and sd_enabled
};

/// Multi-scale front-end -> patch tokenizer -> pre-norm Transformer encoder ->
/// mean-pooled classification head. Optional per-layer auxiliary heads share the
/// head's pooling and normalization.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  /// Independent deep copy (parameters, running statistics, adapt flags).
  Model clone() const;
  void copy_state_from(const Model& other);

  /// x: [B, C, T] -> tokens [B, L, D]. Includes the batch-norm and positional embeddings.
  Tensor<T> tokenize(const Tensor<T>& x, Mode mode);
  LayerOutputs<T> encode(const Tensor<T>& tokens, Mode mode);
  /// Mean over tokens followed by the head's layer norm: [B, L, D] -> [B, D].
  Tensor<T> pool(const Tensor<T>& z, Mode mode);
  /// [B, L, D] -> logits [B, K].
  Tensor<T> classify(const Tensor<T>& z, Mode mode);

  /// Full pipeline. With `keep_layers`, hidden states and (when sd_enabled)
  /// auxiliary-head logits are returned as well.
  ForwardResult<T> forward(const Tensor<T>& x, Mode mode, bool keep_layers = false);

  /// Every trainable tensor exactly once, in a fixed order with hierarchical names.
  ParamList<T> parameters() const;
  BufferList<T> buffers() const;
  std::size_t parameter_count() const;

  std::vector<NormLayer<T>*> norm_layers();
  void set_adapt_mode(bool on);
  void reseed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

  const ModelConfig& config() const { return cfg_; }

  // Components are public for inspection and hand-set weights in tests.
  std::optional<Mdm<T>> mdm;
  Linear<T> patch_proj;
  NormLayer<T> token_norm;      // batch_norm over D
  Tensor<T> pos_embedding;      // [L, D]
  std::vector<AttentionBlock<T>> attention;
  std::vector<FeedForwardBlock<T>> feed_forward;
  NormLayer<T> head_norm;       // layer_norm over D
  Linear<T> head;
  std::vector<Linear<T>> sd_heads;

 private:
  ModelConfig cfg_;
  std::uint64_t seed_;
  Rng dropout_rng_;
};

}  // namespace ntta
