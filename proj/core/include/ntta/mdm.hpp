#pragma once

#include <cstddef>
#include <vector>

#include "ntta/layers.hpp"
#include "ntta/tensor.hpp"

// Multi-scale decomposable mixing. A pyramid of progressively coarser signals
// is built by repeated non-overlapping average pooling along time,
//   tau[0] = x,  tau[i] = avg_pool(tau[i-1], k),
// then fused coarse-to-fine through low-rank time mixers,
//   xi[h-1] = tau[h-1],  xi[i] = tau[i] + up(gelu(down(xi[i+1]))).
// The block returns xi[0], which has the input's shape.

namespace ntta {

struct MdmConfig {
  std::size_t levels = 4;  // h >= 1; h == 1 makes the block the identity
  std::size_t kernel = 2;  // pooling kernel == stride, >= 2
  std::size_t rank = 16;   // bottleneck width of every level mixer, >= 1

  /// Shortest time length for which every level is non-empty: kernel^(levels-1).
  std::size_t min_length() const;
  /// Time extent of every pyramid level for an input of length `time_len`.
  std::vector<std::size_t> level_lengths(std::size_t time_len) const;
  /// Throws ConfigError on invalid hyperparameters or a too-short input.
  void validate(std::size_t time_len) const;
};

template <typename T>
struct ScalePyramid {
  std::vector<Tensor<T>> taus;  // [B, C, T_i], finest first
};

template <typename T>
struct FusedFeatures {
  std::vector<Tensor<T>> xis;  // same shapes as the pyramid
};

/// Low-rank MLP mapping level i+1 (length `coarse`) onto level i (length `fine`).
template <typename T>
struct LevelMixer {
  LevelMixer() = default;
  LevelMixer(std::size_t coarse, std::size_t fine, std::size_t rank, Rng& rng)
      : down(coarse, rank, rng), up(rank, fine, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const { return up.forward(gelu(down.forward(x))); }
  std::size_t parameter_count() const;

  Linear<T> down;
  Linear<T> up;
};

template <typename T>
ScalePyramid<T> build_pyramid(const Tensor<T>& x, const MdmConfig& cfg);

/// `mixers[i]` lifts level i+1 onto level i; needs exactly levels-1 mixers.
template <typename T>
FusedFeatures<T> fuse_top_down(const ScalePyramid<T>& pyramid, const std::vector<LevelMixer<T>>& mixers);

template <typename T>
class Mdm {
 public:
  Mdm() = default;
  Mdm(const MdmConfig& cfg, std::size_t time_len, Rng& rng);

  /// x: [B, C, T] -> [B, C, T].
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;

  const MdmConfig& config() const { return cfg_; }
  std::vector<LevelMixer<T>>& mixers() { return mixers_; }
  const std::vector<LevelMixer<T>>& mixers() const { return mixers_; }

 private:
  MdmConfig cfg_;
  std::size_t time_len_ = 0;
  std::vector<LevelMixer<T>> mixers_;
};

}  // namespace ntta
