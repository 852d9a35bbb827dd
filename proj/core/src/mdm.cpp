#include "ntta/mdm.hpp"

#include "ntta/errors.hpp"

namespace ntta {

std::size_t MdmConfig::min_length() const {
  std::size_t n = 1;
  for (std::size_t i = 1; i < levels; ++i) n *= kernel;
  return n;
}

std::vector<std::size_t> MdmConfig::level_lengths(std::size_t time_len) const {
  std::vector<std::size_t> lengths{time_len};
  for (std::size_t i = 1; i < levels; ++i) lengths.push_back(lengths.back() / kernel);
  return lengths;
}

void MdmConfig::validate(std::size_t time_len) const {
  if (levels == 0) throw ConfigError("mdm: levels must be >= 1");
  if (kernel < 2) throw ConfigError("mdm: pooling kernel must be >= 2");
  if (rank == 0) throw ConfigError("mdm: rank must be >= 1");
  if (time_len < min_length())
    throw ConfigError("mdm: time length " + std::to_string(time_len) + " is too short for " +
                      std::to_string(levels) + " levels with kernel " + std::to_string(kernel) +
                      "; minimum length is " + std::to_string(min_length()));
}

template <typename T>
std::size_t LevelMixer<T>::parameter_count() const {
  return down.weight.numel() + down.bias.numel() + up.weight.numel() + up.bias.numel();
}

template <typename T>
ScalePyramid<T> build_pyramid(const Tensor<T>& x, const MdmConfig& cfg) {
  if (x.rank() != 3) throw ShapeError("build_pyramid: expected [B, C, T], got " + shape_str(x.shape()));
  cfg.validate(x.dim(2));
  ScalePyramid<T> pyr;
  pyr.taus.push_back(x);
  for (std::size_t i = 1; i < cfg.levels; ++i)
    pyr.taus.push_back(avg_pool1d(pyr.taus.back(), cfg.kernel, cfg.kernel));
  return pyr;
}

template <typename T>
FusedFeatures<T> fuse_top_down(const ScalePyramid<T>& pyramid, const std::vector<LevelMixer<T>>& mixers) {
  const std::size_t h = pyramid.taus.size();
  if (h == 0) throw ConfigError("fuse_top_down: empty pyramid");
  if (mixers.size() != h - 1)
    throw ConfigError("fuse_top_down: " + std::to_string(h) + " levels need " + std::to_string(h - 1) +
                      " mixers, got " + std::to_string(mixers.size()));
  FusedFeatures<T> fused;
  fused.xis.resize(h);
  fused.xis[h - 1] = pyramid.taus[h - 1];
  for (std::size_t i = h - 1; i-- > 0;) {
    const auto& mixer = mixers[i];
    const auto coarse = pyramid.taus[i + 1].shape().back();
    const auto fine = pyramid.taus[i].shape().back();
    if (mixer.down.in_features() != coarse || mixer.up.out_features() != fine)
      throw ConfigError("fuse_top_down: mixer " + std::to_string(i) + " maps " +
                        std::to_string(mixer.down.in_features()) + " -> " +
                        std::to_string(mixer.up.out_features()) + " but level lengths are " +
                        std::to_string(coarse) + " -> " + std::to_string(fine));
    fused.xis[i] = add(pyramid.taus[i], mixer.forward(fused.xis[i + 1]));
  }
  return fused;
}

template <typename T>
Mdm<T>::Mdm(const MdmConfig& cfg, std::size_t time_len, Rng& rng) : cfg_(cfg), time_len_(time_len) {
  cfg_.validate(time_len);
  const auto lengths = cfg_.level_lengths(time_len);
  for (std::size_t i = 0; i + 1 < lengths.size(); ++i)
    mixers_.emplace_back(lengths[i + 1], lengths[i], cfg_.rank, rng);
}

template <typename T>
Tensor<T> Mdm<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 3 || x.dim(2) != time_len_)
    throw ShapeError("mdm: expected [B, C, " + std::to_string(time_len_) + "], got " + shape_str(x.shape()));
  if (cfg_.levels == 1) return x;
  return fuse_top_down(build_pyramid(x, cfg_), mixers_).xis.front();
}

template <typename T>
void Mdm<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < mixers_.size(); ++i) {
    const auto p = prefix + ".mixers." + std::to_string(i);
    mixers_[i].down.collect(out, p + ".down");
    mixers_[i].up.collect(out, p + ".up");
  }
}

template struct LevelMixer<float>;
template struct LevelMixer<double>;
template class Mdm<float>;
template class Mdm<double>;
template ScalePyramid<float> build_pyramid(const Tensor<float>&, const MdmConfig&);
template ScalePyramid<double> build_pyramid(const Tensor<double>&, const MdmConfig&);
template FusedFeatures<float> fuse_top_down(const ScalePyramid<float>&, const std::vector<LevelMixer<float>>&);
template FusedFeatures<double> fuse_top_down(const ScalePyramid<double>&, const std::vector<LevelMixer<double>>&);

}  // namespace ntta
