#include "ntta/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ntta/errors.hpp"

namespace ntta {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
bool tracks(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (auto* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

/// Gradient buffer of an input, allocated on demand; null when it does not require grad.
template <typename T>
T* grad_of(const ImplPtr<T>& impl) {
  if (!impl || !impl->requires_grad) return nullptr;
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), T(0));
  return impl->grad.data();
}

template <typename T, typename F>
void record(Tensor<T>& out, F&& fn) {
  out.set_requires_grad(true);
  GradTape<T>::current().record(out.impl(), std::forward<F>(fn));
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i + 1 < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return a;
  const auto sa = strip_leading_ones(a);
  const auto sb = strip_leading_ones(b);
  const auto na = numel_of(a), nb = numel_of(b);
  if (na >= nb && is_suffix(sb, a)) return na == nb && b.size() > a.size() ? b : a;
  if (nb > na && is_suffix(sa, b)) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                   shape_str(b));
}

enum class BinOp { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinOp op, const char* name) {
  Tensor<T> out(broadcast_shape(a.shape(), b.shape(), name));
  const std::size_t n = out.numel(), na = a.numel(), nb = b.numel();
  const std::size_t period = std::min(na, nb);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  for (std::size_t r = 0; r < n; r += period) {
    for (std::size_t j = 0; j < period; ++j) {
      const T x = pa[na == n ? r + j : j];
      const T y = pb[nb == n ? r + j : j];
      po[r + j] = op == BinOp::add ? x + y : op == BinOp::sub ? x - y : x * y;
    }
  }
  if (tracks({&a, &b})) {
    record(out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), op, n, na, nb, period] {
      const T* g = oi->grad.data();
      T* ga = grad_of(ai);
      T* gb = grad_of(bi);
      for (std::size_t r = 0; r < n; r += period) {
        for (std::size_t j = 0; j < period; ++j) {
          const std::size_t ia = na == n ? r + j : j;
          const std::size_t ib = nb == n ? r + j : j;
          const T gi = g[r + j];
          switch (op) {
            case BinOp::add:
              if (ga) ga[ia] += gi;
              if (gb) gb[ib] += gi;
              break;
            case BinOp::sub:
              if (ga) ga[ia] += gi;
              if (gb) gb[ib] -= gi;
              break;
            case BinOp::mul:
              if (ga) ga[ia] += gi * bi->data[ib];
              if (gb) gb[ib] += gi * ai->data[ia];
              break;
          }
        }
      }
    });
  }
  return out;
}

/// Elementwise unary op; `deriv(x, y)` gives dy/dx from input and output values.
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D deriv) {
  Tensor<T> out(x.shape());
  auto px = x.data();
  auto po = out.data();
  for (std::size_t i = 0; i < px.size(); ++i) po[i] = f(px[i]);
  if (tracks({&x})) {
    record(out, [xi = x.impl(), oi = out.impl(), deriv] {
      T* gx = grad_of(xi);
      const T* g = oi->grad.data();
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g[i] * deriv(xi->data[i], oi->data[i]);
    });
  }
  return out;
}

struct MatDims {
  std::size_t batch, m, k, n;
};

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  MatDims d{};
  if (a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0)) {
    d = {1, a.dim(0), a.dim(1), b.dim(1)};
  } else if (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1)) {
    d = {a.dim(0), a.dim(1), a.dim(2), b.dim(2)};
  } else {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Tensor<T> out(a.rank() == 2 ? Shape{d.m, d.n} : Shape{d.batch, d.m, d.n});
  for (std::size_t i = 0; i < d.batch; ++i) {
    CMap<T> A(a.data().data() + i * d.m * d.k, d.m, d.k);
    CMap<T> B(b.data().data() + i * d.k * d.n, d.k, d.n);
    Map<T> C(out.data().data() + i * d.m * d.n, d.m, d.n);
    C.noalias() = A * B;
  }
  if (tracks({&a, &b})) {
    record(out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), d] {
      T* ga = grad_of(ai);
      T* gb = grad_of(bi);
      for (std::size_t i = 0; i < d.batch; ++i) {
        CMap<T> G(oi->grad.data() + i * d.m * d.n, d.m, d.n);
        if (ga) {
          CMap<T> B(bi->data.data() + i * d.k * d.n, d.k, d.n);
          Map<T>(ga + i * d.m * d.k, d.m, d.k).noalias() += G * B.transpose();
        }
        if (gb) {
          CMap<T> A(ai->data.data() + i * d.m * d.k, d.m, d.k);
          Map<T>(gb + i * d.k * d.n, d.k, d.n).noalias() += A.transpose() * G;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  MatDims d{};
  if (a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1)) {
    d = {1, a.dim(0), a.dim(1), b.dim(0)};
  } else if (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2)) {
    d = {a.dim(0), a.dim(1), a.dim(2), b.dim(1)};
  } else {
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Tensor<T> out(a.rank() == 2 ? Shape{d.m, d.n} : Shape{d.batch, d.m, d.n});
  for (std::size_t i = 0; i < d.batch; ++i) {
    CMap<T> A(a.data().data() + i * d.m * d.k, d.m, d.k);
    CMap<T> B(b.data().data() + i * d.n * d.k, d.n, d.k);
    Map<T>(out.data().data() + i * d.m * d.n, d.m, d.n).noalias() = A * B.transpose();
  }
  if (tracks({&a, &b})) {
    record(out, [ai = a.impl(), bi = b.impl(), oi = out.impl(), d] {
      T* ga = grad_of(ai);
      T* gb = grad_of(bi);
      for (std::size_t i = 0; i < d.batch; ++i) {
        CMap<T> G(oi->grad.data() + i * d.m * d.n, d.m, d.n);
        if (ga) {
          CMap<T> B(bi->data.data() + i * d.n * d.k, d.n, d.k);
          Map<T>(ga + i * d.m * d.k, d.m, d.k).noalias() += G * B;
        }
        if (gb) {
          CMap<T> A(ai->data.data() + i * d.m * d.k, d.m, d.k);
          Map<T>(gb + i * d.n * d.k, d.n, d.k).noalias() += G.transpose() * A;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.shape().back() != weight.dim(1))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  const std::size_t in = weight.dim(1), out_f = weight.dim(0), rows = x.numel() / in;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f))
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  Shape shape = x.shape();
  shape.back() = out_f;
  Tensor<T> out(shape);
  CMap<T> X(x.data().data(), rows, in);
  CMap<T> W(weight.data().data(), out_f, in);
  Map<T> Y(out.data().data(), rows, out_f);
  Y.noalias() = X * W.transpose();
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data().data(), out_f);
    Y.rowwise() += b;
  }
  if (tracks({&x, &weight, &bias})) {
    record(out, [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl(), in, out_f, rows] {
      CMap<T> G(oi->grad.data(), rows, out_f);
      if (T* gx = grad_of(xi)) {
        CMap<T> W(wi->data.data(), out_f, in);
        Map<T>(gx, rows, in).noalias() += G * W;
      }
      if (T* gw = grad_of(wi)) {
        CMap<T> X(xi->data.data(), rows, in);
        Map<T>(gw, out_f, in).noalias() += G.transpose() * X;
      }
      if (T* gb = grad_of(bi)) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb, out_f) += G.colwise().sum();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::sub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::mul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (auto v : x.data())
    if (!(v > T(0))) throw DomainError("log: non-positive input " + std::to_string(v));
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(kGeluCoeff);
  return unary(
      x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(c * (v + a * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T floor) {
  return unary(
      x, [floor](T v) { return v > floor ? v : floor; },
      [floor](T v, T) { return v > floor ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (auto v : x.data()) total += v;
  auto out = Tensor<T>::scalar(total);
  if (tracks({&x})) {
    record(out, [xi = x.impl(), oi = out.impl()] {
      T* gx = grad_of(xi);
      const T g = oi->grad[0];
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis, "sum_axis");
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  Tensor<T> out(shape);
  const T* px = x.data().data();
  T* po = out.data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t i = 0; i < s.inner; ++i) po[o * s.inner + i] += px[(o * s.n + j) * s.inner + i];
  if (tracks({&x})) {
    record(out, [xi = x.impl(), oi = out.impl(), s] {
      T* gx = grad_of(xi);
      const T* g = oi->grad.data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < s.n; ++j)
          for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.n + j) * s.inner + i] += g[o * s.inner + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  const auto n = split_axis(x.shape(), axis, "mean_axis").n;
  return scale(sum_axis(x, axis), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis, "softmax");
  Tensor<T> out(x.shape());
  const T* px = x.data().data();
  T* po = out.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      T mx = px[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, px[base + j * s.inner]);
      T z = 0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const T e = std::exp(px[base + j * s.inner] - mx);
        po[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) po[base + j * s.inner] /= z;
    }
  }
  if (tracks({&x})) {
    record(out, [xi = x.impl(), oi = out.impl(), s] {
      T* gx = grad_of(xi);
      const T* g = oi->grad.data();
      const T* y = oi->data.data();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.n * s.inner + i;
          T dot = 0;
          for (std::size_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
          for (std::size_t j = 0; j < s.n; ++j) {
            const std::size_t k = base + j * s.inner;
            gx[k] += y[k] * (g[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis, "log_softmax");
  Tensor<T> out(x.shape());
  const T* px = x.data().data();
  T* po = out.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      T mx = px[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, px[base + j * s.inner]);
      T z = 0;
      for (std::size_t j = 0; j < s.n; ++j) z += std::exp(px[base + j * s.inner] - mx);
      const T lse = mx + std::log(z);
      for (std::size_t j = 0; j < s.n; ++j) po[base + j * s.inner] = px[base + j * s.inner] - lse;
    }
  }
  if (tracks({&x})) {
    record(out, [xi = x.impl(), oi = out.impl(), s] {
      T* gx = grad_of(xi);
      const T* g = oi->grad.data();
      const T* y = oi->data.data();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.n * s.inner + i;
          T gsum = 0;
          for (std::size_t j = 0; j < s.n; ++j) gsum += g[base + j * s.inner];
          for (std::size_t j = 0; j < s.n; ++j) {
            const std::size_t k = base + j * s.inner;
            gx[k] += g[k] - std::exp(y[k]) * gsum;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (tracks({&x})) {
    record(out, [xi = x.impl(), oi = out.impl()] {
      T* gx = grad_of(xi);
      for (std::size_t i = 0; i < oi->grad.size(); ++i) gx[i] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const auto& in_shape = x.shape();
  const std::size_t r = in_shape.size();
  std::vector<bool> seen(r, false);
  if (order.size() != r) throw ShapeError("permute: order rank mismatch for " + shape_str(in_shape));
  for (auto a : order) {
    if (a >= r || seen[a]) throw ShapeError("permute: invalid axis order for " + shape_str(in_shape));
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[order[i]];
    src_strides[i] = in_strides[order[i]];
  }
  // gather[i] = flat source index of output element i
  const std::size_t n = x.numel();
  auto gather = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*gather)[i] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += src_strides[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= src_strides[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[(*gather)[i]];
  if (tracks({&x})) {
    record(out, [xi = x.impl(), oi = out.impl(), gather] {
      T* gx = grad_of(xi);
      for (std::size_t i = 0; i < gather->size(); ++i) gx[(*gather)[i]] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool1d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0) throw ConfigError("avg_pool1d: kernel and stride must be >= 1");
  const std::size_t len = x.shape().back();
  if (kernel > len)
    throw ShapeError("avg_pool1d: kernel " + std::to_string(kernel) + " exceeds time length " +
                     std::to_string(len) + " of " + shape_str(x.shape()));
  const std::size_t out_len = (len - kernel) / stride + 1;
  const std::size_t rows = x.numel() / len;
  Shape shape = x.shape();
  shape.back() = out_len;
  Tensor<T> out(shape);
  const T inv = T(1) / static_cast<T>(kernel);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* px = x.data().data() + r * len;
    T* po = out.data().data() + r * out_len;
    for (std::size_t t = 0; t < out_len; ++t) {
      T acc = 0;
      for (std::size_t j = 0; j < kernel; ++j) acc += px[t * stride + j];
      po[t] = acc * inv;
    }
  }
  if (tracks({&x})) {
    record(out, [xi = x.impl(), oi = out.impl(), rows, len, out_len, kernel, stride, inv] {
      T* gx = grad_of(xi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < out_len; ++t) {
          const T g = oi->grad[r * out_len + t] * inv;
          for (std::size_t j = 0; j < kernel; ++j) gx[r * len + t * stride + j] += g;
        }
    });
  }
  return out;
}

namespace {

template <typename T>
void check_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, const char* op) {
  const std::size_t f = x.shape().back();
  if (gamma.numel() != f || beta.numel() != f)
    throw ShapeError(std::string(op) + ": feature extent of " + shape_str(x.shape()) +
                     " does not match gamma " + shape_str(gamma.shape()) + " / beta " +
                     shape_str(beta.shape()));
}

/// dgamma/dbeta for y = xhat * gamma + beta over [rows x f].
template <typename T>
void affine_grads(const TensorImpl<T>& out, const std::vector<T>& xhat, std::size_t rows, std::size_t f,
                  T* ggamma, T* gbeta) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < f; ++j) {
      const T g = out.grad[r * f + j];
      if (ggamma) ggamma[j] += g * xhat[r * f + j];
      if (gbeta) gbeta[j] += g;
    }
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  check_affine(x, gamma, beta, "layer_norm");
  const std::size_t f = x.shape().back(), rows = x.numel() / f;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* px = x.data().data() + r * f;
    T mu = 0;
    for (std::size_t j = 0; j < f; ++j) mu += px[j];
    mu /= static_cast<T>(f);
    T var = 0;
    for (std::size_t j = 0; j < f; ++j) var += (px[j] - mu) * (px[j] - mu);
    var /= static_cast<T>(f);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < f; ++j) {
      const T h = (px[j] - mu) * is;
      (*xhat)[r * f + j] = h;
      out[r * f + j] = h * gamma[j] + beta[j];
    }
  }
  if (tracks({&x, &gamma, &beta})) {
    record(out, [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(), xhat, inv_std, rows, f] {
      affine_grads(*oi, *xhat, rows, f, grad_of(gi), grad_of(bi));
      if (T* gx = grad_of(xi)) {
        const T nf = static_cast<T>(f);
        for (std::size_t r = 0; r < rows; ++r) {
          T s1 = 0, s2 = 0;
          for (std::size_t j = 0; j < f; ++j) {
            const T dh = oi->grad[r * f + j] * gi->data[j];
            s1 += dh;
            s2 += dh * (*xhat)[r * f + j];
          }
          for (std::size_t j = 0; j < f; ++j) {
            const T dh = oi->grad[r * f + j] * gi->data[j];
            gx[r * f + j] += (*inv_std)[r] / nf * (nf * dh - s1 - (*xhat)[r * f + j] * s2);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                     BatchStats<T>* stats_out) {
  check_affine(x, gamma, beta, "batch_norm");
  const std::size_t f = x.shape().back(), rows = x.numel() / f;
  std::vector<T> mu(f, T(0)), var(f, T(0));
  const T* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < f; ++j) mu[j] += px[r * f + j];
  for (auto& m : mu) m /= static_cast<T>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < f; ++j) {
      const T d = px[r * f + j] - mu[j];
      var[j] += d * d;
    }
  for (auto& v : var) v /= static_cast<T>(rows);
  auto inv_std = std::make_shared<std::vector<T>>(f);
  for (std::size_t j = 0; j < f; ++j) (*inv_std)[j] = T(1) / std::sqrt(var[j] + eps);
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < f; ++j) {
      const T h = (px[r * f + j] - mu[j]) * (*inv_std)[j];
      (*xhat)[r * f + j] = h;
      out[r * f + j] = h * gamma[j] + beta[j];
    }
  if (stats_out) *stats_out = BatchStats<T>{mu, var, rows};
  if (tracks({&x, &gamma, &beta})) {
    record(out, [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(), xhat, inv_std, rows, f] {
      affine_grads(*oi, *xhat, rows, f, grad_of(gi), grad_of(bi));
      if (T* gx = grad_of(xi)) {
        std::vector<T> s1(f, T(0)), s2(f, T(0));
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < f; ++j) {
            const T dh = oi->grad[r * f + j] * gi->data[j];
            s1[j] += dh;
            s2[j] += dh * (*xhat)[r * f + j];
          }
        const T nr = static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < f; ++j) {
            const T dh = oi->grad[r * f + j] * gi->data[j];
            gx[r * f + j] += (*inv_std)[j] / nr * (nr * dh - s1[j] - (*xhat)[r * f + j] * s2[j]);
          }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm_fixed(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const Tensor<T>& mean, const Tensor<T>& var, T eps) {
  check_affine(x, gamma, beta, "batch_norm_fixed");
  const std::size_t f = x.shape().back(), rows = x.numel() / f;
  if (mean.numel() != f || var.numel() != f)
    throw ShapeError("batch_norm_fixed: running statistics do not match " + shape_str(x.shape()));
  auto inv_std = std::make_shared<std::vector<T>>(f);
  for (std::size_t j = 0; j < f; ++j) (*inv_std)[j] = T(1) / std::sqrt(var[j] + eps);
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < f; ++j) {
      const T h = (x[r * f + j] - mean[j]) * (*inv_std)[j];
      (*xhat)[r * f + j] = h;
      out[r * f + j] = h * gamma[j] + beta[j];
    }
  if (tracks({&x, &gamma, &beta})) {
    record(out, [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(), xhat, inv_std, rows, f] {
      affine_grads(*oi, *xhat, rows, f, grad_of(gi), grad_of(bi));
      if (T* gx = grad_of(xi))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < f; ++j)
            gx[r * f + j] += oi->grad[r * f + j] * gi->data[j] * (*inv_std)[j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  for (auto& m : mask.data()) m = rng.uniform() >= rate ? keep_scale : T(0);
  return mul(x, mask);
}

#define NTTA_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                                   \
  template Tensor<T> exp(const Tensor<T>&);                                                        \
  template Tensor<T> log(const Tensor<T>&);                                                        \
  template Tensor<T> gelu(const Tensor<T>&);                                                       \
  template Tensor<T> clamp_min(const Tensor<T>&, T);                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                        \
  template Tensor<T> mean(const Tensor<T>&);                                                       \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                   \
  template Tensor<T> avg_pool1d(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);          \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,           \
                                BatchStats<T>*);                                                   \
  template Tensor<T> batch_norm_fixed(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                      const Tensor<T>&, const Tensor<T>&, T);                      \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng&);

NTTA_INSTANTIATE_OPS(float)
NTTA_INSTANTIATE_OPS(double)

#undef NTTA_INSTANTIATE_OPS

}  // namespace ntta
