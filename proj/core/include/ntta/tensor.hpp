#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ntta {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty == no gradient
  bool requires_grad = false;
};

/// Dense row-major tensor with shared storage. Copies alias the same buffer;
/// use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }
  static Tensor from(std::initializer_list<T> values);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> grad_mut();  // allocates zeros when absent
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); }

  /// Independent copy of the values; no gradient, no tape history.
  Tensor clone() const;
  /// Overwrite values in place with another tensor's values (shapes must match).
  void assign(const Tensor& other);

  /// Identity of the underlying storage, stable across copies of this handle.
  const TensorImpl<T>* id() const noexcept { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}
  template <typename U>
  friend Tensor<U> wrap_impl(std::shared_ptr<TensorImpl<U>> impl);

  std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
Tensor<T> wrap_impl(std::shared_ptr<TensorImpl<T>> impl) {
  return Tensor<T>(std::move(impl));
}

/// Ordered record of differentiable operations executed on the current thread.
/// backward() replays it in reverse and clears it.
template <typename T>
class GradTape {
 public:
  using Backward = std::function<void()>;

  static GradTape& current();

  void record(std::shared_ptr<TensorImpl<T>> output, Backward fn);
  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  void backward(const Tensor<T>& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<TensorImpl<T>> output;
    Backward fn;
  };
  std::vector<Entry> entries_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  GradTape<T>::current().backward(loss);
}

/// Whether new operations are recorded on this thread's tapes.
bool grad_enabled();

/// Disables tape recording for its lifetime (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Converts between precisions (e.g. for 64-bit gradient checking).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  Tensor<To> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace ntta
