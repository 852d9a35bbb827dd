#include "ntta/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "ntta/errors.hpp"

namespace ntta {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

thread_local bool tls_grad_enabled = true;

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorImpl<T>>()) {
  check_extents(shape);
  impl_->data.assign(numel_of(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorImpl<T>>()) {
  check_extents(shape);
  if (numel_of(shape) != data.size())
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                     " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

template <typename T>
Tensor<T> Tensor<T>::from(std::initializer_list<T> values) {
  return Tensor(Shape{values.size()}, std::vector<T>(values));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::grad_mut() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
void Tensor<T>::assign(const Tensor& other) {
  if (other.shape() != shape())
    throw ShapeError("assign: " + shape_str(other.shape()) + " into " + shape_str(shape()));
  std::copy(other.impl_->data.begin(), other.impl_->data.end(), impl_->data.begin());
}

template <typename T>
GradTape<T>& GradTape<T>::current() {
  thread_local GradTape tape;
  return tape;
}

template <typename T>
void GradTape<T>::record(std::shared_ptr<TensorImpl<T>> output, Backward fn) {
  entries_.push_back(Entry{std::move(output), std::move(fn)});
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (entries_.empty()) throw ContractError("backward() on an empty tape");
  if (!loss.requires_grad()) throw ContractError("backward() on a loss that does not require grad");

  auto seed = wrap_impl(loss.impl()).grad_mut();
  seed[0] += T(1);

  // Move out first so that a throwing closure still leaves the tape consumed.
  auto entries = std::move(entries_);
  entries_.clear();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn();
  }
}

bool grad_enabled() { return tls_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tls_grad_enabled) { tls_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tls_grad_enabled = previous_; }

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;

}  // namespace ntta
