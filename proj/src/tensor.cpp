#include "cqd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cqd/errors.hpp"

namespace cqd {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : storage_(std::make_shared<Storage>()) {
  storage_->values.assign(numel(shape), fill);
  storage_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : Tensor(std::move(shape), std::span<const float>(values)) {}

Tensor::Tensor(Shape shape, std::span<const float> values) : storage_(std::make_shared<Storage>()) {
  if (numel(shape) != values.size())
    throw ContractError("tensor shape " + shape_str(shape) + " does not match " +
                        std::to_string(values.size()) + " values");
  storage_->shape = std::move(shape);
  storage_->values.assign(values.begin(), values.end());
}

const Shape& Tensor::shape() const {
  if (!storage_) throw StateError("use of undefined tensor");
  return storage_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ContractError("axis out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::size() const { return storage_ ? storage_->values.size() : 0; }

std::span<float> Tensor::data() {
  if (!storage_) throw StateError("use of undefined tensor");
  return storage_->values;
}

std::span<const float> Tensor::data() const {
  if (!storage_) throw StateError("use of undefined tensor");
  return storage_->values;
}

float Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return storage_->values[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  return *this;
}

bool Tensor::has_grad() const { return storage_ && !storage_->grad.empty(); }

std::span<float> Tensor::grad() {
  if (!has_grad()) throw StateError("tensor has no gradient");
  return storage_->grad;
}

std::span<const float> Tensor::grad() const {
  if (!has_grad()) throw StateError("tensor has no gradient");
  return storage_->grad;
}

std::span<float> Tensor::ensure_grad() {
  if (!storage_) throw StateError("use of undefined tensor");
  if (storage_->grad.empty()) storage_->grad.assign(storage_->values.size(), 0.0f);
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0f);
}

void Tensor::clear_grad() {
  if (storage_) {
    storage_->grad.clear();
    storage_->grad.shrink_to_fit();
  }
}

Tensor Tensor::detach() const {
  Tensor t;
  t.storage_ = storage_;
  return t;
}

Tensor Tensor::clone() const {
  if (!storage_) return {};
  Tensor t(storage_->shape, storage_->values);
  t.requires_grad_ = requires_grad_;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != size())
    throw ContractError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  return Tensor(std::move(shape), storage_->values);
}

void Tensor::check_finite(const char* what) const {
  for (float v : data())
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
}

void Graph::record(BackwardFn fn) { tape_.push_back(std::move(fn)); }

void Graph::backward(Tensor& loss) {
  if (consumed_) throw StateError("backward called twice without reset");
  if (loss.size() != 1) throw ContractError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw StateError("loss does not depend on any tensor requiring grad");
  consumed_ = true;
  loss.ensure_grad()[0] = 1.0f;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

void Graph::reset() {
  tape_.clear();
  consumed_ = false;
}

}  // namespace cqd
