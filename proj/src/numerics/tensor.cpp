#include "lpt/numerics/tensor.hpp"

#include <cmath>
#include <cstring>

#include "lpt/errors.hpp"

namespace lpt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor() : shape_{0}, data_(std::make_shared<std::vector<Scalar>>()) {}

Tensor::Tensor(Shape shape, Scalar fill)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<Scalar>>(shape_numel(shape_), fill)) {}

Tensor::Tensor(Shape shape, std::vector<Scalar> values)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<Scalar>>(std::move(values))) {
  if (data_->size() != shape_numel(shape_)) {
    throw ShapeError("tensor of shape " + shape_str(shape_) + " given " +
                     std::to_string(data_->size()) + " values");
  }
}

std::span<Scalar> Tensor::mutable_data() {
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<Scalar>>(*data_);
  return {data_->data(), data_->size()};
}

Scalar Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::all_finite() const {
  for (Scalar v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.numel() == 0 ||
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(Scalar)) == 0;
}

}  // namespace lpt
