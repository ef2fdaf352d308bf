#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lpt {

#ifdef LPT_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor with a shared, copy-on-write buffer.
///
/// Copies are cheap: they alias the same storage until one side asks for
/// mutable access. A rank-0 tensor (empty shape) holds exactly one element.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, Scalar fill = 0);
  Tensor(Shape shape, std::vector<Scalar> values);

  static Tensor scalar(Scalar value) { return Tensor(Shape{}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_->size(); }

  std::span<const Scalar> data() const { return {data_->data(), data_->size()}; }
  std::span<Scalar> mutable_data();

  Scalar operator[](std::size_t i) const { return (*data_)[i]; }
  Scalar item() const;

  /// Same storage, new shape. Element count must match.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  std::vector<Scalar> to_vector() const { return *data_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<Scalar>> data_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace lpt
