#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fedbrb {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

// Dense row-major float64 array. Operations in this header return new
// tensors; the mutable accessors exist for the training kernels.
class Tensor {
 public:
  Tensor() = default;
  // Zero-filled tensor. Rejects empty shapes and zero dimensions.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Product of the dimensions after axis 1 (1 for rank <= 2).
  std::size_t trailing_size() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Channel picks on dims 0 and 1. An empty in_indices takes dim 1 whole;
// for rank-1 tensors (biases) in_indices must be empty.
struct ChannelSelection {
  std::vector<std::size_t> out_indices;
  std::vector<std::size_t> in_indices;

  bool operator==(const ChannelSelection& other) const = default;
};

Tensor zeros(const Shape& shape);
Tensor zeros_like(const Tensor& t);

// Shape of gather_channels(t, sel) without materializing it.
Shape gathered_shape(const Tensor& t, const ChannelSelection& sel);

Tensor gather_channels(const Tensor& t, const ChannelSelection& sel);

// t with weight * delta added at the positions selected by sel.
Tensor scatter_add_channels(const Tensor& t, const ChannelSelection& sel,
                            const Tensor& delta, double weight);

// In-place flavour used on aggregation accumulators.
void scatter_add_channels_inplace(Tensor& t, const ChannelSelection& sel,
                                  const Tensor& delta, double weight);

Tensor add_scaled(const Tensor& a, const Tensor& b, double alpha);

bool all_finite(const Tensor& t);

}  // namespace fedbrb
