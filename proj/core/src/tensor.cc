#include "fedbrb/tensor.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedbrb {
namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must not be empty");
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be >= 1");
  }
}

void check_indices(const std::vector<std::size_t>& idx, std::size_t bound,
                   const char* which) {
  std::vector<bool> seen(bound, false);
  for (std::size_t i : idx) {
    if (i >= bound) {
      throw std::out_of_range(std::string(which) + " index " + std::to_string(i) +
                              " out of bounds for dimension " + std::to_string(bound));
    }
    if (seen[i]) {
      throw std::invalid_argument(std::string(which) + " index " + std::to_string(i) +
                                  " selected twice");
    }
    seen[i] = true;
  }
}

struct ResolvedSelection {
  const std::vector<std::size_t>& out;
  std::vector<std::size_t> in_storage;
  const std::vector<std::size_t>* in;
  std::size_t in_dim;
  std::size_t trailing;
};

// Validates sel against t and materializes the implicit "whole dim 1" case.
ResolvedSelection resolve(const Tensor& t, const ChannelSelection& sel) {
  if (t.empty()) throw std::invalid_argument("selection on an empty tensor");
  check_indices(sel.out_indices, t.dim(0), "out");
  ResolvedSelection r{sel.out_indices, {}, nullptr, 1, t.trailing_size()};
  if (t.rank() == 1) {
    if (!sel.in_indices.empty()) {
      throw std::invalid_argument("in_indices given for a rank-1 tensor");
    }
    r.in_storage = {0};
    r.in = &r.in_storage;
    return r;
  }
  r.in_dim = t.dim(1);
  if (sel.in_indices.empty()) {
    r.in_storage.resize(r.in_dim);
    for (std::size_t i = 0; i < r.in_dim; ++i) r.in_storage[i] = i;
    r.in = &r.in_storage;
  } else {
    check_indices(sel.in_indices, r.in_dim, "in");
    r.in = &sel.in_indices;
  }
  return r;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape size " +
                                std::to_string(shape_size(shape_)));
  }
}

std::size_t Tensor::trailing_size() const {
  std::size_t n = 1;
  for (std::size_t a = 2; a < shape_.size(); ++a) n *= shape_[a];
  return n;
}

Tensor zeros(const Shape& shape) { return Tensor(shape); }

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

Shape gathered_shape(const Tensor& t, const ChannelSelection& sel) {
  Shape s = t.shape();
  s[0] = sel.out_indices.size();
  if (t.rank() >= 2 && !sel.in_indices.empty()) s[1] = sel.in_indices.size();
  return s;
}

Tensor gather_channels(const Tensor& t, const ChannelSelection& sel) {
  ResolvedSelection r = resolve(t, sel);
  if (r.out.empty() || r.in->empty()) {
    throw std::invalid_argument("gather_channels: empty selection");
  }
  Tensor result(gathered_shape(t, sel));
  const auto src = t.data();
  auto dst = result.data();
  std::size_t k = 0;
  for (std::size_t o : r.out) {
    for (std::size_t i : *r.in) {
      const std::size_t base = (o * r.in_dim + i) * r.trailing;
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(base), r.trailing,
                  dst.begin() + static_cast<std::ptrdiff_t>(k));
      k += r.trailing;
    }
  }
  return result;
}

void scatter_add_channels_inplace(Tensor& t, const ChannelSelection& sel,
                                  const Tensor& delta, double weight) {
  ResolvedSelection r = resolve(t, sel);
  if (delta.shape() != gathered_shape(t, sel)) {
    throw std::invalid_argument("scatter_add_channels: delta shape does not match selection");
  }
  auto dst = t.data();
  const auto src = delta.data();
  std::size_t k = 0;
  for (std::size_t o : r.out) {
    for (std::size_t i : *r.in) {
      const std::size_t base = (o * r.in_dim + i) * r.trailing;
      for (std::size_t j = 0; j < r.trailing; ++j) dst[base + j] += weight * src[k + j];
      k += r.trailing;
    }
  }
}

Tensor scatter_add_channels(const Tensor& t, const ChannelSelection& sel,
                            const Tensor& delta, double weight) {
  Tensor result = t;
  scatter_add_channels_inplace(result, sel, delta, weight);
  if (!all_finite(result)) throw std::domain_error("scatter_add_channels produced non-finite values");
  return result;
}

Tensor add_scaled(const Tensor& a, const Tensor& b, double alpha) {
  if (a.shape() != b.shape()) throw std::invalid_argument("add_scaled: shape mismatch");
  Tensor result = a;
  auto dst = result.data();
  const auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
  if (!all_finite(result)) throw std::domain_error("add_scaled produced non-finite values");
  return result;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace fedbrb
