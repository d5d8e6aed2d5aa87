#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "autoseg/error.hpp"

namespace autoseg {

// Spatial extent in array order (depth, height, width); width is the fastest axis.
struct Shape3 {
  int64_t d = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t voxels() const { return d * h * w; }
  int64_t operator[](int axis) const { return axis == 0 ? d : axis == 1 ? h : w; }
  bool operator==(const Shape3&) const = default;
  std::string str() const;
};

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

// Dense row-major array. Spatial tensors use NCDHW or CDHW layout.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), fill);
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != count(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  int64_t dim(size_t i) const { return shape_.at(i); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Last three dimensions.
  Shape3 spatial() const {
    if (shape_.size() < 3) throw ShapeError("tensor of rank " + std::to_string(shape_.size()) + " has no spatial extent");
    const size_t r = shape_.size();
    return {shape_[r - 3], shape_[r - 2], shape_[r - 1]};
  }

  void reshape(Shape s) {
    if (count(s) != numel()) throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    shape_ = std::move(s);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor&) const = default;

  static int64_t count(const Shape& s) {
    int64_t n = 1;
    for (auto v : s) {
      if (v < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
      n *= v;
    }
    return n;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;
using Mask = Tensor<uint8_t>;

// Copies channel range [c0, c0 + n) of a CDHW tensor.
template <typename T>
Tensor<T> channel_slice(const Tensor<T>& t, int64_t c0, int64_t n) {
  const Shape3 s = t.spatial();
  const int64_t vox = s.voxels();
  Tensor<T> out({n, s.d, s.h, s.w});
  std::copy(t.data() + c0 * vox, t.data() + (c0 + n) * vox, out.data());
  return out;
}

}  // namespace autoseg
