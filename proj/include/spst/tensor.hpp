#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "spst/errors.hpp"
#include "spst/memory.hpp"

namespace spst {

using Shape = std::vector<int>;

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_string(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// Dense row-major array. Feature maps are laid out (channels, height, width).
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds f32 or f64 values");

 public:
  using value_type = T;
  using Storage = std::vector<T, memory::TrackedAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::span<const T> values) : shape_(std::move(shape)) {
    if (values.size() != shape_numel(shape_)) {
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_string(shape_));
    }
    data_.assign(values.begin(), values.end());
  }
  Tensor(Shape shape, std::initializer_list<T> values)
      : Tensor(std::move(shape), std::span<const T>(values.begin(), values.size())) {}

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // (c, h, w) accessors for rank-3 feature maps.
  int channels() const { return dim(0); }
  int height() const { return dim(1); }
  int width() const { return dim(2); }
  std::size_t plane() const {
    return static_cast<std::size_t>(dim(1)) * static_cast<std::size_t>(dim(2));
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return {data_.data(), data_.size()}; }
  std::span<const T> values() const { return {data_.data(), data_.size()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x];
  }
  const T& at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * dim(1) + y) * dim(2) + x];
  }

  T* channel(int c) { return data_.data() + static_cast<std::size_t>(c) * plane(); }
  const T* channel(int c) const {
    return data_.data() + static_cast<std::size_t>(c) * plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && std::equal(a.data_.begin(), a.data_.end(), b.data_.begin());
  }

 private:
  Shape shape_;
  Storage data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

template <typename T>
void require_rank3(const Tensor<T>& t, const char* what) {
  if (t.rank() != 3) {
    throw ShapeError(std::string(what) + ": expected (c,h,w), got " + shape_string(t.shape()));
  }
}

// Copies the window [y0, y0+h) x [x0, x0+w) of every channel.
template <typename T>
Tensor<T> crop(const Tensor<T>& src, int x0, int y0, int w, int h) {
  require_rank3(src, "crop");
  if (x0 < 0 || y0 < 0 || w < 0 || h < 0 || x0 + w > src.width() || y0 + h > src.height()) {
    throw ShapeError("crop window out of range for " + shape_string(src.shape()));
  }
  Tensor<T> out({src.channels(), h, w});
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      const T* row = &src.at(c, y0 + y, x0);
      std::copy(row, row + w, &out.at(c, y, 0));
    }
  }
  return out;
}

// Writes src into dst at offset (x0, y0).
template <typename T>
void paste(Tensor<T>& dst, const Tensor<T>& src, int x0, int y0) {
  require_rank3(dst, "paste");
  require_rank3(src, "paste");
  if (src.channels() != dst.channels() || x0 < 0 || y0 < 0 ||
      x0 + src.width() > dst.width() || y0 + src.height() > dst.height()) {
    throw ShapeError("paste of " + shape_string(src.shape()) + " does not fit " +
                     shape_string(dst.shape()));
  }
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < src.height(); ++y) {
      const T* row = &src.at(c, y, 0);
      std::copy(row, row + src.width(), &dst.at(c, y0 + y, x0));
    }
  }
}

template <typename T>
double dot(std::span<const T> a, std::type_identity_t<std::span<const T>> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  return dot<T>(a.values(), b.values());
}

template <typename T>
double l2_norm(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

// ||a - b|| / ||b||, with ||b|| == 0 falling back to ||a - b||.
template <typename T>
double relative_l2_error(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "relative_l2_error");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    num += d * d;
    den += static_cast<double>(b[i]) * b[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace spst
