#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "pnpula/errors.hpp"

namespace pnpula {

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  long size() const { return static_cast<long>(channels) * height * width; }
  bool operator==(const Shape&) const = default;
};

// Planar (channel-major), row-major image tensor. Values are nominally in
// [0,1] intensity space but the storage is unconstrained. Arithmetic is
// carried in double throughout; 32-bit floats appear only at the I/O
// boundary (Langevin chains accumulate rounding over 1e4+ steps).
//
// ImageTensor values are immutable by convention once handed to operators
// and denoisers; nothing in the library mutates a tensor it did not create.
class ImageTensor {
 public:
  ImageTensor() = default;

  ImageTensor(int channels, int height, int width, double fill = 0.0)
      : shape_{channels, height, width},
        data_(static_cast<size_t>(shape_.size()), fill) {
    if (channels < 1 || height < 1 || width < 1)
      throw ShapeError("ImageTensor dimensions must be positive");
  }

  static ImageTensor zeros_like(const ImageTensor& other) {
    return ImageTensor(other.channels(), other.height(), other.width());
  }

  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  const Shape& shape() const { return shape_; }
  long size() const { return static_cast<long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  double operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double* begin() { return data_.data(); }
  double* end() { return data_.data() + data_.size(); }
  const double* begin() const { return data_.data(); }
  const double* end() const { return data_.data() + data_.size(); }

  ImageTensor& operator+=(const ImageTensor& o) {
    check_same_shape(o);
    for (long i = 0; i < size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  ImageTensor& operator-=(const ImageTensor& o) {
    check_same_shape(o);
    for (long i = 0; i < size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  ImageTensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  // this += alpha * x
  ImageTensor& axpy(double alpha, const ImageTensor& x) {
    check_same_shape(x);
    for (long i = 0; i < size(); ++i) data_[i] += alpha * x.data_[i];
    return *this;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  void check_same_shape(const ImageTensor& o) const {
    if (!(shape_ == o.shape_)) throw ShapeError("image shape mismatch");
  }

 private:
  size_t index(int c, int y, int x) const {
    return (static_cast<size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  Shape shape_{};
  std::vector<double> data_;
};

inline ImageTensor operator+(ImageTensor a, const ImageTensor& b) {
  a += b;
  return a;
}
inline ImageTensor operator-(ImageTensor a, const ImageTensor& b) {
  a -= b;
  return a;
}
inline ImageTensor operator*(double s, ImageTensor a) {
  a *= s;
  return a;
}

inline double dot(const ImageTensor& a, const ImageTensor& b) {
  a.check_same_shape(b);
  double s = 0.0;
  for (long i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

inline double l2_norm(const ImageTensor& a) { return std::sqrt(dot(a, a)); }

inline double linf_norm(const ImageTensor& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline double sum(const ImageTensor& a) {
  double s = 0.0;
  for (double v : a) s += v;
  return s;
}

inline double mean(const ImageTensor& a) {
  return a.size() > 0 ? sum(a) / static_cast<double>(a.size()) : 0.0;
}

inline bool all_finite(const ImageTensor& a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

inline double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
  a.check_same_shape(b);
  double m = 0.0;
  for (long i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline double relative_l2_error(const ImageTensor& got, const ImageTensor& want) {
  double denom = l2_norm(want);
  if (denom == 0.0) return l2_norm(got - want);
  return l2_norm(got - want) / denom;
}

}  // namespace pnpula
