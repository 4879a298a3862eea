#pragma once

#include <cmath>
#include <complex>
#include <utility>
#include <vector>

#include "pnpula/errors.hpp"
#include "pnpula/fft.hpp"
#include "pnpula/rng.hpp"
#include "pnpula/tensor.hpp"

namespace pnpula {

// Point-spread function. Factories return kernels normalised to sum 1.
struct Kernel2d {
  int height = 1;
  int width = 1;
  std::vector<double> weights = {1.0};

  double at(int y, int x) const { return weights[static_cast<size_t>(y) * width + x]; }
  double sum() const {
    double s = 0.0;
    for (double v : weights) s += v;
    return s;
  }
  void normalise() {
    const double s = sum();
    if (!(s > 0.0)) throw ConfigError("kernel weights must have positive sum");
    for (double& v : weights) v /= s;
  }
};

inline Kernel2d delta_kernel() { return Kernel2d{}; }

// Truncated isotropic Gaussian, renormalised to sum 1.
inline Kernel2d gaussian_kernel(int size, double bandwidth) {
  if (size < 1 || size % 2 == 0)
    throw ConfigError("gaussian kernel size must be odd and positive");
  if (!(bandwidth > 0.0)) throw ConfigError("gaussian bandwidth must be positive");
  Kernel2d k;
  k.height = k.width = size;
  k.weights.assign(static_cast<size_t>(size) * size, 0.0);
  const int c = size / 2;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      k.weights[static_cast<size_t>(y) * size + x] =
          std::exp(-((y - c) * (y - c) + (x - c) * (x - c)) /
                   (2.0 * bandwidth * bandwidth));
  k.normalise();
  return k;
}

// Seeded random-walk motion kernel (the usual stand-in when no measured
// point-spread function is available). A walk with mild momentum deposits
// mass on the grid; a light 3x3 smoothing avoids single-pixel spikes.
inline Kernel2d motion_blur_kernel(int size, uint64_t seed, int steps = 0) {
  if (size < 3 || size % 2 == 0)
    throw ConfigError("motion kernel size must be odd and >= 3");
  if (steps <= 0) steps = 3 * size;
  RngStream rng(seed, /*stream=*/0x6d6f74);
  std::vector<double> grid(static_cast<size_t>(size) * size, 0.0);
  double y = size / 2, x = size / 2;
  double vy = rng.normal() * 0.5, vx = rng.normal() * 0.5;
  for (int s = 0; s < steps; ++s) {
    vy = 0.75 * vy + 0.5 * rng.normal();
    vx = 0.75 * vx + 0.5 * rng.normal();
    y = std::min<double>(size - 1, std::max(0.0, y + vy));
    x = std::min<double>(size - 1, std::max(0.0, x + vx));
    grid[static_cast<size_t>(std::lround(y)) * size + std::lround(x)] += 1.0;
  }
  Kernel2d k;
  k.height = k.width = size;
  k.weights.assign(grid.size(), 0.0);
  for (int yy = 0; yy < size; ++yy)
    for (int xx = 0; xx < size; ++xx) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int sy = yy + dy, sx = xx + dx;
          if (sy >= 0 && sy < size && sx >= 0 && sx < size)
            acc += grid[static_cast<size_t>(sy) * size + sx];
        }
      k.weights[static_cast<size_t>(yy) * size + xx] = acc;
    }
  k.normalise();
  return k;
}

// Measurement operator A: circular blur, binary mask, or anti-aliased
// decimation. Instances are immutable after construction (the blur spectrum
// is cached here) and safe to share across concurrent chains.
class LinearOperator {
 public:
  enum class Kind { blur, mask, downsample };

  static LinearOperator blur(Kernel2d kernel, int height, int width) {
    LinearOperator op;
    op.kind_ = Kind::blur;
    op.height_ = height;
    op.width_ = width;
    op.factor_ = 1;
    kernel.normalise();
    op.kernel_ = std::move(kernel);
    op.spectrum_ = kernel_spectrum(op.kernel_, height, width);
    return op;
  }

  // keep_map: 1 channel, entries in {0,1}; broadcast over image channels.
  static LinearOperator mask(ImageTensor keep_map) {
    if (keep_map.channels() != 1)
      throw ShapeError("mask keep map must have a single channel");
    for (double v : keep_map)
      if (v != 0.0 && v != 1.0)
        throw ConfigError("mask entries must be 0 or 1");
    LinearOperator op;
    op.kind_ = Kind::mask;
    op.height_ = keep_map.height();
    op.width_ = keep_map.width();
    op.factor_ = 1;
    op.mask_ = std::move(keep_map);
    return op;
  }

  static LinearOperator downsample(Kernel2d anti_alias, int factor, int height,
                                   int width) {
    if (factor < 2) throw ConfigError("downsample factor must be >= 2");
    if (height % factor != 0 || width % factor != 0)
      throw ShapeError("image dimensions must be divisible by the factor");
    LinearOperator op;
    op.kind_ = Kind::downsample;
    op.height_ = height;
    op.width_ = width;
    op.factor_ = factor;
    anti_alias.normalise();
    op.kernel_ = std::move(anti_alias);
    op.spectrum_ = kernel_spectrum(op.kernel_, height, width);
    return op;
  }

  Kind kind() const { return kind_; }
  int input_height() const { return height_; }
  int input_width() const { return width_; }
  int output_height() const { return height_ / factor_; }
  int output_width() const { return width_ / factor_; }
  int factor() const { return factor_; }
  const Kernel2d& kernel() const { return kernel_; }
  const ImageTensor& keep_map() const { return mask_; }
  const std::vector<std::complex<double>>& spectrum() const { return spectrum_; }

  void check_input(const ImageTensor& x) const {
    if (x.height() != height_ || x.width() != width_)
      throw ShapeError("input dimensions do not match the operator");
  }
  void check_output(const ImageTensor& v) const {
    if (v.height() != output_height() || v.width() != output_width())
      throw ShapeError("measurement dimensions do not match the operator");
  }

  // Kernel embedded on the H x W torus with its centre at the origin; this
  // is what makes circular convolution exactly diagonal in Fourier space.
  static std::vector<std::complex<double>> kernel_spectrum(const Kernel2d& k,
                                                           int height, int width) {
    ImageTensor embedded(1, height, width, 0.0);
    const int cy = k.height / 2, cx = k.width / 2;
    for (int y = 0; y < k.height; ++y)
      for (int x = 0; x < k.width; ++x) {
        const int ty = ((y - cy) % height + height) % height;
        const int tx = ((x - cx) % width + width) % width;
        embedded(0, ty, tx) += k.at(y, x);
      }
    return fft2(embedded, 0);
  }

 private:
  LinearOperator() = default;

  Kind kind_ = Kind::mask;
  int height_ = 0, width_ = 0, factor_ = 1;
  Kernel2d kernel_;
  ImageTensor mask_;
  std::vector<std::complex<double>> spectrum_;
};

namespace detail {

inline ImageTensor convolve_spectrum(const LinearOperator& op, const ImageTensor& x,
                                     bool conjugate) {
  ImageTensor out = ImageTensor::zeros_like(x);
  for (int c = 0; c < x.channels(); ++c) {
    auto spec = fft2(x, c);
    const auto& k = op.spectrum();
    for (size_t i = 0; i < spec.size(); ++i)
      spec[i] *= conjugate ? std::conj(k[i]) : k[i];
    ifft2_into(spec, out, c);
  }
  return out;
}

inline ImageTensor apply_mask(const LinearOperator& op, const ImageTensor& x) {
  ImageTensor out = x;
  const ImageTensor& m = op.keep_map();
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < x.height(); ++y)
      for (int xx = 0; xx < x.width(); ++xx) out(c, y, xx) *= m(0, y, xx);
  return out;
}

inline ImageTensor decimate(const ImageTensor& x, int factor) {
  ImageTensor out(x.channels(), x.height() / factor, x.width() / factor);
  for (int c = 0; c < out.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int xx = 0; xx < out.width(); ++xx)
        out(c, y, xx) = x(c, y * factor, xx * factor);
  return out;
}

inline ImageTensor zero_upsample(const ImageTensor& v, int factor) {
  ImageTensor out(v.channels(), v.height() * factor, v.width() * factor);
  for (int c = 0; c < v.channels(); ++c)
    for (int y = 0; y < v.height(); ++y)
      for (int xx = 0; xx < v.width(); ++xx)
        out(c, y * factor, xx * factor) = v(c, y, xx);
  return out;
}

}  // namespace detail

// y = A x
inline ImageTensor apply(const LinearOperator& op, const ImageTensor& x) {
  op.check_input(x);
  switch (op.kind()) {
    case LinearOperator::Kind::blur:
      return detail::convolve_spectrum(op, x, /*conjugate=*/false);
    case LinearOperator::Kind::mask:
      return detail::apply_mask(op, x);
    case LinearOperator::Kind::downsample:
      return detail::decimate(detail::convolve_spectrum(op, x, false), op.factor());
  }
  throw ConfigError("unreachable operator kind");
}

// v -> A^T v  (satisfies <Ax, v> = <x, A^T v>)
inline ImageTensor adjoint(const LinearOperator& op, const ImageTensor& v) {
  op.check_output(v);
  switch (op.kind()) {
    case LinearOperator::Kind::blur:
      return detail::convolve_spectrum(op, v, /*conjugate=*/true);
    case LinearOperator::Kind::mask:
      return detail::apply_mask(op, v);
    case LinearOperator::Kind::downsample:
      return detail::convolve_spectrum(op, detail::zero_upsample(v, op.factor()),
                                       /*conjugate=*/true);
  }
  throw ConfigError("unreachable operator kind");
}

// Power iteration on A^T A; returns an estimate of ||A||_2. Always converges
// for these bounded operators; `tol` is the relative change between Rayleigh
// quotients at which iteration stops.
inline double operator_norm(const LinearOperator& op, int iterations = 200,
                            double tol = 1e-12) {
  if (iterations < 1) throw ConfigError("operator_norm needs iterations >= 1");
  RngStream rng(0x9e3779b97f4a7c15ull, 0x706f77);  // fixed internal stream
  ImageTensor v = rng.normal_image(1, op.input_height(), op.input_width());
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const double nv = l2_norm(v);
    if (nv == 0.0) return 0.0;
    v *= 1.0 / nv;
    ImageTensor w = adjoint(op, apply(op, v));
    const double next = dot(v, w);
    const bool settled = it > 0 && std::abs(next - lambda) <= tol * std::abs(next);
    lambda = next;
    v = std::move(w);
    if (settled) break;
  }
  return std::sqrt(std::max(0.0, lambda));
}

// Keep map with an exact fraction of pixels masked out (partial
// Fisher-Yates over the pixel indices).
inline ImageTensor random_keep_map(int height, int width, double mask_rate,
                                   RngStream& rng) {
  if (!(mask_rate >= 0.0 && mask_rate < 1.0))
    throw ConfigError("mask rate must lie in [0, 1)");
  ImageTensor keep(1, height, width, 1.0);
  const long n = static_cast<long>(height) * width;
  const long to_mask = static_cast<long>(std::floor(mask_rate * n));
  std::vector<long> idx(n);
  for (long i = 0; i < n; ++i) idx[i] = i;
  for (long i = 0; i < to_mask; ++i) {
    const long j = i + static_cast<long>(rng.uniform_below(n - i));
    std::swap(idx[i], idx[j]);
    keep.data()[idx[i]] = 0.0;
  }
  return keep;
}

// Measurement y together with the model that produced it.
struct Observation {
  LinearOperator op;
  ImageTensor y;
  double sigma = 0.0;

  Observation(LinearOperator op_, ImageTensor y_, double sigma_)
      : op(std::move(op_)), y(std::move(y_)), sigma(sigma_) {
    if (sigma < 0.0) throw ConfigError("noise level must be non-negative");
    op.check_output(y);
  }
};

// y = A x + sigma * n, n i.i.d. standard normal per measurement pixel.
inline Observation degrade(const LinearOperator& op, const ImageTensor& x,
                           double sigma, RngStream& rng) {
  if (sigma < 0.0) throw ConfigError("noise level must be non-negative");
  ImageTensor y = apply(op, x);
  if (sigma > 0.0)
    for (double& v : y) v += sigma * rng.normal();
  return Observation(op, std::move(y), sigma);
}

}  // namespace pnpula
