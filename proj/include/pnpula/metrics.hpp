#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "pnpula/errors.hpp"
#include "pnpula/tensor.hpp"

namespace pnpula {

// 10 log10(peak^2 / MSE). A zero-MSE pair is reported as the 100 dB sentinel.
inline double psnr(const ImageTensor& x, const ImageTensor& reference,
                   double peak = 1.0) {
  if (!(peak > 0.0)) throw ConfigError("peak must be positive");
  x.check_same_shape(reference);
  double mse = 0.0;
  for (long i = 0; i < x.size(); ++i) {
    const double e = x.data()[i] - reference.data()[i];
    mse += e * e;
  }
  mse /= static_cast<double>(x.size());
  if (mse == 0.0) return 100.0;
  return 10.0 * std::log10(peak * peak / mse);
}

// dB values are conventionally reported to 2 decimals.
inline std::string format_db(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  return buf;
}

namespace detail {

inline std::vector<double> ssim_window(int size = 11, double sigma = 1.5) {
  std::vector<double> w(static_cast<size_t>(size) * size);
  const int c = size / 2;
  double total = 0.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double v = std::exp(-((y - c) * (y - c) + (x - c) * (x - c)) /
                                (2.0 * sigma * sigma));
      w[static_cast<size_t>(y) * size + x] = v;
      total += v;
    }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace detail

// Mean local SSIM over all fully-contained 11x11 windows (Gaussian weights,
// std 1.5; K1 = 0.01, K2 = 0.03, dynamic range 1), averaged over channels.
inline double ssim(const ImageTensor& x, const ImageTensor& reference) {
  x.check_same_shape(reference);
  constexpr int kWindow = 11;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  if (x.height() < kWindow || x.width() < kWindow)
    throw ShapeError("ssim needs images at least 11 pixels on each side");
  static const std::vector<double> w = detail::ssim_window();
  double total = 0.0;
  long count = 0;
  for (int c = 0; c < x.channels(); ++c)
    for (int oy = 0; oy + kWindow <= x.height(); ++oy)
      for (int ox = 0; ox + kWindow <= x.width(); ++ox) {
        double mx = 0.0, my = 0.0, mxx = 0.0, myy = 0.0, mxy = 0.0;
        for (int dy = 0; dy < kWindow; ++dy)
          for (int dx = 0; dx < kWindow; ++dx) {
            const double weight = w[static_cast<size_t>(dy) * kWindow + dx];
            const double a = x(c, oy + dy, ox + dx);
            const double b = reference(c, oy + dy, ox + dx);
            mx += weight * a;
            my += weight * b;
            mxx += weight * a * a;
            myy += weight * b * b;
            mxy += weight * a * b;
          }
        const double vx = mxx - mx * mx;
        const double vy = myy - my * my;
        const double cov = mxy - mx * my;
        total += ((2.0 * mx * my + kC1) * (2.0 * cov + kC2)) /
                 ((mx * mx + my * my + kC1) * (vx + vy + kC2));
        ++count;
      }
  return total / static_cast<double>(count);
}

struct MetricReport {
  double psnr_db = 0.0;
  double ssim_value = 0.0;
};

inline MetricReport evaluate(const ImageTensor& x, const ImageTensor& reference) {
  return {psnr(x, reference), ssim(x, reference)};
}

}  // namespace pnpula
