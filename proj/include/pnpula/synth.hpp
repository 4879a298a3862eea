#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "pnpula/errors.hpp"
#include "pnpula/operators.hpp"
#include "pnpula/rng.hpp"
#include "pnpula/tensor.hpp"

namespace pnpula {

// Deterministic synthetic test images in [0,1]; desk-scale stand-ins for
// photographic data.
enum class TestImageKind { piecewise_constant, gaussian_field, checkerboard };

inline TestImageKind test_image_kind_from_string(const std::string& s) {
  if (s == "piecewise-constant") return TestImageKind::piecewise_constant;
  if (s == "gaussian-field") return TestImageKind::gaussian_field;
  if (s == "checkerboard") return TestImageKind::checkerboard;
  throw ConfigError("unknown test image kind: " + s);
}

inline ImageTensor generate_test_image(TestImageKind kind, int channels, int height,
                                       int width, uint64_t seed) {
  if (height < 16 || width < 16)
    throw ConfigError("test images must be at least 16 pixels on each side");
  ImageTensor img(channels, height, width);
  RngStream rng(seed, 0x73796e74);  // dedicated synth stream
  switch (kind) {
    case TestImageKind::checkerboard: {
      const int tile_h = std::max(1, height / 8);
      const int tile_w = std::max(1, width / 8);
      for (int c = 0; c < channels; ++c)
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x)
            img(c, y, x) = ((y / tile_h + x / tile_w) % 2 == 0) ? 0.25 : 0.75;
      return img;
    }
    case TestImageKind::piecewise_constant: {
      img.fill(0.5);
      const int rects = 6;
      for (int r = 0; r < rects; ++r) {
        const int y0 = static_cast<int>(rng.uniform_below(height));
        const int x0 = static_cast<int>(rng.uniform_below(width));
        const int hh = 2 + static_cast<int>(rng.uniform_below(std::max(2, height / 2)));
        const int ww = 2 + static_cast<int>(rng.uniform_below(std::max(2, width / 2)));
        const double level = 0.05 + 0.9 * rng.uniform01();
        for (int c = 0; c < channels; ++c)
          for (int y = y0; y < std::min(height, y0 + hh); ++y)
            for (int x = x0; x < std::min(width, x0 + ww); ++x)
              img(c, y, x) = level;
      }
      return img;
    }
    case TestImageKind::gaussian_field: {
      // Smoothed white noise, standardised to mean 0.5 / std 0.15, clipped.
      // At that std the clipped fraction stays well under 5%.
      rng.fill_normal(img);
      const LinearOperator smooth = LinearOperator::blur(
          gaussian_kernel(std::min(15, height / 2 * 2 - 1), 2.5), height, width);
      ImageTensor field = apply(smooth, img);
      const double m = mean(field);
      double var = 0.0;
      for (double v : field) var += (v - m) * (v - m);
      var /= static_cast<double>(field.size());
      const double scale = var > 0.0 ? 0.15 / std::sqrt(var) : 0.0;
      for (double& v : field) v = std::clamp(0.5 + scale * (v - m), 0.0, 1.0);
      return field;
    }
  }
  throw ConfigError("unreachable test image kind");
}

}  // namespace pnpula
