#pragma once

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "pnpula/tensor.hpp"

namespace pnpula {

// Thin wrapper around FFTW's 2-D complex transforms. Plans are created once
// per grid size with FFTW_ESTIMATE (deterministic plan choice, hence
// bit-reproducible results) and FFTW_UNALIGNED so they can execute on any
// caller-owned buffer. The FFTW planner is not thread-safe, so creation is
// serialised; execution on distinct buffers is safe concurrently.
class Fft2d {
 public:
  static const Fft2d& for_size(int height, int width) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, std::unique_ptr<Fft2d>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[{height, width}];
    if (!slot) slot.reset(new Fft2d(height, width));
    return *slot;
  }

  // out = DFT(in), unnormalised.
  void forward(const std::complex<double>* in, std::complex<double>* out) const {
    fftw_execute_dft(forward_,
                     reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
  }

  // out = IDFT(in) / (height*width).
  void inverse(const std::complex<double>* in, std::complex<double>* out) const {
    fftw_execute_dft(inverse_,
                     reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
    const double scale = 1.0 / (static_cast<double>(height_) * width_);
    const long n = static_cast<long>(height_) * width_;
    for (long i = 0; i < n; ++i) out[i] *= scale;
  }

  int height() const { return height_; }
  int width() const { return width_; }

  Fft2d(const Fft2d&) = delete;
  Fft2d& operator=(const Fft2d&) = delete;

  ~Fft2d() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }

 private:
  Fft2d(int height, int width) : height_(height), width_(width) {
    const long n = static_cast<long>(height) * width;
    std::vector<std::complex<double>> a(n), b(n);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    forward_ = fftw_plan_dft_2d(height, width,
                                reinterpret_cast<fftw_complex*>(a.data()),
                                reinterpret_cast<fftw_complex*>(b.data()),
                                FFTW_FORWARD, flags);
    inverse_ = fftw_plan_dft_2d(height, width,
                                reinterpret_cast<fftw_complex*>(a.data()),
                                reinterpret_cast<fftw_complex*>(b.data()),
                                FFTW_BACKWARD, flags);
  }

  int height_, width_;
  fftw_plan forward_;
  fftw_plan inverse_;
};

// DFT of one real image plane.
inline std::vector<std::complex<double>> fft2(const ImageTensor& img, int channel) {
  const int h = img.height(), w = img.width();
  std::vector<std::complex<double>> in(static_cast<size_t>(h) * w), out(in.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      in[static_cast<size_t>(y) * w + x] = img(channel, y, x);
  Fft2d::for_size(h, w).forward(in.data(), out.data());
  return out;
}

// Inverse DFT into one plane of a real image; imaginary parts are dropped
// (they are round-off when the spectrum is Hermitian).
inline void ifft2_into(const std::vector<std::complex<double>>& spec,
                       ImageTensor& img, int channel) {
  const int h = img.height(), w = img.width();
  std::vector<std::complex<double>> out(spec.size());
  Fft2d::for_size(h, w).inverse(spec.data(), out.data());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img(channel, y, x) = out[static_cast<size_t>(y) * w + x].real();
}

}  // namespace pnpula
