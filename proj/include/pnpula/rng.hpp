#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "pnpula/tensor.hpp"

namespace pnpula {

// Counter-based deterministic random stream: Philox4x32-10 (Salmon et al.,
// "Parallel random numbers: as easy as 1, 2, 3") keyed by the 64-bit seed,
// with the 128-bit counter split into a 64-bit stream id and a 64-bit
// position. Every primitive draw consumes exactly one counter position, so
// identical (seed, stream, call sequence) reproduces the same values on any
// platform; parallel chains take distinct stream ids from the same seed.
//
// Normal variates use Box-Muller on the two 53-bit uniforms of one block
// (cosine branch only; no state beyond the counter).
class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }
  uint64_t position() const { return pos_; }

  static std::array<uint32_t, 4> philox4x32_10(const std::array<uint32_t, 4>& ctr,
                                               const std::array<uint32_t, 2>& key) {
    constexpr uint32_t kMul0 = 0xD2511F53u, kMul1 = 0xCD9E8D57u;
    constexpr uint32_t kWeyl0 = 0x9E3779B9u, kWeyl1 = 0xBB67AE85u;
    std::array<uint32_t, 4> x = ctr;
    uint32_t k0 = key[0], k1 = key[1];
    for (int round = 0; round < 10; ++round) {
      uint64_t p0 = static_cast<uint64_t>(kMul0) * x[0];
      uint64_t p1 = static_cast<uint64_t>(kMul1) * x[2];
      uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
      uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
      x = {hi1 ^ x[1] ^ k0, lo1, hi0 ^ x[3] ^ k1, lo0};
      k0 += kWeyl0;
      k1 += kWeyl1;
    }
    return x;
  }

  // One block -> two independent 64-bit words.
  std::array<uint64_t, 2> next_block() {
    const std::array<uint32_t, 4> ctr = {
        static_cast<uint32_t>(pos_), static_cast<uint32_t>(pos_ >> 32),
        static_cast<uint32_t>(stream_), static_cast<uint32_t>(stream_ >> 32)};
    const std::array<uint32_t, 2> key = {static_cast<uint32_t>(seed_),
                                         static_cast<uint32_t>(seed_ >> 32)};
    ++pos_;
    const auto out = philox4x32_10(ctr, key);
    return {(static_cast<uint64_t>(out[1]) << 32) | out[0],
            (static_cast<uint64_t>(out[3]) << 32) | out[2]};
  }

  uint64_t next_u64() { return next_block()[0]; }

  // Strictly inside (0,1).
  double uniform01() { return to_unit(next_u64()); }

  double normal() {
    const auto b = next_block();
    const double u1 = to_unit(b[0]);
    const double u2 = to_unit(b[1]);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Unbiased integer in [0, n) by rejection.
  uint64_t uniform_below(uint64_t n) {
    if (n <= 1) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t bits;
    do {
      bits = next_u64();
    } while (bits >= limit);
    return bits % n;
  }

  void fill_normal(ImageTensor& img) {
    for (double& v : img) v = normal();
  }

  ImageTensor normal_image(int channels, int height, int width) {
    ImageTensor img(channels, height, width);
    fill_normal(img);
    return img;
  }

 private:
  static double to_unit(uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }

  uint64_t seed_ = 0;
  uint64_t stream_ = 0;
  uint64_t pos_ = 0;
};

}  // namespace pnpula
