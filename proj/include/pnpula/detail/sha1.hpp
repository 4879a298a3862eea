#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

namespace pnpula::detail {

// Minimal SHA-1 (RFC 3174), enough for git-style content hashes of inputs.
class Sha1 {
 public:
  Sha1() { reset(); }

  void reset() {
    h_ = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
    buffer_.clear();
    length_ = 0;
  }

  void update(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    length_ += n;
    buffer_.insert(buffer_.end(), p, p + n);
    size_t off = 0;
    while (buffer_.size() - off >= 64) {
      process(buffer_.data() + off);
      off += 64;
    }
    buffer_.erase(buffer_.begin(), buffer_.begin() + off);
  }

  std::string hex_digest() {
    std::vector<unsigned char> tail = buffer_;
    const uint64_t bits = length_ * 8;
    tail.push_back(0x80);
    while (tail.size() % 64 != 56) tail.push_back(0x00);
    for (int i = 7; i >= 0; --i)
      tail.push_back(static_cast<unsigned char>(bits >> (8 * i)));
    for (size_t off = 0; off < tail.size(); off += 64) process(tail.data() + off);
    char out[41];
    for (int i = 0; i < 5; ++i) std::snprintf(out + 8 * i, 9, "%08x", h_[i]);
    reset();
    return std::string(out, 40);
  }

 private:
  static uint32_t rol(uint32_t v, int s) { return (v << s) | (v >> (32 - s)); }

  void process(const unsigned char* block) {
    uint32_t w[80];
    for (int i = 0; i < 16; ++i)
      w[i] = (static_cast<uint32_t>(block[4 * i]) << 24) |
             (static_cast<uint32_t>(block[4 * i + 1]) << 16) |
             (static_cast<uint32_t>(block[4 * i + 2]) << 8) |
             static_cast<uint32_t>(block[4 * i + 3]);
    for (int i = 16; i < 80; ++i)
      w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
    uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
    for (int i = 0; i < 80; ++i) {
      uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5A827999u;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1u;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDCu;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6u;
      }
      const uint32_t t = rol(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = t;
    }
    h_[0] += a;
    h_[1] += b;
    h_[2] += c;
    h_[3] += d;
    h_[4] += e;
  }

  std::array<uint32_t, 5> h_{};
  std::vector<unsigned char> buffer_;
  uint64_t length_ = 0;
};

// git blob hash: sha1("blob <size>\0" + content)
inline std::string git_blob_sha1(const std::vector<unsigned char>& content) {
  Sha1 sha;
  const std::string header = "blob " + std::to_string(content.size());
  sha.update(header.data(), header.size() + 1);  // include the NUL
  if (!content.empty()) sha.update(content.data(), content.size());
  return sha.hex_digest();
}

}  // namespace pnpula::detail
