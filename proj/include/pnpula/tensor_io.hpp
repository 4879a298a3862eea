#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "pnpula/errors.hpp"
#include "pnpula/tensor.hpp"

namespace pnpula {

// "LRT1" raw tensor file: magic bytes LRT1, u32 little-endian ndim, ndim u32
// little-endian dims, then row-major 32-bit little-endian floats.
struct TensorFile {
  std::vector<uint32_t> dims;
  std::vector<float> data;
};

namespace detail {

inline void put_u32_le(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 24));
}

inline uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FileError("cannot open file: " + path);
  std::fseek(f.get(), 0, SEEK_END);
  const long n = std::ftell(f.get());
  std::fseek(f.get(), 0, SEEK_SET);
  std::vector<unsigned char> buf(static_cast<size_t>(n));
  if (n > 0 && std::fread(buf.data(), 1, buf.size(), f.get()) != buf.size())
    throw FileError("short read: " + path);
  return buf;
}

inline void write_all(const std::string& path, const unsigned char* data,
                      size_t n) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FileError("cannot open file for writing: " + path);
  if (n > 0 && std::fwrite(data, 1, n, f.get()) != n)
    throw FileError("short write: " + path);
}

}  // namespace detail

inline void write_lrt1(const std::string& path, const std::vector<uint32_t>& dims,
                       const std::vector<float>& data) {
  size_t expect = 1;
  for (uint32_t d : dims) expect *= d;
  if (dims.empty() || expect != data.size())
    throw ShapeError("LRT1 dims do not match the payload");
  std::vector<unsigned char> out;
  out.reserve(8 + 4 * dims.size() + 4 * data.size());
  out.insert(out.end(), {'L', 'R', 'T', '1'});
  detail::put_u32_le(out, static_cast<uint32_t>(dims.size()));
  for (uint32_t d : dims) detail::put_u32_le(out, d);
  for (float v : data) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32_le(out, bits);
  }
  detail::write_all(path, out.data(), out.size());
}

inline void write_lrt1(const std::string& path, const ImageTensor& img) {
  std::vector<float> data(img.size());
  for (long i = 0; i < img.size(); ++i) data[i] = static_cast<float>(img.data()[i]);
  write_lrt1(path,
             {static_cast<uint32_t>(img.channels()),
              static_cast<uint32_t>(img.height()),
              static_cast<uint32_t>(img.width())},
             data);
}

inline TensorFile read_lrt1(const std::string& path) {
  const auto buf = detail::read_all(path);
  if (buf.size() < 8 || std::memcmp(buf.data(), "LRT1", 4) != 0)
    throw FileError("not an LRT1 file: " + path);
  const uint32_t ndim = detail::get_u32_le(buf.data() + 4);
  if (ndim == 0 || ndim > 8 || buf.size() < 8 + 4ull * ndim)
    throw FileError("corrupt LRT1 header: " + path);
  TensorFile tf;
  size_t count = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    tf.dims.push_back(detail::get_u32_le(buf.data() + 8 + 4ull * i));
    count *= tf.dims.back();
  }
  const size_t payload = 8 + 4ull * ndim;
  if (buf.size() != payload + 4ull * count)
    throw FileError("LRT1 payload size mismatch: " + path);
  tf.data.resize(count);
  for (size_t i = 0; i < count; ++i) {
    const uint32_t bits = detail::get_u32_le(buf.data() + payload + 4 * i);
    std::memcpy(&tf.data[i], &bits, 4);
  }
  return tf;
}

// 2-D files are read as single-channel images; 3-D as channel-major.
inline ImageTensor image_from_tensor_file(const TensorFile& tf) {
  int c, h, w;
  if (tf.dims.size() == 2) {
    c = 1;
    h = static_cast<int>(tf.dims[0]);
    w = static_cast<int>(tf.dims[1]);
  } else if (tf.dims.size() == 3) {
    c = static_cast<int>(tf.dims[0]);
    h = static_cast<int>(tf.dims[1]);
    w = static_cast<int>(tf.dims[2]);
  } else {
    throw ShapeError("expected a 2-D or 3-D tensor file");
  }
  ImageTensor img(c, h, w);
  for (long i = 0; i < img.size(); ++i) {
    img.data()[i] = tf.data[static_cast<size_t>(i)];
    if (!std::isfinite(img.data()[i]))
      throw FileError("tensor file contains non-finite values");
  }
  return img;
}

inline ImageTensor read_lrt1_image(const std::string& path) {
  return image_from_tensor_file(read_lrt1(path));
}

// --- PNG (libpng), 8- and 16-bit, gray or RGB, linear scaling to [0,1] ---

inline ImageTensor read_png(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FileError("cannot open file: " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FileError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows;
  std::vector<unsigned char> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FileError("failed to decode PNG: " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  const int channels =
      (color == PNG_COLOR_TYPE_GRAY) ? 1 : (color == PNG_COLOR_TYPE_RGB ? 3 : 0);
  if (channels == 0) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FileError("unsupported PNG colour type: " + path);
  }
  const size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * h);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = pixels.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageTensor img(channels, h, w);
  const double scale = depth == 16 ? 65535.0 : 255.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        double v;
        if (depth == 16) {
          const unsigned char* p = pixels.data() + stride * y + 2 * (x * channels + c);
          v = static_cast<double>((static_cast<unsigned>(p[0]) << 8) | p[1]);
        } else {
          v = pixels[stride * y + x * channels + c];
        }
        img(c, y, x) = v / scale;
      }
  return img;
}

inline void write_png(const std::string& path, const ImageTensor& img,
                      int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16)
    throw ConfigError("PNG bit depth must be 8 or 16");
  if (img.channels() != 1 && img.channels() != 3)
    throw ShapeError("PNG export supports 1 or 3 channels");
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FileError("cannot open file for writing: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw FileError("libpng initialisation failed");
  }
  const int h = img.height(), w = img.width(), ch = img.channels();
  const double scale = bit_depth == 16 ? 65535.0 : 255.0;
  const size_t stride = static_cast<size_t>(w) * ch * (bit_depth / 8);
  std::vector<unsigned char> pixels(stride * h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) {
    rows[y] = pixels.data() + stride * y;
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double v = img(c, y, x);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        const unsigned q = static_cast<unsigned>(std::lround(v * scale));
        if (bit_depth == 16) {
          unsigned char* p = rows[y] + 2 * (x * ch + c);
          p[0] = static_cast<unsigned char>(q >> 8);
          p[1] = static_cast<unsigned char>(q & 0xFF);
        } else {
          rows[y][x * ch + c] = static_cast<unsigned char>(q);
        }
      }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FileError("failed to encode PNG: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, bit_depth,
               ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Dispatch on extension; kernels and masks travel as LRT1 or grayscale PNG.
inline ImageTensor read_image_any(const std::string& path) {
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".lrt1")
    return read_lrt1_image(path);
  return read_png(path);
}

}  // namespace pnpula
