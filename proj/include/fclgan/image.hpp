#pragma once

// 8-bit PNG I/O and a planar float image type with values in [0, 1].

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fclgan/errors.hpp"

namespace fclgan {

/// Planar CHW image, values nominally in [0, 1].
struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  std::size_t plane() const { return height * width; }
  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

/// Decodes any PNG to 3-channel RGB (gray is replicated, alpha dropped).
inline Image read_png(const std::filesystem::path& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path.string() + " is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialization failed");
  }
  Image img;
  std::vector<png_byte> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG data in " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != 3 * w) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG layout in " + path.string());
  }
  buf.resize(rowbytes * h);
  rows.resize(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = buf.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img = Image(3, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(buf[y * rowbytes + 3 * x + c]) / 255.0f;
  return img;
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Writes an 8-bit RGB (3 channels) or grayscale (1 channel) PNG.
inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ShapeError("write_png: expected 1 or 3 channels, got " + std::to_string(img.channels));
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed");
  }
  const std::size_t c = img.channels, w = img.width, h = img.height;
  std::vector<png_byte> buf(c * w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) buf[(y * w + x) * c + k] = to_byte(img.at(k, y, x));
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = buf.data() + y * w * c;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Round-trips through 8 bits so in-memory images match what a PNG would hold.
inline Image quantize8(Image img) {
  for (auto& v : img.data) v = static_cast<float>(to_byte(v)) / 255.0f;
  return img;
}

}  // namespace fclgan
