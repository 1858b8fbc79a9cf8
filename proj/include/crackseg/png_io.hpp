#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "crackseg/error.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Interleaved 8-bit raster, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<unsigned char> pixels;

  long long size_bytes() const { return static_cast<long long>(width) * height * channels; }
};

namespace detail {

struct FileCloser {
  std::FILE* f = nullptr;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

/// Decodes a PNG to 8-bit gray or RGB (palette/16-bit/alpha variants are
/// normalized by libpng transforms).
inline ImageU8 read_png(const std::filesystem::path& path) {
  detail::FileCloser fc;
  fc.f = std::fopen(path.string().c_str(), "rb");
  if (!fc.f) throw IoError("read_png: cannot open '" + path.string() + "'");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("read_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("read_png: libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: decode error in '" + path.string() + "'");
  }
  png_init_io(png, fc.f);
  png_read_info(png, info);

  png_byte color_type = png_get_color_type(png, info);
  png_byte bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  ImageU8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  int ch = static_cast<int>(png_get_channels(png, info));
  if (ch != 1 && ch != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: unsupported channel count " + std::to_string(ch) + " in '" + path.string() + "'");
  }
  img.channels = ch;
  img.pixels.resize(img.size_bytes());
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = img.pixels.data() + static_cast<long long>(y) * img.width * ch;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

/// Encodes 8-bit gray or RGB, non-interlaced, fixed settings so identical
/// pixels yield identical bytes.
inline void write_png(const std::filesystem::path& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("write_png: channel count must be 1 or 3, got " + std::to_string(img.channels));
  if (img.width < 1 || img.height < 1 || static_cast<long long>(img.pixels.size()) != img.size_bytes())
    throw IoError("write_png: inconsistent image buffer");
  detail::FileCloser fc;
  fc.f = std::fopen(path.string().c_str(), "wb");
  if (!fc.f) throw IoError("write_png: cannot open '" + path.string() + "'");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("write_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("write_png: libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png: encode error for '" + path.string() + "'");
  }
  png_init_io(png, fc.f);
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.pixels.data() + static_cast<long long>(y) * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// [0,255] u8 raster -> [C,H,W] tensor in [0,1].
inline Tensor image_to_tensor(const ImageU8& img) {
  std::vector<double> data(static_cast<size_t>(img.channels) * img.height * img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        data[(static_cast<size_t>(c) * img.height + y) * img.width + x] =
            img.pixels[(static_cast<size_t>(y) * img.width + x) * img.channels + c] / 255.0;
  return Tensor::from_data({img.channels, img.height, img.width}, std::move(data));
}

/// [C,H,W] tensor in [0,1] -> u8 raster, round half up.
inline ImageU8 tensor_to_image(const Tensor& t) {
  if (t.ndim() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
    throw ShapeError("tensor_to_image: expected [1|3,H,W], got " + shape_str(t.shape()));
  ImageU8 img;
  img.channels = t.dim(0);
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.pixels.resize(img.size_bytes());
  const auto& d = t.data();
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double v = d[(static_cast<size_t>(c) * img.height + y) * img.width + x];
        double scaled = std::floor(v * 255.0 + 0.5);
        if (scaled < 0.0) scaled = 0.0;
        if (scaled > 255.0) scaled = 255.0;
        img.pixels[(static_cast<size_t>(y) * img.width + x) * img.channels + c] =
            static_cast<unsigned char>(scaled);
      }
  return img;
}

/// Gray mask -> binary {0,1} tensor [1,H,W], threshold at 128 (>= 128 is foreground).
inline Tensor mask_to_tensor(const ImageU8& img) {
  if (img.channels != 1) throw IoError("mask_to_tensor: mask must be single-channel gray");
  std::vector<double> data(static_cast<size_t>(img.height) * img.width);
  for (size_t i = 0; i < data.size(); ++i) data[i] = img.pixels[i] >= 128 ? 1.0 : 0.0;
  return Tensor::from_data({1, img.height, img.width}, std::move(data));
}

}  // namespace crackseg
