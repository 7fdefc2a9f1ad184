#include "psr/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace psr {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// Raw 8-bit raster with 1 or 3 channels.
struct Raster {
  int64_t h = 0, w = 0, c = 0;
  std::vector<unsigned char> pixels;
};

Raster read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("png: cannot open file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png: allocation failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: failed to decode " + path);
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int depth = png_get_bit_depth(png, info);
  int color = png_get_color_type(png, info);

  if (depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: unsupported bit depth (want 8) in " + path);
  }
  if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: unsupported color type (want gray or RGB) in " + path);
  }

  Raster out;
  out.h = h;
  out.w = w;
  out.c = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  out.pixels.resize(static_cast<size_t>(out.h * out.w * out.c));

  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = out.pixels.data() + static_cast<size_t>(y) * w * out.c;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const Raster& r, const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("png: cannot open file for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png: allocation failure");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png: allocation failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: failed to encode " + path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.w), static_cast<png_uint_32>(r.h), 8,
               r.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_bytep> rows(static_cast<size_t>(r.h));
  for (int64_t y = 0; y < r.h; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(r.pixels.data() + static_cast<size_t>(y) * r.w * r.c);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

unsigned char quantize(double v) {
  double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<unsigned char>(q);
}

}  // namespace

ImageTensor load_image(const std::string& path) {
  Raster r = read_png(path);
  ImageTensor img(r.h, r.w, r.c, ValueRange::Unit);
  for (int64_t i = 0; i < img.data.numel(); ++i)
    img.data[i] = static_cast<double>(r.pixels[static_cast<size_t>(i)]) / 255.0;
  return img;
}

void save_image(const ImageTensor& img, const std::string& path) {
  if (img.channels() != 1 && img.channels() != 3)
    throw std::invalid_argument("save_image: C must be 1 or 3");
  ImageTensor unit = to_unit(img);
  Raster r;
  r.h = unit.height();
  r.w = unit.width();
  r.c = unit.channels();
  r.pixels.resize(static_cast<size_t>(r.h * r.w * r.c));
  for (int64_t i = 0; i < unit.data.numel(); ++i)
    r.pixels[static_cast<size_t>(i)] = quantize(unit.data[i]);
  write_png(r, path);
}

ShadowMask load_mask(const std::string& path) {
  Raster r = read_png(path);
  ShadowMask m(r.h, r.w);
  for (int64_t y = 0; y < r.h; ++y)
    for (int64_t x = 0; x < r.w; ++x) {
      // Use the first channel; mask files are expected grayscale.
      unsigned char v = r.pixels[static_cast<size_t>((y * r.w + x) * r.c)];
      m.at(y, x) = v >= 128 ? 1.0 : 0.0;
    }
  return m;
}

void save_mask(const ShadowMask& mask, const std::string& path) {
  Raster r;
  r.h = mask.height();
  r.w = mask.width();
  r.c = 1;
  r.pixels.resize(static_cast<size_t>(r.h * r.w));
  for (int64_t i = 0; i < mask.data.numel(); ++i)
    r.pixels[static_cast<size_t>(i)] = mask.data[i] != 0.0 ? 255 : 0;
  write_png(r, path);
}

}  // namespace psr
