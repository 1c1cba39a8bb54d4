#include "dstereo/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace ds {

double srgb_to_linear(double u) {
  if (u <= 0.04045) return u / 12.92;
  return std::pow((u + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
  v = clampd(v, 0.0, 1.0);
  if (v <= 0.0031308) return v * 12.92;
  return 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void io_fail(const std::string& what, const std::string& path) {
  throw error(errc::io, what + ": " + path);
}

// Decodes any PNG into 8-bit RGB rows, top-down as stored in the file.
std::vector<std::vector<uint8_t>> read_png_rows(const std::string& path, int& w, int& h) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) io_fail("cannot open PNG", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail("libpng init failed", path);
  }
  std::vector<std::vector<uint8_t>> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_fail("failed to decode PNG", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  rows.assign(h, std::vector<uint8_t>(size_t(w) * 3));
  std::vector<png_bytep> ptrs(h);
  for (int y = 0; y < h; y++) ptrs[y] = rows[y].data();
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return rows;
}

void write_png_rows(const std::string& path, int w, int h, int channels, int bit_depth,
                    const std::vector<std::vector<uint8_t>>& rows) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) io_fail("cannot open PNG for writing", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    io_fail("libpng init failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    io_fail("failed to encode PNG", path);
  }
  png_init_io(png, fp.get());
  int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, w, h, bit_depth, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> ptrs(h);
  for (int y = 0; y < h; y++) ptrs[y] = const_cast<png_bytep>(rows[y].data());
  png_write_image(png, ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

ImageRGB read_png_rgb(const std::string& path) {
  int w, h;
  auto rows = read_png_rows(path, w, h);
  ImageRGB img(w, h);
  for (int y = 0; y < h; y++) {
    const uint8_t* row = rows[y].data();  // file row y = image row h-1-y
    double* dst = img.px(0, h - 1 - y);
    for (int x = 0; x < w * 3; x++) dst[x] = srgb_to_linear(row[x] / 255.0);
  }
  return img;
}

void write_png_rgb(const std::string& path, const ImageRGB& img) {
  std::vector<std::vector<uint8_t>> rows(img.height, std::vector<uint8_t>(size_t(img.width) * 3));
  for (int y = 0; y < img.height; y++) {
    const double* src = img.px(0, img.height - 1 - y);
    for (int x = 0; x < img.width * 3; x++)
      rows[y][x] = static_cast<uint8_t>(std::lround(linear_to_srgb(src[x]) * 255.0));
  }
  write_png_rows(path, img.width, img.height, 3, 8, rows);
}

ImageGray read_png_gray(const std::string& path) {
  int w, h;
  auto rows = read_png_rows(path, w, h);
  ImageGray img(w, h);
  for (int y = 0; y < h; y++) {
    const uint8_t* row = rows[y].data();
    double* dst = img.px(0, h - 1 - y);
    for (int x = 0; x < w; x++)
      dst[x] = (row[3 * x] + row[3 * x + 1] + row[3 * x + 2]) / (3.0 * 255.0);
  }
  return img;
}

void write_png_gray(const std::string& path, const ImageGray& img) {
  std::vector<std::vector<uint8_t>> rows(img.height, std::vector<uint8_t>(img.width));
  for (int y = 0; y < img.height; y++) {
    const double* src = img.px(0, img.height - 1 - y);
    for (int x = 0; x < img.width; x++)
      rows[y][x] = static_cast<uint8_t>(std::lround(clampd(src[x], 0.0, 1.0) * 255.0));
  }
  write_png_rows(path, img.width, img.height, 1, 8, rows);
}

void write_png_gray16(const std::string& path, const ImageGray& img, double scale) {
  std::vector<std::vector<uint8_t>> rows(img.height, std::vector<uint8_t>(size_t(img.width) * 2));
  for (int y = 0; y < img.height; y++) {
    const double* src = img.px(0, img.height - 1 - y);
    for (int x = 0; x < img.width; x++) {
      auto v = static_cast<uint16_t>(std::lround(clampd(src[x] / scale, 0.0, 1.0) * 65535.0));
      rows[y][2 * x] = static_cast<uint8_t>(v >> 8);  // PNG is big-endian
      rows[y][2 * x + 1] = static_cast<uint8_t>(v & 0xff);
    }
  }
  write_png_rows(path, img.width, img.height, 1, 16, rows);
}

}  // namespace ds
