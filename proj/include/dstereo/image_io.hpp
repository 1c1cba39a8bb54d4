#pragma once

#include <string>

#include "dstereo/image.hpp"

namespace ds {

double srgb_to_linear(double u);
double linear_to_srgb(double v);

// Color images are stored as 8-bit sRGB on disk and linear doubles in memory.
ImageRGB read_png_rgb(const std::string& path);
void write_png_rgb(const std::string& path, const ImageRGB& img);

// Masks are 8-bit grayscale with a linear (no sRGB) mapping to [0,1].
ImageGray read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const ImageGray& img);

// Debug depth dumps: 16-bit grayscale, value = clamp(z / scale, 0, 1).
void write_png_gray16(const std::string& path, const ImageGray& img, double scale);

}  // namespace ds
