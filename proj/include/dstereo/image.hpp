#pragma once

#include <vector>

#include "dstereo/vecmath.hpp"

namespace ds {

// Row-major, row 0 at the bottom of the picture (matches NDC +y up).
// The PNG layer flips rows on read/write.
template <int C>
struct Image {
  int width = 0, height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), data(size_t(w) * h * C, fill) {}

  double* px(int x, int y) { return data.data() + (size_t(y) * width + x) * C; }
  const double* px(int x, int y) const { return data.data() + (size_t(y) * width + x) * C; }
  double& at(int x, int y, int c = 0) { return px(x, y)[c]; }
  double at(int x, int y, int c = 0) const { return px(x, y)[c]; }
  size_t n_px() const { return size_t(width) * height; }
  bool same_size(const Image& o) const { return width == o.width && height == o.height; }
};

using ImageRGB = Image<3>;
using ImageGray = Image<1>;

inline Vec3 rgb_at(const ImageRGB& img, int x, int y) {
  const double* p = img.px(x, y);
  return {p[0], p[1], p[2]};
}

inline void set_rgb(ImageRGB& img, int x, int y, const Vec3& v) {
  double* p = img.px(x, y);
  p[0] = v.x;
  p[1] = v.y;
  p[2] = v.z;
}

// Bilinear sample with clamp-to-edge at continuous pixel coords
// (integer coordinates on pixel centers). Derivatives are zero in any
// dimension that was clamped.
struct BilinearCoeffs {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double fx = 0, fy = 0;
  bool clamped_x = false, clamped_y = false;
};

inline BilinearCoeffs bilinear_coeffs(int width, int height, double px, double py) {
  BilinearCoeffs c;
  c.clamped_x = px <= 0.0 || px >= width - 1.0;
  c.clamped_y = py <= 0.0 || py >= height - 1.0;
  double cx = clampd(px, 0.0, double(width - 1));
  double cy = clampd(py, 0.0, double(height - 1));
  c.x0 = std::min(int(cx), width - 2 >= 0 ? width - 2 : 0);
  c.y0 = std::min(int(cy), height - 2 >= 0 ? height - 2 : 0);
  c.x1 = std::min(c.x0 + 1, width - 1);
  c.y1 = std::min(c.y0 + 1, height - 1);
  c.fx = cx - c.x0;
  c.fy = cy - c.y0;
  return c;
}

template <int C>
inline void sample_bilinear(const Image<C>& img, double px, double py, double* out,
                            double* dpx = nullptr, double* dpy = nullptr) {
  BilinearCoeffs c = bilinear_coeffs(img.width, img.height, px, py);
  const double* p00 = img.px(c.x0, c.y0);
  const double* p10 = img.px(c.x1, c.y0);
  const double* p01 = img.px(c.x0, c.y1);
  const double* p11 = img.px(c.x1, c.y1);
  for (int k = 0; k < C; k++) {
    double a = p00[k] * (1 - c.fx) + p10[k] * c.fx;
    double b = p01[k] * (1 - c.fx) + p11[k] * c.fx;
    out[k] = a * (1 - c.fy) + b * c.fy;
    if (dpx) dpx[k] = c.clamped_x ? 0.0 : (p10[k] - p00[k]) * (1 - c.fy) + (p11[k] - p01[k]) * c.fy;
    if (dpy) dpy[k] = c.clamped_y ? 0.0 : (p01[k] - p00[k]) * (1 - c.fx) + (p11[k] - p10[k]) * c.fx;
  }
}

}  // namespace ds
