#include "dstereo/camera.hpp"

#include <cmath>

namespace ds {

Mat3 rotation_matrix(const Vec3& r) {
  double th2 = norm2(r);
  Mat3 K = skew(r);
  double a, b;  // sin(th)/th, (1-cos(th))/th^2
  if (th2 < 1e-8) {
    a = 1.0 - th2 / 6.0 + th2 * th2 / 120.0;
    b = 0.5 - th2 / 24.0 + th2 * th2 / 720.0;
  } else {
    double th = std::sqrt(th2);
    a = std::sin(th) / th;
    b = (1.0 - std::cos(th)) / th2;
  }
  return Mat3::identity() + K * a + (K * K) * b;
}

void rotation_matrix_grad(const Vec3& r, Mat3 dR[3]) {
  double th2 = norm2(r);
  if (th2 < 1e-6) {
    // Series through O(th^2): R = I + a K + b K^2 with a = 1 - th^2/6,
    // b = 1/2 - th^2/24, K = [r]x.
    Mat3 K = skew(r);
    Mat3 K2 = K * K;
    double a = 1.0 - th2 / 6.0;
    double b = 0.5 - th2 / 24.0;
    for (int k = 0; k < 3; k++) {
      Vec3 e{};
      e[k] = 1;
      Mat3 E = skew(e);
      dR[k] = E * a + (E * K + K * E) * b + K * (-r[k] / 3.0) + K2 * (-r[k] / 12.0);
    }
    return;
  }
  Mat3 R = rotation_matrix(r);
  Mat3 K = skew(r);
  Mat3 ImR = Mat3::identity() - R;
  for (int k = 0; k < 3; k++) {
    Vec3 e{};
    e[k] = 1;
    Vec3 v = cross(r, ImR * e);
    dR[k] = (K * r[k] + skew(v)) * (1.0 / th2) * R;
  }
}

Vec3 axis_angle_from_matrix(const Mat3& R) {
  Vec3 w{(R(2, 1) - R(1, 2)) * 0.5, (R(0, 2) - R(2, 0)) * 0.5, (R(1, 0) - R(0, 1)) * 0.5};
  double sin_th = norm(w);
  double cos_th = clampd((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  double th = std::atan2(sin_th, cos_th);
  if (sin_th > 1e-7) return w * (th / sin_th);
  if (cos_th > 0) return w;  // th ~ 0: r ~ w
  // th ~ pi: axis from the symmetric part, diagonal-dominant column.
  Mat3 S = (R + R.transposed()) * 0.5;
  int k = 0;
  for (int i = 1; i < 3; i++)
    if (S(i, i) > S(k, k)) k = i;
  Vec3 a;
  a[k] = std::sqrt(std::max(0.0, (S(k, k) - cos_th) / (1.0 - cos_th)));
  for (int i = 0; i < 3; i++)
    if (i != k) a[i] = S(k, i) / ((1.0 - cos_th) * a[k]);
  a = normalized(a);
  if (dot(a, w) < 0) a = -a;
  return a * th;
}

Vec3 canonical_axis_angle(const Vec3& r) {
  double th = norm(r);
  if (th < kPi) return r;
  return axis_angle_from_matrix(rotation_matrix(r));
}

Vec3 camera_center(const Camera& cam) {
  Mat3 R = rotation_matrix(cam.r);
  return R.transposed() * (-cam.t);
}

Vec3 camera_forward(const Camera& cam) {
  Mat3 R = rotation_matrix(cam.r);
  return R.transposed() * Vec3{0, 0, 1};
}

Projected project(const Camera& cam, const Vec3& x, double z_near) {
  if (cam.f <= 0 || cam.f >= kPi / 2)
    throw error(errc::invalid_argument, "project: half-fov out of (0, pi/2)");
  Mat3 R = rotation_matrix(cam.r);
  Vec3 X = R * x + cam.t;
  if (X.z <= z_near)
    throw error(errc::behind_camera, "project: point at or behind the near plane");
  double s = 1.0 / std::tan(cam.f);
  return {{s * X.x / X.z, s * X.y / X.z}, X.z};
}

void project_backward(const Camera& cam, const Mat3& R, const Mat3 dR[3], const Vec3& x,
                      const Vec2& adj_ndc, double adj_z, Vec3& adj_x, CameraGrad& adj_cam) {
  Vec3 X = R * x + cam.t;
  double s = 1.0 / std::tan(cam.f);
  double inv_z = 1.0 / X.z;
  Vec3 adj_X{s * inv_z * adj_ndc.x, s * inv_z * adj_ndc.y,
             -s * inv_z * inv_z * (X.x * adj_ndc.x + X.y * adj_ndc.y) + adj_z};
  adj_x += R.transposed() * adj_X;
  adj_cam.t += adj_X;
  for (int k = 0; k < 3; k++) adj_cam.r[k] += dot(adj_X, dR[k] * x);
  double ds_df = -(1.0 + s * s);
  adj_cam.f += (adj_ndc.x * X.x + adj_ndc.y * X.y) * inv_z * ds_df;
}

Camera perturb_rotation(const Camera& cam, double sigma_deg, Rng& rng) {
  Vec3 axis = rng.unit_vec3();
  double th = rng.normal() * deg_to_rad(sigma_deg);
  Mat3 dR = rotation_matrix(axis * th);
  Mat3 R2 = dR * rotation_matrix(cam.r);
  Camera out = cam;
  out.r = axis_angle_from_matrix(R2);
  return out;
}

double pixel_to_ndc(int i, int n) {
  if (i < 0 || i >= n) throw error(errc::invalid_argument, "pixel_to_ndc: index out of range");
  return 2.0 * (i + 0.5) / n - 1.0;
}

double ndc_to_pixel(double x, int n) { return (x + 1.0) * 0.5 * n - 0.5; }

int ndc_to_pixel_index(double x, int n) {
  int i = static_cast<int>(std::lround(ndc_to_pixel(x, n)));
  if (i < 0 || i >= n)
    throw error(errc::invalid_argument, "ndc_to_pixel_index: outside the image");
  return i;
}

}  // namespace ds
