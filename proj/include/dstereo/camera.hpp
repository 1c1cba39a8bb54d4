#pragma once

#include "dstereo/rng.hpp"
#include "dstereo/vecmath.hpp"

namespace ds {

// Pinhole camera: world-to-view is X = R x + t with R = rodrigues(r),
// f is the half field-of-view in radians. NDC spans [-1,1]^2, +y up,
// +z into the screen.
struct Camera {
  Vec3 r;
  Vec3 t;
  double f = 0.5;
};

constexpr double kDefaultZNear = 1e-4;

Mat3 rotation_matrix(const Vec3& r);
// d(rodrigues)/dr_k, k = 0..2.
void rotation_matrix_grad(const Vec3& r, Mat3 dR[3]);
Vec3 axis_angle_from_matrix(const Mat3& R);
Vec3 canonical_axis_angle(const Vec3& r);

Vec3 camera_center(const Camera& cam);
Vec3 camera_forward(const Camera& cam);  // world direction of +z

struct Projected {
  Vec2 ndc;
  double z = 0;
};

Projected project(const Camera& cam, const Vec3& x, double z_near = kDefaultZNear);

struct CameraGrad {
  Vec3 r{};
  Vec3 t{};
  double f = 0;

  void accumulate(const CameraGrad& o) { r += o.r; t += o.t; f += o.f; }
};

// Adjoint of project(): accumulates into the world point and camera grads.
// R and dR must come from rotation_matrix / rotation_matrix_grad of cam.r.
void project_backward(const Camera& cam, const Mat3& R, const Mat3 dR[3], const Vec3& x,
                      const Vec2& adj_ndc, double adj_z, Vec3& adj_x, CameraGrad& adj_cam);

// R' = rodrigues(axis * theta) * R with a uniform random axis and
// theta ~ N(0, sigma_deg^2); t and f unchanged.
Camera perturb_rotation(const Camera& cam, double sigma_deg, Rng& rng);

double pixel_to_ndc(int i, int n);
double ndc_to_pixel(double x, int n);  // continuous pixel coordinate
int ndc_to_pixel_index(double x, int n);

}  // namespace ds
