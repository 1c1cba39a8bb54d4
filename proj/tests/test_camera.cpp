#include "dstereo/camera.hpp"

#include <cmath>

#include "doctest.h"

using namespace ds;

TEST_CASE("rodrigues basics") {
  CHECK(norm(rotation_matrix(Vec3{}) * Vec3{1, 2, 3} - Vec3{1, 2, 3}) < 1e-15);
  // quarter turn about +z maps x to y
  Mat3 R = rotation_matrix(Vec3{0, 0, kPi / 2});
  CHECK(norm(R * Vec3{1, 0, 0} - Vec3{0, 1, 0}) < 1e-12);

  Rng rng(5);
  for (int i = 0; i < 10; i++) {
    Vec3 r = rng.unit_vec3() * rng.uniform(0.0, 3.0);
    Mat3 Q = rotation_matrix(r);
    Mat3 I = Q * Q.transposed();
    for (int a = 0; a < 3; a++)
      for (int b = 0; b < 3; b++)
        CHECK(I(a, b) == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-12));
    CHECK(det(Q) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("rodrigues jacobian matches finite differences") {
  Rng rng(17);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; trial++) {
    double scale = trial < 15 ? rng.uniform(0.05, 2.5) : rng.uniform(1e-5, 1e-3);
    Vec3 r = rng.unit_vec3() * scale;
    Mat3 dR[3];
    rotation_matrix_grad(r, dR);
    for (int k = 0; k < 3; k++) {
      Vec3 rp = r, rm = r;
      rp[k] += h;
      rm[k] -= h;
      Mat3 fd = (rotation_matrix(rp) - rotation_matrix(rm)) * (1.0 / (2 * h));
      for (int e = 0; e < 9; e++) {
        double denom = std::max({std::abs(fd.m[e]), std::abs(dR[k].m[e]), 1e-3});
        CHECK(std::abs(fd.m[e] - dR[k].m[e]) / denom < 1e-5);
      }
    }
  }
}

TEST_CASE("axis-angle log round trip") {
  Rng rng(23);
  auto check_roundtrip = [](const Vec3& r) {
    Mat3 R = rotation_matrix(r);
    Vec3 r2 = axis_angle_from_matrix(R);
    Mat3 R2 = rotation_matrix(r2);
    for (int e = 0; e < 9; e++) CHECK(R.m[e] == doctest::Approx(R2.m[e]).epsilon(1e-9));
    CHECK(norm(r2) <= kPi + 1e-9);
  };
  for (int i = 0; i < 20; i++) check_roundtrip(rng.unit_vec3() * rng.uniform(0.0, 3.1));
  check_roundtrip(Vec3{0, 0, 0});
  check_roundtrip(Vec3{kPi - 1e-5, 0, 0});
  check_roundtrip(normalized(Vec3{1, 2, -1}) * (kPi - 1e-7));
  check_roundtrip(normalized(Vec3{-1, 1, 3}) * 3.14159);
}

TEST_CASE("projection known points") {
  Camera cam;
  cam.r = Vec3{};
  cam.t = Vec3{0, 0, 3};
  cam.f = deg_to_rad(30);
  auto on_axis = project(cam, Vec3{0, 0, 0});
  CHECK(norm(on_axis.ndc) < 1e-15);
  CHECK(on_axis.z == doctest::Approx(3.0));
  // a point at the fov edge lands on |ndc| = 1
  double r_edge = 3.0 * std::tan(cam.f);
  auto edge = project(cam, Vec3{r_edge, 0, 0});
  CHECK(edge.ndc.x == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(edge.ndc.y) < 1e-15);

  CHECK_THROWS_AS(project(cam, Vec3{0, 0, -4}), error);
  Camera bad = cam;
  bad.f = 0;
  CHECK_THROWS_AS(project(bad, Vec3{0, 0, 0}), error);
}

TEST_CASE("rotation absorbs into the camera") {
  Rng rng(31);
  Camera cam;
  cam.r = rng.unit_vec3() * 0.7;
  cam.t = Vec3{0.1, -0.2, 4};
  cam.f = deg_to_rad(25);
  Vec3 extra = rng.unit_vec3() * 1.3;
  Mat3 Re = rotation_matrix(extra);

  Camera absorbed = cam;
  absorbed.r = axis_angle_from_matrix(rotation_matrix(cam.r) * Re);

  for (int i = 0; i < 10; i++) {
    Vec3 x = rng.normal_vec3();
    auto a = project(absorbed, x);
    auto b = project(cam, Re * x);
    CHECK(norm(a.ndc - b.ndc) < 1e-10);
    CHECK(a.z == doctest::Approx(b.z).epsilon(1e-12));
  }
}

TEST_CASE("perturb_rotation angle statistics") {
  Rng rng(41);
  Camera cam;
  cam.r = Vec3{0.3, -0.2, 0.9};
  cam.t = Vec3{0, 0, 2};
  cam.f = deg_to_rad(30);
  Mat3 R = rotation_matrix(cam.r);
  const double sigma = 2.0;
  const int n = 100000;
  double mean_abs = 0;
  for (int i = 0; i < n; i++) {
    Camera p = perturb_rotation(cam, sigma, rng);
    Mat3 dR = rotation_matrix(p.r) * R.transposed();
    double c = clampd((dR.trace() - 1.0) * 0.5, -1.0, 1.0);
    mean_abs += std::acos(c);
    CHECK(norm(p.t - cam.t) == 0);
    CHECK(p.f == cam.f);
  }
  mean_abs = rad_to_deg(mean_abs / n);
  double expect = sigma * std::sqrt(2.0 / kPi);  // mean of |N(0, sigma^2)|
  CHECK(std::abs(mean_abs - expect) / expect < 0.02);
}

TEST_CASE("project backward matches finite differences") {
  Rng rng(53);
  for (int trial = 0; trial < 10; trial++) {
    Camera cam;
    cam.r = rng.unit_vec3() * rng.uniform(0.1, 1.5);
    cam.t = Vec3{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(2.0, 4.0)};
    cam.f = deg_to_rad(rng.uniform(20.0, 50.0));
    Vec3 x = rng.normal_vec3() * 0.4;
    Vec2 a{rng.normal(), rng.normal()};
    double b = rng.normal();

    auto scalar = [&](const Camera& c, const Vec3& pt) {
      auto pr = project(c, pt);
      return dot(a, pr.ndc) + b * pr.z;
    };

    Mat3 R = rotation_matrix(cam.r);
    Mat3 dR[3];
    rotation_matrix_grad(cam.r, dR);
    Vec3 adj_x{};
    CameraGrad adj_cam;
    project_backward(cam, R, dR, x, a, b, adj_x, adj_cam);

    const double h = 1e-6;
    for (int k = 0; k < 3; k++) {
      Vec3 xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      CHECK(adj_x[k] == doctest::Approx((scalar(cam, xp) - scalar(cam, xm)) / (2 * h)).epsilon(1e-6));
      Camera cp = cam, cm = cam;
      cp.r[k] += h;
      cm.r[k] -= h;
      CHECK(adj_cam.r[k] ==
            doctest::Approx((scalar(cp, x) - scalar(cm, x)) / (2 * h)).epsilon(1e-5));
      cp = cam;
      cm = cam;
      cp.t[k] += h;
      cm.t[k] -= h;
      CHECK(adj_cam.t[k] ==
            doctest::Approx((scalar(cp, x) - scalar(cm, x)) / (2 * h)).epsilon(1e-6));
    }
    Camera cp = cam, cm = cam;
    cp.f += h;
    cm.f -= h;
    CHECK(adj_cam.f == doctest::Approx((scalar(cp, x) - scalar(cm, x)) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("pixel and ndc mappings") {
  CHECK(pixel_to_ndc(0, 4) == doctest::Approx(-0.75));
  CHECK(pixel_to_ndc(3, 4) == doctest::Approx(0.75));
  CHECK_THROWS_AS(pixel_to_ndc(4, 4), error);
  CHECK_THROWS_AS(pixel_to_ndc(-1, 4), error);
  for (int i = 0; i < 7; i++) {
    double x = pixel_to_ndc(i, 7);
    CHECK(ndc_to_pixel(x, 7) == doctest::Approx(double(i)).epsilon(1e-14));
    CHECK(ndc_to_pixel_index(x, 7) == i);
  }
  CHECK_THROWS_AS(ndc_to_pixel_index(1.5, 7), error);
}

TEST_CASE("canonical axis-angle wraps long rotations") {
  Vec3 r = normalized(Vec3{1, 1, 0}) * (2 * kPi + 0.3);
  Vec3 c = canonical_axis_angle(r);
  CHECK(norm(c) < kPi + 1e-12);
  Mat3 A = rotation_matrix(r);
  Mat3 B = rotation_matrix(c);
  for (int e = 0; e < 9; e++) CHECK(A.m[e] == doctest::Approx(B.m[e]).epsilon(1e-9));
}
