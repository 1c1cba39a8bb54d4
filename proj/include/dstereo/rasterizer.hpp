#pragma once

#include <array>
#include <vector>

#include "dstereo/camera.hpp"
#include "dstereo/image.hpp"
#include "dstereo/mesh.hpp"

namespace ds {

constexpr int kMaxFacesPerPixel = 8;

struct RasterConfig {
  int width = 128;
  int height = 128;
  int faces_per_pixel = 6;
  double blur_radius = 1e-6;  // NDC squared-distance units
  double blend_gamma = 1e-4;
  double blend_eps = 1e-3;    // background pseudo-depth in [0,1] normalized depth
  double z_near = kDefaultZNear;
  double z_far = 10.0;
  double background_depth = 1e10;
};

struct ProjectedMesh {
  std::vector<Vec2> ndc;
  std::vector<double> z;
  std::vector<uint8_t> valid;  // in front of the near plane
};

ProjectedMesh project_mesh(const std::vector<Vec3>& verts, const Camera& cam, double z_near);

struct Fragment {
  int face = -1;
  double bary[3] = {0, 0, 0};  // perspective-correct
  double z = 0;                 // interpolated view depth
  double d2 = 0;                // signed squared NDC distance, negative inside
};

struct FragmentBuffer {
  int width = 0, height = 0, k = 0;
  std::vector<Fragment> frags;
  std::vector<int> counts;

  const Fragment* at(int x, int y) const { return frags.data() + (size_t(y) * width + x) * k; }
  Fragment* at(int x, int y) { return frags.data() + (size_t(y) * width + x) * k; }
  int count(int x, int y) const { return counts[size_t(y) * width + x]; }
};

// K depth-nearest fragments per pixel among faces whose interior covers the
// pixel center or whose boundary lies within sqrt(blur_radius) of it.
FragmentBuffer rasterize(const ProjectedMesh& pm, const std::vector<std::array<int, 3>>& faces,
                         const RasterConfig& cfg);
FragmentBuffer rasterize(const TriMesh& mesh, const Camera& cam, const RasterConfig& cfg);

struct DepthMap {
  ImageGray z;
  std::vector<int> frag;  // global fragment slot index, -1 where background

  int frag_at(int x, int y) const { return frag[size_t(y) * z.width + x]; }
};

// Hard depth: nearest covering fragment per pixel, background_depth elsewhere.
DepthMap depth_map(const FragmentBuffer& fb, const RasterConfig& cfg);

ImageGray soft_silhouette(const FragmentBuffer& fb, const RasterConfig& cfg);

double occupancy_sigmoid(double d2, double blur);

// Softmax depth compositing over one pixel's fragments plus a background term.
struct BlendResult {
  Vec3 rgb{};
  double w[kMaxFacesPerPixel] = {0};
  double w_bg = 1;
};

BlendResult softmax_blend(const Fragment* frags, int n, const Vec3* colors, const Vec3& bg_color,
                          const RasterConfig& cfg);

// Adjoint of softmax_blend. adj_w / adj_wbg may be null when only the color
// path is active. Outputs are accumulated.
void softmax_blend_backward(const Fragment* frags, int n, const Vec3* colors,
                            const Vec3& bg_color, const RasterConfig& cfg, const Vec3& adj_rgb,
                            const double* adj_w, double adj_wbg, Vec3* adj_colors,
                            double* adj_d2, double* adj_z);

// Adjoint of one fragment's (bary, z, d2) w.r.t. its vertices' NDC coords and
// view depths. Recomputes the forward point-triangle state deterministically.
void fragment_backward(const Vec2& p, const Vec2 q[3], const double zv[3], const Fragment& frag,
                       const double adj_bary[3], double adj_z, double adj_d2, Vec2 adj_q[3],
                       double adj_zv[3]);

// Exposed for tests.
struct PointTriangle {
  bool inside = false;
  double d2 = 0;        // signed
  double bary[3] = {0, 0, 0};
  int edge = -1;        // nearest edge for the distance term
  double u = 0;         // clamped parameter along that edge
  bool u_clamped = false;
  bool degenerate = false;
};

PointTriangle point_triangle(const Vec2& p, const Vec2 q[3]);

}  // namespace ds
