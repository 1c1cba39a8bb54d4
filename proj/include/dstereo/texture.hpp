#pragma once

#include <vector>

#include "dstereo/camera.hpp"
#include "dstereo/image.hpp"
#include "dstereo/mesh.hpp"
#include "dstereo/rasterizer.hpp"

namespace ds {

constexpr int kMaxViews = 16;

struct TextureConfig {
  double visibility_temp = 1e-4;   // depth-test softness, view-space units
  double orientation_temp = 0.1;   // facing falloff on 1 + n_z
  Vec3 fallback_color{0.5, 0.5, 0.5};
  double z_near = kDefaultZNear;
  double background_depth = 1e10;
};

struct SourceView {
  const ImageRGB* image = nullptr;
  const ImageGray* depth = nullptr;  // view-space z, background_depth where empty
  Camera cam;
};

// Per-camera derived data shared across many texel evaluations.
struct ViewFrame {
  Mat3 R;
  Mat3 dR[3];
};

std::vector<ViewFrame> make_view_frames(const std::vector<SourceView>& views);

struct ViewSample {
  int view = -1;
  bool included = false;
  Vec2 ndc{};
  double depth = 0;         // view z of the surface point
  double depth_sample = 0;  // value read from the depth map
  double visibility = 0;
  double facing = 0;
  double weight = 0;  // normalized; 0 when not included
  Vec3 color{};
};

struct TexelQuery {
  Vec3 x;
  Vec3 normal;
  Vec3 color{};
  bool fallback = false;
  std::vector<ViewSample> samples;
};

// Weighted average of reprojected view colors at surface point x with unit
// world normal. exclude_view < 0 means use every view.
TexelQuery texture_eval(const Vec3& x, const Vec3& normal,
                        const std::vector<SourceView>& views, int exclude_view,
                        const TextureConfig& cfg);

// Allocation-free forward used by the optimization loop.
Vec3 texture_eval_color(const Vec3& x, const Vec3& normal,
                        const std::vector<SourceView>& views,
                        const std::vector<ViewFrame>& frames, int exclude_view,
                        const TextureConfig& cfg, bool* fallback = nullptr);

// Adjoint of texture_eval_color; recomputes the forward internally.
// adj_cams must have one entry per view; adj_depth entries may be null to
// detach the depth-map dependence.
void texture_eval_backward(const Vec3& x, const Vec3& normal,
                           const std::vector<SourceView>& views,
                           const std::vector<ViewFrame>& frames, int exclude_view,
                           const TextureConfig& cfg, const Vec3& adj_color, Vec3& adj_x,
                           Vec3& adj_normal, CameraGrad* adj_cams,
                           ImageGray* const* adj_depth);

// Renders view `target` by rasterizing the mesh and texturing each fragment
// from the other views (all views when leave_one_out is false).
ImageRGB render_textured(const TriMesh& mesh, const std::vector<Camera>& cameras,
                         const std::vector<ImageRGB>& images, int target,
                         const RasterConfig& rcfg, const TextureConfig& tcfg,
                         bool leave_one_out = true, const Vec3& background = {1, 1, 1});

std::vector<Vec3> bake_vertex_colors(const TriMesh& mesh, const std::vector<SourceView>& views,
                                     const TextureConfig& cfg);

}  // namespace ds
