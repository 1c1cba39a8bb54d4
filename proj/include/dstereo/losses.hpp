#pragma once

#include <vector>

#include "dstereo/camera.hpp"
#include "dstereo/image.hpp"
#include "dstereo/mesh.hpp"
#include "dstereo/rasterizer.hpp"
#include "dstereo/texture.hpp"

namespace ds {

enum class Phase { warmup, main };

struct LossWeights {
  double tex_l1 = 1.0;
  double tex_pyramid = 1.0;
  double mask_mse = 1.0;
  double mask_bidt = 1.0;
  double edge = 1.0;
  double laplacian = 1.0;
};

struct LossReport {
  double tex_l1 = 0;
  double tex_pyramid = 0;
  double mask_mse = 0;
  double mask_bidt = 0;
  double edge = 0;
  double laplacian = 0;
  double total = 0;
};

// 5-tap [1 4 6 4 1]/16 Gaussian, stride 2, replicate padding.
ImageRGB pyr_down(const ImageRGB& img);
// Transpose of pyr_down: scatters adj_out back into adj_in (accumulated).
void pyr_down_backward(const ImageRGB& adj_out, ImageRGB& adj_in);

inline constexpr int kPyramidLevels = 3;

// Mean |I^r - I| over pixels where mask > 0.5 (zero if the mask is empty).
double tex_l1_loss(const ImageRGB& rendered, const ImageRGB& target, const ImageGray& mask);
void tex_l1_backward(const ImageRGB& rendered, const ImageRGB& target, const ImageGray& mask,
                     double adj, ImageRGB& adj_rendered);

// Both images are zeroed outside the mask (binarized at 0.5), then compared by
// full-image MAE at each of the three downsampled pyramid levels, summed.
double tex_pyramid_loss(const ImageRGB& rendered, const ImageRGB& target, const ImageGray& mask);
void tex_pyramid_backward(const ImageRGB& rendered, const ImageRGB& target, const ImageGray& mask,
                          double adj, ImageRGB& adj_rendered);

double mask_mse(const ImageGray& rendered, const ImageGray& target);
void mask_mse_backward(const ImageGray& rendered, const ImageGray& target, double adj,
                       ImageGray& adj_rendered);

// Occupied pixels of a binarized rendered mask together with their
// differentiable locations p_hat (continuous pixel coordinates).
struct SoftPixelSet {
  int width = 0, height = 0;
  std::vector<int> px, py;
  std::vector<Vec2> phat;
};

// Sum over A^r \ A of clamp(|p_hat - NN(p_hat, A)|, tau) plus the reverse sum
// over A \ A^r against the soft set. Distances in pixels. When adj_phat is
// non-null it receives d(loss)/d(p_hat) per entry (same length as s.phat).
double bidt_loss(const SoftPixelSet& s, const ImageGray& mask_rendered, const ImageGray& mask_gt,
                 double tau_min, double tau_max, std::vector<Vec2>* adj_phat = nullptr);

double edge_loss(const std::vector<Vec3>& verts, const std::vector<std::pair<int, int>>& edges,
                 double rest_len);
void edge_loss_backward(const std::vector<Vec3>& verts,
                        const std::vector<std::pair<int, int>>& edges, double rest_len,
                        double adj, std::vector<Vec3>& adj_verts);

// Mean over vertices of |(L_cot V)_i|.
double laplacian_loss(const std::vector<Vec3>& verts, const LaplacianCache& lap);
void laplacian_loss_backward(const std::vector<Vec3>& verts, const LaplacianCache& lap, double adj,
                             std::vector<Vec3>& adj_verts);

// Regularizer state frozen at (re)initialization time.
struct GeomRegs {
  std::vector<std::pair<int, int>> edges;
  double rest_len = 0;
  LaplacianCache lap;
};
GeomRegs make_geom_regs(const TriMesh& mesh);

// Forward-only scoring of the full objective. Renders every view with
// leave-one-out texturing, accumulates per-view means, then the regularizers.
// The bidt sum is divided by the pixel count so its scale, like every other
// term, is resolution-independent.
LossReport total_loss(const TriMesh& mesh, const std::vector<Camera>& cameras,
                      const std::vector<ImageRGB>& images, const std::vector<ImageGray>& masks,
                      const GeomRegs& regs, const RasterConfig& rcfg, const TextureConfig& tcfg,
                      const LossWeights& weights, Phase phase);

}  // namespace ds
