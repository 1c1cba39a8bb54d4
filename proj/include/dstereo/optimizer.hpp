#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dstereo/autodiff.hpp"
#include "dstereo/losses.hpp"
#include "dstereo/scene_io.hpp"

namespace ds {

struct OptimConfig {
  long total_iters = 50000;
  long warmup_iters = 500;             // cameras frozen, no texture loss
  std::vector<long> subdivide_at = {100, 300};  // warmup sphere refinements
  std::vector<double> remesh_fracs = {0.2, 0.4, 0.6};  // of total_iters
  double lr0 = 0.01;
  double momentum = 0.9;
  long restart_period = 0;   // cosine warm-restart period; 0 = total_iters / 5
  double clip_max_norm = 1.0;  // per parameter block
  int faces_per_pixel = 6;     // K
  double blur_start = 5e-5;
  double blur_end = 1e-6;
  LossWeights weights;
  int voxel_resolution = 64;  // remesh grid
  // Reserved for stochastic variants; the current loop is fully
  // deterministic, so the seed does not influence the result.
  uint64_t seed = 1;
  long checkpoint_every = 0;   // 0 = no checkpoints
  std::string checkpoint_dir;  // required when checkpoint_every > 0
};

struct OptimState {
  long iteration = 0;
  std::vector<Vec3> vel_offsets;      // momentum buffers, match ParamTape
  std::vector<CameraGrad> vel_cams;
  double blur = 0;
  double lr = 0;
  Phase phase = Phase::warmup;
  std::vector<LossReport> history;  // one entry per iteration
  long skipped_steps = 0;           // non-finite gradient or loss events
};

// blur_start * (blur_end / blur_start)^(iter / total): exponential decay.
double blur_schedule(long iter, const OptimConfig& cfg);

// lr_min + (lr0 - lr_min) * (1 + cos(pi * (iter mod period) / period)) / 2.
double cosine_lr(long iter, long period, double lr0, double lr_min = 0.0);

// One momentum step from the accumulated gradients: per-block global-norm
// clipping (blocks: all offsets, all camera rotations, all camera
// translations, all camera fovs), v <- m*v + g_clipped, param -= lr*v.
// Cameras are untouched unless update_cameras; f additionally needs update_f.
// Returns false without mutating anything when any gradient is non-finite.
bool clip_and_step(TriMesh& mesh, std::vector<Camera>& cameras, const ParamTape& grads,
                   OptimState& state, const OptimConfig& cfg, double lr, bool update_cameras,
                   bool update_f);

struct OptimResult {
  TriMesh mesh;                     // normalized frame
  std::vector<Camera> cameras;      // normalized frame
  std::vector<LossReport> history;  // one entry per iteration
  long skipped_steps = 0;
};

// Post-step snapshot handed to the progress callback each iteration.
struct ProgressInfo {
  long iter = 0;
  const LossReport* report = nullptr;
  double lr = 0;
  double blur = 0;
  Phase phase = Phase::warmup;
  const TriMesh* mesh = nullptr;
  const std::vector<Camera>* cameras = nullptr;
};
using ProgressFn = std::function<void(const ProgressInfo&)>;

// The full loop: warmup on a 12-vertex sphere of radius 0.5 (subdivided at
// the configured iterations, cameras frozen, texture weights off), then all
// parameters with cosine-restart lr, exponentially decaying blur, and
// mask-carved remeshes at the configured fractions of the run (velocities
// and offsets reset). Skips steps on non-finite gradients; aborts with
// errc::diverged after more than 100 consecutive non-finite losses. The
// scene is expected in its normalized frame, as produced by load_scene.
OptimResult optimize(const Scene& scene, const OptimConfig& cfg,
                     const ProgressFn& progress = nullptr);

// iter,tex_l1,tex_pyramid,mask_mse,mask_bidt,edge,laplacian,total per row.
void save_loss_history_csv(const std::string& path, const std::vector<LossReport>& history);

}  // namespace ds
