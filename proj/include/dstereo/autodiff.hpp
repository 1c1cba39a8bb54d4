#pragma once

#include <functional>
#include <vector>

#include "dstereo/losses.hpp"

namespace ds {

// ---------------------------------------------------------------------------
// Scalar reverse-mode tape. The heavy pipeline uses hand-composed adjoints;
// this small tape backs unit tests and ad-hoc derivative checks. Nodes are
// appended in evaluation order, so parents always precede children and one
// reverse sweep visits each node exactly once.
// ---------------------------------------------------------------------------
class DiffTape {
 public:
  int leaf();
  int node1(int p, double w);
  int node2(int p0, double w0, int p1, double w1);

  // d(seed node)/d(every node), by a single reverse sweep.
  std::vector<double> adjoints(int seed) const;

  int size() const { return static_cast<int>(nodes_.size()); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    int parent[2];
    double weight[2];
  };
  std::vector<Node> nodes_;
};

struct DiffScalar {
  double value = 0;
  int node = -1;
  DiffTape* tape = nullptr;
};

DiffScalar make_leaf(DiffTape& tape, double value);
// A copy of x that the backward pass treats as a constant.
DiffScalar detach(const DiffScalar& x);

DiffScalar operator+(const DiffScalar& a, const DiffScalar& b);
DiffScalar operator-(const DiffScalar& a, const DiffScalar& b);
DiffScalar operator*(const DiffScalar& a, const DiffScalar& b);
DiffScalar operator/(const DiffScalar& a, const DiffScalar& b);
DiffScalar operator+(const DiffScalar& a, double b);
DiffScalar operator-(const DiffScalar& a, double b);
DiffScalar operator*(const DiffScalar& a, double b);
DiffScalar operator/(const DiffScalar& a, double b);
DiffScalar operator+(double a, const DiffScalar& b);
DiffScalar operator-(double a, const DiffScalar& b);
DiffScalar operator*(double a, const DiffScalar& b);
DiffScalar sin(const DiffScalar& x);
DiffScalar cos(const DiffScalar& x);
DiffScalar exp(const DiffScalar& x);
DiffScalar log(const DiffScalar& x);
DiffScalar sqrt(const DiffScalar& x);

// ---------------------------------------------------------------------------
// Parameter/gradient registry for one optimization step.
// ---------------------------------------------------------------------------
struct ParamTape {
  std::vector<Vec3> d_offsets;    // dL/d(vertex offsets)
  std::vector<CameraGrad> d_cams; // dL/d(r, t, f) per camera
  long iteration = 0;

  ParamTape() = default;
  ParamTape(int n_verts, int n_cams) : d_offsets(n_verts), d_cams(n_cams) {}

  void resize(int n_verts, int n_cams);
  void zero_grad();
};

struct GradConfig {
  // When set, depth maps sampled by the texture visibility term are treated
  // as constant buffers: no gradient flows from them back to the mesh.
  bool detach_depth = false;
};

// Forward evaluation of the total objective plus exact reverse-mode gradients
// w.r.t. vertex offsets and per-camera (r, t, f). Discrete selections
// (fragment sets, nearest-neighbor picks, mask membership) are frozen from the
// forward pass. Loss values match total_loss() on identical inputs; gradients
// accumulate into `tape`. Throws errc::diverged naming the first stage that
// produced a non-finite value.
LossReport forward_backward(const TriMesh& mesh, const std::vector<Camera>& cameras,
                            const std::vector<ImageRGB>& images,
                            const std::vector<ImageGray>& masks, const GeomRegs& regs,
                            const RasterConfig& rcfg, const TextureConfig& tcfg,
                            const LossWeights& weights, Phase phase, const GradConfig& gcfg,
                            ParamTape& tape);

// ---------------------------------------------------------------------------
// Central finite-difference verification harness.
// ---------------------------------------------------------------------------
struct FdEntry {
  int coord = -1;
  double analytic = 0;
  double fd = 0;
  double rel_err = 0;
};

struct FdReport {
  double max_rel_err = 0;
  int worst_coord = -1;
  int n_checked = 0;
  std::vector<FdEntry> entries;
};

// For each sampled coordinate index c, perturbs *params[c] by +-step, calls
// loss_fn, and compares the central difference against analytic_grad[c].
// Relative error uses denominator max(|fd|, |analytic|, 1e-8).
FdReport finite_diff_check(const std::function<double()>& loss_fn,
                           const std::vector<double*>& params,
                           const std::vector<double>& analytic_grad,
                           const std::vector<int>& coords, double step);

}  // namespace ds
