#pragma once

#include <vector>

#include "dstereo/camera.hpp"
#include "dstereo/mesh.hpp"
#include "dstereo/rng.hpp"

namespace ds {

// Surface samples with per-point unit normals (the sampled face's normal).
struct PointCloudN {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
};

// Similarity transform x -> s * R x + t with det(R) = +1, s > 0.
struct Similarity {
  double s = 1.0;
  Mat3 R = Mat3::identity();
  Vec3 t{};
  // Set by icp() when the correspondence loop diverged and the best
  // intermediate transform was returned instead of the last one.
  bool icp_diverged = false;

  Vec3 apply(const Vec3& p) const { return s * (R * p) + t; }
  Similarity compose(const Similarity& inner) const {  // this after inner
    Similarity r;
    r.s = s * inner.s;
    r.R = R * inner.R;
    r.t = s * (R * inner.t) + t;
    return r;
  }
  Similarity inverse() const {
    Similarity r;
    r.s = 1.0 / s;
    r.R = R.transposed();
    r.t = (r.R * t) * (-r.s);
    return r;
  }
};

AABB mesh_bounds(const TriMesh& mesh);

// Area-weighted uniform surface sampling; each sample carries its face's
// unit normal. Throws empty_shape on a faceless mesh, degenerate on zero
// total area, invalid_argument on n < 1.
PointCloudN sample_points(const TriMesh& mesh, int n, Rng& rng);

// Symmetric L2 Chamfer: mean squared NN distance P->Q plus Q->P.
double chamfer(const PointCloudN& p, const PointCloudN& q);

struct F1Result {
  double precision = 0;  // percent of P within tau of Q
  double recall = 0;     // percent of Q within tau of P
  double f1 = 0;         // harmonic mean, 0 when precision + recall == 0
};
F1Result f1_at(const PointCloudN& p, const PointCloudN& q, double tau);

// Symmetric mean |cos| between each point's normal and its NN's normal.
double normal_consistency(const PointCloudN& p, const PointCloudN& q);

// Mean residual angle in degrees after fixing the gauge: the single global
// rotation G minimizing the summed geodesic angle between predicted and
// G-rotated ground-truth camera orientations (camera-to-world), so a common
// world-frame rotation of the whole reconstruction reads as zero error.
double rotation_error(const std::vector<Camera>& gt, const std::vector<Camera>& pred);

// Iterative closest point from p onto q: alternating NN correspondences and
// the closed-form least-squares similarity, accepted only while the Chamfer
// distance improves; returns the best transform seen. with_scale=false keeps
// s = 1 exactly.
Similarity icp(const PointCloudN& p, const PointCloudN& q, bool with_scale,
               int max_iters = 50, double tol = 1e-6);

enum class AlignMetric { chamfer, f1, normal_consistency };

struct AlignResult {
  Similarity xf;       // maps the predicted mesh into the ground-truth frame
  double value = 0;    // requested metric under xf
  int candidate = 0;   // 0 = scale/depth grid, 1 = icp pred->gt, 2 = icp gt->pred
};

// Three-candidate alignment: a 65x65 grid over scale in [0.5, 2] (log-spaced)
// and depth offset in [-0.5, 0.5] along camera 0's optical axis minimizing
// Chamfer in that camera's view space, then ICP seeded from it in both
// directions; returns whichever candidate scores best on `metric`
// (tau only matters for AlignMetric::f1).
AlignResult align_best(const TriMesh& pred, const TriMesh& gt,
                       const std::vector<Camera>& cameras, AlignMetric metric, double tau,
                       Rng& rng);

}  // namespace ds
