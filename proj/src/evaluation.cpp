#include "dstereo/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace ds {

namespace {

// ---------------------------------------------------------------------------
// Static KD-tree for exact nearest-neighbor queries
// ---------------------------------------------------------------------------

class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& pts) {
    const int n = static_cast<int>(pts.size());
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    if (n > 0) build(pts, ids, 0, n, 0);
    ord_.resize(n);
    idx_.resize(n);
    for (int i = 0; i < n; i++) {  // traversal order, for cache locality
      ord_[i] = pts[ids[i]];
      idx_[i] = ids[i];
    }
  }

  // Returns the index of the nearest point and its squared distance. With a
  // finite bd2_init, the search is pruned at that radius: a result with
  // index -1 and d2 == bd2_init means no point lies closer than the bound.
  std::pair<int, double> nearest(const Vec3& q, double bd2_init = 1e300) const {
    int best = -1;
    double bd2 = bd2_init;
    search(q, 0, static_cast<int>(ord_.size()), 0, best, bd2);
    return {best, bd2};
  }

 private:
  static void build(const std::vector<Vec3>& pts, std::vector<int>& ids, int lo, int hi,
                    int depth) {
    if (hi - lo <= 1) return;
    int mid = (lo + hi) / 2;
    int axis = depth % 3;
    std::nth_element(ids.begin() + lo, ids.begin() + mid, ids.begin() + hi,
                     [&](int a, int b) { return pts[a][axis] < pts[b][axis]; });
    build(pts, ids, lo, mid, depth + 1);
    build(pts, ids, mid + 1, hi, depth + 1);
  }

  void search(const Vec3& q, int lo, int hi, int depth, int& best, double& bd2) const {
    if (lo >= hi) return;
    int mid = (lo + hi) / 2;
    const Vec3& p = ord_[mid];
    double d2 = norm2(q - p);
    if (d2 < bd2) {
      bd2 = d2;
      best = idx_[mid];
    }
    int axis = depth % 3;
    double delta = q[axis] - p[axis];
    if (delta < 0) {
      search(q, lo, mid, depth + 1, best, bd2);
      if (delta * delta < bd2) search(q, mid + 1, hi, depth + 1, best, bd2);
    } else {
      search(q, mid + 1, hi, depth + 1, best, bd2);
      if (delta * delta < bd2) search(q, lo, mid, depth + 1, best, bd2);
    }
  }

  std::vector<Vec3> ord_;
  std::vector<int> idx_;
};

double mean_nn_dist2(const std::vector<Vec3>& from, const KdTree& to_tree, size_t to_size) {
  if (from.empty() || to_size == 0)
    throw error(errc::invalid_argument, "chamfer: empty point cloud");
  double acc = 0;
  for (const Vec3& p : from) acc += to_tree.nearest(p).second;
  return acc / double(from.size());
}

Eigen::Matrix3d to_eigen(const Mat3& a) {
  Eigen::Matrix3d r;
  for (int i = 0; i < 3; i++)
    for (int j = 0; j < 3; j++) r(i, j) = a(i, j);
  return r;
}

Mat3 from_eigen(const Eigen::Matrix3d& a) {
  Mat3 r;
  for (int i = 0; i < 3; i++)
    for (int j = 0; j < 3; j++) r(i, j) = a(i, j);
  return r;
}

// Nearest rotation to M (polar factor with det +1).
Mat3 polar_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(to_eigen(m),
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Eigen::Vector3d d(1, 1, (u * v.transpose()).determinant() < 0 ? -1.0 : 1.0);
  return from_eigen(u * d.asDiagonal() * v.transpose());
}

// Rotation angle via atan2 of the skew part: accurate near zero, where the
// acos form loses half the significant digits.
double rotation_angle(const Mat3& r) {
  Vec3 v{0.5 * (r(2, 1) - r(1, 2)), 0.5 * (r(0, 2) - r(2, 0)), 0.5 * (r(1, 0) - r(0, 1))};
  double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::atan2(norm(v), c);
}

// Log map of a rotation, stable near the identity (falls back to the library
// extraction near the pi branch, where the skew part degenerates instead).
Vec3 log_rotation(const Mat3& r) {
  Vec3 v{0.5 * (r(2, 1) - r(1, 2)), 0.5 * (r(0, 2) - r(2, 0)), 0.5 * (r(1, 0) - r(0, 1))};
  double s = norm(v);  // sin(theta)
  double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  double theta = std::atan2(s, c);
  if (s < 1e-9) return theta < 1.0 ? v : axis_angle_from_matrix(r);
  return v * (theta / s);
}

// Least-squares similarity src -> dst over paired points (closed form).
Similarity fit_similarity(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                          bool with_scale) {
  const size_t n = src.size();
  Vec3 mu_s{}, mu_d{};
  for (size_t i = 0; i < n; i++) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s *= 1.0 / double(n);
  mu_d *= 1.0 / double(n);

  Mat3 cov = Mat3::zero();  // sum of (dst - mu_d)(src - mu_s)^T
  double var_s = 0;
  for (size_t i = 0; i < n; i++) {
    Vec3 a = src[i] - mu_s, b = dst[i] - mu_d;
    cov += outer(b, a);
    var_s += norm2(a);
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(to_eigen(cov),
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  double sign = (u * v.transpose()).determinant() < 0 ? -1.0 : 1.0;
  Eigen::Vector3d d(1, 1, sign);
  Similarity out;
  out.R = from_eigen(u * d.asDiagonal() * v.transpose());
  if (with_scale && var_s > 0) {
    Eigen::Vector3d sv = svd.singularValues();
    out.s = (sv(0) + sv(1) + sign * sv(2)) / var_s;
    if (!(out.s > 0)) out.s = 1.0;
  }
  out.t = mu_d - out.s * (out.R * mu_s);
  return out;
}

}  // namespace

AABB mesh_bounds(const TriMesh& mesh) {
  AABB box;
  for (const Vec3& p : mesh.positions()) box.expand(p);
  return box;
}

PointCloudN sample_points(const TriMesh& mesh, int n, Rng& rng) {
  if (n < 1) throw error(errc::invalid_argument, "sample_points: n must be >= 1");
  if (mesh.faces.empty()) throw error(errc::empty_shape, "sample_points: mesh has no faces");
  std::vector<Vec3> pos = mesh.positions();

  std::vector<double> cum(mesh.faces.size());
  double total = 0;
  for (size_t f = 0; f < mesh.faces.size(); f++) {
    const auto& t = mesh.faces[f];
    total += 0.5 * norm(cross(pos[t[1]] - pos[t[0]], pos[t[2]] - pos[t[0]]));
    cum[f] = total;
  }
  if (total <= 0)
    throw error(errc::degenerate, "sample_points: mesh has zero surface area");

  PointCloudN out;
  out.points.reserve(n);
  out.normals.reserve(n);
  for (int i = 0; i < n; i++) {
    double r = rng.uniform() * total;
    size_t f = std::upper_bound(cum.begin(), cum.end(), r) - cum.begin();
    if (f >= mesh.faces.size()) f = mesh.faces.size() - 1;
    const auto& t = mesh.faces[f];
    const Vec3 &a = pos[t[0]], &b = pos[t[1]], &c = pos[t[2]];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1) {
      u = 1 - u;
      v = 1 - v;
    }
    out.points.push_back(a + u * (b - a) + v * (c - a));
    out.normals.push_back(normalized(cross(b - a, c - a)));
  }
  return out;
}

double chamfer(const PointCloudN& p, const PointCloudN& q) {
  KdTree tp(p.points), tq(q.points);
  return mean_nn_dist2(p.points, tq, q.points.size()) +
         mean_nn_dist2(q.points, tp, p.points.size());
}

F1Result f1_at(const PointCloudN& p, const PointCloudN& q, double tau) {
  if (tau <= 0) throw error(errc::invalid_argument, "f1_at: tau must be positive");
  if (p.points.empty() || q.points.empty())
    throw error(errc::invalid_argument, "f1_at: empty point cloud");
  KdTree tp(p.points), tq(q.points);
  double tau2 = tau * tau;
  long np = 0, nq = 0;
  for (const Vec3& x : p.points) np += tq.nearest(x).second <= tau2;
  for (const Vec3& x : q.points) nq += tp.nearest(x).second <= tau2;
  F1Result r;
  r.precision = 100.0 * double(np) / double(p.points.size());
  r.recall = 100.0 * double(nq) / double(q.points.size());
  r.f1 = r.precision + r.recall > 0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

double normal_consistency(const PointCloudN& p, const PointCloudN& q) {
  if (p.points.empty() || q.points.empty())
    throw error(errc::invalid_argument, "normal_consistency: empty point cloud");
  if (p.normals.size() != p.points.size() || q.normals.size() != q.points.size())
    throw error(errc::invalid_argument, "normal_consistency: missing normals");
  KdTree tp(p.points), tq(q.points);
  double acc_p = 0, acc_q = 0;
  for (size_t i = 0; i < p.points.size(); i++)
    acc_p += std::abs(dot(p.normals[i], q.normals[tq.nearest(p.points[i]).first]));
  for (size_t i = 0; i < q.points.size(); i++)
    acc_q += std::abs(dot(q.normals[i], p.normals[tp.nearest(q.points[i]).first]));
  return 0.5 * (acc_p / double(p.points.size()) + acc_q / double(q.points.size()));
}

double rotation_error(const std::vector<Camera>& gt, const std::vector<Camera>& pred) {
  if (gt.size() != pred.size())
    throw error(errc::invalid_argument, "rotation_error: camera count mismatch");
  if (gt.size() < 2)
    throw error(errc::invalid_argument, "rotation_error: need at least 2 cameras");
  const size_t n = gt.size();

  // Relative orientations A_i = pred_c2w^T? No: A_i = C_hat_i * C_i^T with
  // camera-to-world C = R^T, so A_i = R_hat_i^T * R_i. The gauge G is then
  // the geodesic L1 median of the A_i.
  std::vector<Mat3> a(n);
  Mat3 m = Mat3::zero();
  for (size_t i = 0; i < n; i++) {
    a[i] = rotation_matrix(pred[i].r).transposed() * rotation_matrix(gt[i].r);
    m += a[i];
  }
  Mat3 g = polar_rotation(m);  // chordal L2 mean as the initial guess

  // Weiszfeld iterations for the L1 geodesic median.
  for (int iter = 0; iter < 100; iter++) {
    Vec3 step{};
    double wsum = 0;
    for (size_t i = 0; i < n; i++) {
      Vec3 log_i = log_rotation(g.transposed() * a[i]);
      double ang = norm(log_i);
      double w = 1.0 / std::max(ang, 1e-12);
      step += w * log_i;
      wsum += w;
    }
    step *= 1.0 / wsum;
    if (norm(step) < 1e-12) break;
    g = g * rotation_matrix(step);
  }

  double sum_deg = 0;
  for (size_t i = 0; i < n; i++)
    sum_deg += rad_to_deg(rotation_angle(g.transposed() * a[i]));
  return sum_deg / double(n);
}

Similarity icp(const PointCloudN& p, const PointCloudN& q, bool with_scale, int max_iters,
               double tol) {
  if (p.points.empty() || q.points.empty())
    throw error(errc::invalid_argument, "icp: empty point cloud");
  KdTree tq(q.points);

  std::vector<Vec3> cur = p.points;
  Similarity total, best;
  auto cost = [&](const std::vector<Vec3>& moved) {
    KdTree tm(moved);
    return mean_nn_dist2(moved, tq, q.points.size()) +
           mean_nn_dist2(q.points, tm, moved.size());
  };
  double best_cost = cost(cur), prev_cost = best_cost;
  int worse_streak = 0;

  std::vector<Vec3> corr(p.points.size());
  for (int iter = 0; iter < max_iters; iter++) {
    for (size_t i = 0; i < cur.size(); i++)
      corr[i] = q.points[tq.nearest(cur[i]).first];
    Similarity delta = fit_similarity(cur, corr, with_scale);
    for (Vec3& x : cur) x = delta.apply(x);
    total = delta.compose(total);

    double c = cost(cur);
    if (c < best_cost) {
      best_cost = c;
      best = total;
    }
    if (c > prev_cost * (1.0 + 1e-12)) {  // genuinely increased
      if (++worse_streak >= 5) {
        best.icp_diverged = true;
        return best;
      }
    } else {
      worse_streak = 0;
    }
    if (c < 1e-28 || std::abs(prev_cost - c) < tol * std::max(prev_cost, 1e-300)) break;
    prev_cost = c;
  }
  return best;
}

AlignResult align_best(const TriMesh& pred, const TriMesh& gt,
                       const std::vector<Camera>& cameras, AlignMetric metric, double tau,
                       Rng& rng) {
  if (cameras.empty()) throw error(errc::invalid_argument, "align_best: no cameras");
  const int kMetricSamples = 10000;
  const int kGridSamples = 1024;  // subsample for the 65x65 grid sweep
  PointCloudN pred_pc = sample_points(pred, kMetricSamples, rng);
  PointCloudN gt_pc = sample_points(gt, kMetricSamples, rng);

  // Candidate 0: scale x depth grid in camera 0's view space.
  Mat3 r0 = rotation_matrix(cameras[0].r);
  Vec3 t0 = cameras[0].t;
  std::vector<Vec3> pv(kGridSamples), gv(kGridSamples);
  for (int i = 0; i < kGridSamples; i++) {
    pv[i] = r0 * pred_pc.points[i] + t0;
    gv[i] = r0 * gt_pc.points[i] + t0;
  }
  KdTree tp(pv), tg(gv);

  // Exact grid minimization with branch-and-bound: each NN query is pruned
  // at the candidate's remaining cost budget, and the candidate is dropped
  // the moment its partial sum provably exceeds the best cost so far.
  double best_c = 1e300, best_s = 1, best_d = 0;
  auto grid_cost = [&](double s, double d, double budget) {
    double acc = 0;  // sum units; budget and return value likewise
    for (const Vec3& x : pv) {
      acc += tg.nearest(Vec3{s * x.x, s * x.y, s * x.z + d}, budget - acc).second;
      if (acc >= budget) return budget;
    }
    double s2 = s * s;
    for (const Vec3& x : gv) {
      acc += s2 * tp.nearest(Vec3{x.x / s, x.y / s, (x.z - d) / s}, (budget - acc) / s2).second;
      if (acc >= budget) return budget;
    }
    return acc;
  };
  for (int pass = 0; pass < 2; pass++) {
    for (int is = 0; is < 65; is++) {
      double s = 0.5 * std::pow(4.0, is / 64.0);
      for (int id = 0; id < 65; id++) {
        double d = -0.5 + id / 64.0;
        // First pass: only the identity cell, to seed a tight budget.
        if ((pass == 0) != (is == 32 && id == 32)) continue;
        double budget = best_c * double(kGridSamples);
        double c = grid_cost(s, d, pass == 0 ? 1e300 : budget) / double(kGridSamples);
        if (c < best_c) {
          best_c = c;
          best_s = s;
          best_d = d;
        }
      }
    }
  }
  // World-space transform conjugating the view-space scale/shift by camera 0:
  // x' = R0^T(s (R0 x + t0) + d e_z - t0) = s x + R0^T((s-1) t0 + d e_z).
  Similarity grid_xf;
  grid_xf.s = best_s;
  grid_xf.t = r0.transposed() * Vec3{(best_s - 1.0) * t0.x, (best_s - 1.0) * t0.y,
                                     (best_s - 1.0) * t0.z + best_d};

  // Candidates 1-2: ICP in both directions, seeded by the grid result.
  PointCloudN seeded = pred_pc;
  for (Vec3& x : seeded.points) x = grid_xf.apply(x);
  Similarity icp_fwd = icp(seeded, gt_pc, /*with_scale=*/true).compose(grid_xf);
  Similarity icp_rev = icp(gt_pc, seeded, /*with_scale=*/true).inverse().compose(grid_xf);

  AlignResult best;
  bool first = true;
  Similarity candidates[3] = {grid_xf, icp_fwd, icp_rev};
  for (int k = 0; k < 3; k++) {
    PointCloudN moved = pred_pc;
    for (Vec3& x : moved.points) x = candidates[k].apply(x);
    for (Vec3& nrm : moved.normals) nrm = candidates[k].R * nrm;
    double value = 0;
    bool maximize = true;
    switch (metric) {
      case AlignMetric::chamfer:
        value = chamfer(moved, gt_pc);
        maximize = false;
        break;
      case AlignMetric::f1: value = f1_at(moved, gt_pc, tau).f1; break;
      case AlignMetric::normal_consistency: value = normal_consistency(moved, gt_pc); break;
    }
    bool better = first || (maximize ? value > best.value : value < best.value);
    if (better) {
      best.xf = candidates[k];
      best.value = value;
      best.candidate = k;
      first = false;
    }
  }
  return best;
}

}  // namespace ds
