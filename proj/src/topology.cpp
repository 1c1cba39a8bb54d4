#include "dstereo/topology.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <unordered_map>
#include <vector>

namespace ds {

namespace {

// ---------------------------------------------------------------------------
// Solid voxelization
// ---------------------------------------------------------------------------

// Cyclic (u, v, w) component mapping for parity rays cast along axis w.
inline void axis_split(int axis, const Vec3& p, double& u, double& v, double& w) {
  switch (axis) {
    case 0: u = p.y, v = p.z, w = p.x; break;
    case 1: u = p.z, v = p.x, w = p.y; break;
    default: u = p.x, v = p.y, w = p.z; break;
  }
}

inline double cross2d(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

// One parity vote per voxel for rays along `axis`. Ray origins are jittered
// off the exact cell centers so shared triangle edges and vertices are never
// hit; the three-axis majority absorbs any residual asymmetry.
void parity_votes(const TriMesh& mesh, const std::vector<Vec3>& pos, const VoxelGrid& g,
                  int axis, std::vector<uint8_t>& votes) {
  int nu, nv, nw;
  double lou, lov, low, hu, hv, hw;
  Vec3 h = g.voxel_size();
  switch (axis) {
    case 0: nu = g.ny, nv = g.nz, nw = g.nx; lou = g.lo.y, lov = g.lo.z, low = g.lo.x;
            hu = h.y, hv = h.z, hw = h.x; break;
    case 1: nu = g.nz, nv = g.nx, nw = g.ny; lou = g.lo.z, lov = g.lo.x, low = g.lo.y;
            hu = h.z, hv = h.x, hw = h.y; break;
    default: nu = g.nx, nv = g.ny, nw = g.nz; lou = g.lo.x, lov = g.lo.y, low = g.lo.z;
             hu = h.x, hv = h.y, hw = h.z; break;
  }
  const double ju = hu * 1.2345678901e-7;
  const double jv = hv * 2.3456789012e-7;

  std::vector<std::vector<double>> crossings(static_cast<size_t>(nu) * nv);
  for (const auto& f : mesh.faces) {
    double u0, v0, w0, u1, v1, w1, u2, v2, w2;
    axis_split(axis, pos[f[0]], u0, v0, w0);
    axis_split(axis, pos[f[1]], u1, v1, w1);
    axis_split(axis, pos[f[2]], u2, v2, w2);
    double d = cross2d(u1 - u0, v1 - v0, u2 - u0, v2 - v0);
    double scale = std::max({std::abs(u0), std::abs(v0), std::abs(u1), std::abs(v1),
                             std::abs(u2), std::abs(v2), 1e-30});
    if (std::abs(d) < 1e-14 * scale * scale) continue;  // edge-on: other axes vote

    double minu = std::min({u0, u1, u2}), maxu = std::max({u0, u1, u2});
    double minv = std::min({v0, v1, v2}), maxv = std::max({v0, v1, v2});
    int iu0 = std::max(0, static_cast<int>(std::ceil((minu - lou - ju) / hu - 0.5)));
    int iu1 = std::min(nu - 1, static_cast<int>(std::floor((maxu - lou - ju) / hu - 0.5)));
    int iv0 = std::max(0, static_cast<int>(std::ceil((minv - lov - jv) / hv - 0.5)));
    int iv1 = std::min(nv - 1, static_cast<int>(std::floor((maxv - lov - jv) / hv - 0.5)));
    for (int iv = iv0; iv <= iv1; iv++) {
      double cv = lov + (iv + 0.5) * hv + jv;
      for (int iu = iu0; iu <= iu1; iu++) {
        double cu = lou + (iu + 0.5) * hu + ju;
        double l0 = cross2d(u1 - cu, v1 - cv, u2 - cu, v2 - cv) / d;
        double l1 = cross2d(u2 - cu, v2 - cv, u0 - cu, v0 - cv) / d;
        double l2 = cross2d(u0 - cu, v0 - cv, u1 - cu, v1 - cv) / d;
        if (l0 <= 0 || l1 <= 0 || l2 <= 0) continue;
        crossings[static_cast<size_t>(iv) * nu + iu].push_back(l0 * w0 + l1 * w1 + l2 * w2);
      }
    }
  }

  for (int iv = 0; iv < nv; iv++)
    for (int iu = 0; iu < nu; iu++) {
      auto& cs = crossings[static_cast<size_t>(iv) * nu + iu];
      if (cs.empty()) continue;
      std::sort(cs.begin(), cs.end());
      for (int iw = 0; iw < nw; iw++) {
        double cw = low + (iw + 0.5) * hw;
        // inside iff an odd number of surface crossings lies beyond the center
        size_t above = cs.end() - std::upper_bound(cs.begin(), cs.end(), cw);
        if (above % 2 == 0) continue;
        int x, y, z;
        switch (axis) {
          case 0: x = iw, y = iu, z = iv; break;
          case 1: x = iv, y = iw, z = iu; break;
          default: x = iu, y = iv, z = iw; break;
        }
        votes[g.index(x, y, z)]++;
      }
    }
}

// ---------------------------------------------------------------------------
// Marching-cubes case table, generated by loop tracing
// ---------------------------------------------------------------------------

// Corner c sits at offsets (c&1, c>>1&1, c>>2&1). Edges 0-3 run along x,
// 4-7 along y, 8-11 along z; each lists its lower corner first.
constexpr int kEdgeCorners[12][2] = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {0, 2}, {1, 3},
                                     {4, 6}, {5, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
// Each face as a 4-cycle of corners.
constexpr int kFaceCorners[6][4] = {{0, 2, 6, 4}, {1, 3, 7, 5}, {0, 1, 5, 4},
                                    {2, 3, 7, 6}, {0, 1, 3, 2}, {4, 5, 7, 6}};

inline Vec3 corner_pos(int c) {
  return Vec3{static_cast<double>(c & 1), static_cast<double>((c >> 1) & 1),
              static_cast<double>((c >> 2) & 1)};
}

int edge_between(int a, int b) {
  for (int e = 0; e < 12; e++)
    if ((kEdgeCorners[e][0] == a && kEdgeCorners[e][1] == b) ||
        (kEdgeCorners[e][0] == b && kEdgeCorners[e][1] == a))
      return e;
  return -1;
}

struct McTable {
  std::vector<std::array<int, 3>> tris[256];

  McTable() {
    int face_edges[6][4];
    for (int f = 0; f < 6; f++)
      for (int k = 0; k < 4; k++)
        face_edges[f][k] = edge_between(kFaceCorners[f][k], kFaceCorners[f][(k + 1) % 4]);

    for (int cfg = 1; cfg < 255; cfg++) {
      auto bit = [cfg](int c) { return (cfg >> c) & 1; };

      // Segments across each face, pairing crossed face edges. On ambiguous
      // faces (both diagonals occupied) each occupied corner is cut off by
      // its own segment; the rule depends only on the shared face pattern, so
      // neighboring cells always agree.
      std::vector<std::array<int, 2>> segs;
      for (int f = 0; f < 6; f++) {
        int crossed[4], nc = 0;
        for (int k = 0; k < 4; k++)
          if (bit(kFaceCorners[f][k]) != bit(kFaceCorners[f][(k + 1) % 4]))
            crossed[nc++] = k;
        if (nc == 2) {
          segs.push_back({face_edges[f][crossed[0]], face_edges[f][crossed[1]]});
        } else if (nc == 4) {
          for (int k = 0; k < 4; k++)
            if (bit(kFaceCorners[f][k]))
              segs.push_back({face_edges[f][(k + 3) % 4], face_edges[f][k]});
        }
      }

      // Every crossed cube edge touches exactly two faces, so it appears in
      // exactly two segments: the segment graph is a disjoint union of
      // simple cycles.
      std::vector<std::array<int, 2>> adj(12, {-1, -1});
      for (const auto& s : segs)
        for (int side = 0; side < 2; side++) {
          int e = s[side], o = s[1 - side];
          adj[e][adj[e][0] < 0 ? 0 : 1] = o;
        }

      bool used[12] = {};
      for (const auto& s0 : segs) {
        if (used[s0[0]]) continue;
        std::vector<int> loop;
        int prev = -1, cur = s0[0];
        while (!used[cur]) {
          used[cur] = true;
          loop.push_back(cur);
          int nxt = (adj[cur][0] == prev) ? adj[cur][1] : adj[cur][0];
          prev = cur;
          cur = nxt;
        }

        // Orient the loop so triangles face from occupied toward empty.
        std::vector<Vec3> pts(loop.size());
        for (size_t i = 0; i < loop.size(); i++) {
          Vec3 a = corner_pos(kEdgeCorners[loop[i]][0]);
          Vec3 b = corner_pos(kEdgeCorners[loop[i]][1]);
          pts[i] = (a + b) * 0.5;
        }
        Vec3 nrm{};
        for (size_t i = 0; i < pts.size(); i++) {
          const Vec3& p = pts[i];
          const Vec3& q = pts[(i + 1) % pts.size()];
          nrm.x += (p.y - q.y) * (p.z + q.z);
          nrm.y += (p.z - q.z) * (p.x + q.x);
          nrm.z += (p.x - q.x) * (p.y + q.y);
        }
        bool flipped = false;
        for (size_t i = 0; i < loop.size(); i++) {
          int ca = kEdgeCorners[loop[i]][0], cb = kEdgeCorners[loop[i]][1];
          int cin = bit(ca) ? ca : cb, cout = bit(ca) ? cb : ca;
          double d = dot(nrm, corner_pos(cout) - corner_pos(cin));
          if (std::abs(d) > 1e-9) {
            flipped = d < 0;
            break;
          }
        }
        if (flipped) std::reverse(loop.begin(), loop.end());
        for (size_t i = 1; i + 1 < loop.size(); i++)
          tris[cfg].push_back({loop[0], loop[i], loop[i + 1]});
      }
    }
  }
};

const McTable& mc_table() {
  static McTable table;
  return table;
}

}  // namespace

VoxelGrid voxelize_solid_bounds(const TriMesh& mesh, const Vec3& lo, const Vec3& hi, int nx,
                                int ny, int nz) {
  if (nx < 1 || ny < 1 || nz < 1)
    throw error(errc::invalid_argument, "voxelize_solid: non-positive resolution");
  VoxelGrid g;
  g.nx = nx, g.ny = ny, g.nz = nz;
  g.lo = lo, g.hi = hi;
  g.occ.assign(static_cast<size_t>(nx) * ny * nz, 0);
  if (mesh.faces.empty()) return g;

  std::vector<Vec3> pos = mesh.positions();
  std::vector<uint8_t> votes(g.occ.size(), 0);
  for (int axis = 0; axis < 3; axis++) parity_votes(mesh, pos, g, axis, votes);

  size_t ambiguous = 0;
  for (size_t i = 0; i < votes.size(); i++) {
    g.occ[i] = votes[i] >= 2 ? 1 : 0;
    if (votes[i] == 1 || votes[i] == 2) ambiguous++;
  }
  g.parity_warning = ambiguous > votes.size() / 5;
  return g;
}

VoxelGrid voxelize_solid(const TriMesh& mesh, int resolution) {
  if (resolution < 5)
    throw error(errc::invalid_argument, "voxelize_solid: resolution must be at least 5");
  if (mesh.faces.empty() || mesh.base_vertices.empty())
    return voxelize_solid_bounds(mesh, Vec3{-0.5, -0.5, -0.5}, Vec3{0.5, 0.5, 0.5}, resolution,
                                 resolution, resolution);

  std::vector<Vec3> pos = mesh.positions();
  Vec3 blo = pos[0], bhi = pos[0];
  for (const Vec3& p : pos) {
    blo.x = std::min(blo.x, p.x), blo.y = std::min(blo.y, p.y), blo.z = std::min(blo.z, p.z);
    bhi.x = std::max(bhi.x, p.x), bhi.y = std::max(bhi.y, p.y), bhi.z = std::max(bhi.z, p.z);
  }
  double extent = std::max({bhi.x - blo.x, bhi.y - blo.y, bhi.z - blo.z, 1e-9});
  // Cubic voxels, cubic grid: two-voxel margin beyond the longest axis.
  double side = extent * resolution / (resolution - 4);
  Vec3 c = (blo + bhi) * 0.5;
  Vec3 half{side * 0.5, side * 0.5, side * 0.5};
  return voxelize_solid_bounds(mesh, c - half, c + half, resolution, resolution, resolution);
}

VoxelGrid carve(const VoxelGrid& grid, const std::vector<ImageGray>& masks,
                const std::vector<Camera>& cameras) {
  if (masks.size() != cameras.size())
    throw error(errc::invalid_argument, "carve: masks/cameras size mismatch");
  struct ViewXf {
    Mat3 R;
    Vec3 t;
    double s;
    const ImageGray* mask;
  };
  std::vector<ViewXf> views;
  for (size_t i = 0; i < cameras.size(); i++) {
    const Camera& cam = cameras[i];
    if (cam.f <= 0 || cam.f >= kPi / 2)
      throw error(errc::invalid_argument, "carve: half-fov out of (0, pi/2)");
    views.push_back({rotation_matrix(cam.r), cam.t, 1.0 / std::tan(cam.f), &masks[i]});
  }

  VoxelGrid out = grid;
  for (int z = 0; z < grid.nz; z++)
    for (int y = 0; y < grid.ny; y++)
      for (int x = 0; x < grid.nx; x++) {
        if (!grid.at(x, y, z)) continue;
        Vec3 p = grid.center(x, y, z);
        bool keep = true;
        for (const ViewXf& v : views) {
          Vec3 X = v.R * p + v.t;
          if (X.z <= kDefaultZNear) {
            keep = false;
            break;
          }
          long px = std::lround(ndc_to_pixel(v.s * X.x / X.z, v.mask->width));
          long py = std::lround(ndc_to_pixel(v.s * X.y / X.z, v.mask->height));
          if (px < 0 || px >= v.mask->width || py < 0 || py >= v.mask->height ||
              v.mask->at(static_cast<int>(px), static_cast<int>(py)) <= 0.5) {
            keep = false;
            break;
          }
        }
        if (!keep) out.set(x, y, z, false);
      }
  return out;
}

TriMesh marching_cubes(const VoxelGrid& grid, double iso) {
  (void)iso;  // binary field: any iso in (0, 1) crosses at edge midpoints
  if (grid.count() == 0)
    throw error(errc::empty_shape, "marching_cubes: no occupied voxels");

  const McTable& table = mc_table();
  Vec3 h = grid.voxel_size();
  TriMesh out;
  std::unordered_map<int64_t, int> edge_vert;

  auto vertex_for = [&](int ix, int iy, int iz, int e) {
    int ca = kEdgeCorners[e][0];
    int ax = ca & 1, ay = (ca >> 1) & 1, az = (ca >> 2) & 1;
    int axis = e < 4 ? 0 : (e < 8 ? 1 : 2);
    int64_t key =
        ((static_cast<int64_t>(iz + az) * grid.ny + (iy + ay)) * grid.nx + (ix + ax)) * 3 + axis;
    auto it = edge_vert.find(key);
    if (it != edge_vert.end()) return it->second;
    Vec3 p = grid.center(ix + ax, iy + ay, iz + az);
    if (axis == 0) p.x += 0.5 * h.x;
    else if (axis == 1) p.y += 0.5 * h.y;
    else p.z += 0.5 * h.z;
    int id = static_cast<int>(out.base_vertices.size());
    out.base_vertices.push_back(p);
    edge_vert.emplace(key, id);
    return id;
  };

  for (int iz = 0; iz + 1 < grid.nz; iz++)
    for (int iy = 0; iy + 1 < grid.ny; iy++)
      for (int ix = 0; ix + 1 < grid.nx; ix++) {
        int cfg = 0;
        for (int c = 0; c < 8; c++)
          if (grid.at(ix + (c & 1), iy + ((c >> 1) & 1), iz + ((c >> 2) & 1))) cfg |= 1 << c;
        if (cfg == 0 || cfg == 255) continue;
        for (const auto& t : table.tris[cfg])
          out.faces.push_back({vertex_for(ix, iy, iz, t[0]), vertex_for(ix, iy, iz, t[1]),
                               vertex_for(ix, iy, iz, t[2])});
      }

  out.offsets.assign(out.base_vertices.size(), Vec3{});
  return out;
}

TriMesh remesh(const TriMesh& mesh, const std::vector<ImageGray>& masks,
               const std::vector<Camera>& cameras, int resolution) {
  VoxelGrid g = voxelize_solid(mesh, resolution);
  g = carve(g, masks, cameras);
  // marching_cubes works in world coordinates, so the result needs no
  // rescaling; it is a fresh hypothesis with zero offsets.
  return marching_cubes(g);
}

}  // namespace ds
