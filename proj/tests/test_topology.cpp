#include "dstereo/topology.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "doctest.h"
#include "dstereo/rng.hpp"

using namespace ds;

namespace {

TriMesh make_box(const Vec3& lo, const Vec3& hi) {
  TriMesh m;
  for (int c = 0; c < 8; c++)
    m.base_vertices.push_back(Vec3{(c & 1) ? hi.x : lo.x, ((c >> 1) & 1) ? hi.y : lo.y,
                                   ((c >> 2) & 1) ? hi.z : lo.z});
  const int F[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                       {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
  for (const auto& q : F) {
    m.faces.push_back({q[0], q[1], q[2]});
    m.faces.push_back({q[0], q[2], q[3]});
  }
  m.offsets.assign(8, Vec3{});
  return m;
}

Camera look_at_camera(double az, double elev, double dist, double fov_deg) {
  Vec3 c{dist * std::sin(az) * std::cos(elev), dist * std::sin(elev),
         -dist * std::cos(az) * std::cos(elev)};
  Vec3 fwd = normalized(c * -1.0);
  Vec3 right = normalized(cross(Vec3{0, 1, 0}, fwd));
  Vec3 up = cross(fwd, right);
  Mat3 R;
  for (int k = 0; k < 3; k++) {
    R.m[k] = right[k];
    R.m[3 + k] = up[k];
    R.m[6 + k] = fwd[k];
  }
  Camera cam;
  cam.r = axis_angle_from_matrix(R);
  cam.t = -(R * c);
  cam.f = deg_to_rad(fov_deg);
  return cam;
}

// Disc of radius r_ndc at (cx,cy) in NDC; inverted = hole in a full mask.
ImageGray disc_mask(int wh, double cx, double cy, double r, bool inverted = false) {
  ImageGray m(wh, wh, inverted ? 1.0 : 0.0);
  for (int y = 0; y < wh; y++)
    for (int x = 0; x < wh; x++) {
      double dx = pixel_to_ndc(x, wh) - cx, dy = pixel_to_ndc(y, wh) - cy;
      if (dx * dx + dy * dy <= r * r) m.at(x, y) = inverted ? 0.0 : 1.0;
    }
  return m;
}

VoxelGrid manual_grid(int n, const Vec3& lo, const Vec3& hi) {
  VoxelGrid g;
  g.nx = g.ny = g.nz = n;
  g.lo = lo;
  g.hi = hi;
  g.occ.assign(static_cast<size_t>(n) * n * n, 0);
  return g;
}

struct MeshStats {
  int verts = 0, faces = 0, edges = 0, components = 0;
  bool watertight = true;  // every directed edge exactly once, with its reverse present
  bool all_referenced = true;
  bool no_duplicate_faces = true;
  int euler() const { return verts - edges + faces; }
};

MeshStats mesh_stats(const TriMesh& m) {
  MeshStats s;
  s.verts = m.n_verts();
  s.faces = m.n_faces();
  std::map<std::pair<int, int>, int> directed;
  std::set<std::array<int, 3>> face_keys;
  std::vector<int> parent(m.n_verts());
  for (int i = 0; i < m.n_verts(); i++) parent[i] = i;
  std::vector<char> referenced(m.n_verts(), 0);
  std::function<int(int)> find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (const auto& f : m.faces) {
    std::array<int, 3> key = {f[0], f[1], f[2]};
    std::sort(key.begin(), key.end());
    if (!face_keys.insert(key).second) s.no_duplicate_faces = false;
    for (int e = 0; e < 3; e++) {
      int a = f[e], b = f[(e + 1) % 3];
      referenced[a] = 1;
      directed[{a, b}]++;
      parent[find(a)] = find(b);
    }
  }
  std::set<std::pair<int, int>> undirected;
  for (const auto& [k, cnt] : directed) {
    if (cnt != 1) s.watertight = false;
    if (!directed.count({k.second, k.first})) s.watertight = false;
    undirected.insert({std::min(k.first, k.second), std::max(k.first, k.second)});
  }
  s.edges = static_cast<int>(undirected.size());
  std::set<int> roots;
  for (int i = 0; i < m.n_verts(); i++) {
    if (!referenced[i])
      s.all_referenced = false;
    else
      roots.insert(find(i));
  }
  s.components = static_cast<int>(roots.size());
  return s;
}

double signed_volume(const TriMesh& m) {
  double v = 0;
  auto pos = m.positions();
  for (const auto& f : m.faces) v += dot(pos[f[0]], cross(pos[f[1]], pos[f[2]])) / 6.0;
  return v;
}

bool subset_of(const VoxelGrid& a, const VoxelGrid& b) {
  for (size_t i = 0; i < a.occ.size(); i++)
    if (a.occ[i] && !b.occ[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("unit cube voxelization matches the point-in-box oracle") {
  TriMesh cube = make_box(Vec3{-0.5, -0.5, -0.5}, Vec3{0.5, 0.5, 0.5});
  VoxelGrid g = voxelize_solid_bounds(cube, Vec3{-1, -1, -1}, Vec3{1, 1, 1}, 8, 8, 8);
  CHECK_FALSE(g.parity_warning);
  long inside = 0;
  for (int z = 0; z < 8; z++)
    for (int y = 0; y < 8; y++)
      for (int x = 0; x < 8; x++) {
        Vec3 c = g.center(x, y, z);
        bool oracle = std::abs(c.x) < 0.5 && std::abs(c.y) < 0.5 && std::abs(c.z) < 0.5;
        CHECK(bool(g.at(x, y, z)) == oracle);
        inside += oracle;
      }
  CHECK(inside == 64);
  CHECK(g.count() == 64);
}

TEST_CASE("empty mesh voxelizes to all false") {
  TriMesh empty;
  VoxelGrid g = voxelize_solid(empty, 8);
  CHECK(g.nx == 8);
  CHECK(g.ny == 8);
  CHECK(g.nz == 8);
  CHECK(g.count() == 0);
  CHECK_FALSE(g.parity_warning);
}

TEST_CASE("icosphere occupancy fraction matches the analytic volume") {
  TriMesh sphere = make_icosphere(3, 0.5);
  const double ball = 4.0 / 3.0 * kPi * 0.5 * 0.5 * 0.5;

  // Fixed bounds: fraction of [-1,1]^3 occupied by the ball.
  VoxelGrid g = voxelize_solid_bounds(sphere, Vec3{-1, -1, -1}, Vec3{1, 1, 1}, 32, 32, 32);
  CHECK_FALSE(g.parity_warning);
  double frac = double(g.count()) / (32.0 * 32.0 * 32.0);
  CHECK(frac == doctest::Approx(ball / 8.0).epsilon(0.05));

  // Automatic bounds: occupied volume matches the ball volume.
  VoxelGrid ga = voxelize_solid(sphere, 32);
  Vec3 h = ga.voxel_size();
  CHECK(double(ga.count()) * h.x * h.y * h.z == doctest::Approx(ball).epsilon(0.05));

  // Deterministic across calls.
  VoxelGrid gb = voxelize_solid(sphere, 32);
  CHECK(ga.occ == gb.occ);
}

TEST_CASE("open mesh sets the parity warning") {
  TriMesh square;
  square.base_vertices = {{-1, -1, 0}, {1, -1, 0}, {1, 1, 0}, {-1, 1, 0}};
  square.offsets.assign(4, Vec3{});
  square.faces = {{0, 1, 2}, {0, 2, 3}};
  VoxelGrid g = voxelize_solid_bounds(square, Vec3{-1.2, -1.2, -1.2}, Vec3{1.2, 1.2, 1.2},
                                      10, 10, 10);
  CHECK(g.parity_warning);
  // A single axis's odd parity cannot win the majority vote on its own.
  CHECK(g.count() == 0);
}

TEST_CASE("carve keeps everything under full masks, empties under an empty mask") {
  TriMesh cube = make_box(Vec3{-0.5, -0.5, -0.5}, Vec3{0.5, 0.5, 0.5});
  VoxelGrid g = voxelize_solid_bounds(cube, Vec3{-1, -1, -1}, Vec3{1, 1, 1}, 8, 8, 8);
  std::vector<Camera> cams = {look_at_camera(0.0, 0.0, 3.0, 30.0),
                              look_at_camera(deg_to_rad(90), 0.0, 3.0, 30.0)};
  std::vector<ImageGray> masks = {ImageGray(32, 32, 1.0), ImageGray(32, 32, 1.0)};

  VoxelGrid kept = carve(g, masks, cams);
  CHECK(kept.occ == g.occ);

  masks[1] = ImageGray(32, 32, 0.0);
  VoxelGrid emptied = carve(g, masks, cams);
  CHECK(emptied.count() == 0);
}

TEST_CASE("carving a full grid against box masks matches the projection oracle") {
  VoxelGrid g = manual_grid(12, Vec3{-1, -1, -1}, Vec3{1, 1, 1});
  std::fill(g.occ.begin(), g.occ.end(), uint8_t{1});
  std::vector<Camera> cams = {look_at_camera(0.0, 0.0, 3.0, 30.0),
                              look_at_camera(deg_to_rad(90), 0.0, 3.0, 30.0)};

  // Square silhouettes: |ndc| <= 0.4 in both axes.
  const int wh = 48;
  std::vector<ImageGray> masks(2, ImageGray(wh, wh, 0.0));
  for (auto& mask : masks)
    for (int y = 0; y < wh; y++)
      for (int x = 0; x < wh; x++)
        if (std::abs(pixel_to_ndc(x, wh)) <= 0.4 && std::abs(pixel_to_ndc(y, wh)) <= 0.4)
          mask.at(x, y) = 1.0;

  VoxelGrid carved = carve(g, masks, cams);

  // Independent per-voxel oracle through the public projection routine.
  long oracle_count = 0;
  for (int z = 0; z < g.nz; z++)
    for (int y = 0; y < g.ny; y++)
      for (int x = 0; x < g.nx; x++) {
        bool keep = true;
        for (int v = 0; v < 2 && keep; v++) {
          Projected pr = project(cams[v], g.center(x, y, z));
          long px = std::lround(ndc_to_pixel(pr.ndc.x, wh));
          long py = std::lround(ndc_to_pixel(pr.ndc.y, wh));
          keep = px >= 0 && px < wh && py >= 0 && py < wh &&
                 masks[v].at(static_cast<int>(px), static_cast<int>(py)) > 0.5;
        }
        CHECK(bool(carved.at(x, y, z)) == keep);
        oracle_count += keep;
      }
  CHECK(carved.count() == oracle_count);
  CHECK(oracle_count > 0);
  CHECK(oracle_count < long(g.occ.size()));
}

TEST_CASE("marching cubes on one interior voxel yields a closed octahedron") {
  VoxelGrid g = manual_grid(8, Vec3{-1, -1, -1}, Vec3{1, 1, 1});
  g.set(4, 4, 4, true);
  TriMesh m = marching_cubes(g);

  MeshStats s = mesh_stats(m);
  CHECK(s.verts == 6);
  CHECK(s.faces == 8);
  CHECK(s.edges == 12);
  CHECK(s.euler() == 2);
  CHECK(s.watertight);
  CHECK(s.all_referenced);
  CHECK(s.no_duplicate_faces);
  CHECK(s.components == 1);

  // All faces wind outward around the occupied voxel's center.
  Vec3 c = g.center(4, 4, 4);
  auto pos = m.positions();
  for (const auto& f : m.faces) {
    Vec3 n = cross(pos[f[1]] - pos[f[0]], pos[f[2]] - pos[f[0]]);
    Vec3 centroid = (pos[f[0]] + pos[f[1]] + pos[f[2]]) / 3.0;
    CHECK(dot(n, centroid - c) > 0.0);
  }
  CHECK(m.offsets.size() == m.base_vertices.size());
  for (const auto& o : m.offsets) CHECK(norm(o) == 0.0);
}

TEST_CASE("marching cubes on a voxel ball is genus-0 and watertight") {
  VoxelGrid g = manual_grid(24, Vec3{-1, -1, -1}, Vec3{1, 1, 1});
  for (int z = 0; z < 24; z++)
    for (int y = 0; y < 24; y++)
      for (int x = 0; x < 24; x++)
        if (norm(g.center(x, y, z)) <= 0.7) g.set(x, y, z, true);
  REQUIRE(g.count() > 0);
  TriMesh m = marching_cubes(g);

  MeshStats s = mesh_stats(m);
  CHECK(s.watertight);
  CHECK(s.all_referenced);
  CHECK(s.no_duplicate_faces);
  CHECK(s.components == 1);
  CHECK(s.euler() == 2);

  // Enclosed volume agrees with the voxel volume (surface staircase slack).
  Vec3 h = g.voxel_size();
  double vox_vol = double(g.count()) * h.x * h.y * h.z;
  double v = signed_volume(m);
  CHECK(v > 0.0);
  CHECK(v == doctest::Approx(vox_vol).epsilon(0.2));
}

TEST_CASE("two separated voxels yield two components") {
  VoxelGrid g = manual_grid(8, Vec3{-1, -1, -1}, Vec3{1, 1, 1});
  g.set(2, 2, 2, true);
  g.set(5, 5, 5, true);
  TriMesh m = marching_cubes(g);
  MeshStats s = mesh_stats(m);
  CHECK(s.verts == 12);
  CHECK(s.faces == 16);
  CHECK(s.components == 2);
  CHECK(s.watertight);
  CHECK(s.euler() == 4);  // two genus-0 components
}

TEST_CASE("marching cubes rejects an empty grid") {
  VoxelGrid g = manual_grid(4, Vec3{-1, -1, -1}, Vec3{1, 1, 1});
  CHECK_THROWS_AS(marching_cubes(g), error);
  try {
    marching_cubes(g);
  } catch (const error& e) {
    CHECK(e.code == errc::empty_shape);
  }
}

TEST_CASE("carve is idempotent and monotone") {
  Rng rng(1234);
  VoxelGrid g = manual_grid(10, Vec3{-1, -1, -1}, Vec3{1, 1, 1});
  for (auto& o : g.occ) o = rng.uniform() < 0.5 ? 1 : 0;

  std::vector<Camera> cams = {look_at_camera(0.0, 0.0, 3.0, 30.0),
                              look_at_camera(deg_to_rad(75), 0.0, 3.0, 30.0)};
  std::vector<ImageGray> masks = {disc_mask(48, 0.1, -0.05, 0.5),
                                  disc_mask(48, -0.15, 0.1, 0.45)};

  VoxelGrid c1 = carve(g, masks, cams);
  CHECK(subset_of(c1, g));
  CHECK(c1.count() > 0);
  CHECK(c1.count() < g.count());

  VoxelGrid c2 = carve(c1, masks, cams);
  CHECK(c2.occ == c1.occ);  // idempotent

  // Monotone: carving a subset grid yields a subset result.
  VoxelGrid g_sub = g;
  for (size_t i = 0; i < g_sub.occ.size(); i += 3) g_sub.occ[i] = 0;
  VoxelGrid c_sub = carve(g_sub, masks, cams);
  CHECK(subset_of(c_sub, c1));
}

TEST_CASE("remesh splits a shape into mask components") {
  TriMesh sphere = make_icosphere(2, 0.8);
  std::vector<Camera> cams = {look_at_camera(0.0, 0.0, 3.0, 30.0),
                              look_at_camera(0.0, deg_to_rad(60), 3.0, 30.0)};
  // Two discs separated along image x in both views.
  const int wh = 64;
  std::vector<ImageGray> masks;
  for (int v = 0; v < 2; v++) {
    ImageGray m(wh, wh, 0.0);
    for (int y = 0; y < wh; y++)
      for (int x = 0; x < wh; x++) {
        double nx = pixel_to_ndc(x, wh), ny = pixel_to_ndc(y, wh);
        double dl = (nx + 0.3) * (nx + 0.3) + ny * ny;
        double dr = (nx - 0.3) * (nx - 0.3) + ny * ny;
        if (dl <= 0.15 * 0.15 || dr <= 0.15 * 0.15) m.at(x, y) = 1.0;
      }
    masks.push_back(std::move(m));
  }

  TriMesh out = remesh(sphere, masks, cams, 32);
  MeshStats s = mesh_stats(out);
  CHECK(s.components == 2);
  CHECK(s.watertight);
  CHECK(s.euler() == 4);
  CHECK(out.offsets.size() == out.base_vertices.size());
  for (const auto& o : out.offsets) CHECK(norm(o) == 0.0);
}

TEST_CASE("remesh keeps a mask-consistent shape intact") {
  TriMesh sphere = make_icosphere(2, 0.5);
  std::vector<Camera> cams = {look_at_camera(deg_to_rad(25), deg_to_rad(10), 3.0, 30.0),
                              look_at_camera(deg_to_rad(-25), deg_to_rad(-10), 3.0, 30.0)};
  // Generous discs covering the sphere's silhouette (ndc radius ~0.29) plus
  // the half-voxel protrusion of surface voxel centers.
  std::vector<ImageGray> masks = {disc_mask(64, 0.0, 0.0, 0.40),
                                  disc_mask(64, 0.0, 0.0, 0.40)};

  VoxelGrid vox = voxelize_solid(sphere, 32);
  VoxelGrid carved = carve(vox, masks, cams);
  CHECK(carved.occ == vox.occ);  // consistent masks remove nothing: IoU 1

  TriMesh out = remesh(sphere, masks, cams, 32);
  MeshStats s = mesh_stats(out);
  CHECK(s.components == 1);
  CHECK(s.watertight);
  CHECK(s.euler() == 2);

  // Every output vertex projects inside the (slightly dilated) masks.
  auto pos = out.positions();
  for (const auto& p : pos)
    for (const auto& cam : cams) {
      Projected pr = project(cam, p);
      CHECK(std::sqrt(pr.ndc.x * pr.ndc.x + pr.ndc.y * pr.ndc.y) <= 0.40 + 0.04);
    }
}

TEST_CASE("remesh carving can change genus") {
  TriMesh box = make_box(Vec3{-0.6, -0.6, -0.6}, Vec3{0.6, 0.6, 0.6});
  CHECK(mesh_stats(box).euler() == 2);

  std::vector<Camera> cams = {look_at_camera(0.0, 0.0, 3.0, 30.0)};
  // Full mask with a central hole: drills a tunnel straight through the box.
  std::vector<ImageGray> masks = {disc_mask(64, 0.0, 0.0, 0.12, /*inverted=*/true)};

  TriMesh out = remesh(box, masks, cams, 32);
  MeshStats s = mesh_stats(out);
  CHECK(s.components == 1);
  CHECK(s.watertight);
  CHECK(s.euler() == 0);  // genus 1: the hole became a handle
}
