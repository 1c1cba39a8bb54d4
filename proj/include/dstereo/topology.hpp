#pragma once

#include <vector>

#include "dstereo/camera.hpp"
#include "dstereo/image.hpp"
#include "dstereo/mesh.hpp"

namespace ds {

// Dense binary occupancy over an axis-aligned box. Voxel (x, y, z) owns the
// cell [lo + d*h, lo + (d+1)*h) per axis; samples live at cell centers.
struct VoxelGrid {
  int nx = 0, ny = 0, nz = 0;
  Vec3 lo{}, hi{};
  std::vector<uint8_t> occ;
  // Set by voxelize_solid when the three axis-parity votes disagree on more
  // than 20% of voxels (typically an open or self-intersecting mesh).
  bool parity_warning = false;

  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(z) * ny + y) * nx + x;
  }
  bool at(int x, int y, int z) const { return occ[index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) { occ[index(x, y, z)] = v ? 1 : 0; }

  Vec3 voxel_size() const {
    return Vec3{(hi.x - lo.x) / nx, (hi.y - lo.y) / ny, (hi.z - lo.z) / nz};
  }
  Vec3 center(int x, int y, int z) const {
    Vec3 h = voxel_size();
    return Vec3{lo.x + (x + 0.5) * h.x, lo.y + (y + 0.5) * h.y, lo.z + (z + 0.5) * h.z};
  }
  long count() const {
    long c = 0;
    for (uint8_t v : occ) c += v;
    return c;
  }
};

// Solid voxelization by ray-parity voting along the three axes (majority of
// three). `resolution` voxels per axis on a cubic grid enclosing the mesh
// with at least a two-voxel margin on its longest axis.
VoxelGrid voxelize_solid(const TriMesh& mesh, int resolution);

// Same, with caller-specified bounds and per-axis counts.
VoxelGrid voxelize_solid_bounds(const TriMesh& mesh, const Vec3& lo, const Vec3& hi, int nx,
                                int ny, int nz);

// Keeps a voxel iff its center projects inside every view's frame onto an
// occupied mask pixel (nearest pixel, masks binarized at 0.5). Centers at or
// behind a camera's near plane count as out of frame.
VoxelGrid carve(const VoxelGrid& grid, const std::vector<ImageGray>& masks,
                const std::vector<Camera>& cameras);

// Standard 256-case marching cubes on the binary field, surface vertices at
// cell-edge midpoints, faces oriented outward (occupied to empty). The case
// table is generated at startup by tracing face-segment loops; ambiguous
// faces consistently keep diagonal occupied corners separated, so adjacent
// cells agree and interior-consistent grids yield watertight meshes.
// Throws errc::empty_shape on a grid with no occupied voxels.
TriMesh marching_cubes(const VoxelGrid& grid, double iso = 0.5);

// voxelize -> carve -> marching cubes, in world coordinates throughout. The
// result is a fresh shape hypothesis: base vertices from the extracted
// surface, offsets zero.
TriMesh remesh(const TriMesh& mesh, const std::vector<ImageGray>& masks,
               const std::vector<Camera>& cameras, int resolution);

}  // namespace ds
