#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dstereo/camera.hpp"
#include "dstereo/evaluation.hpp"
#include "dstereo/image.hpp"
#include "dstereo/mesh.hpp"

namespace ds {

// A loaded dataset, already mapped into the normalized working frame (the
// visual-hull proxy of the masks spans a unit diagonal centered at the
// origin). `norm` maps original input coordinates to this frame; exports go
// through its inverse.
struct Scene {
  std::vector<ImageRGB> images;  // linear [0,1]
  std::vector<ImageGray> masks;  // binarized to {0,1}
  std::vector<Camera> cameras;   // normalized frame
  int width = 0, height = 0;
  Similarity norm;

  int n_views() const { return static_cast<int>(cameras.size()); }
};

// Camera observing the transformed world xf.apply(p) with unchanged NDC;
// view-space depths scale by xf.s.
Camera apply_similarity(const Camera& cam, const Similarity& xf);

// cameras.json: array of {"r": [3], "t": [3], "f": number}.
std::vector<Camera> load_cameras_json(const std::string& path);
void save_cameras_json(const std::string& path, const std::vector<Camera>& cams);

// Translation + uniform scale taking the visual-hull proxy (mask cones
// intersected on a coarse voxel grid) to a unit-diagonal box at the origin.
// Throws bad_scene when the hull is empty.
Similarity scene_normalization(const std::vector<ImageGray>& masks,
                               const std::vector<Camera>& cameras);

// Reads dir/{view_%03d.png, mask_%03d.png, cameras.json}, checks counts and
// sizes, binarizes masks at 0.5, and normalizes the scene.
Scene load_scene(const std::string& dir);

// Wavefront OBJ, geometry only: v/f lines, polygons fan-triangulated,
// negative and slash-compound indices accepted. write_obj folds offsets.
TriMesh read_obj(const std::string& path);
void write_obj(const std::string& path, const TriMesh& mesh);

struct MeshWithColors {
  TriMesh mesh;
  std::vector<Vec3> colors;  // linear [0,1], per vertex
  bool has_colors = false;
};

// ASCII PLY; colors stored as uchar sRGB (empty `colors` writes none).
void write_ply(const std::string& path, const TriMesh& mesh, const std::vector<Vec3>& colors);
MeshWithColors read_ply(const std::string& path);

// Dispatch by extension: .obj or .ply.
MeshWithColors load_mesh(const std::string& path);

struct SynthConfig {
  int n_views = 8;
  double noise_deg = 0.0;  // rotation perturbation written to cameras.json
  int size = 128;          // square output images
  uint64_t seed = 1;
  // "checkerboard" | "gradient" | "vertex" (per-vertex colors from the file)
  std::string texture = "checkerboard";
  double fit = 0.75;    // NDC radius subtended by the bounding sphere
  int supersample = 2;  // GT renders are box-downsampled from this factor
};

// Renders a synthetic dataset from a ground-truth mesh: random look-at
// cameras (Euler angles uniform in [0, 360), full field-of-view uniform in
// [20, 50] degrees), crisp supersampled RGB + mask images, noisy cameras in
// cameras.json, and the clean originals plus the mesh under gt/.
void synthesize_scene(const std::string& mesh_path, const SynthConfig& cfg,
                      const std::string& out_dir);

// Writes mesh.obj, mesh_colored.ply (baked vertex colors), cameras.json, and
// renders/novel_{00,01}.png from two fresh orbital viewpoints. `mesh` and
// `cameras` are in the scene's normalized frame; files are written in the
// original input frame via scene.norm.inverse().
void export_result(const TriMesh& mesh, const std::vector<Camera>& cameras, const Scene& scene,
                   const std::string& out_dir);

}  // namespace ds
