#pragma once

#include <array>
#include <utility>
#include <vector>

#include "dstereo/vecmath.hpp"

namespace ds {

// Vertices split into a frozen base and an optimizable offset so the
// optimizer can treat the offsets as one parameter block.
struct TriMesh {
  std::vector<Vec3> base_vertices;
  std::vector<Vec3> offsets;
  std::vector<std::array<int, 3>> faces;

  // Midpoint reprojection target for the warmup sphere; subdivide() keeps
  // new vertices on the sphere while this is set.
  bool on_sphere = false;
  double sphere_radius = 0.0;

  int n_verts() const { return static_cast<int>(base_vertices.size()); }
  int n_faces() const { return static_cast<int>(faces.size()); }

  std::vector<Vec3> positions() const {
    std::vector<Vec3> p(base_vertices.size());
    for (size_t i = 0; i < p.size(); i++) p[i] = base_vertices[i] + offsets[i];
    return p;
  }

  // Folds offsets into the base, zeroing them.
  void rebase() {
    for (size_t i = 0; i < base_vertices.size(); i++) {
      base_vertices[i] += offsets[i];
      offsets[i] = Vec3{};
    }
  }
};

TriMesh make_icosphere(int level, double radius);
TriMesh subdivide(const TriMesh& mesh);
void validate_mesh(const TriMesh& mesh);

double mesh_signed_volume(const std::vector<Vec3>& verts,
                          const std::vector<std::array<int, 3>>& faces);

int connected_components(const std::vector<std::array<int, 3>>& faces, int n_verts,
                         std::vector<int>* labels = nullptr);

// Unique undirected edges (a < b), in first-encounter face order.
std::vector<std::pair<int, int>> build_edges(const std::vector<std::array<int, 3>>& faces);

double mean_edge_length(const std::vector<Vec3>& verts,
                        const std::vector<std::pair<int, int>>& edges);

struct VertexNormals {
  std::vector<Vec3> n;        // unit normals
  std::vector<double> inv_len;  // 1/|accumulated|, kept for the backward pass
};

VertexNormals vertex_normals(const std::vector<Vec3>& verts,
                             const std::vector<std::array<int, 3>>& faces);

// Accumulates d(loss)/d(verts) given adjoints on the unit normals.
void vertex_normals_backward(const std::vector<Vec3>& verts,
                             const std::vector<std::array<int, 3>>& faces,
                             const VertexNormals& vn, const std::vector<Vec3>& adj_n,
                             std::vector<Vec3>& adj_verts);

struct LaplacianCache {
  struct Edge {
    int a, b;
    int opp[2];
    int n_opp;
  };
  std::vector<Edge> edges;
  // CSR rows: for vertex i, (neighbor, edge index) pairs.
  std::vector<int> row_start;
  std::vector<std::pair<int, int>> row_entries;
  int n_verts = 0;
};

LaplacianCache build_laplacian_cache(const std::vector<std::array<int, 3>>& faces, int n_verts);

// Row-normalized cotangent Laplacian applied to the vertex positions:
// (LV)_i = sum_j w_ij (V_j - V_i) / sum_j w_ij, cotangents clamped to 1e4.
std::vector<Vec3> cotangent_laplacian(const std::vector<Vec3>& verts,
                                      const LaplacianCache& cache);

void cotangent_laplacian_backward(const std::vector<Vec3>& verts, const LaplacianCache& cache,
                                  const std::vector<Vec3>& adj_out,
                                  std::vector<Vec3>& adj_verts);

}  // namespace ds
