#include "dstereo/mesh.hpp"

#include <cmath>
#include <numeric>
#include <unordered_map>

namespace ds {

namespace {

uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<uint64_t>(a) << 32) | static_cast<uint32_t>(b);
}

}  // namespace

TriMesh make_icosphere(int level, double radius) {
  if (level < 0) throw error(errc::invalid_argument, "make_icosphere: negative level");
  if (radius <= 0) throw error(errc::invalid_argument, "make_icosphere: radius must be positive");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
      {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
      {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
  };
  for (auto& p : v) p = normalized(p) * radius;
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1},
  };
  TriMesh mesh;
  mesh.base_vertices = std::move(v);
  mesh.offsets.assign(mesh.base_vertices.size(), Vec3{});
  mesh.faces = std::move(f);
  mesh.on_sphere = true;
  mesh.sphere_radius = radius;
  for (int i = 0; i < level; i++) mesh = subdivide(mesh);
  return mesh;
}

TriMesh subdivide(const TriMesh& mesh) {
  std::vector<Vec3> pos = mesh.positions();
  std::vector<Vec3> out = pos;
  std::unordered_map<uint64_t, int> midpoint;
  midpoint.reserve(mesh.faces.size() * 2);

  auto mid = [&](int a, int b) {
    uint64_t key = edge_key(a, b);
    auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    Vec3 m = (pos[a] + pos[b]) * 0.5;
    if (mesh.on_sphere) {
      double len = norm(m);
      if (len > 1e-12) m = m * (mesh.sphere_radius / len);
    }
    int idx = static_cast<int>(out.size());
    out.push_back(m);
    midpoint.emplace(key, idx);
    return idx;
  };

  std::vector<std::array<int, 3>> faces;
  faces.reserve(mesh.faces.size() * 4);
  for (const auto& f : mesh.faces) {
    int a = f[0], b = f[1], c = f[2];
    int ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
    faces.push_back({a, ab, ca});
    faces.push_back({b, bc, ab});
    faces.push_back({c, ca, bc});
    faces.push_back({ab, bc, ca});
  }

  TriMesh r;
  r.base_vertices = std::move(out);
  r.offsets.assign(r.base_vertices.size(), Vec3{});
  r.faces = std::move(faces);
  r.on_sphere = mesh.on_sphere;
  r.sphere_radius = mesh.sphere_radius;
  return r;
}

void validate_mesh(const TriMesh& mesh) {
  int nv = mesh.n_verts();
  if (mesh.offsets.size() != mesh.base_vertices.size())
    throw error(errc::invalid_argument, "mesh: offset/base size mismatch");
  std::vector<Vec3> pos = mesh.positions();
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; k++)
      if (f[k] < 0 || f[k] >= nv)
        throw error(errc::invalid_argument, "mesh: face index out of range");
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
      throw error(errc::degenerate, "mesh: face with repeated vertex");
    Vec3 c = cross(pos[f[1]] - pos[f[0]], pos[f[2]] - pos[f[0]]);
    if (0.5 * norm(c) < 1e-12) throw error(errc::degenerate, "mesh: near-zero face area");
  }
}

double mesh_signed_volume(const std::vector<Vec3>& verts,
                          const std::vector<std::array<int, 3>>& faces) {
  double vol = 0;
  for (const auto& f : faces)
    vol += dot(verts[f[0]], cross(verts[f[1]], verts[f[2]]));
  return vol / 6.0;
}

int connected_components(const std::vector<std::array<int, 3>>& faces, int n_verts,
                         std::vector<int>* labels) {
  std::vector<int> parent(n_verts);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<int> used(n_verts, 0);

  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const auto& f : faces) {
    used[f[0]] = used[f[1]] = used[f[2]] = 1;
    int a = find(f[0]);
    int b = find(f[1]);
    int c = find(f[2]);
    if (b != a) parent[b] = a;
    if (c != find(a)) parent[find(c)] = find(a);
  }
  std::unordered_map<int, int> root_label;
  int n = 0;
  std::vector<int> lab(n_verts, -1);
  for (int i = 0; i < n_verts; i++) {
    if (!used[i]) continue;
    int r = find(i);
    auto it = root_label.find(r);
    if (it == root_label.end()) it = root_label.emplace(r, n++).first;
    lab[i] = it->second;
  }
  if (labels) *labels = std::move(lab);
  return n;
}

std::vector<std::pair<int, int>> build_edges(const std::vector<std::array<int, 3>>& faces) {
  std::vector<std::pair<int, int>> edges;
  std::unordered_map<uint64_t, int> seen;
  seen.reserve(faces.size() * 2);
  for (const auto& f : faces) {
    for (int k = 0; k < 3; k++) {
      int a = f[k], b = f[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      uint64_t key = edge_key(a, b);
      if (seen.emplace(key, static_cast<int>(edges.size())).second)
        edges.emplace_back(a, b);
    }
  }
  return edges;
}

double mean_edge_length(const std::vector<Vec3>& verts,
                        const std::vector<std::pair<int, int>>& edges) {
  if (edges.empty()) throw error(errc::empty_shape, "mean_edge_length: no edges");
  double sum = 0;
  for (const auto& [a, b] : edges) sum += norm(verts[a] - verts[b]);
  return sum / static_cast<double>(edges.size());
}

VertexNormals vertex_normals(const std::vector<Vec3>& verts,
                             const std::vector<std::array<int, 3>>& faces) {
  VertexNormals vn;
  std::vector<Vec3> acc(verts.size(), Vec3{});
  for (const auto& f : faces) {
    Vec3 c = cross(verts[f[1]] - verts[f[0]], verts[f[2]] - verts[f[0]]);
    acc[f[0]] += c;
    acc[f[1]] += c;
    acc[f[2]] += c;
  }
  vn.n.resize(verts.size());
  vn.inv_len.resize(verts.size());
  for (size_t i = 0; i < verts.size(); i++) {
    double len = norm(acc[i]);
    if (len < 1e-20)
      throw error(errc::degenerate, "vertex_normals: degenerate normal at vertex " +
                                        std::to_string(i));
    vn.inv_len[i] = 1.0 / len;
    vn.n[i] = acc[i] * vn.inv_len[i];
  }
  return vn;
}

void vertex_normals_backward(const std::vector<Vec3>& verts,
                             const std::vector<std::array<int, 3>>& faces,
                             const VertexNormals& vn, const std::vector<Vec3>& adj_n,
                             std::vector<Vec3>& adj_verts) {
  // n = m/|m|  =>  adj_m = (I - n n^T) adj_n / |m|
  std::vector<Vec3> adj_m(verts.size());
  for (size_t i = 0; i < verts.size(); i++) {
    const Vec3& n = vn.n[i];
    adj_m[i] = (adj_n[i] - n * dot(n, adj_n[i])) * vn.inv_len[i];
  }
  for (const auto& f : faces) {
    Vec3 u = verts[f[1]] - verts[f[0]];
    Vec3 v = verts[f[2]] - verts[f[0]];
    Vec3 adj_c = adj_m[f[0]] + adj_m[f[1]] + adj_m[f[2]];
    Vec3 adj_u = cross(v, adj_c);
    Vec3 adj_v = cross(adj_c, u);
    adj_verts[f[0]] -= adj_u + adj_v;
    adj_verts[f[1]] += adj_u;
    adj_verts[f[2]] += adj_v;
  }
}

LaplacianCache build_laplacian_cache(const std::vector<std::array<int, 3>>& faces, int n_verts) {
  LaplacianCache cache;
  cache.n_verts = n_verts;
  std::unordered_map<uint64_t, int> index;
  index.reserve(faces.size() * 2);
  for (const auto& f : faces) {
    for (int k = 0; k < 3; k++) {
      int a = f[k], b = f[(k + 1) % 3], o = f[(k + 2) % 3];
      uint64_t key = edge_key(a, b);
      auto it = index.find(key);
      if (it == index.end()) {
        LaplacianCache::Edge e;
        e.a = std::min(a, b);
        e.b = std::max(a, b);
        e.opp[0] = o;
        e.opp[1] = -1;
        e.n_opp = 1;
        it = index.emplace(key, static_cast<int>(cache.edges.size())).first;
        cache.edges.push_back(e);
      } else {
        LaplacianCache::Edge& e = cache.edges[it->second];
        if (e.n_opp < 2) e.opp[e.n_opp] = o;
        e.n_opp++;
      }
    }
  }
  std::vector<int> counts(n_verts, 0);
  for (const auto& e : cache.edges) {
    counts[e.a]++;
    counts[e.b]++;
  }
  cache.row_start.assign(n_verts + 1, 0);
  for (int i = 0; i < n_verts; i++) cache.row_start[i + 1] = cache.row_start[i] + counts[i];
  cache.row_entries.resize(cache.row_start[n_verts]);
  std::vector<int> fill(cache.row_start.begin(), cache.row_start.end() - 1);
  for (size_t ei = 0; ei < cache.edges.size(); ei++) {
    const auto& e = cache.edges[ei];
    cache.row_entries[fill[e.a]++] = {e.b, static_cast<int>(ei)};
    cache.row_entries[fill[e.b]++] = {e.a, static_cast<int>(ei)};
  }
  return cache;
}

namespace {

constexpr double kCotClamp = 1e4;
constexpr double kRowSumEps = 1e-9;

struct CotTerm {
  double cot;
  bool clamped;
};

CotTerm cot_at(const Vec3& a, const Vec3& b) {
  Vec3 c = cross(a, b);
  double n = norm(c);
  double d = dot(a, b);
  if (n < 1e-30) return {d >= 0 ? kCotClamp : -kCotClamp, true};
  double cot = d / n;
  if (cot > kCotClamp) return {kCotClamp, true};
  if (cot < -kCotClamp) return {-kCotClamp, true};
  return {cot, false};
}

double edge_weight(const std::vector<Vec3>& verts, const LaplacianCache::Edge& e) {
  double w = 0;
  int n = std::min(e.n_opp, 2);
  for (int k = 0; k < n; k++) {
    int o = e.opp[k];
    w += cot_at(verts[e.a] - verts[o], verts[e.b] - verts[o]).cot;
  }
  return w;
}

}  // namespace

std::vector<Vec3> cotangent_laplacian(const std::vector<Vec3>& verts,
                                      const LaplacianCache& cache) {
  std::vector<double> w(cache.edges.size());
  for (size_t ei = 0; ei < cache.edges.size(); ei++) w[ei] = edge_weight(verts, cache.edges[ei]);

  std::vector<Vec3> out(cache.n_verts, Vec3{});
  for (int i = 0; i < cache.n_verts; i++) {
    double wsum = 0;
    Vec3 acc{};
    for (int r = cache.row_start[i]; r < cache.row_start[i + 1]; r++) {
      auto [j, ei] = cache.row_entries[r];
      wsum += w[ei];
      acc += (verts[j] - verts[i]) * w[ei];
    }
    if (std::abs(wsum) < kRowSumEps) continue;
    out[i] = acc / wsum;
  }
  return out;
}

void cotangent_laplacian_backward(const std::vector<Vec3>& verts, const LaplacianCache& cache,
                                  const std::vector<Vec3>& adj_out,
                                  std::vector<Vec3>& adj_verts) {
  std::vector<double> w(cache.edges.size());
  for (size_t ei = 0; ei < cache.edges.size(); ei++) w[ei] = edge_weight(verts, cache.edges[ei]);

  std::vector<double> wsum(cache.n_verts, 0);
  std::vector<Vec3> out(cache.n_verts, Vec3{});
  for (int i = 0; i < cache.n_verts; i++) {
    Vec3 acc{};
    for (int r = cache.row_start[i]; r < cache.row_start[i + 1]; r++) {
      auto [j, ei] = cache.row_entries[r];
      wsum[i] += w[ei];
      acc += (verts[j] - verts[i]) * w[ei];
    }
    if (std::abs(wsum[i]) >= kRowSumEps) out[i] = acc / wsum[i];
  }

  std::vector<double> adj_w(cache.edges.size(), 0.0);
  for (int i = 0; i < cache.n_verts; i++) {
    if (std::abs(wsum[i]) < kRowSumEps) continue;
    const Vec3& g = adj_out[i];
    double inv = 1.0 / wsum[i];
    for (int r = cache.row_start[i]; r < cache.row_start[i + 1]; r++) {
      auto [j, ei] = cache.row_entries[r];
      double wn = w[ei] * inv;
      adj_verts[j] += g * wn;
      adj_verts[i] -= g * wn;
      adj_w[ei] += dot(g, (verts[j] - verts[i] - out[i]) * inv);
    }
  }

  for (size_t ei = 0; ei < cache.edges.size(); ei++) {
    if (adj_w[ei] == 0.0) continue;
    const auto& e = cache.edges[ei];
    int n = std::min(e.n_opp, 2);
    for (int k = 0; k < n; k++) {
      int o = e.opp[k];
      Vec3 a = verts[e.a] - verts[o];
      Vec3 b = verts[e.b] - verts[o];
      CotTerm term = cot_at(a, b);
      if (term.clamped) continue;
      Vec3 c = cross(a, b);
      double nl = norm(c);
      double d = dot(a, b);
      Vec3 grad_a = b / nl - cross(b, c) * (d / (nl * nl * nl));
      Vec3 grad_b = a / nl - cross(c, a) * (d / (nl * nl * nl));
      adj_verts[e.a] += grad_a * adj_w[ei];
      adj_verts[e.b] += grad_b * adj_w[ei];
      adj_verts[o] -= (grad_a + grad_b) * adj_w[ei];
    }
  }
}

}  // namespace ds
