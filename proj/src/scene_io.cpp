#include "dstereo/scene_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <utility>

#include "json.hpp"

#include "dstereo/image_io.hpp"
#include "dstereo/rasterizer.hpp"
#include "dstereo/texture.hpp"
#include "dstereo/topology.hpp"

namespace fs = std::filesystem;

namespace ds {

namespace {

std::string view_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%03d.png", i);
  return buf;
}

std::string mask_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "mask_%03d.png", i);
  return buf;
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw error(errc::io, "cannot create directory " + p.string() + ": " + ec.message());
}

Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::runtime_error("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

Camera apply_similarity(const Camera& cam, const Similarity& xf) {
  Mat3 Rn = rotation_matrix(cam.r) * xf.R.transposed();
  Camera out;
  out.r = axis_angle_from_matrix(Rn);
  out.t = xf.s * cam.t - Rn * xf.t;
  out.f = cam.f;
  return out;
}

std::vector<Camera> load_cameras_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error(errc::io, "cannot open cameras file: " + path);
  try {
    nlohmann::json j;
    in >> j;
    if (!j.is_array()) throw std::runtime_error("expected a top-level array");
    std::vector<Camera> cams;
    cams.reserve(j.size());
    for (const auto& e : j) {
      Camera c;
      c.r = vec3_from_json(e.at("r"));
      c.t = vec3_from_json(e.at("t"));
      c.f = e.at("f").get<double>();
      cams.push_back(c);
    }
    return cams;
  } catch (const std::exception& e) {
    throw error(errc::io, "malformed cameras file " + path + ": " + e.what());
  }
}

void save_cameras_json(const std::string& path, const std::vector<Camera>& cams) {
  nlohmann::json j = nlohmann::json::array();
  for (const Camera& c : cams)
    j.push_back({{"r", {c.r.x, c.r.y, c.r.z}},
                 {"t", {c.t.x, c.t.y, c.t.z}},
                 {"f", c.f}});
  std::ofstream out(path);
  if (!out) throw error(errc::io, "cannot write cameras file: " + path);
  out << j.dump(2) << "\n";
  if (!out.good()) throw error(errc::io, "write failed: " + path);
}

namespace {

// AABB of the occupied voxel centers, padded out to the cell boundaries.
AABB occupied_bounds(const VoxelGrid& g) {
  AABB bb;
  for (int z = 0; z < g.nz; z++)
    for (int y = 0; y < g.ny; y++)
      for (int x = 0; x < g.nx; x++)
        if (g.at(x, y, z)) bb.expand(g.center(x, y, z));
  if (!bb.empty()) {
    Vec3 h = g.voxel_size() * 0.5;
    bb.lo -= h;
    bb.hi += h;
  }
  return bb;
}

bool touches_boundary(const VoxelGrid& g) {
  for (int z = 0; z < g.nz; z++)
    for (int y = 0; y < g.ny; y++)
      for (int x = 0; x < g.nx; x++)
        if ((x == 0 || y == 0 || z == 0 || x == g.nx - 1 || y == g.ny - 1 || z == g.nz - 1) &&
            g.at(x, y, z))
          return true;
  return false;
}

VoxelGrid full_grid(const Vec3& lo, const Vec3& hi, int nx, int ny, int nz) {
  VoxelGrid g;
  g.nx = nx;
  g.ny = ny;
  g.nz = nz;
  g.lo = lo;
  g.hi = hi;
  g.occ.assign(static_cast<size_t>(nx) * ny * nz, 1);
  return g;
}

}  // namespace

Similarity scene_normalization(const std::vector<ImageGray>& masks,
                               const std::vector<Camera>& cameras) {
  if (cameras.empty() || masks.size() != cameras.size())
    throw error(errc::invalid_argument, "scene_normalization: need one mask per camera");
  int n = static_cast<int>(cameras.size());

  std::vector<Vec3> centers(n), dirs(n);
  for (int i = 0; i < n; i++) {
    centers[i] = camera_center(cameras[i]);
    dirs[i] = camera_forward(cameras[i]);
  }

  // Target point: least squares closest to the optical axes, with a mean
  // look-ahead fallback when the axes are (near) parallel.
  Vec3 mean_c{}, mean_d{};
  double spread = 0;
  int pairs = 0;
  for (int i = 0; i < n; i++) {
    mean_c += centers[i] / n;
    mean_d += dirs[i] / n;
    for (int j = i + 1; j < n; j++) {
      spread += norm(centers[i] - centers[j]);
      pairs++;
    }
  }
  spread = pairs > 0 ? spread / pairs : 0.0;
  if (spread <= 0) spread = 1.0;
  Vec3 target = mean_c + spread * mean_d;
  Mat3 A;
  Vec3 b{};
  for (int i = 0; i < n; i++) {
    const Vec3& d = dirs[i];
    for (int r = 0; r < 3; r++)
      for (int c = 0; c < 3; c++) A(r, c) += (r == c ? 1.0 : 0.0) - d[r] * d[c];
    b += centers[i] - dot(centers[i], d) * d;
  }
  try {
    Vec3 p = solve3(A, b);
    double far = 0;
    for (int i = 0; i < n; i++) far = std::max(far, norm(centers[i] - mean_c));
    if (norm(p - mean_c) <= 50.0 * std::max(far, spread)) target = p;
  } catch (const error&) {
    // parallel axes: keep the fallback target
  }

  // Carve a full grid around the target, growing while the hull clips.
  double reach = 0;
  for (int i = 0; i < n; i++) reach = std::max(reach, norm(centers[i] - target));
  if (reach <= 0) reach = 1.0;
  double half = 1.5 * reach;
  VoxelGrid carved;
  for (int attempt = 0;; attempt++) {
    Vec3 h{half, half, half};
    carved = carve(full_grid(target - h, target + h, 48, 48, 48), masks, cameras);
    if (carved.count() == 0)
      throw error(errc::bad_scene,
                  "scene normalization: the masks carve away every voxel (empty visual hull)");
    if (attempt == 3 || !touches_boundary(carved)) break;
    half *= 2;
  }

  // Refine on a tight box around the coarse hull.
  AABB bb = occupied_bounds(carved);
  VoxelGrid fine = carve(full_grid(bb.lo, bb.hi, 64, 64, 64), masks, cameras);
  AABB hull = fine.count() > 0 ? occupied_bounds(fine) : bb;

  Similarity norm;
  norm.s = 1.0 / hull.diagonal();
  norm.t = hull.center() * (-norm.s);
  return norm;
}

Scene load_scene(const std::string& dir) {
  fs::path root(dir);
  if (!fs::is_directory(root)) throw error(errc::io, "scene directory not found: " + dir);
  std::string cam_path = (root / "cameras.json").string();
  if (!fs::exists(cam_path)) throw error(errc::io, "missing cameras file: " + cam_path);
  std::vector<Camera> cams = load_cameras_json(cam_path);
  int n = static_cast<int>(cams.size());
  if (n < 2)
    throw error(errc::bad_scene, "scene needs at least two views, got " + std::to_string(n));
  if (n > kMaxViews - 1)
    throw error(errc::bad_scene, "scene has " + std::to_string(n) + " views; at most " +
                                     std::to_string(kMaxViews - 1) + " are supported");
  for (int i = 0; i < n; i++)
    if (!(cams[i].f > 0 && cams[i].f < kPi / 2))
      throw error(errc::bad_scene,
                  "camera " + std::to_string(i) + ": half-fov out of (0, pi/2)");

  Scene sc;
  for (int i = 0; i < n; i++) {
    std::string vp = (root / view_name(i)).string();
    std::string mp = (root / mask_name(i)).string();
    if (!fs::exists(vp)) throw error(errc::io, "missing image file: " + vp);
    if (!fs::exists(mp)) throw error(errc::io, "missing mask file: " + mp);
    ImageRGB img = read_png_rgb(vp);
    ImageGray mask = read_png_gray(mp);
    if (i == 0) {
      sc.width = img.width;
      sc.height = img.height;
    }
    auto size_str = [](int w, int h) { return std::to_string(w) + "x" + std::to_string(h); };
    if (img.width != sc.width || img.height != sc.height)
      throw error(errc::bad_scene, "size mismatch: " + vp + " is " +
                                       size_str(img.width, img.height) + ", expected " +
                                       size_str(sc.width, sc.height));
    if (mask.width != sc.width || mask.height != sc.height)
      throw error(errc::bad_scene, "size mismatch: " + mp + " is " +
                                       size_str(mask.width, mask.height) + ", expected " +
                                       size_str(sc.width, sc.height));
    for (double& v : mask.data) v = v >= 0.5 ? 1.0 : 0.0;
    sc.images.push_back(std::move(img));
    sc.masks.push_back(std::move(mask));
  }
  if (fs::exists(root / view_name(n)) || fs::exists(root / mask_name(n)))
    throw error(errc::bad_scene, "cameras.json lists " + std::to_string(n) +
                                     " cameras but a file for view " + std::to_string(n) +
                                     " exists");

  sc.norm = scene_normalization(sc.masks, cams);
  sc.cameras.resize(n);
  for (int i = 0; i < n; i++) sc.cameras[i] = apply_similarity(cams[i], sc.norm);
  return sc;
}

TriMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error(errc::io, "cannot open mesh file: " + path);
  TriMesh m;
  std::string line, tag, tok;
  int lineno = 0;
  auto fail = [&](const std::string& what) {
    throw error(errc::io, path + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    lineno++;
    std::istringstream ss(line);
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x >> v.y >> v.z)) fail("malformed vertex line");
      m.base_vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      int nv = m.n_verts();
      while (ss >> tok) {
        std::string head = tok.substr(0, tok.find('/'));
        char* end = nullptr;
        long v = std::strtol(head.c_str(), &end, 10);
        if (end == head.c_str() || *end != '\0') fail("malformed face index '" + tok + "'");
        long ri = v > 0 ? v - 1 : nv + v;
        if (v == 0 || ri < 0 || ri >= nv) fail("face index out of range: '" + tok + "'");
        idx.push_back(static_cast<int>(ri));
      }
      if (idx.size() < 3) fail("face with fewer than 3 vertices");
      for (size_t k = 2; k < idx.size(); k++)
        m.faces.push_back({idx[0], idx[k - 1], idx[k]});
    }
    // all other line types ignored
  }
  m.offsets.assign(m.base_vertices.size(), Vec3{});
  if (m.faces.empty()) throw error(errc::empty_shape, "no faces in mesh file: " + path);
  return m;
}

void write_obj(const std::string& path, const TriMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw error(errc::io, "cannot write mesh file: " + path);
  out << std::setprecision(17);
  for (const Vec3& v : mesh.positions()) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& f : mesh.faces)
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out.good()) throw error(errc::io, "write failed: " + path);
}

void write_ply(const std::string& path, const TriMesh& mesh, const std::vector<Vec3>& colors) {
  bool with_colors = !colors.empty();
  if (with_colors && colors.size() != mesh.base_vertices.size())
    throw error(errc::invalid_argument, "write_ply: one color per vertex required");
  std::ofstream out(path);
  if (!out) throw error(errc::io, "cannot write mesh file: " + path);
  std::vector<Vec3> pos = mesh.positions();
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << pos.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (with_colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << mesh.faces.size() << "\n";
  out << "property list uchar int vertex_indices\nend_header\n";
  out << std::setprecision(9);
  auto quant = [](double linear) {
    return static_cast<int>(std::lround(clampd(linear_to_srgb(linear), 0.0, 1.0) * 255.0));
  };
  for (size_t i = 0; i < pos.size(); i++) {
    out << pos[i].x << ' ' << pos[i].y << ' ' << pos[i].z;
    if (with_colors)
      out << ' ' << quant(colors[i].x) << ' ' << quant(colors[i].y) << ' ' << quant(colors[i].z);
    out << '\n';
  }
  for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  if (!out.good()) throw error(errc::io, "write failed: " + path);
}

MeshWithColors read_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error(errc::io, "cannot open mesh file: " + path);
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw error(errc::io, "unexpected end of ply file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };
  next_line();
  if (line != "ply") throw error(errc::io, "not a ply file: " + path);
  long nv = -1, nf = -1;
  std::vector<std::string> vprops;
  std::string cur_element;
  while (true) {
    next_line();
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "comment" || tag.empty()) continue;
    if (tag == "format") {
      std::string kind;
      ss >> kind;
      if (kind != "ascii") throw error(errc::io, "only ascii ply is supported: " + path);
    } else if (tag == "element") {
      long cnt = -1;
      ss >> cur_element >> cnt;
      if (cnt < 0) throw error(errc::io, "malformed ply element line: " + path);
      if (cur_element == "vertex") nv = cnt;
      else if (cur_element == "face") nf = cnt;
    } else if (tag == "property") {
      if (cur_element == "vertex") {
        std::string type, name;
        ss >> type >> name;
        if (type == "list")
          throw error(errc::io, "list properties on vertices are not supported: " + path);
        vprops.push_back(name);
      }
    } else if (tag == "end_header") {
      break;
    }
  }
  if (nv < 0 || nf < 0) throw error(errc::io, "ply missing vertex or face element: " + path);
  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  for (size_t k = 0; k < vprops.size(); k++) {
    const std::string& s = vprops[k];
    int i = static_cast<int>(k);
    if (s == "x") ix = i;
    else if (s == "y") iy = i;
    else if (s == "z") iz = i;
    else if (s == "red") ir = i;
    else if (s == "green") ig = i;
    else if (s == "blue") ib = i;
  }
  if (ix < 0 || iy < 0 || iz < 0)
    throw error(errc::io, "ply missing x/y/z vertex properties: " + path);
  MeshWithColors out;
  out.has_colors = ir >= 0 && ig >= 0 && ib >= 0;
  std::vector<double> vals(vprops.size());
  for (long i = 0; i < nv; i++) {
    next_line();
    std::istringstream ss(line);
    for (double& v : vals)
      if (!(ss >> v)) throw error(errc::io, "malformed ply vertex line: " + path);
    out.mesh.base_vertices.push_back({vals[ix], vals[iy], vals[iz]});
    if (out.has_colors)
      out.colors.push_back({srgb_to_linear(vals[ir] / 255.0), srgb_to_linear(vals[ig] / 255.0),
                            srgb_to_linear(vals[ib] / 255.0)});
  }
  for (long i = 0; i < nf; i++) {
    next_line();
    std::istringstream ss(line);
    long k = 0;
    if (!(ss >> k) || k < 3) throw error(errc::io, "malformed ply face line: " + path);
    std::vector<long> idx(k);
    for (long& v : idx) {
      if (!(ss >> v) || v < 0 || v >= nv)
        throw error(errc::io, "ply face index out of range: " + path);
    }
    for (long j = 2; j < k; j++)
      out.mesh.faces.push_back({static_cast<int>(idx[0]), static_cast<int>(idx[j - 1]),
                                static_cast<int>(idx[j])});
  }
  out.mesh.offsets.assign(out.mesh.base_vertices.size(), Vec3{});
  if (out.mesh.faces.empty()) throw error(errc::empty_shape, "no faces in mesh file: " + path);
  return out;
}

MeshWithColors load_mesh(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".obj") {
    MeshWithColors m;
    m.mesh = read_obj(path);
    return m;
  }
  if (ext == ".ply") return read_ply(path);
  throw error(errc::invalid_argument, "unsupported mesh format (expected .obj or .ply): " + path);
}

namespace {

enum class TexKind { checker, gradient, vertex };

TexKind parse_texture(const std::string& s) {
  if (s == "checkerboard" || s == "checker") return TexKind::checker;
  if (s == "gradient") return TexKind::gradient;
  if (s == "vertex") return TexKind::vertex;
  throw error(errc::invalid_argument,
              "unknown texture spec '" + s + "' (expected checkerboard, gradient, or vertex)");
}

Camera orbit_camera(double az, double elev, double dist, double f, const Vec3& look_at) {
  Vec3 off{dist * std::sin(az) * std::cos(elev), dist * std::sin(elev),
           -dist * std::cos(az) * std::cos(elev)};
  Vec3 c = look_at + off;
  Vec3 fwd = normalized(-off);
  Vec3 side = cross(Vec3{0, 1, 0}, fwd);
  Vec3 right = norm(side) > 1e-9 ? normalized(side) : Vec3{1, 0, 0};
  Vec3 up = cross(fwd, right);
  Mat3 R;
  for (int j = 0; j < 3; j++) {
    R(0, j) = right[j];
    R(1, j) = up[j];
    R(2, j) = fwd[j];
  }
  return Camera{axis_angle_from_matrix(R), -(R * c), f};
}

// Crisp supersampled render of the textured ground-truth mesh plus its mask.
void render_gt_view(const TriMesh& mesh, const std::vector<Vec3>& pos, const Camera& cam,
                    TexKind tex, const std::vector<Vec3>& vcolors, const AABB& bb, int size,
                    int ss, ImageRGB& out_img, ImageGray& out_mask) {
  int W = size * ss, H = size * ss;
  RasterConfig rc;
  rc.width = W;
  rc.height = H;
  rc.faces_per_pixel = 4;
  rc.blur_radius = 1e-12;
  FragmentBuffer fb = rasterize(mesh, cam, rc);
  DepthMap dm = depth_map(fb, rc);
  ImageRGB big(W, H, 1.0);
  ImageGray bigm(W, H, 0.0);
  Vec3 ext = bb.extent();
  double cell = norm(ext) / 8.0;
  for (int y = 0; y < H; y++) {
    for (int x = 0; x < W; x++) {
      int slot = dm.frag_at(x, y);
      if (slot < 0) continue;
      const Fragment& fr = fb.frags[slot];
      const auto& f = mesh.faces[fr.face];
      Vec3 p = fr.bary[0] * pos[f[0]] + fr.bary[1] * pos[f[1]] + fr.bary[2] * pos[f[2]];
      Vec3 col;
      switch (tex) {
        case TexKind::checker: {
          long long par = 0;
          for (int a = 0; a < 3; a++)
            par += static_cast<long long>(std::floor((p[a] - bb.lo[a]) / cell + 0.1234567));
          col = (par & 1) ? Vec3{0.10, 0.45, 0.85} : Vec3{0.85, 0.15, 0.10};
          break;
        }
        case TexKind::gradient:
          for (int a = 0; a < 3; a++)
            col[a] = ext[a] > 0 ? clampd((p[a] - bb.lo[a]) / ext[a], 0.0, 1.0) : 0.5;
          break;
        case TexKind::vertex:
          col = fr.bary[0] * vcolors[f[0]] + fr.bary[1] * vcolors[f[1]] +
                fr.bary[2] * vcolors[f[2]];
          break;
      }
      set_rgb(big, x, y, col);
      bigm.at(x, y) = 1.0;
    }
  }
  out_img = ImageRGB(size, size);
  out_mask = ImageGray(size, size);
  double inv = 1.0 / (ss * ss);
  for (int y = 0; y < size; y++) {
    for (int x = 0; x < size; x++) {
      Vec3 acc{};
      double macc = 0;
      for (int dy = 0; dy < ss; dy++)
        for (int dx = 0; dx < ss; dx++) {
          acc += rgb_at(big, x * ss + dx, y * ss + dy);
          macc += bigm.at(x * ss + dx, y * ss + dy);
        }
      set_rgb(out_img, x, y, acc * inv);
      out_mask.at(x, y) = macc * inv;
    }
  }
}

}  // namespace

void synthesize_scene(const std::string& mesh_path, const SynthConfig& cfg,
                      const std::string& out_dir) {
  TexKind tex = parse_texture(cfg.texture);
  if (cfg.n_views < 1)
    throw error(errc::invalid_argument, "synthesize_scene: n_views must be at least 1");
  if (cfg.size < 8) throw error(errc::invalid_argument, "synthesize_scene: image size too small");
  if (cfg.supersample < 1)
    throw error(errc::invalid_argument, "synthesize_scene: supersample must be at least 1");
  if (!(cfg.fit > 0 && cfg.fit < 1))
    throw error(errc::invalid_argument, "synthesize_scene: fit must be in (0, 1)");
  if (cfg.noise_deg < 0)
    throw error(errc::invalid_argument, "synthesize_scene: noise_deg must be non-negative");

  MeshWithColors gm = load_mesh(mesh_path);
  if (tex == TexKind::vertex && !gm.has_colors)
    throw error(errc::invalid_argument,
                "texture spec 'vertex' needs per-vertex colors: " + mesh_path);
  std::vector<Vec3> pos = gm.mesh.positions();
  AABB bb;
  for (const Vec3& p : pos) bb.expand(p);
  Vec3 c0 = bb.center();
  double rad = 0;
  for (const Vec3& p : pos) rad = std::max(rad, norm(p - c0));
  if (!(rad > 0)) throw error(errc::degenerate, "ground-truth mesh has zero extent: " + mesh_path);

  Rng rng(cfg.seed);
  std::vector<Camera> cams(cfg.n_views);
  for (int i = 0; i < cfg.n_views; i++) {
    double ez = rng.uniform(0, 2 * kPi);
    double ey = rng.uniform(0, 2 * kPi);
    double ex = rng.uniform(0, 2 * kPi);
    Mat3 R = rotation_matrix({0, 0, ez}) * rotation_matrix({0, ey, 0}) *
             rotation_matrix({ex, 0, 0});
    double f = deg_to_rad(rng.uniform(20.0, 50.0)) * 0.5;
    double dist = rad / (cfg.fit * std::tan(f));
    Vec3 fwd{R(2, 0), R(2, 1), R(2, 2)};  // world direction of view +z
    Vec3 c = c0 - dist * fwd;
    cams[i] = Camera{axis_angle_from_matrix(R), -(R * c), f};
  }

  fs::path root(out_dir);
  make_dir(root);
  make_dir(root / "gt");
  for (int i = 0; i < cfg.n_views; i++) {
    ImageRGB img;
    ImageGray mask;
    render_gt_view(gm.mesh, pos, cams[i], tex, gm.colors, bb, cfg.size, cfg.supersample, img,
                   mask);
    write_png_rgb((root / view_name(i)).string(), img);
    write_png_gray((root / mask_name(i)).string(), mask);
  }
  save_cameras_json((root / "gt" / "cameras.json").string(), cams);
  write_obj((root / "gt" / "mesh.obj").string(), gm.mesh);
  if (gm.has_colors) write_ply((root / "gt" / "mesh.ply").string(), gm.mesh, gm.colors);

  std::vector<Camera> noisy = cams;
  if (cfg.noise_deg > 0)
    for (Camera& c : noisy) c = perturb_rotation(c, cfg.noise_deg, rng);
  save_cameras_json((root / "cameras.json").string(), noisy);
}

void export_result(const TriMesh& mesh, const std::vector<Camera>& cameras, const Scene& scene,
                   const std::string& out_dir) {
  int n = scene.n_views();
  if (static_cast<int>(cameras.size()) != n)
    throw error(errc::invalid_argument, "export_result: camera count does not match the scene");
  fs::path root(out_dir);
  make_dir(root);
  make_dir(root / "renders");

  Similarity denorm = scene.norm.inverse();
  TriMesh orig = mesh;
  orig.base_vertices = mesh.positions();
  for (Vec3& v : orig.base_vertices) v = denorm.apply(v);
  orig.offsets.assign(orig.base_vertices.size(), Vec3{});
  orig.on_sphere = false;
  write_obj((root / "mesh.obj").string(), orig);

  std::vector<Camera> orig_cams(n);
  for (int i = 0; i < n; i++) orig_cams[i] = apply_similarity(cameras[i], denorm);
  save_cameras_json((root / "cameras.json").string(), orig_cams);

  // Bake colors in the normalized frame, where cameras and images agree.
  RasterConfig rc;
  rc.width = scene.width;
  rc.height = scene.height;
  TextureConfig tc;
  std::vector<DepthMap> depths;
  depths.reserve(n);
  for (int i = 0; i < n; i++) depths.push_back(depth_map(rasterize(mesh, cameras[i], rc), rc));
  std::vector<SourceView> views(n);
  for (int i = 0; i < n; i++) views[i] = SourceView{&scene.images[i], &depths[i].z, cameras[i]};
  std::vector<Vec3> colors = bake_vertex_colors(mesh, views, tc);
  write_ply((root / "mesh_colored.ply").string(), orig, colors);

  // Two fresh orbital viewpoints, textured from all input views.
  double dist = 0, f = 0;
  for (int i = 0; i < n; i++) {
    dist += norm(camera_center(cameras[i])) / n;
    f += cameras[i].f / n;
  }
  AABB bb = mesh_bounds(mesh);
  for (int k = 0; k < 2; k++) {
    Camera nov = orbit_camera(2 * kPi * (k == 0 ? 0.15 : 0.60), deg_to_rad(25.0), dist, f,
                              bb.center());
    std::vector<Camera> cams2 = cameras;
    cams2.push_back(nov);
    std::vector<ImageRGB> imgs2 = scene.images;
    imgs2.emplace_back(scene.width, scene.height, 0.0);
    ImageRGB render = render_textured(mesh, cams2, imgs2, n, rc, tc, true, {1, 1, 1});
    char buf[32];
    std::snprintf(buf, sizeof(buf), "novel_%02d.png", k);
    write_png_rgb((root / "renders" / buf).string(), render);
  }
}

}  // namespace ds
