#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dstereo/image_io.hpp"
#include "dstereo/scene_io.hpp"
#include "dstereo/topology.hpp"

using namespace ds;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "dstereo_scene_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

template <typename Fn>
bool throws_code(Fn&& fn, errc want, std::string* msg = nullptr) {
  try {
    fn();
  } catch (const error& e) {
    if (msg) *msg = e.what();
    return e.code == want;
  } catch (...) {
    return false;
  }
  return false;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TriMesh make_box(const Vec3& lo, const Vec3& hi) {
  TriMesh m;
  for (int c = 0; c < 8; c++)
    m.base_vertices.push_back(
        {c & 1 ? hi.x : lo.x, c & 2 ? hi.y : lo.y, c & 4 ? hi.z : lo.z});
  const int F[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                       {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
  for (const auto& q : F) {
    m.faces.push_back({q[0], q[1], q[2]});
    m.faces.push_back({q[0], q[2], q[3]});
  }
  m.offsets.assign(8, Vec3{});
  return m;
}

Camera look_at_camera(double az, double elev, double dist, double f) {
  Vec3 c{dist * std::sin(az) * std::cos(elev), dist * std::sin(elev),
         -dist * std::cos(az) * std::cos(elev)};
  Vec3 fwd = normalized(-c);
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

ImageGray disc_mask(int wh, double cx, double cy, double r) {
  ImageGray m(wh, wh, 0.0);
  for (int y = 0; y < wh; y++)
    for (int x = 0; x < wh; x++) {
      double nx = pixel_to_ndc(x, wh) - cx;
      double ny = pixel_to_ndc(y, wh) - cy;
      m.at(x, y) = nx * nx + ny * ny <= r * r ? 1.0 : 0.0;
    }
  return m;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  REQUIRE(bool(out));
  out << s;
}

double mask_sum(const ImageGray& m) {
  double s = 0;
  for (double v : m.data) s += v;
  return s;
}

}  // namespace

TEST_CASE("cameras json round trip and errors") {
  fs::path dir = tmpdir("cams");
  std::vector<Camera> cams = {
      Camera{{0.1, -0.7, 1.3}, {2.5, -0.25, 4.0}, 0.31},
      Camera{{kPi / 3, 0.0, -2.1}, {-1e-7, 3.333333333333333, 0.125}, 0.4999},
      Camera{{0, 0, 0}, {0, 0, 7}, deg_to_rad(45) / 2},
  };
  std::string path = (dir / "cameras.json").string();
  save_cameras_json(path, cams);
  std::vector<Camera> back = load_cameras_json(path);
  REQUIRE(back.size() == cams.size());
  for (size_t i = 0; i < cams.size(); i++) {
    for (int a = 0; a < 3; a++) {
      CHECK(back[i].r[a] == cams[i].r[a]);
      CHECK(back[i].t[a] == cams[i].t[a]);
    }
    CHECK(back[i].f == cams[i].f);
  }

  save_cameras_json(path, {});
  CHECK(load_cameras_json(path).empty());

  write_text(dir / "garbage.json", "this is not json");
  CHECK(throws_code([&] { load_cameras_json((dir / "garbage.json").string()); }, errc::io));
  write_text(dir / "object.json", "{\"r\": [0,0,0]}");
  CHECK(throws_code([&] { load_cameras_json((dir / "object.json").string()); }, errc::io));
  write_text(dir / "missing_t.json", "[{\"r\": [0,0,0], \"f\": 0.4}]");
  CHECK(throws_code([&] { load_cameras_json((dir / "missing_t.json").string()); }, errc::io));
  write_text(dir / "short_r.json", "[{\"r\": [0,0], \"t\": [0,0,0], \"f\": 0.4}]");
  CHECK(throws_code([&] { load_cameras_json((dir / "short_r.json").string()); }, errc::io));
  CHECK(throws_code([&] { load_cameras_json((dir / "nope.json").string()); }, errc::io));
}

TEST_CASE("obj writes and parses back") {
  fs::path dir = tmpdir("obj");
  TriMesh m = make_icosphere(2, 0.7);
  Rng rng(42);
  for (Vec3& o : m.offsets) o = {rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01),
                                 rng.uniform(-0.01, 0.01)};
  std::string path = (dir / "sphere.obj").string();
  write_obj(path, m);
  TriMesh back = read_obj(path);
  std::vector<Vec3> want = m.positions();
  REQUIRE(back.n_verts() == m.n_verts());
  REQUIRE(back.n_faces() == m.n_faces());
  double maxd = 0;
  for (int i = 0; i < back.n_verts(); i++) maxd = std::max(maxd, norm(back.base_vertices[i] - want[i]));
  CHECK(maxd < 1e-12);
  for (int i = 0; i < back.n_faces(); i++) CHECK(back.faces[i] == m.faces[i]);
  for (const Vec3& o : back.offsets) CHECK(norm(o) == 0.0);

  // compound/negative indices, polygons, ignored line types
  write_text(dir / "quad.obj",
             "# header\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\n"
             "f 1/1/1 2//1 3\nf 1 3 -1\ng side\nf 1 2 3 4\n");
  TriMesh q = read_obj((dir / "quad.obj").string());
  REQUIRE(q.n_verts() == 4);
  REQUIRE(q.n_faces() == 4);
  CHECK(q.faces[0] == std::array<int, 3>{0, 1, 2});
  CHECK(q.faces[1] == std::array<int, 3>{0, 2, 3});
  CHECK(q.faces[2] == std::array<int, 3>{0, 1, 2});
  CHECK(q.faces[3] == std::array<int, 3>{0, 2, 3});

  std::string msg;
  write_text(dir / "short_face.obj", "v 0 0 0\nv 1 0 0\nf 1 2\n");
  CHECK(throws_code([&] { read_obj((dir / "short_face.obj").string()); }, errc::io, &msg));
  CHECK(msg.find("short_face.obj:3") != std::string::npos);
  write_text(dir / "bad_vertex.obj", "v 0 0\nf 1 1 1\n");
  CHECK(throws_code([&] { read_obj((dir / "bad_vertex.obj").string()); }, errc::io));
  write_text(dir / "bad_index.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 99\n");
  CHECK(throws_code([&] { read_obj((dir / "bad_index.obj").string()); }, errc::io));
  write_text(dir / "zero_index.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n");
  CHECK(throws_code([&] { read_obj((dir / "zero_index.obj").string()); }, errc::io));
  write_text(dir / "no_faces.obj", "v 0 0 0\nv 1 0 0\n");
  CHECK(throws_code([&] { read_obj((dir / "no_faces.obj").string()); }, errc::empty_shape));
  CHECK(throws_code([&] { read_obj((dir / "absent.obj").string()); }, errc::io));
}

TEST_CASE("ply round trip keeps counts and colors") {
  fs::path dir = tmpdir("ply");
  TriMesh m = make_icosphere(1, 0.35);
  Rng rng(5);
  std::vector<Vec3> colors(m.n_verts());
  for (Vec3& c : colors) c = {rng.uniform(), rng.uniform(), rng.uniform()};
  std::string path = (dir / "colored.ply").string();
  write_ply(path, m, colors);
  MeshWithColors back = read_ply(path);
  REQUIRE(back.mesh.n_verts() == m.n_verts());
  REQUIRE(back.mesh.n_faces() == m.n_faces());
  REQUIRE(back.has_colors);
  for (int i = 0; i < m.n_verts(); i++) {
    CHECK(norm(back.mesh.base_vertices[i] - m.base_vertices[i]) < 1e-5);
    for (int a = 0; a < 3; a++) {
      double got = linear_to_srgb(back.colors[size_t(i)][a]);
      double want = linear_to_srgb(colors[size_t(i)][a]);
      CHECK(std::abs(got - want) <= 1.0 / 255.0 + 1e-9);
    }
  }
  for (int i = 0; i < m.n_faces(); i++) CHECK(back.mesh.faces[i] == m.faces[i]);

  std::string plain = (dir / "plain.ply").string();
  write_ply(plain, m, {});
  MeshWithColors p = read_ply(plain);
  CHECK_FALSE(p.has_colors);
  CHECK(p.mesh.n_verts() == m.n_verts());
  CHECK(p.mesh.n_faces() == m.n_faces());

  CHECK(throws_code([&] { write_ply(path, m, std::vector<Vec3>(3)); }, errc::invalid_argument));
  write_text(dir / "bad.ply", "not a ply\n");
  CHECK(throws_code([&] { read_ply((dir / "bad.ply").string()); }, errc::io));
  write_text(dir / "binary.ply", "ply\nformat binary_little_endian 1.0\nend_header\n");
  CHECK(throws_code([&] { read_ply((dir / "binary.ply").string()); }, errc::io));
}

TEST_CASE("load_mesh dispatches on extension") {
  fs::path dir = tmpdir("dispatch");
  TriMesh m = make_box({-1, -1, -1}, {1, 1, 1});
  write_obj((dir / "box.obj").string(), m);
  write_ply((dir / "box.ply").string(), m, {});
  CHECK(load_mesh((dir / "box.obj").string()).mesh.n_faces() == 12);
  CHECK(load_mesh((dir / "box.ply").string()).mesh.n_faces() == 12);
  write_text(dir / "box.txt", "v 0 0 0\n");
  CHECK(throws_code([&] { load_mesh((dir / "box.txt").string()); }, errc::invalid_argument));
}

TEST_CASE("apply_similarity preserves projections") {
  Camera cam{{0.3, -0.2, 0.5}, {0.1, 0.2, 2.0}, 0.4};
  Similarity xf;
  xf.s = 1.7;
  xf.R = rotation_matrix({0.2, 0.4, -0.3});
  xf.t = {0.5, -1.0, 0.25};
  Camera cam2 = apply_similarity(cam, xf);
  Rng rng(9);
  for (int k = 0; k < 5; k++) {
    Vec3 p{rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
    Projected a = project(cam, p);
    Projected b = project(cam2, xf.apply(p));
    CHECK(std::abs(a.ndc.x - b.ndc.x) < 1e-12);
    CHECK(std::abs(a.ndc.y - b.ndc.y) < 1e-12);
    CHECK(std::abs(b.z / a.z - xf.s) < 1e-12);
  }
  Camera cam3 = apply_similarity(cam2, xf.inverse());
  for (int k = 0; k < 5; k++) {
    Vec3 p{rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
    Projected a = project(cam, p);
    Projected b = project(cam3, p);
    CHECK(std::abs(a.ndc.x - b.ndc.x) < 1e-9);
    CHECK(std::abs(a.ndc.y - b.ndc.y) < 1e-9);
    CHECK(std::abs(b.z - a.z) < 1e-9);
  }
}

TEST_CASE("synthesize writes a consistent checkerboard dataset") {
  fs::path dir = tmpdir("synth_box");
  TriMesh box = make_box({-0.2, -0.4, -0.2}, {0.6, 0.2, 0.8});
  std::string mesh_path = (dir / "box.obj").string();
  write_obj(mesh_path, box);
  SynthConfig cfg;
  cfg.n_views = 8;
  cfg.noise_deg = 2.0;
  cfg.size = 64;
  cfg.seed = 7;
  fs::path out = dir / "scene";
  synthesize_scene(mesh_path, cfg, out.string());

  for (int i = 0; i < 8; i++) {
    char vb[32], mb[32];
    std::snprintf(vb, sizeof(vb), "view_%03d.png", i);
    std::snprintf(mb, sizeof(mb), "mask_%03d.png", i);
    CHECK(fs::exists(out / vb));
    CHECK(fs::exists(out / mb));
  }
  CHECK_FALSE(fs::exists(out / "view_008.png"));
  CHECK(fs::exists(out / "cameras.json"));
  CHECK(fs::exists(out / "gt" / "cameras.json"));
  CHECK(fs::exists(out / "gt" / "mesh.obj"));
  TriMesh gt_back = read_obj((out / "gt" / "mesh.obj").string());
  CHECK(gt_back.n_verts() == 8);
  CHECK(gt_back.n_faces() == 12);

  std::vector<Camera> gt = load_cameras_json((out / "gt" / "cameras.json").string());
  std::vector<Camera> noisy = load_cameras_json((out / "cameras.json").string());
  REQUIRE(gt.size() == 8);
  REQUIRE(noisy.size() == 8);
  Vec3 c0{0.2, -0.1, 0.3};  // box center
  double max_rot_diff = 0;
  for (int i = 0; i < 8; i++) {
    CHECK(gt[i].f >= deg_to_rad(20.0) / 2 - 1e-12);
    CHECK(gt[i].f <= deg_to_rad(50.0) / 2 + 1e-12);
    Vec3 C = camera_center(gt[i]);
    Vec3 fwd = camera_forward(gt[i]);
    double off_axis = norm(cross(fwd, c0 - C)) / norm(c0 - C);
    CHECK(off_axis < 1e-9);
    CHECK(dot(fwd, c0 - C) > 0);  // looking toward, not away
    CHECK(norm(noisy[i].t - gt[i].t) == 0.0);
    CHECK(noisy[i].f == gt[i].f);
    Mat3 D = rotation_matrix(noisy[i].r) * rotation_matrix(gt[i].r).transposed();
    max_rot_diff = std::max(max_rot_diff, std::abs(rad_to_deg(norm(axis_angle_from_matrix(D)))));
  }
  CHECK(max_rot_diff > 1e-4);
  CHECK(max_rot_diff < 20.0);  // sigma 2 degrees

  for (int i = 0; i < 8; i++) {
    char vb[32], mb[32];
    std::snprintf(vb, sizeof(vb), "view_%03d.png", i);
    std::snprintf(mb, sizeof(mb), "mask_%03d.png", i);
    ImageGray mask = read_png_gray((out / mb).string());
    ImageRGB view = read_png_rgb((out / vb).string());
    REQUIRE(mask.width == 64);
    REQUIRE(view.width == 64);
    double s = mask_sum(mask);
    CHECK(s > 40.0);              // object visible
    CHECK(s < 0.9 * 64.0 * 64.0); // and not the whole frame
    int reddish = 0, bluish = 0;
    for (int y = 0; y < 64; y++)
      for (int x = 0; x < 64; x++) {
        if (mask.at(x, y) < 0.999) continue;
        Vec3 c = rgb_at(view, x, y);
        if (c.x > c.z + 0.2) reddish++;
        if (c.z > c.x + 0.2) bluish++;
      }
    CHECK(reddish > 10);
    CHECK(bluish > 10);
  }
}

TEST_CASE("synthesize with zero noise copies the gt cameras") {
  fs::path dir = tmpdir("synth_nonoise");
  TriMesh box = make_box({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});
  write_obj((dir / "box.obj").string(), box);
  SynthConfig cfg;
  cfg.n_views = 4;
  cfg.noise_deg = 0.0;
  cfg.size = 32;
  cfg.seed = 3;
  synthesize_scene((dir / "box.obj").string(), cfg, (dir / "scene").string());
  CHECK(slurp(dir / "scene" / "cameras.json") == slurp(dir / "scene" / "gt" / "cameras.json"));
}

TEST_CASE("synthesize is deterministic in the seed") {
  fs::path dir = tmpdir("synth_det");
  TriMesh box = make_box({-0.5, -0.3, -0.4}, {0.5, 0.3, 0.4});
  write_obj((dir / "box.obj").string(), box);
  SynthConfig cfg;
  cfg.n_views = 4;
  cfg.noise_deg = 3.0;
  cfg.size = 32;
  cfg.seed = 11;
  synthesize_scene((dir / "box.obj").string(), cfg, (dir / "a").string());
  synthesize_scene((dir / "box.obj").string(), cfg, (dir / "b").string());
  for (int i = 0; i < 4; i++) {
    char vb[32], mb[32];
    std::snprintf(vb, sizeof(vb), "view_%03d.png", i);
    std::snprintf(mb, sizeof(mb), "mask_%03d.png", i);
    CHECK(slurp(dir / "a" / vb) == slurp(dir / "b" / vb));
    CHECK(slurp(dir / "a" / mb) == slurp(dir / "b" / mb));
  }
  CHECK(slurp(dir / "a" / "cameras.json") == slurp(dir / "b" / "cameras.json"));
  CHECK(slurp(dir / "a" / "gt" / "cameras.json") == slurp(dir / "b" / "gt" / "cameras.json"));

  cfg.seed = 12;
  synthesize_scene((dir / "box.obj").string(), cfg, (dir / "c").string());
  CHECK(slurp(dir / "a" / "cameras.json") != slurp(dir / "c" / "cameras.json"));
}

TEST_CASE("load_scene normalizes a synthesized scene") {
  fs::path dir = tmpdir("load_scene");
  TriMesh sphere = make_icosphere(2, 0.55);
  for (Vec3& v : sphere.base_vertices) v += Vec3{0.3, -0.2, 0.5};
  write_obj((dir / "sphere.obj").string(), sphere);
  SynthConfig cfg;
  cfg.n_views = 6;
  cfg.noise_deg = 0.0;
  cfg.size = 48;
  cfg.seed = 21;
  fs::path sdir = dir / "scene";
  synthesize_scene((dir / "sphere.obj").string(), cfg, sdir.string());

  Scene sc = load_scene(sdir.string());
  CHECK(sc.n_views() == 6);
  CHECK(sc.width == 48);
  CHECK(sc.height == 48);
  REQUIRE(sc.images.size() == 6);
  REQUIRE(sc.masks.size() == 6);
  for (const ImageGray& m : sc.masks)
    for (double v : m.data) CHECK((v == 0.0 || v == 1.0));
  for (const ImageRGB& im : sc.images)
    for (double v : im.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }

  // norm round trip
  Rng rng(77);
  for (int k = 0; k < 10; k++) {
    Vec3 p = rng.normal_vec3();
    Vec3 back = sc.norm.inverse().apply(sc.norm.apply(p));
    CHECK(norm(back - p) < 1e-12 * (1.0 + norm(p)));
  }

  // the normalized ground truth sits near the origin with diagonal near 1
  AABB nb;
  for (const Vec3& v : sphere.base_vertices) nb.expand(sc.norm.apply(v));
  CHECK(nb.diagonal() > 0.6);
  CHECK(nb.diagonal() < 1.06);
  CHECK(norm(nb.center()) < 0.25);

  // normalized cameras see the same picture as the originals
  std::vector<Camera> gt = load_cameras_json((sdir / "gt" / "cameras.json").string());
  Vec3 c0{0.3, -0.2, 0.5};
  for (int i = 0; i < 6; i++) {
    Projected a = project(gt[i], c0);
    Projected b = project(sc.cameras[i], sc.norm.apply(c0));
    CHECK(std::abs(a.ndc.x - b.ndc.x) < 1e-9);
    CHECK(std::abs(a.ndc.y - b.ndc.y) < 1e-9);
    CHECK(std::abs(b.z - sc.norm.s * a.z) < 1e-9);
  }

  // re-deriving the normalization in the normalized frame is near identity
  Similarity again = scene_normalization(sc.masks, sc.cameras);
  CHECK(std::abs(again.s - 1.0) < 0.12);
  CHECK(norm(again.t) < 0.08);
}

TEST_CASE("load_scene rejects broken directories") {
  fs::path dir = tmpdir("load_errors");
  TriMesh box = make_box({-0.4, -0.4, -0.4}, {0.4, 0.4, 0.4});
  write_obj((dir / "box.obj").string(), box);
  SynthConfig cfg;
  cfg.n_views = 4;
  cfg.noise_deg = 0.0;
  cfg.size = 32;
  cfg.seed = 2;
  fs::path base = dir / "ok";
  synthesize_scene((dir / "box.obj").string(), cfg, base.string());
  auto clone = [&](const std::string& name) {
    fs::path p = dir / name;
    fs::copy(base, p, fs::copy_options::recursive);
    return p;
  };

  std::string msg;
  fs::path a = clone("missing_mask");
  fs::remove(a / "mask_002.png");
  CHECK(throws_code([&] { load_scene(a.string()); }, errc::io, &msg));
  CHECK(msg.find("mask_002") != std::string::npos);

  fs::path b = clone("missing_view");
  fs::remove(b / "view_001.png");
  CHECK(throws_code([&] { load_scene(b.string()); }, errc::io, &msg));
  CHECK(msg.find("view_001") != std::string::npos);

  fs::path c = clone("extra_view");
  fs::copy(c / "view_000.png", c / "view_004.png");
  fs::copy(c / "mask_000.png", c / "mask_004.png");
  CHECK(throws_code([&] { load_scene(c.string()); }, errc::bad_scene));

  fs::path d = clone("size_mismatch");
  write_png_gray((d / "mask_001.png").string(), ImageGray(16, 16, 1.0));
  CHECK(throws_code([&] { load_scene(d.string()); }, errc::bad_scene, &msg));
  CHECK(msg.find("mask_001") != std::string::npos);

  fs::path e = clone("bad_json");
  write_text(e / "cameras.json", "{{{");
  CHECK(throws_code([&] { load_scene(e.string()); }, errc::io));

  fs::path f = clone("one_camera");
  {
    std::vector<Camera> one = {load_cameras_json((base / "cameras.json").string())[0]};
    save_cameras_json((f / "cameras.json").string(), one);
  }
  CHECK(throws_code([&] { load_scene(f.string()); }, errc::bad_scene));

  fs::path g = clone("empty_masks");
  for (int i = 0; i < 4; i++) {
    char mb[32];
    std::snprintf(mb, sizeof(mb), "mask_%03d.png", i);
    write_png_gray((g / mb).string(), ImageGray(32, 32, 0.0));
  }
  CHECK(throws_code([&] { load_scene(g.string()); }, errc::bad_scene));

  fs::path h = clone("bad_fov");
  {
    std::vector<Camera> cams = load_cameras_json((h / "cameras.json").string());
    cams[1].f = 2.0;
    save_cameras_json((h / "cameras.json").string(), cams);
  }
  CHECK(throws_code([&] { load_scene(h.string()); }, errc::bad_scene));

  CHECK(throws_code([&] { load_scene((dir / "does_not_exist").string()); }, errc::io));
}

TEST_CASE("scene normalization matches an analytic hull") {
  int n = 6, wh = 64;
  std::vector<Camera> cams;
  std::vector<ImageGray> masks;
  for (int i = 0; i < n; i++) {
    double az = 2 * kPi * i / n;
    double elev = (i % 2 == 0) ? deg_to_rad(15) : deg_to_rad(-20);
    cams.push_back(look_at_camera(az, elev, 3.0, 0.35));
    masks.push_back(disc_mask(wh, 0, 0, 0.3));
  }
  Similarity nrm = scene_normalization(masks, cams);
  // Discs of NDC radius 0.3 seen from distance 3 with 1/tan(0.35) scale give
  // cones of world radius ~0.3 * 3 * tan(0.35) = 0.329 at the target; the
  // hull is a ball-ish solid of about that radius centered at the origin.
  double r = 0.3 * 3.0 * std::tan(0.35);
  double ball_diag = 2 * r * std::sqrt(3.0);
  CHECK(1.0 / nrm.s > 0.9 * ball_diag);
  CHECK(1.0 / nrm.s < 1.5 * ball_diag);
  CHECK(norm(nrm.t) < 0.08);

  std::vector<ImageGray> zero(n, ImageGray(wh, wh, 0.0));
  CHECK(throws_code([&] { scene_normalization(zero, cams); }, errc::bad_scene));
  CHECK(throws_code([&] { scene_normalization({}, {}); }, errc::invalid_argument));
}

TEST_CASE("export_result round trips through the original frame") {
  fs::path dir = tmpdir("export");
  TriMesh sphere = make_icosphere(2, 0.5);
  for (Vec3& v : sphere.base_vertices) v += Vec3{-0.1, 0.4, 0.2};
  write_obj((dir / "sphere.obj").string(), sphere);
  SynthConfig cfg;
  cfg.n_views = 5;
  cfg.noise_deg = 0.0;
  cfg.size = 48;
  cfg.seed = 33;
  fs::path sdir = dir / "scene";
  synthesize_scene((dir / "sphere.obj").string(), cfg, sdir.string());
  Scene sc = load_scene(sdir.string());

  TriMesh mesh_n = sphere;
  for (Vec3& v : mesh_n.base_vertices) v = sc.norm.apply(v);
  fs::path out = dir / "out";
  export_result(mesh_n, sc.cameras, sc, out.string());

  TriMesh back = read_obj((out / "mesh.obj").string());
  REQUIRE(back.n_verts() == sphere.n_verts());
  REQUIRE(back.n_faces() == sphere.n_faces());
  double maxd = 0;
  for (int i = 0; i < back.n_verts(); i++)
    maxd = std::max(maxd, norm(back.base_vertices[i] - sphere.base_vertices[i]));
  CHECK(maxd < 1e-9);

  std::vector<Camera> gt = load_cameras_json((sdir / "gt" / "cameras.json").string());
  std::vector<Camera> exported = load_cameras_json((out / "cameras.json").string());
  REQUIRE(exported.size() == gt.size());
  for (size_t i = 0; i < gt.size(); i++) {
    Mat3 D = rotation_matrix(exported[i].r) - rotation_matrix(gt[i].r);
    double fro = 0;
    for (int k = 0; k < 9; k++) fro += D.m[k] * D.m[k];
    CHECK(std::sqrt(fro) < 1e-9);
    CHECK(norm(exported[i].t - gt[i].t) < 1e-9);
    CHECK(std::abs(exported[i].f - gt[i].f) < 1e-12);
  }

  MeshWithColors ply = read_ply((out / "mesh_colored.ply").string());
  REQUIRE(ply.mesh.n_verts() == sphere.n_verts());
  REQUIRE(ply.has_colors);
  for (const Vec3& c : ply.colors)
    for (int a = 0; a < 3; a++) {
      CHECK(c[a] >= 0.0);
      CHECK(c[a] <= 1.0);
    }
  // exported ply vertices are in the original frame too
  double pd = 0;
  for (int i = 0; i < ply.mesh.n_verts(); i++)
    pd = std::max(pd, norm(ply.mesh.base_vertices[i] - sphere.base_vertices[i]));
  CHECK(pd < 1e-4);  // float precision

  for (int k = 0; k < 2; k++) {
    char nb[32];
    std::snprintf(nb, sizeof(nb), "novel_%02d.png", k);
    fs::path np = out / "renders" / nb;
    REQUIRE(fs::exists(np));
    CHECK(fs::file_size(np) > 0);
    ImageRGB img = read_png_rgb(np.string());
    REQUIRE(img.width == 48);
    int nonwhite = 0;
    for (int y = 0; y < img.height; y++)
      for (int x = 0; x < img.width; x++) {
        Vec3 c = rgb_at(img, x, y);
        if (c.x < 0.95 || c.y < 0.95 || c.z < 0.95) nonwhite++;
      }
    CHECK(nonwhite > img.width * img.height / 100);
  }

  CHECK(throws_code([&] { export_result(mesh_n, sc.cameras, sc, "/proc/nope/out"); },
                    errc::io));
}

TEST_CASE("synthesize gradient and vertex textures") {
  fs::path dir = tmpdir("synth_tex");
  TriMesh box = make_box({-0.5, -0.4, -0.3}, {0.5, 0.4, 0.3});
  write_obj((dir / "box.obj").string(), box);
  SynthConfig cfg;
  cfg.n_views = 3;
  cfg.noise_deg = 0.0;
  cfg.size = 32;
  cfg.seed = 19;

  synthesize_scene((dir / "box.obj").string(), cfg, (dir / "checker").string());
  cfg.texture = "gradient";
  synthesize_scene((dir / "box.obj").string(), cfg, (dir / "gradient").string());
  CHECK(slurp(dir / "checker" / "view_000.png") != slurp(dir / "gradient" / "view_000.png"));
  CHECK(slurp(dir / "checker" / "mask_000.png") == slurp(dir / "gradient" / "mask_000.png"));

  Vec3 solid{0.8, 0.2, 0.1};
  write_ply((dir / "red.ply").string(), box, std::vector<Vec3>(8, solid));
  cfg.texture = "vertex";
  synthesize_scene((dir / "red.ply").string(), cfg, (dir / "vertex").string());
  ImageRGB view = read_png_rgb((dir / "vertex" / "view_000.png").string());
  ImageGray mask = read_png_gray((dir / "vertex" / "mask_000.png").string());
  int inside = 0;
  double err = 0;
  for (int y = 0; y < 32; y++)
    for (int x = 0; x < 32; x++) {
      if (mask.at(x, y) < 0.999) continue;
      inside++;
      err += norm(rgb_at(view, x, y) - solid);
    }
  REQUIRE(inside > 20);
  CHECK(err / inside < 0.05);

  CHECK(throws_code(
      [&] { synthesize_scene((dir / "box.obj").string(), cfg, (dir / "v2").string()); },
      errc::invalid_argument));  // obj has no vertex colors
  cfg.texture = "bogus";
  CHECK(throws_code(
      [&] { synthesize_scene((dir / "box.obj").string(), cfg, (dir / "v3").string()); },
      errc::invalid_argument));
}
