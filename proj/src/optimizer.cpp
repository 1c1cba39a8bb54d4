#include "dstereo/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>

#include "json.hpp"

#include "dstereo/topology.hpp"

namespace fs = std::filesystem;

namespace ds {

double blur_schedule(long iter, const OptimConfig& cfg) {
  double u = static_cast<double>(iter) / static_cast<double>(cfg.total_iters);
  return cfg.blur_start * std::pow(cfg.blur_end / cfg.blur_start, u);
}

double cosine_lr(long iter, long period, double lr0, double lr_min) {
  if (period <= 0) throw error(errc::invalid_argument, "cosine_lr: period must be positive");
  double u = static_cast<double>(iter % period) / static_cast<double>(period);
  return lr_min + (lr0 - lr_min) * (1.0 + std::cos(kPi * u)) / 2.0;
}

namespace {

bool finite3(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

constexpr double kMinHalfFov = 0.05;  // keep f well inside (0, pi/2)

}  // namespace

bool clip_and_step(TriMesh& mesh, std::vector<Camera>& cameras, const ParamTape& grads,
                   OptimState& state, const OptimConfig& cfg, double lr, bool update_cameras,
                   bool update_f) {
  size_t nv = mesh.offsets.size();
  size_t nc = cameras.size();
  if (grads.d_offsets.size() != nv || state.vel_offsets.size() != nv)
    throw error(errc::invalid_argument, "clip_and_step: offset buffers do not match the mesh");
  if (update_cameras && (grads.d_cams.size() != nc || state.vel_cams.size() != nc))
    throw error(errc::invalid_argument, "clip_and_step: camera buffers do not match the cameras");

  for (const Vec3& g : grads.d_offsets)
    if (!finite3(g)) return false;
  if (update_cameras)
    for (const CameraGrad& g : grads.d_cams)
      if (!finite3(g.r) || !finite3(g.t) || (update_f && !std::isfinite(g.f))) return false;

  auto block_scale = [&](double sq_norm) {
    double n = std::sqrt(sq_norm);
    return n > cfg.clip_max_norm ? cfg.clip_max_norm / n : 1.0;
  };

  double off_sq = 0;
  for (const Vec3& g : grads.d_offsets) off_sq += norm2(g);
  double s_off = block_scale(off_sq);
  for (size_t i = 0; i < nv; i++) {
    Vec3& v = state.vel_offsets[i];
    v = cfg.momentum * v + s_off * grads.d_offsets[i];
    mesh.offsets[i] -= lr * v;
  }

  if (update_cameras) {
    double r_sq = 0, t_sq = 0, f_sq = 0;
    for (const CameraGrad& g : grads.d_cams) {
      r_sq += norm2(g.r);
      t_sq += norm2(g.t);
      f_sq += g.f * g.f;
    }
    double s_r = block_scale(r_sq), s_t = block_scale(t_sq), s_f = block_scale(f_sq);
    for (size_t c = 0; c < nc; c++) {
      CameraGrad& v = state.vel_cams[c];
      v.r = cfg.momentum * v.r + s_r * grads.d_cams[c].r;
      v.t = cfg.momentum * v.t + s_t * grads.d_cams[c].t;
      cameras[c].r -= lr * v.r;
      cameras[c].t -= lr * v.t;
      if (update_f) {
        v.f = cfg.momentum * v.f + s_f * grads.d_cams[c].f;
        cameras[c].f = clampd(cameras[c].f - lr * v.f, kMinHalfFov, kPi / 2 - kMinHalfFov);
      }
    }
  }
  return true;
}

namespace {

void validate_config(const OptimConfig& cfg, const Scene& scene) {
  auto bad = [](const std::string& m) { throw error(errc::invalid_argument, "optimize: " + m); };
  if (cfg.total_iters <= 0) bad("total_iters must be positive");
  if (cfg.warmup_iters < 0 || cfg.warmup_iters >= cfg.total_iters)
    bad("warmup_iters must lie in [0, total_iters)");
  if (!(cfg.lr0 > 0)) bad("lr0 must be positive");
  if (!(cfg.momentum >= 0 && cfg.momentum < 1)) bad("momentum must lie in [0, 1)");
  if (cfg.restart_period < 0) bad("restart_period must be non-negative");
  if (!(cfg.clip_max_norm > 0)) bad("clip_max_norm must be positive");
  if (cfg.faces_per_pixel < 1 || cfg.faces_per_pixel > kMaxFacesPerPixel)
    bad("faces_per_pixel must lie in [1, " + std::to_string(kMaxFacesPerPixel) + "]");
  if (!(cfg.blur_start > 0) || !(cfg.blur_end > 0)) bad("blur radii must be positive");
  if (cfg.blur_end > cfg.blur_start) bad("blur_end must not exceed blur_start");
  if (cfg.voxel_resolution < 5) bad("voxel_resolution must be at least 5");
  for (long s : cfg.subdivide_at)
    if (s < 0 || s >= cfg.warmup_iters) bad("subdivide_at entries must fall inside the warmup");
  for (double f : cfg.remesh_fracs) {
    if (!(f > 0 && f < 1)) bad("remesh_fracs must lie in (0, 1)");
    if (std::lround(f * static_cast<double>(cfg.total_iters)) <= cfg.warmup_iters)
      bad("remesh fractions must land after the warmup");
  }
  const LossWeights& w = cfg.weights;
  for (double x : {w.tex_l1, w.tex_pyramid, w.mask_mse, w.mask_bidt, w.edge, w.laplacian})
    if (!(x >= 0)) bad("loss weights must be non-negative");
  if (cfg.checkpoint_every < 0) bad("checkpoint_every must be non-negative");
  if (cfg.checkpoint_every > 0 && cfg.checkpoint_dir.empty())
    bad("checkpoint_dir is required when checkpoint_every is set");
  if (scene.n_views() < 2)
    throw error(errc::bad_scene, "optimize: scene needs at least two views");
  if (scene.images.size() != scene.masks.size() ||
      static_cast<int>(scene.images.size()) != scene.n_views())
    throw error(errc::bad_scene, "optimize: scene image/mask/camera counts disagree");
}

const char* phase_name(Phase p) { return p == Phase::warmup ? "warmup" : "main"; }

void write_checkpoint(const std::string& dir, long iter, const TriMesh& mesh,
                      const std::vector<Camera>& cams, const OptimState& st,
                      const LossReport& rep) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw error(errc::io, "cannot create checkpoint directory " + dir + ": " + ec.message());
  char stem[64];
  std::snprintf(stem, sizeof(stem), "ckpt_%06ld", iter);
  fs::path root(dir);
  write_ply((root / (std::string(stem) + ".ply")).string(), mesh, {});
  save_cameras_json((root / (std::string(stem) + "_cameras.json")).string(), cams);
  nlohmann::json j = {
      {"iteration", iter},
      {"phase", phase_name(st.phase)},
      {"lr", st.lr},
      {"blur", st.blur},
      {"skipped_steps", st.skipped_steps},
      {"loss",
       {{"tex_l1", rep.tex_l1},
        {"tex_pyramid", rep.tex_pyramid},
        {"mask_mse", rep.mask_mse},
        {"mask_bidt", rep.mask_bidt},
        {"edge", rep.edge},
        {"laplacian", rep.laplacian},
        {"total", rep.total}}},
  };
  std::string sp = (root / (std::string(stem) + "_state.json")).string();
  std::ofstream out(sp);
  if (!out) throw error(errc::io, "cannot write checkpoint state: " + sp);
  out << j.dump(2) << "\n";
  if (!out.good()) throw error(errc::io, "write failed: " + sp);
}

}  // namespace

OptimResult optimize(const Scene& scene, const OptimConfig& cfg, const ProgressFn& progress) {
  validate_config(cfg, scene);
  int n = scene.n_views();
  long period = cfg.restart_period > 0 ? cfg.restart_period
                                       : std::max(1L, cfg.total_iters / 5);
  std::vector<long> remesh_iters;
  for (double f : cfg.remesh_fracs)
    remesh_iters.push_back(std::lround(f * static_cast<double>(cfg.total_iters)));
  std::sort(remesh_iters.begin(), remesh_iters.end());

  TriMesh mesh = make_icosphere(0, 0.5);
  std::vector<Camera> cameras = scene.cameras;
  GeomRegs regs = make_geom_regs(mesh);
  RasterConfig rcfg;
  rcfg.width = scene.width;
  rcfg.height = scene.height;
  rcfg.faces_per_pixel = cfg.faces_per_pixel;
  TextureConfig tcfg;
  GradConfig gcfg;
  ParamTape tape(mesh.n_verts(), n);
  OptimState st;
  st.vel_offsets.assign(mesh.n_verts(), Vec3{});
  st.vel_cams.assign(n, CameraGrad{});
  st.history.reserve(cfg.total_iters);

  auto reset_buffers = [&]() {
    regs = make_geom_regs(mesh);
    tape.resize(mesh.n_verts(), n);
    st.vel_offsets.assign(mesh.n_verts(), Vec3{});
    st.vel_cams.assign(n, CameraGrad{});
  };

  long diverged_streak = 0;
  LossReport last_good{};
  for (long iter = 0; iter < cfg.total_iters; iter++) {
    st.iteration = iter;
    st.phase = iter < cfg.warmup_iters ? Phase::warmup : Phase::main;

    if (st.phase == Phase::warmup &&
        std::find(cfg.subdivide_at.begin(), cfg.subdivide_at.end(), iter) !=
            cfg.subdivide_at.end()) {
      mesh = subdivide(mesh);
      reset_buffers();
    }
    if (std::find(remesh_iters.begin(), remesh_iters.end(), iter) != remesh_iters.end()) {
      mesh = remesh(mesh, scene.masks, cameras, cfg.voxel_resolution);
      reset_buffers();
      for (const Vec3& o : mesh.offsets)
        if (norm2(o) != 0.0) throw error(errc::internal, "remesh left nonzero offsets");
      for (const Vec3& v : st.vel_offsets)
        if (norm2(v) != 0.0) throw error(errc::internal, "remesh left nonzero velocities");
    }

    st.blur = blur_schedule(iter, cfg);
    st.lr = cosine_lr(iter, period, cfg.lr0);
    rcfg.blur_radius = st.blur;
    tape.zero_grad();
    tape.iteration = iter;

    LossReport rep{};
    bool ok = true;
    try {
      rep = forward_backward(mesh, cameras, scene.images, scene.masks, regs, rcfg, tcfg,
                             cfg.weights, st.phase, gcfg, tape);
    } catch (const error& e) {
      if (e.code != errc::diverged) throw;
      ok = false;
      st.skipped_steps++;
      diverged_streak++;
      if (diverged_streak > 100)
        throw error(errc::diverged,
                    "optimize: non-finite loss for more than 100 consecutive iterations "
                    "(last at iteration " +
                        std::to_string(iter) + "): " + e.what());
      rep = last_good;
    }
    if (ok) {
      diverged_streak = 0;
      last_good = rep;
      bool cams_free = st.phase == Phase::main;
      if (!clip_and_step(mesh, cameras, tape, st, cfg, st.lr, cams_free, cams_free))
        st.skipped_steps++;
    }
    st.history.push_back(rep);

    if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0)
      write_checkpoint(cfg.checkpoint_dir, iter, mesh, cameras, st, rep);
    if (progress) {
      ProgressInfo info;
      info.iter = iter;
      info.report = &rep;
      info.lr = st.lr;
      info.blur = st.blur;
      info.phase = st.phase;
      info.mesh = &mesh;
      info.cameras = &cameras;
      progress(info);
    }
  }

  OptimResult res;
  res.mesh = std::move(mesh);
  res.cameras = std::move(cameras);
  res.history = std::move(st.history);
  res.skipped_steps = st.skipped_steps;
  return res;
}

void save_loss_history_csv(const std::string& path, const std::vector<LossReport>& history) {
  std::ofstream out(path);
  if (!out) throw error(errc::io, "cannot write loss history: " + path);
  out << "iter,tex_l1,tex_pyramid,mask_mse,mask_bidt,edge,laplacian,total\n";
  out << std::setprecision(17);
  for (size_t i = 0; i < history.size(); i++) {
    const LossReport& r = history[i];
    out << i << ',' << r.tex_l1 << ',' << r.tex_pyramid << ',' << r.mask_mse << ','
        << r.mask_bidt << ',' << r.edge << ',' << r.laplacian << ',' << r.total << '\n';
  }
  if (!out.good()) throw error(errc::io, "write failed: " + path);
}

}  // namespace ds
