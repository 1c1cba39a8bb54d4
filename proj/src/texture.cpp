#include "dstereo/texture.hpp"

#include <cmath>

namespace ds {

namespace {

struct DepthSample {
  double value = 0;
  int mode = -1;  // 0 bilinear, 1..4 nearest finite corner, -1 all background
  BilinearCoeffs bc;
};

DepthSample sample_depth(const ImageGray& depth, double px, double py, double background) {
  DepthSample s;
  s.bc = bilinear_coeffs(depth.width, depth.height, px, py);
  const double thresh = background * 0.5;
  double v[4] = {depth.at(s.bc.x0, s.bc.y0), depth.at(s.bc.x1, s.bc.y0),
                 depth.at(s.bc.x0, s.bc.y1), depth.at(s.bc.x1, s.bc.y1)};
  bool fin[4];
  int n_fin = 0;
  for (int k = 0; k < 4; k++) {
    fin[k] = v[k] < thresh;
    n_fin += fin[k];
  }
  if (n_fin == 4) {
    double wx[2] = {1 - s.bc.fx, s.bc.fx};
    double wy[2] = {1 - s.bc.fy, s.bc.fy};
    s.value = (v[0] * wx[0] + v[1] * wx[1]) * wy[0] + (v[2] * wx[0] + v[3] * wx[1]) * wy[1];
    s.mode = 0;
    return s;
  }
  if (n_fin == 0) {
    s.mode = -1;
    return s;
  }
  double cx[4] = {double(s.bc.x0), double(s.bc.x1), double(s.bc.x0), double(s.bc.x1)};
  double cy[4] = {double(s.bc.y0), double(s.bc.y0), double(s.bc.y1), double(s.bc.y1)};
  int best = -1;
  double best_d = 1e300;
  double qx = clampd(px, 0.0, double(depth.width - 1));
  double qy = clampd(py, 0.0, double(depth.height - 1));
  for (int k = 0; k < 4; k++) {
    if (!fin[k]) continue;
    double d = (cx[k] - qx) * (cx[k] - qx) + (cy[k] - qy) * (cy[k] - qy);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  s.value = v[best];
  s.mode = 1 + best;
  return s;
}

struct TexelCore {
  int n = 0;
  bool inc[kMaxViews];
  Vec2 ndc[kMaxViews];
  double z[kMaxViews];
  double px[kMaxViews], py[kMaxViews];
  DepthSample ds_[kMaxViews];
  double nz[kMaxViews];
  double sigma[kMaxViews], facing[kMaxViews], w_raw[kMaxViews];
  Vec3 col[kMaxViews];
  double wsum = 0, wmax = 0;
  bool fallback = false;
  Vec3 color{};
};

void texel_forward(const Vec3& x, const Vec3& normal, const std::vector<SourceView>& views,
                   const std::vector<ViewFrame>& frames, int exclude_view,
                   const TextureConfig& cfg, TexelCore& out) {
  out.n = static_cast<int>(views.size());
  if (out.n > kMaxViews) throw error(errc::invalid_argument, "texture: too many views");
  out.wsum = 0;
  out.wmax = 0;
  for (int i = 0; i < out.n; i++) {
    out.inc[i] = false;
    out.w_raw[i] = 0;
    if (i == exclude_view) continue;
    const SourceView& sv = views[i];
    const ViewFrame& fr = frames[i];
    Vec3 X = fr.R * x + sv.cam.t;
    if (X.z <= cfg.z_near) continue;
    double s = 1.0 / std::tan(sv.cam.f);
    Vec2 ndc{s * X.x / X.z, s * X.y / X.z};
    if (ndc.x < -1 || ndc.x > 1 || ndc.y < -1 || ndc.y > 1) continue;

    out.inc[i] = true;
    out.ndc[i] = ndc;
    out.z[i] = X.z;
    out.px[i] = ndc_to_pixel(ndc.x, sv.image->width);
    out.py[i] = ndc_to_pixel(ndc.y, sv.image->height);
    out.ds_[i] = sample_depth(*sv.depth, out.px[i], out.py[i], cfg.background_depth);
    if (out.ds_[i].mode < 0) {
      out.sigma[i] = 0;
    } else {
      double behind = std::max(0.0, X.z - out.ds_[i].value);
      out.sigma[i] = std::exp(-behind / cfg.visibility_temp);
    }
    out.nz[i] = (fr.R * normal).z;
    out.facing[i] = out.nz[i] < 0 ? std::exp(-(1.0 + out.nz[i]) / cfg.orientation_temp) : 0.0;
    out.w_raw[i] = out.sigma[i] * out.facing[i];
    out.wsum += out.w_raw[i];
    out.wmax = std::max(out.wmax, out.w_raw[i]);
    if (out.w_raw[i] > 0)
      sample_bilinear(*sv.image, out.px[i], out.py[i], &out.col[i].x);
    else
      out.col[i] = Vec3{};
  }
  out.fallback = out.wmax < 1e-12;
  if (out.fallback) {
    out.color = cfg.fallback_color;
    return;
  }
  Vec3 acc{};
  for (int i = 0; i < out.n; i++)
    if (out.w_raw[i] > 0) acc += out.col[i] * (out.w_raw[i] / out.wsum);
  out.color = acc;
}

}  // namespace

std::vector<ViewFrame> make_view_frames(const std::vector<SourceView>& views) {
  std::vector<ViewFrame> frames(views.size());
  for (size_t i = 0; i < views.size(); i++) {
    frames[i].R = rotation_matrix(views[i].cam.r);
    rotation_matrix_grad(views[i].cam.r, frames[i].dR);
  }
  return frames;
}

TexelQuery texture_eval(const Vec3& x, const Vec3& normal,
                        const std::vector<SourceView>& views, int exclude_view,
                        const TextureConfig& cfg) {
  auto frames = make_view_frames(views);
  TexelCore core;
  texel_forward(x, normal, views, frames, exclude_view, cfg, core);
  TexelQuery q;
  q.x = x;
  q.normal = normal;
  q.color = core.color;
  q.fallback = core.fallback;
  q.samples.resize(core.n);
  for (int i = 0; i < core.n; i++) {
    ViewSample& s = q.samples[i];
    s.view = i;
    s.included = core.inc[i];
    if (!core.inc[i]) continue;
    s.ndc = core.ndc[i];
    s.depth = core.z[i];
    s.depth_sample = core.ds_[i].mode < 0 ? cfg.background_depth : core.ds_[i].value;
    s.visibility = core.sigma[i];
    s.facing = core.facing[i];
    s.weight = core.fallback ? 0.0 : core.w_raw[i] / core.wsum;
    s.color = core.col[i];
  }
  return q;
}

Vec3 texture_eval_color(const Vec3& x, const Vec3& normal,
                        const std::vector<SourceView>& views,
                        const std::vector<ViewFrame>& frames, int exclude_view,
                        const TextureConfig& cfg, bool* fallback) {
  TexelCore core;
  texel_forward(x, normal, views, frames, exclude_view, cfg, core);
  if (fallback) *fallback = core.fallback;
  return core.color;
}

void texture_eval_backward(const Vec3& x, const Vec3& normal,
                           const std::vector<SourceView>& views,
                           const std::vector<ViewFrame>& frames, int exclude_view,
                           const TextureConfig& cfg, const Vec3& adj_color, Vec3& adj_x,
                           Vec3& adj_normal, CameraGrad* adj_cams,
                           ImageGray* const* adj_depth) {
  TexelCore core;
  texel_forward(x, normal, views, frames, exclude_view, cfg, core);
  if (core.fallback) return;

  double adj_wn[kMaxViews];
  double s_dot = 0;
  for (int i = 0; i < core.n; i++) {
    if (!core.inc[i] || core.w_raw[i] <= 0) continue;
    adj_wn[i] = dot(adj_color, core.col[i]);
    s_dot += adj_wn[i] * core.w_raw[i] / core.wsum;
  }

  for (int i = 0; i < core.n; i++) {
    if (!core.inc[i] || core.w_raw[i] <= 0) continue;
    const SourceView& sv = views[i];
    const ViewFrame& fr = frames[i];
    double wn = core.w_raw[i] / core.wsum;
    double adj_wraw = (adj_wn[i] - s_dot) / core.wsum;
    Vec3 adj_col = adj_color * wn;

    double adj_sigma = adj_wraw * core.facing[i];
    double adj_facing = adj_wraw * core.sigma[i];

    double adj_z = 0;
    double adj_px = 0, adj_py = 0;

    // color bilinear position path
    {
      double val[3], dpx[3], dpy[3];
      sample_bilinear(*sv.image, core.px[i], core.py[i], val, dpx, dpy);
      adj_px += adj_col.x * dpx[0] + adj_col.y * dpx[1] + adj_col.z * dpx[2];
      adj_py += adj_col.x * dpy[0] + adj_col.y * dpy[1] + adj_col.z * dpy[2];
    }

    // visibility: sigma = exp(-max(0, z - d)/tau)
    if (core.sigma[i] > 0 && core.z[i] > core.ds_[i].value) {
      double t = adj_sigma * core.sigma[i] / cfg.visibility_temp;
      adj_z += -t;
      double adj_d = t;
      const DepthSample& d = core.ds_[i];
      ImageGray* ad = adj_depth ? adj_depth[i] : nullptr;
      if (d.mode == 0) {
        double wx[2] = {1 - d.bc.fx, d.bc.fx};
        double wy[2] = {1 - d.bc.fy, d.bc.fy};
        if (ad) {
          ad->at(d.bc.x0, d.bc.y0) += adj_d * wx[0] * wy[0];
          ad->at(d.bc.x1, d.bc.y0) += adj_d * wx[1] * wy[0];
          ad->at(d.bc.x0, d.bc.y1) += adj_d * wx[0] * wy[1];
          ad->at(d.bc.x1, d.bc.y1) += adj_d * wx[1] * wy[1];
        }
        const ImageGray& dep = *sv.depth;
        double v00 = dep.at(d.bc.x0, d.bc.y0), v10 = dep.at(d.bc.x1, d.bc.y0);
        double v01 = dep.at(d.bc.x0, d.bc.y1), v11 = dep.at(d.bc.x1, d.bc.y1);
        if (!d.bc.clamped_x) adj_px += adj_d * ((v10 - v00) * wy[0] + (v11 - v01) * wy[1]);
        if (!d.bc.clamped_y) adj_py += adj_d * ((v01 - v00) * wx[0] + (v11 - v10) * wx[1]);
      } else if (d.mode > 0 && ad) {
        int k = d.mode - 1;
        int cx = (k % 2 == 0) ? d.bc.x0 : d.bc.x1;
        int cy = (k < 2) ? d.bc.y0 : d.bc.y1;
        ad->at(cx, cy) += adj_d;
      }
    }

    // facing: gamma = exp(-(1 + n_z)/tau) on the front-facing side
    if (core.facing[i] > 0) {
      double adj_nz = adj_facing * core.facing[i] * (-1.0 / cfg.orientation_temp);
      adj_normal += fr.R.row(2) * adj_nz;
      for (int k = 0; k < 3; k++) adj_cams[i].r[k] += adj_nz * (fr.dR[k] * normal).z;
    }

    Vec2 adj_ndc{adj_px * sv.image->width * 0.5, adj_py * sv.image->height * 0.5};
    project_backward(sv.cam, fr.R, fr.dR, x, adj_ndc, adj_z, adj_x, adj_cams[i]);
  }
}

ImageRGB render_textured(const TriMesh& mesh, const std::vector<Camera>& cameras,
                         const std::vector<ImageRGB>& images, int target,
                         const RasterConfig& rcfg, const TextureConfig& tcfg,
                         bool leave_one_out, const Vec3& background) {
  const int n = static_cast<int>(cameras.size());
  if (images.size() != cameras.size())
    throw error(errc::invalid_argument, "render_textured: image/camera count mismatch");
  if (target < 0 || target >= n)
    throw error(errc::invalid_argument, "render_textured: bad target view");

  auto verts = mesh.positions();
  auto vn = vertex_normals(verts, mesh.faces);

  std::vector<ImageGray> depths(n);
  for (int i = 0; i < n; i++) {
    FragmentBuffer fb = rasterize(mesh, cameras[i], rcfg);
    depths[i] = depth_map(fb, rcfg).z;
  }
  std::vector<SourceView> views(n);
  for (int i = 0; i < n; i++) views[i] = {&images[i], &depths[i], cameras[i]};
  auto frames = make_view_frames(views);

  FragmentBuffer fb = rasterize(mesh, cameras[target], rcfg);
  ImageRGB out(rcfg.width, rcfg.height);
  int exclude = leave_one_out ? target : -1;
  for (int y = 0; y < rcfg.height; y++) {
    for (int x = 0; x < rcfg.width; x++) {
      const Fragment* frags = fb.at(x, y);
      int cnt = fb.count(x, y);
      Vec3 colors[kMaxFacesPerPixel];
      for (int k = 0; k < cnt; k++) {
        const Fragment& f = frags[k];
        const auto& face = mesh.faces[f.face];
        Vec3 xw = verts[face[0]] * f.bary[0] + verts[face[1]] * f.bary[1] +
                  verts[face[2]] * f.bary[2];
        Vec3 nw = vn.n[face[0]] * f.bary[0] + vn.n[face[1]] * f.bary[1] +
                  vn.n[face[2]] * f.bary[2];
        double len = norm(nw);
        nw = len > 1e-12 ? nw / len : Vec3{0, 0, 1};
        colors[k] = texture_eval_color(xw, nw, views, frames, exclude, tcfg);
      }
      BlendResult br = softmax_blend(frags, cnt, colors, background, rcfg);
      set_rgb(out, x, y, br.rgb);
    }
  }
  return out;
}

std::vector<Vec3> bake_vertex_colors(const TriMesh& mesh, const std::vector<SourceView>& views,
                                     const TextureConfig& cfg) {
  auto verts = mesh.positions();
  auto vn = vertex_normals(verts, mesh.faces);
  auto frames = make_view_frames(views);
  std::vector<Vec3> colors(verts.size());
  for (size_t i = 0; i < verts.size(); i++)
    colors[i] = texture_eval_color(verts[i], vn.n[i], views, frames, -1, cfg);
  return colors;
}

}  // namespace ds
