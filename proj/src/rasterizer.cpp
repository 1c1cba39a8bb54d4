#include "dstereo/rasterizer.hpp"

#include <cmath>

namespace ds {

namespace {

inline Vec2 pd(const Vec2& w) { return {w.y, -w.x}; }  // cross2(a,b) = dot(a, pd(b))

inline bool frag_less(const Fragment& a, const Fragment& b) {
  if (a.z != b.z) return a.z < b.z;
  return a.face < b.face;
}

}  // namespace

ProjectedMesh project_mesh(const std::vector<Vec3>& verts, const Camera& cam, double z_near) {
  if (cam.f <= 0 || cam.f >= kPi / 2)
    throw error(errc::invalid_argument, "project_mesh: half-fov out of (0, pi/2)");
  Mat3 R = rotation_matrix(cam.r);
  double s = 1.0 / std::tan(cam.f);
  ProjectedMesh pm;
  pm.ndc.resize(verts.size());
  pm.z.resize(verts.size());
  pm.valid.resize(verts.size());
  for (size_t i = 0; i < verts.size(); i++) {
    Vec3 X = R * verts[i] + cam.t;
    pm.valid[i] = X.z > z_near;
    pm.z[i] = pm.valid[i] ? X.z : z_near;
    pm.ndc[i] = pm.valid[i] ? Vec2{s * X.x / X.z, s * X.y / X.z} : Vec2{0, 0};
  }
  return pm;
}

PointTriangle point_triangle(const Vec2& p, const Vec2 q[3]) {
  PointTriangle r;
  double best = 1e300;
  for (int e = 0; e < 3; e++) {
    Vec2 a = q[e], b = q[(e + 1) % 3];
    Vec2 w = b - a;
    double W = norm2(w);
    double t = W < 1e-30 ? 0.0 : dot(p - a, w) / W;
    double u = clampd(t, 0.0, 1.0);
    double d2 = norm2(p - (a + w * u));
    if (d2 < best) {
      best = d2;
      r.edge = e;
      r.u = u;
      r.u_clamped = t < 0.0 || t > 1.0 || W < 1e-30;
    }
  }
  double A = cross2(q[1] - q[0], q[2] - q[0]);
  if (std::abs(A) < 1e-16) {
    r.degenerate = true;
    r.d2 = best;
    return r;
  }
  double s0 = cross2(q[1] - p, q[2] - p) / A;
  double s1 = cross2(q[2] - p, q[0] - p) / A;
  double s2 = cross2(q[0] - p, q[1] - p) / A;
  r.inside = s0 >= 0 && s1 >= 0 && s2 >= 0;
  if (r.inside) {
    r.bary[0] = s0;
    r.bary[1] = s1;
    r.bary[2] = s2;
    r.d2 = -best;
  } else {
    r.bary[r.edge] = 1.0 - r.u;
    r.bary[(r.edge + 1) % 3] = r.u;
    r.d2 = best;
  }
  return r;
}

FragmentBuffer rasterize(const ProjectedMesh& pm, const std::vector<std::array<int, 3>>& faces,
                         const RasterConfig& cfg) {
  if (cfg.faces_per_pixel < 1 || cfg.faces_per_pixel > kMaxFacesPerPixel)
    throw error(errc::invalid_argument, "rasterize: faces_per_pixel out of range");
  if (cfg.width < 1 || cfg.height < 1)
    throw error(errc::invalid_argument, "rasterize: empty image");
  const int W = cfg.width, H = cfg.height, K = cfg.faces_per_pixel;
  FragmentBuffer fb;
  fb.width = W;
  fb.height = H;
  fb.k = K;
  fb.frags.assign(size_t(W) * H * K, Fragment{});
  fb.counts.assign(size_t(W) * H, 0);

  std::vector<double> ndc_x(W), ndc_y(H);
  for (int x = 0; x < W; x++) ndc_x[x] = pixel_to_ndc(x, W);
  for (int y = 0; y < H; y++) ndc_y[y] = pixel_to_ndc(y, H);

  const double margin = cfg.blur_radius > 0 ? std::sqrt(cfg.blur_radius) : 0.0;

  for (size_t fi = 0; fi < faces.size(); fi++) {
    const auto& f = faces[fi];
    if (!pm.valid[f[0]] || !pm.valid[f[1]] || !pm.valid[f[2]]) continue;
    Vec2 q[3] = {pm.ndc[f[0]], pm.ndc[f[1]], pm.ndc[f[2]]};
    double zv[3] = {pm.z[f[0]], pm.z[f[1]], pm.z[f[2]]};

    double lo_x = std::min({q[0].x, q[1].x, q[2].x}) - margin;
    double hi_x = std::max({q[0].x, q[1].x, q[2].x}) + margin;
    double lo_y = std::min({q[0].y, q[1].y, q[2].y}) - margin;
    double hi_y = std::max({q[0].y, q[1].y, q[2].y}) + margin;
    int x0 = std::max(0, int(std::ceil(ndc_to_pixel(lo_x, W))));
    int x1 = std::min(W - 1, int(std::floor(ndc_to_pixel(hi_x, W))));
    int y0 = std::max(0, int(std::ceil(ndc_to_pixel(lo_y, H))));
    int y1 = std::min(H - 1, int(std::floor(ndc_to_pixel(hi_y, H))));
    if (x0 > x1 || y0 > y1) continue;

    for (int y = y0; y <= y1; y++) {
      for (int x = x0; x <= x1; x++) {
        Vec2 p{ndc_x[x], ndc_y[y]};
        PointTriangle pt = point_triangle(p, q);
        if (pt.degenerate) continue;
        if (!pt.inside && pt.d2 >= cfg.blur_radius) continue;

        double S = 0;
        double a[3];
        for (int j = 0; j < 3; j++) {
          a[j] = pt.bary[j] / zv[j];
          S += a[j];
        }
        Fragment fr;
        fr.face = static_cast<int>(fi);
        fr.z = 1.0 / S;
        for (int j = 0; j < 3; j++) fr.bary[j] = a[j] * fr.z;
        fr.d2 = pt.d2;

        Fragment* slot = fb.at(x, y);
        int& cnt = fb.counts[size_t(y) * W + x];
        if (cnt < K) {
          slot[cnt++] = fr;
          for (int i = cnt - 1; i > 0 && frag_less(slot[i], slot[i - 1]); i--)
            std::swap(slot[i], slot[i - 1]);
        } else if (frag_less(fr, slot[K - 1])) {
          slot[K - 1] = fr;
          for (int i = K - 1; i > 0 && frag_less(slot[i], slot[i - 1]); i--)
            std::swap(slot[i], slot[i - 1]);
        }
      }
    }
  }
  return fb;
}

FragmentBuffer rasterize(const TriMesh& mesh, const Camera& cam, const RasterConfig& cfg) {
  ProjectedMesh pm = project_mesh(mesh.positions(), cam, cfg.z_near);
  return rasterize(pm, mesh.faces, cfg);
}

DepthMap depth_map(const FragmentBuffer& fb, const RasterConfig& cfg) {
  DepthMap dm;
  dm.z = ImageGray(fb.width, fb.height, cfg.background_depth);
  dm.frag.assign(size_t(fb.width) * fb.height, -1);
  for (int y = 0; y < fb.height; y++) {
    for (int x = 0; x < fb.width; x++) {
      const Fragment* slot = fb.at(x, y);
      int n = fb.count(x, y);
      for (int k = 0; k < n; k++) {
        if (slot[k].d2 <= 0) {
          dm.z.at(x, y) = slot[k].z;
          dm.frag[size_t(y) * fb.width + x] = int((size_t(y) * fb.width + x) * fb.k + k);
          break;
        }
      }
    }
  }
  return dm;
}

double occupancy_sigmoid(double d2, double blur) {
  if (blur <= 0) return d2 <= 0 ? 1.0 : 0.0;
  return 1.0 / (1.0 + std::exp(d2 / blur));
}

ImageGray soft_silhouette(const FragmentBuffer& fb, const RasterConfig& cfg) {
  ImageGray out(fb.width, fb.height, 0.0);
  for (int y = 0; y < fb.height; y++) {
    for (int x = 0; x < fb.width; x++) {
      const Fragment* slot = fb.at(x, y);
      int n = fb.count(x, y);
      double miss = 1.0;
      for (int k = 0; k < n; k++) miss *= 1.0 - occupancy_sigmoid(slot[k].d2, cfg.blur_radius);
      out.at(x, y) = 1.0 - miss;
    }
  }
  return out;
}

BlendResult softmax_blend(const Fragment* frags, int n, const Vec3* colors, const Vec3& bg_color,
                          const RasterConfig& cfg) {
  BlendResult r;
  if (n == 0) {
    r.rgb = bg_color;
    r.w_bg = 1;
    return r;
  }
  const double inv_range = 1.0 / (cfg.z_far - cfg.z_near);
  const double gamma = cfg.blend_gamma;
  double zbar[kMaxFacesPerPixel];
  double m = cfg.blend_eps;
  for (int k = 0; k < n; k++) {
    zbar[k] = (cfg.z_far - frags[k].z) * inv_range;
    m = std::max(m, zbar[k]);
  }
  double num[kMaxFacesPerPixel];
  double denom = std::exp((cfg.blend_eps - m) / gamma);
  double num_bg = denom;
  for (int k = 0; k < n; k++) {
    num[k] = occupancy_sigmoid(frags[k].d2, cfg.blur_radius) * std::exp((zbar[k] - m) / gamma);
    denom += num[k];
  }
  Vec3 acc = bg_color * num_bg;
  for (int k = 0; k < n; k++) acc += colors[k] * num[k];
  r.rgb = acc / denom;
  for (int k = 0; k < n; k++) r.w[k] = num[k] / denom;
  r.w_bg = num_bg / denom;
  return r;
}

void softmax_blend_backward(const Fragment* frags, int n, const Vec3* colors,
                            const Vec3& bg_color, const RasterConfig& cfg, const Vec3& adj_rgb,
                            const double* adj_w, double adj_wbg, Vec3* adj_colors,
                            double* adj_d2, double* adj_z) {
  if (n == 0) return;
  const double inv_range = 1.0 / (cfg.z_far - cfg.z_near);
  const double gamma = cfg.blend_gamma;
  double zbar[kMaxFacesPerPixel], sig[kMaxFacesPerPixel];
  double m = cfg.blend_eps;
  for (int k = 0; k < n; k++) {
    zbar[k] = (cfg.z_far - frags[k].z) * inv_range;
    m = std::max(m, zbar[k]);
  }
  double num[kMaxFacesPerPixel];
  double num_bg = std::exp((cfg.blend_eps - m) / gamma);
  double denom = num_bg;
  for (int k = 0; k < n; k++) {
    sig[k] = occupancy_sigmoid(frags[k].d2, cfg.blur_radius);
    num[k] = sig[k] * std::exp((zbar[k] - m) / gamma);
    denom += num[k];
  }
  Vec3 rgb = bg_color * num_bg;
  for (int k = 0; k < n; k++) rgb += colors[k] * num[k];
  rgb = rgb / denom;

  // S_w = sum_j adj_w[j] w_j, including the background entry.
  double s_w = adj_wbg * num_bg / denom;
  if (adj_w)
    for (int k = 0; k < n; k++) s_w += adj_w[k] * num[k] / denom;

  for (int k = 0; k < n; k++) {
    double adj_num = dot(adj_rgb, colors[k] - rgb) / denom;
    if (adj_w) adj_num += (adj_w[k] - s_w) / denom;
    if (adj_colors) adj_colors[k] += adj_rgb * (num[k] / denom);
    // num = sig * exp((zbar - m)/gamma); m is exactly cancelled in all outputs
    double adj_sig = adj_num * std::exp((zbar[k] - m) / gamma);
    double adj_zbar = adj_num * num[k] / gamma;
    if (cfg.blur_radius > 0 && adj_d2)
      adj_d2[k] += adj_sig * (-sig[k] * (1.0 - sig[k]) / cfg.blur_radius);
    if (adj_z) adj_z[k] += adj_zbar * (-inv_range);
  }
}

void fragment_backward(const Vec2& p, const Vec2 q[3], const double zv[3], const Fragment& frag,
                       const double adj_bary[3], double adj_z, double adj_d2, Vec2 adj_q[3],
                       double adj_zv[3]) {
  (void)frag;
  PointTriangle pt = point_triangle(p, q);
  if (pt.degenerate) return;

  double a[3], S = 0;
  for (int j = 0; j < 3; j++) {
    a[j] = pt.bary[j] / zv[j];
    S += a[j];
  }
  double zfrag = 1.0 / S;
  double pc[3];
  for (int j = 0; j < 3; j++) pc[j] = a[j] * zfrag;

  double dot_pc = 0;
  for (int j = 0; j < 3; j++) dot_pc += adj_bary[j] * pc[j];
  double adj_s[3];
  for (int j = 0; j < 3; j++) {
    double adj_a = (adj_bary[j] - dot_pc) * zfrag - adj_z * zfrag * zfrag;
    adj_s[j] = adj_a / zv[j];
    adj_zv[j] += -adj_a * pt.bary[j] / (zv[j] * zv[j]);
  }

  if (pt.inside) {
    double A = cross2(q[1] - q[0], q[2] - q[0]);
    Vec2 gA[3] = {pd(q[1] - q[2]), pd(q[2] - q[0]), pd(q[0] - q[1])};
    double common = 0;
    for (int i = 0; i < 3; i++) common += adj_s[i] * pt.bary[i];
    for (int i = 0; i < 3; i++) {
      int c1 = (i + 1) % 3, c2 = (i + 2) % 3;
      adj_q[c1] += pd(q[c2] - p) * (adj_s[i] / A);
      adj_q[c2] += pd(p - q[c1]) * (adj_s[i] / A);
    }
    for (int j = 0; j < 3; j++) adj_q[j] -= gA[j] * (common / A);
  } else {
    int al = pt.edge, be = (pt.edge + 1) % 3;
    double adj_u = -adj_s[al] + adj_s[be];
    Vec2 w = q[be] - q[al];
    double W = norm2(w);
    if (!pt.u_clamped && W > 1e-30) {
      Vec2 pa = p - q[al];
      Vec2 gt_a = (w * (2.0 * pt.u) - w - pa) / W;
      Vec2 gt_b = (pa - w * (2.0 * pt.u)) / W;
      adj_q[al] += gt_a * adj_u;
      adj_q[be] += gt_b * adj_u;
    }
  }

  // Distance term: d2 = sign * |p - n|^2, n on the recorded nearest edge.
  // The u-path vanishes (perpendicularity) or is clamped, so only the
  // endpoint dependence remains.
  {
    int al = pt.edge, be = (pt.edge + 1) % 3;
    Vec2 w = q[be] - q[al];
    Vec2 diff = p - (q[al] + w * pt.u);
    double sign = pt.inside ? -1.0 : 1.0;
    Vec2 adj_n = diff * (-2.0 * sign * adj_d2);
    adj_q[al] += adj_n * (1.0 - pt.u);
    adj_q[be] += adj_n * pt.u;
  }
}

}  // namespace ds
