#include "dstereo/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ds {

namespace {

constexpr double kPyrKernel[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

int pyr_out_dim(int n) { return (n + 1) / 2; }

void check_same_size(int wa, int ha, int wb, int hb, const char* what) {
  if (wa != wb || ha != hb) throw error(errc::invalid_argument, std::string(what) + ": size mismatch");
}

// 2D nearest neighbor with ties resolved to the smallest point index, so the
// result is exactly what an index-ascending linear scan with strict < returns.
class Kd2 {
 public:
  explicit Kd2(std::vector<Vec2> pts) : pts_(std::move(pts)), idx_(pts_.size()) {
    std::iota(idx_.begin(), idx_.end(), 0);
    if (!idx_.empty()) build(0, int(idx_.size()), 0);
  }
  bool empty() const { return idx_.empty(); }
  const Vec2& point(int i) const { return pts_[size_t(i)]; }

  int nearest(const Vec2& q) const {
    best_ = -1;
    best_d_ = std::numeric_limits<double>::infinity();
    search(q, 0, int(idx_.size()), 0);
    return best_;
  }

 private:
  void build(int lo, int hi, int axis) {
    if (hi - lo <= 1) return;
    int mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](int a, int b) {
                       double pa = axis ? pts_[a].y : pts_[a].x;
                       double pb = axis ? pts_[b].y : pts_[b].x;
                       return pa < pb || (pa == pb && a < b);
                     });
    build(lo, mid, 1 - axis);
    build(mid + 1, hi, 1 - axis);
  }

  void search(const Vec2& q, int lo, int hi, int axis) const {
    if (lo >= hi) return;
    int mid = (lo + hi) / 2;
    int i = idx_[mid];
    Vec2 d = pts_[i] - q;
    double dd = dot(d, d);
    if (dd < best_d_ || (dd == best_d_ && i < best_)) {
      best_d_ = dd;
      best_ = i;
    }
    if (hi - lo == 1) return;
    double delta = (axis ? q.y : q.x) - (axis ? pts_[i].y : pts_[i].x);
    if (delta < 0) {
      search(q, lo, mid, 1 - axis);
      if (delta * delta <= best_d_) search(q, mid + 1, hi, 1 - axis);
    } else {
      search(q, mid + 1, hi, 1 - axis);
      if (delta * delta <= best_d_) search(q, lo, mid, 1 - axis);
    }
  }

  std::vector<Vec2> pts_;
  std::vector<int> idx_;
  mutable int best_ = -1;
  mutable double best_d_ = 0;
};

}  // namespace

ImageRGB pyr_down(const ImageRGB& img) {
  int ow = pyr_out_dim(img.width), oh = pyr_out_dim(img.height);
  ImageRGB out(ow, oh);
  for (int oy = 0; oy < oh; oy++)
    for (int ox = 0; ox < ow; ox++) {
      double acc[3] = {0, 0, 0};
      for (int j = -2; j <= 2; j++) {
        int sy = std::clamp(2 * oy + j, 0, img.height - 1);
        for (int i = -2; i <= 2; i++) {
          int sx = std::clamp(2 * ox + i, 0, img.width - 1);
          double kw = kPyrKernel[i + 2] * kPyrKernel[j + 2];
          const double* p = img.px(sx, sy);
          acc[0] += kw * p[0];
          acc[1] += kw * p[1];
          acc[2] += kw * p[2];
        }
      }
      double* q = out.px(ox, oy);
      q[0] = acc[0];
      q[1] = acc[1];
      q[2] = acc[2];
    }
  return out;
}

void pyr_down_backward(const ImageRGB& adj_out, ImageRGB& adj_in) {
  int ow = adj_out.width, oh = adj_out.height;
  for (int oy = 0; oy < oh; oy++)
    for (int ox = 0; ox < ow; ox++) {
      const double* a = adj_out.px(ox, oy);
      for (int j = -2; j <= 2; j++) {
        int sy = std::clamp(2 * oy + j, 0, adj_in.height - 1);
        for (int i = -2; i <= 2; i++) {
          int sx = std::clamp(2 * ox + i, 0, adj_in.width - 1);
          double kw = kPyrKernel[i + 2] * kPyrKernel[j + 2];
          double* p = adj_in.px(sx, sy);
          p[0] += kw * a[0];
          p[1] += kw * a[1];
          p[2] += kw * a[2];
        }
      }
    }
}

double tex_l1_loss(const ImageRGB& rendered, const ImageRGB& target, const ImageGray& mask) {
  check_same_size(rendered.width, rendered.height, target.width, target.height, "tex_l1");
  check_same_size(rendered.width, rendered.height, mask.width, mask.height, "tex_l1 mask");
  double acc = 0;
  long count = 0;
  for (int y = 0; y < rendered.height; y++)
    for (int x = 0; x < rendered.width; x++) {
      if (mask.at(x, y) <= 0.5) continue;
      count++;
      const double* r = rendered.px(x, y);
      const double* t = target.px(x, y);
      acc += std::abs(r[0] - t[0]) + std::abs(r[1] - t[1]) + std::abs(r[2] - t[2]);
    }
  return count ? acc / (3.0 * count) : 0.0;
}

void tex_l1_backward(const ImageRGB& rendered, const ImageRGB& target, const ImageGray& mask,
                     double adj, ImageRGB& adj_rendered) {
  long count = 0;
  for (const auto& v : mask.data) count += (v > 0.5);
  if (!count) return;
  double s = adj / (3.0 * count);
  for (int y = 0; y < rendered.height; y++)
    for (int x = 0; x < rendered.width; x++) {
      if (mask.at(x, y) <= 0.5) continue;
      const double* r = rendered.px(x, y);
      const double* t = target.px(x, y);
      double* a = adj_rendered.px(x, y);
      for (int c = 0; c < 3; c++) {
        double d = r[c] - t[c];
        a[c] += d > 0 ? s : (d < 0 ? -s : 0.0);
      }
    }
}

static double image_mae(const ImageRGB& a, const ImageRGB& b) {
  double acc = 0;
  for (size_t i = 0; i < a.data.size(); i++) acc += std::abs(a.data[i] - b.data[i]);
  return acc / double(a.data.size());
}

namespace {

ImageRGB apply_mask(const ImageRGB& img, const ImageGray& mask) {
  ImageRGB out = img;
  for (int y = 0; y < img.height; y++)
    for (int x = 0; x < img.width; x++)
      if (mask.at(x, y) <= 0.5) {
        double* p = out.px(x, y);
        p[0] = p[1] = p[2] = 0;
      }
  return out;
}

}  // namespace

double tex_pyramid_loss(const ImageRGB& rendered, const ImageRGB& target, const ImageGray& mask) {
  check_same_size(rendered.width, rendered.height, target.width, target.height, "tex_pyramid");
  check_same_size(rendered.width, rendered.height, mask.width, mask.height, "tex_pyramid");
  ImageRGB r = apply_mask(rendered, mask), t = apply_mask(target, mask);
  double loss = 0;
  for (int l = 0; l < kPyramidLevels; l++) {
    r = pyr_down(r);
    t = pyr_down(t);
    loss += image_mae(r, t);
  }
  return loss;
}

void tex_pyramid_backward(const ImageRGB& rendered, const ImageRGB& target, const ImageGray& mask,
                          double adj, ImageRGB& adj_rendered) {
  std::vector<ImageRGB> rl, tl;
  rl.push_back(apply_mask(rendered, mask));
  tl.push_back(apply_mask(target, mask));
  for (int l = 0; l < kPyramidLevels; l++) {
    rl.push_back(pyr_down(rl.back()));
    tl.push_back(pyr_down(tl.back()));
  }
  ImageRGB adj_level(rl.back().width, rl.back().height, 0.0);
  for (int l = kPyramidLevels; l >= 1; l--) {
    const ImageRGB& r = rl[l];
    const ImageRGB& t = tl[l];
    double s = adj / double(r.data.size());
    for (size_t i = 0; i < r.data.size(); i++) {
      double d = r.data[i] - t.data[i];
      adj_level.data[i] += d > 0 ? s : (d < 0 ? -s : 0.0);
    }
    ImageRGB adj_prev(rl[l - 1].width, rl[l - 1].height, 0.0);
    pyr_down_backward(adj_level, adj_prev);
    adj_level = std::move(adj_prev);
  }
  for (int y = 0; y < adj_level.height; y++)
    for (int x = 0; x < adj_level.width; x++)
      if (mask.at(x, y) > 0.5) {
        const double* s = adj_level.px(x, y);
        double* d = adj_rendered.px(x, y);
        d[0] += s[0];
        d[1] += s[1];
        d[2] += s[2];
      }
}

double mask_mse(const ImageGray& rendered, const ImageGray& target) {
  check_same_size(rendered.width, rendered.height, target.width, target.height, "mask_mse");
  double acc = 0;
  for (size_t i = 0; i < rendered.data.size(); i++) {
    double d = rendered.data[i] - target.data[i];
    acc += d * d;
  }
  return acc / double(rendered.data.size());
}

void mask_mse_backward(const ImageGray& rendered, const ImageGray& target, double adj,
                       ImageGray& adj_rendered) {
  double s = 2.0 * adj / double(rendered.data.size());
  for (size_t i = 0; i < rendered.data.size(); i++)
    adj_rendered.data[i] += s * (rendered.data[i] - target.data[i]);
}

double bidt_loss(const SoftPixelSet& s, const ImageGray& mask_rendered, const ImageGray& mask_gt,
                 double tau_min, double tau_max, std::vector<Vec2>* adj_phat) {
  check_same_size(mask_rendered.width, mask_rendered.height, mask_gt.width, mask_gt.height,
                  "bidt");
  if (s.px.size() != s.phat.size() || s.py.size() != s.phat.size())
    throw error(errc::invalid_argument, "bidt: ragged soft pixel set");
  if (adj_phat) adj_phat->assign(s.phat.size(), Vec2{});

  std::vector<Vec2> gt_pts;
  for (int y = 0; y < mask_gt.height; y++)
    for (int x = 0; x < mask_gt.width; x++)
      if (mask_gt.at(x, y) > 0.5) gt_pts.push_back(Vec2{double(x), double(y)});
  Kd2 kd_gt(std::move(gt_pts));

  double loss = 0;
  for (size_t k = 0; k < s.phat.size(); k++) {
    if (mask_gt.at(s.px[k], s.py[k]) > 0.5) continue;  // only A^r \ A pays
    if (kd_gt.empty()) {
      loss += tau_max;
      continue;
    }
    int nn = kd_gt.nearest(s.phat[k]);
    Vec2 diff = s.phat[k] - kd_gt.point(nn);
    double dist = norm(diff);
    loss += clampd(dist, tau_min, tau_max);
    if (adj_phat && dist > tau_min && dist < tau_max) (*adj_phat)[k] += diff * (1.0 / dist);
  }

  Kd2 kd_soft(s.phat);
  for (int y = 0; y < mask_gt.height; y++)
    for (int x = 0; x < mask_gt.width; x++) {
      if (mask_gt.at(x, y) <= 0.5 || mask_rendered.at(x, y) > 0.5) continue;  // A \ A^r
      if (kd_soft.empty()) {
        loss += tau_max;
        continue;
      }
      Vec2 q{double(x), double(y)};
      int nn = kd_soft.nearest(q);
      Vec2 diff = s.phat[nn] - q;
      double dist = norm(diff);
      loss += clampd(dist, tau_min, tau_max);
      if (adj_phat && dist > tau_min && dist < tau_max) (*adj_phat)[nn] += diff * (1.0 / dist);
    }
  return loss;
}

double edge_loss(const std::vector<Vec3>& verts, const std::vector<std::pair<int, int>>& edges,
                 double rest_len) {
  if (edges.empty()) return 0;
  double acc = 0;
  for (const auto& [a, b] : edges) {
    double d = norm(verts[a] - verts[b]) - rest_len;
    acc += d * d;
  }
  return acc / double(edges.size());
}

void edge_loss_backward(const std::vector<Vec3>& verts,
                        const std::vector<std::pair<int, int>>& edges, double rest_len,
                        double adj, std::vector<Vec3>& adj_verts) {
  if (edges.empty()) return;
  double s = 2.0 * adj / double(edges.size());
  for (const auto& [a, b] : edges) {
    Vec3 e = verts[a] - verts[b];
    double len = norm(e);
    if (len < 1e-20) continue;
    Vec3 g = e * (s * (len - rest_len) / len);
    adj_verts[a] += g;
    adj_verts[b] -= g;
  }
}

double laplacian_loss(const std::vector<Vec3>& verts, const LaplacianCache& lap) {
  if (verts.empty()) return 0;
  auto lv = cotangent_laplacian(verts, lap);
  double acc = 0;
  for (const auto& v : lv) acc += norm(v);
  return acc / double(verts.size());
}

void laplacian_loss_backward(const std::vector<Vec3>& verts, const LaplacianCache& lap,
                             double adj, std::vector<Vec3>& adj_verts) {
  if (verts.empty()) return;
  auto lv = cotangent_laplacian(verts, lap);
  std::vector<Vec3> adj_lv(verts.size());
  double s = adj / double(verts.size());
  for (size_t i = 0; i < lv.size(); i++) {
    double len = norm(lv[i]);
    if (len > 1e-20) adj_lv[i] = lv[i] * (s / len);
  }
  cotangent_laplacian_backward(verts, lap, adj_lv, adj_verts);
}

GeomRegs make_geom_regs(const TriMesh& mesh) {
  GeomRegs regs;
  regs.edges = build_edges(mesh.faces);
  regs.rest_len = mean_edge_length(mesh.positions(), regs.edges);
  regs.lap = build_laplacian_cache(mesh.faces, mesh.n_verts());
  return regs;
}

LossReport total_loss(const TriMesh& mesh, const std::vector<Camera>& cameras,
                      const std::vector<ImageRGB>& images, const std::vector<ImageGray>& masks,
                      const GeomRegs& regs, const RasterConfig& rcfg, const TextureConfig& tcfg,
                      const LossWeights& weights, Phase phase) {
  const int n = int(cameras.size());
  if (int(images.size()) != n || int(masks.size()) != n)
    throw error(errc::invalid_argument, "total_loss: view count mismatch");
  const int W = rcfg.width, H = rcfg.height;
  for (int i = 0; i < n; i++) {
    check_same_size(images[i].width, images[i].height, W, H, "total_loss image");
    check_same_size(masks[i].width, masks[i].height, W, H, "total_loss mask");
  }

  auto verts = mesh.positions();
  auto vn = vertex_normals(verts, mesh.faces);

  std::vector<FragmentBuffer> fbs;
  fbs.reserve(n);
  std::vector<ImageGray> depths(n), sils(n);
  for (int i = 0; i < n; i++) {
    fbs.push_back(rasterize(mesh, cameras[i], rcfg));
    depths[i] = depth_map(fbs[i], rcfg).z;
    sils[i] = soft_silhouette(fbs[i], rcfg);
  }
  std::vector<SourceView> views(n);
  for (int i = 0; i < n; i++) views[i] = {&images[i], &depths[i], cameras[i]};
  auto frames = make_view_frames(views);

  const bool warm = phase == Phase::warmup;
  const double tau_min = 2.0;
  const double tau_max = 0.1 * std::min(W, H);
  const Vec3 bg{0, 0, 0};

  LossReport rep;
  for (int i = 0; i < n; i++) {
    ImageRGB rendered(W, H);
    SoftPixelSet sps;
    sps.width = W;
    sps.height = H;
    for (int y = 0; y < H; y++)
      for (int x = 0; x < W; x++) {
        const Fragment* frags = fbs[i].at(x, y);
        int cnt = fbs[i].count(x, y);
        Vec3 colors[kMaxFacesPerPixel] = {};
        Vec3 pts[kMaxFacesPerPixel];
        for (int k = 0; k < cnt; k++) {
          const Fragment& f = frags[k];
          const auto& face = mesh.faces[f.face];
          pts[k] = verts[face[0]] * f.bary[0] + verts[face[1]] * f.bary[1] +
                   verts[face[2]] * f.bary[2];
          if (!warm) {
            Vec3 nw = vn.n[face[0]] * f.bary[0] + vn.n[face[1]] * f.bary[1] +
                      vn.n[face[2]] * f.bary[2];
            double nl = norm(nw);
            nw = nl > 1e-20 ? nw * (1.0 / nl) : Vec3{0, 0, 1};
            colors[k] = texture_eval_color(pts[k], nw, views, frames, i, tcfg);
          }
        }
        BlendResult blend = softmax_blend(frags, cnt, colors, bg, rcfg);
        if (!warm) set_rgb(rendered, x, y, blend.rgb);
        if (sils[i].at(x, y) > 0.5) {
          double wf = 0;
          for (int k = 0; k < cnt; k++) wf += blend.w[k];
          Vec2 ph{double(x), double(y)};
          if (wf > 1e-12) {
            Vec2 acc{};
            for (int k = 0; k < cnt; k++) {
              Vec2 ndc = project(cameras[i], pts[k], rcfg.z_near).ndc;
              acc += Vec2{ndc_to_pixel(ndc.x, W), ndc_to_pixel(ndc.y, H)} * (blend.w[k] / wf);
            }
            ph = acc;
          }
          sps.px.push_back(x);
          sps.py.push_back(y);
          sps.phat.push_back(ph);
        }
      }

    if (!warm) {
      ImageGray mask_union(W, H);
      for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++)
          mask_union.at(x, y) = (masks[i].at(x, y) > 0.5 || sils[i].at(x, y) > 0.5) ? 1.0 : 0.0;
      rep.tex_l1 += tex_l1_loss(rendered, images[i], mask_union);
      rep.tex_pyramid += tex_pyramid_loss(rendered, images[i], mask_union);
    }
    rep.mask_mse += mask_mse(sils[i], masks[i]);
    rep.mask_bidt += bidt_loss(sps, sils[i], masks[i], tau_min, tau_max) / double(W * H);
  }

  rep.edge = edge_loss(verts, regs.edges, regs.rest_len);
  rep.laplacian = laplacian_loss(verts, regs.lap);

  double w_tex = warm ? 0.0 : 1.0;
  rep.total = weights.tex_l1 * w_tex * rep.tex_l1 + weights.tex_pyramid * w_tex * rep.tex_pyramid +
              weights.mask_mse * rep.mask_mse + weights.mask_bidt * rep.mask_bidt +
              weights.edge * rep.edge + weights.laplacian * rep.laplacian;
  return rep;
}

}  // namespace ds
