#include "dstereo/autodiff.hpp"

#include <cmath>

namespace ds {

// ---------------------------------------------------------------------------
// DiffTape / DiffScalar
// ---------------------------------------------------------------------------

int DiffTape::leaf() {
  nodes_.push_back({{-1, -1}, {0, 0}});
  return int(nodes_.size()) - 1;
}

int DiffTape::node1(int p, double w) {
  nodes_.push_back({{p, -1}, {w, 0}});
  return int(nodes_.size()) - 1;
}

int DiffTape::node2(int p0, double w0, int p1, double w1) {
  nodes_.push_back({{p0, p1}, {w0, w1}});
  return int(nodes_.size()) - 1;
}

std::vector<double> DiffTape::adjoints(int seed) const {
  std::vector<double> adj(nodes_.size(), 0.0);
  if (seed < 0 || seed >= int(nodes_.size())) return adj;
  adj[seed] = 1.0;
  for (int i = int(nodes_.size()) - 1; i >= 0; i--) {
    double a = adj[i];
    if (a == 0) continue;
    const Node& nd = nodes_[i];
    for (int s = 0; s < 2; s++)
      if (nd.parent[s] >= 0) adj[nd.parent[s]] += nd.weight[s] * a;
  }
  return adj;
}

DiffScalar make_leaf(DiffTape& tape, double value) { return {value, tape.leaf(), &tape}; }

DiffScalar detach(const DiffScalar& x) { return {x.value, x.tape->leaf(), x.tape}; }

DiffScalar operator+(const DiffScalar& a, const DiffScalar& b) {
  return {a.value + b.value, a.tape->node2(a.node, 1, b.node, 1), a.tape};
}
DiffScalar operator-(const DiffScalar& a, const DiffScalar& b) {
  return {a.value - b.value, a.tape->node2(a.node, 1, b.node, -1), a.tape};
}
DiffScalar operator*(const DiffScalar& a, const DiffScalar& b) {
  return {a.value * b.value, a.tape->node2(a.node, b.value, b.node, a.value), a.tape};
}
DiffScalar operator/(const DiffScalar& a, const DiffScalar& b) {
  double inv = 1.0 / b.value;
  return {a.value * inv, a.tape->node2(a.node, inv, b.node, -a.value * inv * inv), a.tape};
}
DiffScalar operator+(const DiffScalar& a, double b) {
  return {a.value + b, a.tape->node1(a.node, 1), a.tape};
}
DiffScalar operator-(const DiffScalar& a, double b) {
  return {a.value - b, a.tape->node1(a.node, 1), a.tape};
}
DiffScalar operator*(const DiffScalar& a, double b) {
  return {a.value * b, a.tape->node1(a.node, b), a.tape};
}
DiffScalar operator/(const DiffScalar& a, double b) {
  return {a.value / b, a.tape->node1(a.node, 1.0 / b), a.tape};
}
DiffScalar operator+(double a, const DiffScalar& b) { return b + a; }
DiffScalar operator-(double a, const DiffScalar& b) {
  return {a - b.value, b.tape->node1(b.node, -1), b.tape};
}
DiffScalar operator*(double a, const DiffScalar& b) { return b * a; }
DiffScalar sin(const DiffScalar& x) {
  return {std::sin(x.value), x.tape->node1(x.node, std::cos(x.value)), x.tape};
}
DiffScalar cos(const DiffScalar& x) {
  return {std::cos(x.value), x.tape->node1(x.node, -std::sin(x.value)), x.tape};
}
DiffScalar exp(const DiffScalar& x) {
  double e = std::exp(x.value);
  return {e, x.tape->node1(x.node, e), x.tape};
}
DiffScalar log(const DiffScalar& x) {
  return {std::log(x.value), x.tape->node1(x.node, 1.0 / x.value), x.tape};
}
DiffScalar sqrt(const DiffScalar& x) {
  double s = std::sqrt(x.value);
  return {s, x.tape->node1(x.node, 0.5 / s), x.tape};
}

// ---------------------------------------------------------------------------
// ParamTape
// ---------------------------------------------------------------------------

void ParamTape::resize(int n_verts, int n_cams) {
  d_offsets.assign(n_verts, Vec3{});
  d_cams.assign(n_cams, CameraGrad{});
}

void ParamTape::zero_grad() {
  for (auto& g : d_offsets) g = Vec3{};
  for (auto& g : d_cams) g = CameraGrad{};
}

// ---------------------------------------------------------------------------
// forward_backward
// ---------------------------------------------------------------------------

namespace {

void check_finite_span(const double* p, size_t n, const char* stage) {
  for (size_t i = 0; i < n; i++)
    if (!std::isfinite(p[i]))
      throw error(errc::diverged, std::string("forward_backward: non-finite value in ") + stage);
}

void check_finite_grads(const std::vector<Vec3>& adj_verts, const std::vector<CameraGrad>& cams,
                        const char* stage) {
  check_finite_span(&adj_verts[0].x, adj_verts.size() * 3, stage);
  for (const auto& c : cams) {
    double v[7] = {c.r.x, c.r.y, c.r.z, c.t.x, c.t.y, c.t.z, c.f};
    check_finite_span(v, 7, stage);
  }
}

}  // namespace

LossReport forward_backward(const TriMesh& mesh, const std::vector<Camera>& cameras,
                            const std::vector<ImageRGB>& images,
                            const std::vector<ImageGray>& masks, const GeomRegs& regs,
                            const RasterConfig& rcfg, const TextureConfig& tcfg,
                            const LossWeights& weights, Phase phase, const GradConfig& gcfg,
                            ParamTape& tape) {
  const int n = int(cameras.size());
  if (int(images.size()) != n || int(masks.size()) != n)
    throw error(errc::invalid_argument, "forward_backward: view count mismatch");
  const int W = rcfg.width, H = rcfg.height;
  const int nv = mesh.n_verts();
  if (int(tape.d_offsets.size()) != nv || int(tape.d_cams.size()) != n) tape.resize(nv, n);

  // ---- forward (mirrors total_loss; the equality is pinned by tests) ----
  auto verts = mesh.positions();
  auto vn = vertex_normals(verts, mesh.faces);

  std::vector<ProjectedMesh> pms(n);
  std::vector<FragmentBuffer> fbs;
  fbs.reserve(n);
  std::vector<DepthMap> dms(n);
  std::vector<ImageGray> depths(n), sils(n);
  for (int i = 0; i < n; i++) {
    pms[i] = project_mesh(verts, cameras[i], rcfg.z_near);
    fbs.push_back(rasterize(pms[i], mesh.faces, rcfg));
    dms[i] = depth_map(fbs[i], rcfg);
    depths[i] = dms[i].z;
    sils[i] = soft_silhouette(fbs[i], rcfg);
  }
  std::vector<SourceView> views(n);
  for (int i = 0; i < n; i++) views[i] = {&images[i], &depths[i], cameras[i]};
  auto frames = make_view_frames(views);

  const bool warm = phase == Phase::warmup;
  const double tau_min = 2.0;
  const double tau_max = 0.1 * std::min(W, H);
  const Vec3 bg{0, 0, 0};

  std::vector<ImageRGB> rendereds(n);
  std::vector<ImageGray> mask_unions(n);
  std::vector<SoftPixelSet> spss(n);

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
      mask_unions[i] = std::move(mask_union);
    }
    rep.mask_mse += mask_mse(sils[i], masks[i]);
    rep.mask_bidt += bidt_loss(sps, sils[i], masks[i], tau_min, tau_max) / double(W * H);
    rendereds[i] = std::move(rendered);
    spss[i] = std::move(sps);
  }

  rep.edge = edge_loss(verts, regs.edges, regs.rest_len);
  rep.laplacian = laplacian_loss(verts, regs.lap);

  double w_tex = warm ? 0.0 : 1.0;
  rep.total = weights.tex_l1 * w_tex * rep.tex_l1 + weights.tex_pyramid * w_tex * rep.tex_pyramid +
              weights.mask_mse * rep.mask_mse + weights.mask_bidt * rep.mask_bidt +
              weights.edge * rep.edge + weights.laplacian * rep.laplacian;
  if (!std::isfinite(rep.total))
    throw error(errc::diverged, "forward_backward: non-finite value in forward loss");

  // ---- backward ----
  std::vector<Vec3> adj_verts(nv, Vec3{});
  std::vector<Vec3> adj_vn(nv, Vec3{});
  std::vector<CameraGrad> adj_cams(n);
  std::vector<std::vector<Vec2>> adj_pm_ndc(n, std::vector<Vec2>(nv, Vec2{}));
  std::vector<std::vector<double>> adj_pm_z(n, std::vector<double>(nv, 0.0));
  std::vector<ImageGray> adj_depths(n, ImageGray(W, H, 0.0));
  std::vector<ImageGray*> depth_ptrs(n, nullptr);
  if (!gcfg.detach_depth)
    for (int i = 0; i < n; i++) depth_ptrs[i] = &adj_depths[i];

  const double a_tex_l1 = weights.tex_l1 * w_tex;
  const double a_tex_pyr = weights.tex_pyramid * w_tex;

  for (int i = 0; i < n; i++) {
    // per-image adjoints of this view's scalar loss terms
    ImageRGB adj_rendered(W, H, 0.0);
    if (!warm) {
      if (a_tex_l1 != 0)
        tex_l1_backward(rendereds[i], images[i], mask_unions[i], a_tex_l1, adj_rendered);
      if (a_tex_pyr != 0)
        tex_pyramid_backward(rendereds[i], images[i], mask_unions[i], a_tex_pyr, adj_rendered);
    }
    ImageGray adj_sil(W, H, 0.0);
    mask_mse_backward(sils[i], masks[i], weights.mask_mse, adj_sil);

    std::vector<Vec2> adj_phat;
    bidt_loss(spss[i], sils[i], masks[i], tau_min, tau_max, &adj_phat);
    const double bidt_scale = weights.mask_bidt / double(W * H);

    const ViewFrame& vf = frames[i];
    size_t cursor = 0;
    for (int y = 0; y < H; y++)
      for (int x = 0; x < W; x++) {
        const Fragment* frags = fbs[i].at(x, y);
        int cnt = fbs[i].count(x, y);
        bool in_sps = sils[i].at(x, y) > 0.5;
        Vec3 adj_rgb = warm ? Vec3{} : rgb_at(adj_rendered, x, y);
        double adj_A = adj_sil.at(x, y);
        Vec2 adj_ph{};
        if (in_sps) {
          adj_ph = adj_phat[cursor] * bidt_scale;
          cursor++;
        }
        if (cnt == 0) continue;
        bool any = adj_A != 0 || adj_rgb.x != 0 || adj_rgb.y != 0 || adj_rgb.z != 0 ||
                   adj_ph.x != 0 || adj_ph.y != 0;
        if (!any) continue;

        // recompute the forward pixel state
        Vec3 colors[kMaxFacesPerPixel] = {};
        Vec3 pts[kMaxFacesPerPixel];
        Vec3 nws[kMaxFacesPerPixel];
        double nls[kMaxFacesPerPixel];
        for (int k = 0; k < cnt; k++) {
          const Fragment& f = frags[k];
          const auto& face = mesh.faces[f.face];
          pts[k] = verts[face[0]] * f.bary[0] + verts[face[1]] * f.bary[1] +
                   verts[face[2]] * f.bary[2];
          if (!warm) {
            Vec3 nw = vn.n[face[0]] * f.bary[0] + vn.n[face[1]] * f.bary[1] +
                      vn.n[face[2]] * f.bary[2];
            nls[k] = norm(nw);
            nws[k] = nls[k] > 1e-20 ? nw * (1.0 / nls[k]) : Vec3{0, 0, 1};
            colors[k] = texture_eval_color(pts[k], nws[k], views, frames, i, tcfg);
          }
        }
        BlendResult blend = softmax_blend(frags, cnt, colors, bg, rcfg);

        Vec3 adj_pts[kMaxFacesPerPixel] = {};
        double adj_bary[kMaxFacesPerPixel][3] = {};
        double adj_d2[kMaxFacesPerPixel] = {};
        double adj_zf[kMaxFacesPerPixel] = {};
        double adj_w[kMaxFacesPerPixel] = {};

        // soft pixel location p_hat = sum_k (w_k / wf) * P_k
        if (in_sps && (adj_ph.x != 0 || adj_ph.y != 0)) {
          double wf = 0;
          for (int k = 0; k < cnt; k++) wf += blend.w[k];
          if (wf > 1e-12) {
            Vec2 ph{};
            Vec2 P[kMaxFacesPerPixel];
            for (int k = 0; k < cnt; k++) {
              Vec2 ndc = project(cameras[i], pts[k], rcfg.z_near).ndc;
              P[k] = Vec2{ndc_to_pixel(ndc.x, W), ndc_to_pixel(ndc.y, H)};
              ph += P[k] * (blend.w[k] / wf);
            }
            for (int k = 0; k < cnt; k++) {
              double u = blend.w[k] / wf;
              adj_w[k] += dot(adj_ph, P[k] - ph) / wf;
              Vec2 adj_ndc{adj_ph.x * u * (W / 2.0), adj_ph.y * u * (H / 2.0)};
              project_backward(cameras[i], vf.R, vf.dR, pts[k], adj_ndc, 0.0, adj_pts[k],
                               adj_cams[i]);
            }
          }
        }

        // color compositing and blend-weight adjoints
        Vec3 adj_colors[kMaxFacesPerPixel] = {};
        softmax_blend_backward(frags, cnt, colors, bg, rcfg, adj_rgb, adj_w, 0.0, adj_colors,
                               adj_d2, adj_zf);

        // silhouette A = 1 - prod_k (1 - sigma_k)
        if (adj_A != 0) {
          double one_minus[kMaxFacesPerPixel];
          for (int k = 0; k < cnt; k++)
            one_minus[k] = 1.0 - occupancy_sigmoid(frags[k].d2, rcfg.blur_radius);
          for (int k = 0; k < cnt; k++) {
            double excl = 1.0;
            for (int j = 0; j < cnt; j++)
              if (j != k) excl *= one_minus[j];
            double sig = 1.0 - one_minus[k];
            if (rcfg.blur_radius > 0)
              adj_d2[k] += adj_A * excl * (-sig * (1.0 - sig) / rcfg.blur_radius);
          }
        }

        // texture colors back to surface points, normals, cameras, depth maps
        for (int k = 0; k < cnt; k++) {
          const Fragment& f = frags[k];
          const auto& face = mesh.faces[f.face];
          if (!warm &&
              (adj_colors[k].x != 0 || adj_colors[k].y != 0 || adj_colors[k].z != 0)) {
            Vec3 adj_nw{};
            texture_eval_backward(pts[k], nws[k], views, frames, i, tcfg, adj_colors[k],
                                  adj_pts[k], adj_nw, adj_cams.data(), depth_ptrs.data());
            if (nls[k] > 1e-20) {
              Vec3 raw = (adj_nw - nws[k] * dot(nws[k], adj_nw)) * (1.0 / nls[k]);
              for (int v = 0; v < 3; v++) {
                adj_vn[face[v]] += raw * f.bary[v];
                adj_bary[k][v] += dot(vn.n[face[v]], raw);
              }
            }
          }
          for (int v = 0; v < 3; v++) {
            adj_verts[face[v]] += adj_pts[k] * f.bary[v];
            adj_bary[k][v] += dot(verts[face[v]], adj_pts[k]);
          }
        }

        // fragment state back to projected vertices
        Vec2 p{pixel_to_ndc(x, W), pixel_to_ndc(y, H)};
        for (int k = 0; k < cnt; k++) {
          const Fragment& f = frags[k];
          if (adj_bary[k][0] == 0 && adj_bary[k][1] == 0 && adj_bary[k][2] == 0 &&
              adj_zf[k] == 0 && adj_d2[k] == 0)
            continue;
          const auto& face = mesh.faces[f.face];
          Vec2 q[3] = {pms[i].ndc[face[0]], pms[i].ndc[face[1]], pms[i].ndc[face[2]]};
          double zv[3] = {pms[i].z[face[0]], pms[i].z[face[1]], pms[i].z[face[2]]};
          Vec2 adj_q[3] = {};
          double adj_zv[3] = {0, 0, 0};
          fragment_backward(p, q, zv, f, adj_bary[k], adj_zf[k], adj_d2[k], adj_q, adj_zv);
          for (int v = 0; v < 3; v++) {
            adj_pm_ndc[i][face[v]] += adj_q[v];
            adj_pm_z[i][face[v]] += adj_zv[v];
          }
        }
      }
    check_finite_grads(adj_verts, adj_cams, "pixel backward");
  }

  // depth maps are renders of the same mesh: fold their adjoints into the
  // recorded nearest fragment of each pixel (identity frozen)
  if (!gcfg.detach_depth) {
    for (int j = 0; j < n; j++) {
      for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
          double a = adj_depths[j].at(x, y);
          if (a == 0) continue;
          int slot = dms[j].frag_at(x, y);
          if (slot < 0) continue;
          const Fragment& f = fbs[j].frags[slot];
          const auto& face = mesh.faces[f.face];
          Vec2 p{pixel_to_ndc(x, W), pixel_to_ndc(y, H)};
          Vec2 q[3] = {pms[j].ndc[face[0]], pms[j].ndc[face[1]], pms[j].ndc[face[2]]};
          double zv[3] = {pms[j].z[face[0]], pms[j].z[face[1]], pms[j].z[face[2]]};
          Vec2 adj_q[3] = {};
          double adj_zv[3] = {0, 0, 0};
          double zero_bary[3] = {0, 0, 0};
          fragment_backward(p, q, zv, f, zero_bary, a, 0.0, adj_q, adj_zv);
          for (int v = 0; v < 3; v++) {
            adj_pm_ndc[j][face[v]] += adj_q[v];
            adj_pm_z[j][face[v]] += adj_zv[v];
          }
        }
    }
  }

  // projected vertices back to world vertices and cameras
  for (int j = 0; j < n; j++) {
    for (int v = 0; v < nv; v++) {
      const Vec2& andc = adj_pm_ndc[j][v];
      double az = adj_pm_z[j][v];
      if (andc.x == 0 && andc.y == 0 && az == 0) continue;
      project_backward(cameras[j], frames[j].R, frames[j].dR, verts[v], andc, az, adj_verts[v],
                       adj_cams[j]);
    }
  }
  check_finite_grads(adj_verts, adj_cams, "projection backward");

  // vertex normals and geometry regularizers
  vertex_normals_backward(verts, mesh.faces, vn, adj_vn, adj_verts);
  edge_loss_backward(verts, regs.edges, regs.rest_len, weights.edge, adj_verts);
  laplacian_loss_backward(verts, regs.lap, weights.laplacian, adj_verts);
  check_finite_grads(adj_verts, adj_cams, "geometry backward");

  for (int v = 0; v < nv; v++) tape.d_offsets[v] += adj_verts[v];
  for (int j = 0; j < n; j++) tape.d_cams[j].accumulate(adj_cams[j]);
  return rep;
}

// ---------------------------------------------------------------------------
// finite_diff_check
// ---------------------------------------------------------------------------

FdReport finite_diff_check(const std::function<double()>& loss_fn,
                           const std::vector<double*>& params,
                           const std::vector<double>& analytic_grad,
                           const std::vector<int>& coords, double step) {
  if (params.size() != analytic_grad.size())
    throw error(errc::invalid_argument, "finite_diff_check: grad size mismatch");
  FdReport rep;
  for (int c : coords) {
    if (c < 0 || c >= int(params.size()))
      throw error(errc::invalid_argument, "finite_diff_check: coordinate out of range");
    double* p = params[c];
    const double orig = *p;
    *p = orig + step;
    double up = loss_fn();
    *p = orig - step;
    double dn = loss_fn();
    *p = orig;
    FdEntry e;
    e.coord = c;
    e.fd = (up - dn) / (2 * step);
    e.analytic = analytic_grad[c];
    double denom = std::max({std::abs(e.fd), std::abs(e.analytic), 1e-8});
    e.rel_err = std::abs(e.fd - e.analytic) / denom;
    rep.entries.push_back(e);
    rep.n_checked++;
    if (e.rel_err > rep.max_rel_err) {
      rep.max_rel_err = e.rel_err;
      rep.worst_coord = c;
    }
  }
  return rep;
}

}  // namespace ds
