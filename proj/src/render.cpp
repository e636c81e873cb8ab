#include "clothfit/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Geometry>

#include "clothfit/error.hpp"
#include "parallel.hpp"

namespace clothfit {

namespace {

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline Vec2 pixel_center(int x, int y) { return Vec2(x + 0.5, y + 0.5); }

struct ScreenMesh {
  std::vector<Vec3> cam;  // camera-space positions
  std::vector<Vec2> uv;
  std::vector<double> depth;
};

ScreenMesh project_mesh(const TriMesh& mesh, const Camera& camera) {
  const auto n = static_cast<std::size_t>(mesh.num_vertices());
  ScreenMesh s;
  s.cam.resize(n);
  s.uv.resize(n);
  s.depth.resize(n);
  const Positions& v = mesh.vertices();
  for (std::size_t i = 0; i < n; ++i) {
    s.cam[i] = camera.to_camera(v.row(static_cast<Eigen::Index>(i)).transpose());
    const Projected p = project(camera, s.cam[i]);
    s.uv[i] = p.uv;
    s.depth[i] = p.depth;
  }
  return s;
}

// Screen-space barycentric weights of q; returns false when q lies outside.
inline bool barycentric(const Vec2& p0, const Vec2& p1, const Vec2& p2, double area, const Vec2& q,
                        std::array<double, 3>& w) {
  w[0] = cross2(p1 - q, p2 - q) / area;
  w[1] = cross2(p2 - q, p0 - q) / area;
  w[2] = cross2(p0 - q, p1 - q) / area;
  return w[0] >= 0.0 && w[1] >= 0.0 && w[2] >= 0.0;
}

void check_fragments(const Fragments& fr, const TriMesh& mesh, const Camera& camera) {
  if (fr.topology != mesh.topology_id()) {
    throw InvalidArgument("render: fragments were rasterized for a different mesh topology");
  }
  if (fr.width != camera.width || fr.height != camera.height) {
    throw InvalidArgument("render: fragments were rasterized at a different image size");
  }
}

// Camera-space vertex normals plus the raw (unnormalized) world sums for
// backprop.
struct CameraNormals {
  Positions world;
  Positions raw;
  std::vector<Vec3> cam;
};

CameraNormals camera_normals(const TriMesh& mesh, const Camera& camera) {
  CameraNormals out;
  accumulate_vertex_normals(mesh.vertices(), mesh.faces(), out.world, &out.raw);
  out.cam.resize(static_cast<std::size_t>(out.world.rows()));
  for (Eigen::Index i = 0; i < out.world.rows(); ++i) {
    out.cam[static_cast<std::size_t>(i)] = camera.rotation * out.world.row(i).transpose();
  }
  return out;
}

// Signed distance of q to the silhouette edge described by `s`, with its
// derivatives with respect to the two projected endpoints.
struct EdgeDistance {
  double sd;
  Vec2 d_a, d_b;
};

EdgeDistance edge_distance(const SilhouetteSample& s, const Vec2& a, const Vec2& b, const Vec2& q) {
  EdgeDistance r{0.0, Vec2::Zero(), Vec2::Zero()};
  if (s.mode == 0) {
    const Vec2 e = b - a;
    const Vec2 f = q - a;
    const double len = e.norm();
    const double c = cross2(e, f);
    r.sd = s.inner * c / len;
    // dc/de = (f.y, -f.x), dc/df = (-e.y, e.x); de/da = -I, de/db = I, df/da = -I.
    const Vec2 dc_de(f.y(), -f.x());
    const Vec2 dc_df(-e.y(), e.x());
    const Vec2 dlen_de = e / len;
    const Vec2 dsd_de = s.inner * (dc_de / len - c * dlen_de / (len * len));
    const Vec2 dsd_df = s.inner * dc_df / len;
    r.d_a = -dsd_de - dsd_df;
    r.d_b = dsd_de;
    return r;
  }
  const Vec2& p = s.mode == 1 ? a : b;
  const Vec2 diff = q - p;
  const double dist = diff.norm();
  r.sd = s.sign * dist;
  if (dist > 0.0) {
    const Vec2 g = -s.sign * diff / dist;
    (s.mode == 1 ? r.d_a : r.d_b) = g;
  }
  return r;
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Fragments rasterize(const TriMesh& mesh, const Camera& camera, const RenderOptions& options) {
  camera.validate();
  if (mesh.empty()) throw InvalidArgument("render: empty mesh");
  if (options.tile_size <= 0) throw InvalidArgument("render: tile size must be positive");

  const int width = camera.width;
  const int height = camera.height;
  const int tile = options.tile_size;
  Fragments fr;
  fr.width = width;
  fr.height = height;
  fr.topology = mesh.topology_id();
  fr.options = options;
  fr.tiles_x = (width + tile - 1) / tile;
  fr.tiles_y = (height + tile - 1) / tile;
  fr.tile_faces.assign(static_cast<std::size_t>(fr.tiles_x * fr.tiles_y), {});
  fr.face.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), -1);

  const ScreenMesh sm = project_mesh(mesh, camera);
  const Faces& faces = mesh.faces();
  const auto nf = static_cast<int>(faces.rows());
  fr.face_sign.assign(static_cast<std::size_t>(nf), 0);
  std::vector<double> area(static_cast<std::size_t>(nf), 0.0);
  std::vector<std::array<int, 4>> bounds(static_cast<std::size_t>(nf));

  for (int f = 0; f < nf; ++f) {
    const int i0 = faces(f, 0), i1 = faces(f, 1), i2 = faces(f, 2);
    if (sm.depth[i0] <= options.near_plane || sm.depth[i1] <= options.near_plane ||
        sm.depth[i2] <= options.near_plane) {
      continue;
    }
    const Vec2 &p0 = sm.uv[i0], &p1 = sm.uv[i1], &p2 = sm.uv[i2];
    const double a = cross2(p1 - p0, p2 - p0);
    if (!(std::abs(a) > 1e-12)) continue;
    ++fr.visible_faces;
    const Vec3 nc = (sm.cam[i1] - sm.cam[i0]).cross(sm.cam[i2] - sm.cam[i0]);
    fr.face_sign[f] = nc.dot(-sm.cam[i0]) >= 0.0 ? 1 : -1;
    area[f] = a;
    const double umin = std::min({p0.x(), p1.x(), p2.x()}), umax = std::max({p0.x(), p1.x(), p2.x()});
    const double vmin = std::min({p0.y(), p1.y(), p2.y()}), vmax = std::max({p0.y(), p1.y(), p2.y()});
    const int x0 = std::max(0, static_cast<int>(std::ceil(umin - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(umax - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(vmin - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(vmax - 0.5)));
    bounds[f] = {x0, y0, x1, y1};
    if (x0 > x1 || y0 > y1) continue;
    for (int ty = y0 / tile; ty <= y1 / tile; ++ty) {
      for (int tx = x0 / tile; tx <= x1 / tile; ++tx) {
        fr.tile_faces[static_cast<std::size_t>(ty * fr.tiles_x + tx)].push_back(f);
      }
    }
  }
  if (fr.visible_faces == 0) throw GeometryError("render: no face lies in front of the camera");

  detail::parallel_for(fr.tiles_x * fr.tiles_y, [&](int t) {
    const int tx = t % fr.tiles_x, ty = t / fr.tiles_x;
    const int x0 = tx * tile, y0 = ty * tile;
    const int x1 = std::min(x0 + tile, width) - 1, y1 = std::min(y0 + tile, height) - 1;
    std::vector<double> best(static_cast<std::size_t>(tile * tile), 0.0);  // interpolated 1/depth
    std::array<double, 3> w{};
    for (int f : fr.tile_faces[static_cast<std::size_t>(t)]) {
      const auto& b = bounds[f];
      const int i0 = faces(f, 0), i1 = faces(f, 1), i2 = faces(f, 2);
      const Vec2 &p0 = sm.uv[i0], &p1 = sm.uv[i1], &p2 = sm.uv[i2];
      const double inv0 = 1.0 / sm.depth[i0], inv1 = 1.0 / sm.depth[i1], inv2 = 1.0 / sm.depth[i2];
      for (int y = std::max(y0, b[1]); y <= std::min(y1, b[3]); ++y) {
        for (int x = std::max(x0, b[0]); x <= std::min(x1, b[2]); ++x) {
          if (!barycentric(p0, p1, p2, area[f], pixel_center(x, y), w)) continue;
          const double inv = w[0] * inv0 + w[1] * inv1 + w[2] * inv2;
          double& slot = best[static_cast<std::size_t>((y - y0) * tile + (x - x0))];
          if (inv > slot) {
            slot = inv;
            fr.face[static_cast<std::size_t>(y) * width + x] = f;
          }
        }
      }
    }
  });

  if (!(options.sharpness > 0.0)) return fr;

  // Soft silhouette band. Candidate edges: mesh boundary edges, and interior
  // edges whose two faces project to the same side (contours).
  const double band = options.band_sigmas / options.sharpness;
  const Topology& topo = mesh.topology();
  std::vector<double> best_dist(fr.face.size(), std::numeric_limits<double>::infinity());
  std::vector<SilhouetteSample> record(fr.face.size());
  constexpr double kProbe = 1e-3;

  auto probe_covered = [&](const Vec2& q, int skip0, int skip1) {
    const int tx = std::clamp(static_cast<int>(std::floor(q.x() / tile)), 0, fr.tiles_x - 1);
    const int ty = std::clamp(static_cast<int>(std::floor(q.y() / tile)), 0, fr.tiles_y - 1);
    std::array<double, 3> w{};
    for (int f : fr.tile_faces[static_cast<std::size_t>(ty * fr.tiles_x + tx)]) {
      if (f == skip0 || f == skip1) continue;
      if (barycentric(sm.uv[faces(f, 0)], sm.uv[faces(f, 1)], sm.uv[faces(f, 2)], area[f], q, w)) return true;
    }
    return false;
  };

  for (Eigen::Index e = 0; e < topo.edges.rows(); ++e) {
    const int v0 = topo.edges(e, 0), v1 = topo.edges(e, 1);
    const Vec2 a = sm.uv[v0], b = sm.uv[v1];
    const Vec2 ab = b - a;
    const double len = ab.norm();
    if (!(len > 1e-12)) continue;
    int sides[2] = {0, 0};
    int adj[2] = {-1, -1};
    int n_adj = 0;
    for (int k = 0; k < std::min<int>(2, topo.edge_face_count[e]); ++k) {
      const int f = topo.edge_faces(e, k);
      if (f < 0 || fr.face_sign[f] == 0) continue;
      int third = faces(f, 0);
      for (int c = 0; c < 3; ++c) {
        if (faces(f, c) != v0 && faces(f, c) != v1) third = faces(f, c);
      }
      const double side = cross2(ab, sm.uv[third] - a);
      if (side == 0.0) continue;
      adj[n_adj] = f;
      sides[n_adj++] = side > 0.0 ? 1 : -1;
    }
    if (n_adj == 0 || (n_adj == 2 && sides[0] != sides[1])) continue;
    const int inner = sides[0];
    const Vec2 outward = -inner * Vec2(-ab.y(), ab.x()) / len;

    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - band)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + band)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - band)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + band)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Vec2 q = pixel_center(x, y);
        const double t = (q - a).dot(ab) / (len * len);
        const double sd_line = inner * cross2(ab, q - a) / len;
        SilhouetteSample s{static_cast<std::uint32_t>(y * width + x), v0, v1, 0, static_cast<std::int8_t>(inner), 1};
        double dist;
        if (t >= 0.0 && t <= 1.0) {
          dist = std::abs(sd_line);
        } else {
          s.mode = t < 0.0 ? 1 : 2;
          dist = (q - (t < 0.0 ? a : b)).norm();
        }
        s.sign = sd_line >= 0.0 ? 1 : -1;
        if (dist >= band || dist >= best_dist[s.pixel]) continue;
        const bool covered = fr.face[s.pixel] >= 0;
        if (covered != (s.sign > 0)) continue;
        const Vec2 foot = a + std::clamp(t, 0.0, 1.0) * ab;
        if (probe_covered(foot + kProbe * outward, adj[0], adj[1])) continue;
        best_dist[s.pixel] = dist;
        record[s.pixel] = s;
      }
    }
  }
  for (std::size_t p = 0; p < record.size(); ++p) {
    if (std::isfinite(best_dist[p])) fr.silhouette.push_back(record[p]);
  }
  return fr;
}

NormalImage shade_normals(const TriMesh& mesh, const Camera& camera, const Fragments& fr) {
  check_fragments(fr, mesh, camera);
  const ScreenMesh sm = project_mesh(mesh, camera);
  const CameraNormals cn = camera_normals(mesh, camera);
  const Faces& faces = mesh.faces();
  NormalImage img(fr.width, fr.height);
  std::array<double, 3> w{};
  for (int y = 0; y < fr.height; ++y) {
    for (int x = 0; x < fr.width; ++x) {
      const int f = fr.face[static_cast<std::size_t>(y) * fr.width + x];
      if (f < 0) continue;
      const int i0 = faces(f, 0), i1 = faces(f, 1), i2 = faces(f, 2);
      const double a = cross2(sm.uv[i1] - sm.uv[i0], sm.uv[i2] - sm.uv[i0]);
      barycentric(sm.uv[i0], sm.uv[i1], sm.uv[i2], a, pixel_center(x, y), w);
      const Vec3 m = fr.face_sign[f] * (w[0] * cn.cam[i0] + w[1] * cn.cam[i1] + w[2] * cn.cam[i2]);
      const double len = m.norm();
      if (!(len > 0.0)) continue;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = m(c) / len;
    }
  }
  return img;
}

MaskImage shade_silhouette(const TriMesh& mesh, const Camera& camera, const Fragments& fr) {
  check_fragments(fr, mesh, camera);
  MaskImage img(fr.width, fr.height);
  for (std::size_t p = 0; p < fr.face.size(); ++p) img.data()[p] = fr.face[p] >= 0 ? 1.0 : 0.0;
  if (fr.silhouette.empty()) return img;
  const ScreenMesh sm = project_mesh(mesh, camera);
  for (const auto& s : fr.silhouette) {
    const Vec2 q = pixel_center(static_cast<int>(s.pixel % fr.width), static_cast<int>(s.pixel / fr.width));
    const EdgeDistance d = edge_distance(s, sm.uv[s.v0], sm.uv[s.v1], q);
    img.data()[s.pixel] = sigmoid(fr.options.sharpness * d.sd);
  }
  return img;
}

NormalImage render_normals(const TriMesh& mesh, const Camera& camera, Fragments* fragments,
                           const RenderOptions& options) {
  Fragments local = rasterize(mesh, camera, options);
  NormalImage img = shade_normals(mesh, camera, local);
  if (fragments) *fragments = std::move(local);
  return img;
}

MaskImage render_silhouette(const TriMesh& mesh, const Camera& camera, double sharpness, Fragments* fragments) {
  if (!(sharpness > 0.0)) throw InvalidArgument("render: silhouette sharpness must be positive");
  RenderOptions options;
  options.sharpness = sharpness;
  Fragments local = rasterize(mesh, camera, options);
  MaskImage img = shade_silhouette(mesh, camera, local);
  if (fragments) *fragments = std::move(local);
  return img;
}

Positions backprop_image_loss(const NormalImage* normal_adjoint, const MaskImage* silhouette_adjoint,
                              const Fragments& fr, const TriMesh& mesh, const Camera& camera) {
  check_fragments(fr, mesh, camera);
  if (normal_adjoint && (normal_adjoint->width() != fr.width || normal_adjoint->height() != fr.height)) {
    throw InvalidArgument("render backprop: normal adjoint size differs from the fragments");
  }
  if (silhouette_adjoint && (silhouette_adjoint->width() != fr.width || silhouette_adjoint->height() != fr.height)) {
    throw InvalidArgument("render backprop: silhouette adjoint size differs from the fragments");
  }
  const auto n = static_cast<std::size_t>(mesh.num_vertices());
  const ScreenMesh sm = project_mesh(mesh, camera);
  std::vector<Vec2> screen_grad(n, Vec2::Zero());
  std::vector<Vec3> cam_normal_grad(n, Vec3::Zero());
  const Faces& faces = mesh.faces();
  CameraNormals cn;

  if (normal_adjoint) {
    cn = camera_normals(mesh, camera);
    const int tile = fr.options.tile_size;
    // Slot layout per tile: (face in tile bin, corner) -> screen and normal
    // partials. Reduced below in tile order so the sum is reproducible.
    struct Partial {
      Vec2 screen = Vec2::Zero();
      Vec3 normal = Vec3::Zero();
    };
    std::vector<std::vector<Partial>> partials(fr.tile_faces.size());
    detail::parallel_for(static_cast<int>(fr.tile_faces.size()), [&](int t) {
      const auto& bin = fr.tile_faces[static_cast<std::size_t>(t)];
      auto& slots = partials[static_cast<std::size_t>(t)];
      slots.assign(bin.size() * 3, Partial{});
      const int tx = t % fr.tiles_x, ty = t / fr.tiles_x;
      const int x0 = tx * tile, y0 = ty * tile;
      const int x1 = std::min(x0 + tile, fr.width), y1 = std::min(y0 + tile, fr.height);
      std::array<double, 3> w{};
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const std::size_t pix = static_cast<std::size_t>(y) * fr.width + x;
          const int f = fr.face[pix];
          if (f < 0) continue;
          const Vec3 g(normal_adjoint->data()[3 * pix], normal_adjoint->data()[3 * pix + 1],
                       normal_adjoint->data()[3 * pix + 2]);
          if (g.isZero(0.0)) continue;
          const int idx[3] = {faces(f, 0), faces(f, 1), faces(f, 2)};
          const Vec2 p[3] = {sm.uv[idx[0]], sm.uv[idx[1]], sm.uv[idx[2]]};
          const double area = cross2(p[1] - p[0], p[2] - p[0]);
          const Vec2 q = pixel_center(x, y);
          barycentric(p[0], p[1], p[2], area, q, w);
          const double s = fr.face_sign[f];
          const Vec3 m = s * (w[0] * cn.cam[idx[0]] + w[1] * cn.cam[idx[1]] + w[2] * cn.cam[idx[2]]);
          const double len = m.norm();
          if (!(len > 0.0)) continue;
          const Vec3 out = m / len;
          const Vec3 m_bar = (g - out * out.dot(g)) / len;
          double w_bar[3];
          for (int k = 0; k < 3; ++k) w_bar[k] = s * cn.cam[idx[k]].dot(m_bar);
          // w_k = e_k / area. e_k and area are functions of the projected corners.
          const double dot_ww = w_bar[0] * w[0] + w_bar[1] * w[1] + w_bar[2] * w[2];
          double e_bar[3];
          for (int k = 0; k < 3; ++k) e_bar[k] = (w_bar[k] - dot_ww) / area;
          // e_k = cross2(p_{k+1} - q, p_{k+2} - q); d cross2(u, v) = (v.y, -v.x) du + (-u.y, u.x) dv.
          Vec2 p_bar[3] = {Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
          for (int k = 0; k < 3; ++k) {
            const Vec2 u = p[(k + 1) % 3] - q;
            const Vec2 v = p[(k + 2) % 3] - q;
            p_bar[(k + 1) % 3] += e_bar[k] * Vec2(v.y(), -v.x());
            p_bar[(k + 2) % 3] += e_bar[k] * Vec2(-u.y(), u.x());
          }
          const auto slot =
              static_cast<std::size_t>(std::lower_bound(bin.begin(), bin.end(), f) - bin.begin()) * 3;
          for (int k = 0; k < 3; ++k) {
            slots[slot + k].screen += p_bar[k];
            slots[slot + k].normal += s * w[k] * m_bar;
          }
        }
      }
    });
    for (std::size_t t = 0; t < partials.size(); ++t) {
      const auto& bin = fr.tile_faces[t];
      for (std::size_t i = 0; i < bin.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
          const auto v = static_cast<std::size_t>(faces(bin[i], k));
          screen_grad[v] += partials[t][3 * i + k].screen;
          cam_normal_grad[v] += partials[t][3 * i + k].normal;
        }
      }
    }
  }

  if (silhouette_adjoint) {
    const double sharp = fr.options.sharpness;
    for (const auto& s : fr.silhouette) {
      const double g = silhouette_adjoint->data()[s.pixel];
      if (g == 0.0) continue;
      const Vec2 q = pixel_center(static_cast<int>(s.pixel % fr.width), static_cast<int>(s.pixel / fr.width));
      const EdgeDistance d = edge_distance(s, sm.uv[s.v0], sm.uv[s.v1], q);
      const double sig = sigmoid(sharp * d.sd);
      const double coef = g * sharp * sig * (1.0 - sig);
      screen_grad[static_cast<std::size_t>(s.v0)] += coef * d.d_a;
      screen_grad[static_cast<std::size_t>(s.v1)] += coef * d.d_b;
    }
  }

  Positions grad = Positions::Zero(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    if (screen_grad[i].isZero(0.0)) continue;
    const Vec3 cam_grad = projection_jacobian(camera, sm.cam[i]).transpose() * screen_grad[i];
    grad.row(static_cast<Eigen::Index>(i)) = (camera.rotation.transpose() * cam_grad).transpose();
  }
  if (normal_adjoint) {
    Positions world_normal_grad(static_cast<Eigen::Index>(n), 3);
    for (std::size_t i = 0; i < n; ++i) {
      world_normal_grad.row(static_cast<Eigen::Index>(i)) = (camera.rotation.transpose() * cam_normal_grad[i]).transpose();
    }
    vertex_normals_vjp(mesh.vertices(), faces, cn.raw, world_normal_grad, grad);
  }
  return grad;
}

}  // namespace clothfit
