#include "clothfit/collision.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "clothfit/error.hpp"

namespace clothfit {

namespace {

constexpr int kLeafSize = 4;

// Closest point on triangle abc to p (Ericson, Real-Time Collision
// Detection, 5.1.5).
Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

// Moller-Trumbore; true for a hit with t > 0.
bool ray_hits(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 h = d.cross(e2);
  const double det = e1.dot(h);
  if (std::abs(det) < 1e-18) return false;
  const double inv = 1.0 / det;
  const Vec3 s = o - a;
  const double u = s.dot(h) * inv;
  if (u < 0.0 || u > 1.0) return false;
  const Vec3 q = s.cross(e1);
  const double v = d.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return false;
  return e2.dot(q) * inv > 0.0;
}

bool ray_box(const Vec3& o, const Vec3& inv_d, const Eigen::AlignedBox3d& box) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    double a = (box.min()(k) - o(k)) * inv_d(k), b = (box.max()(k) - o(k)) * inv_d(k);
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return false;
  }
  return true;
}

const Vec3 kRays[3] = {Vec3(0.5773, 0.5774, 0.5775).normalized(), Vec3(-0.6123, 0.3536, -0.7071).normalized(),
                       Vec3(0.2673, -0.8018, 0.5345).normalized()};

}  // namespace

BodyCollider::BodyCollider(const TriMesh& body) : body_(body) {
  if (body_.num_faces() == 0) throw GeometryError("collision body has no faces");
  const Topology& t = body_.topology();
  for (std::size_t e = 0; e < t.edge_face_count.size(); ++e) {
    if (t.edge_face_count[e] != 2) {
      throw GeometryError("collision body is not watertight: edge " + std::to_string(t.edges(static_cast<Eigen::Index>(e), 0)) +
                          "-" + std::to_string(t.edges(static_cast<Eigen::Index>(e), 1)) + " borders " +
                          std::to_string(t.edge_face_count[e]) + " faces");
    }
  }
  const auto nf = static_cast<int>(body_.num_faces());
  order_.resize(static_cast<std::size_t>(nf));
  centroids_.resize(static_cast<std::size_t>(nf));
  for (int f = 0; f < nf; ++f) {
    order_[static_cast<std::size_t>(f)] = f;
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < 3; ++k) c += body_.vertices().row(body_.faces()(f, k)).transpose();
    centroids_[static_cast<std::size_t>(f)] = c / 3.0;
  }
  nodes_.reserve(static_cast<std::size_t>(2 * nf / kLeafSize + 2));
  build(0, nf);
}

int BodyCollider::build(int first, int count) {
  const int index = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  for (int i = first; i < first + count; ++i) {
    const int f = order_[static_cast<std::size_t>(i)];
    for (int k = 0; k < 3; ++k) box.extend(body_.vertices().row(body_.faces()(f, k)).transpose());
  }
  nodes_[static_cast<std::size_t>(index)].box = box;
  if (count <= kLeafSize) {
    nodes_[static_cast<std::size_t>(index)].first = first;
    nodes_[static_cast<std::size_t>(index)].count = count;
    return index;
  }
  int axis;
  box.sizes().maxCoeff(&axis);
  const int half = count / 2;
  std::nth_element(order_.begin() + first, order_.begin() + first + half, order_.begin() + first + count,
                   [&](int a, int b) {
                     return centroids_[static_cast<std::size_t>(a)](axis) < centroids_[static_cast<std::size_t>(b)](axis);
                   });
  const int left = build(first, half);
  const int right = build(first + half, count - half);
  nodes_[static_cast<std::size_t>(index)].left = left;
  nodes_[static_cast<std::size_t>(index)].right = right;
  return index;
}

int BodyCollider::crossings(const Vec3& origin, const Vec3& dir) const {
  const Vec3 inv = dir.cwiseInverse();
  int hits = 0;
  std::vector<int> stack = {0};
  while (!stack.empty()) {
    const Node& n = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    if (!ray_box(origin, inv, n.box)) continue;
    if (n.left < 0) {
      for (int i = n.first; i < n.first + n.count; ++i) {
        const int f = order_[static_cast<std::size_t>(i)];
        const Vec3 a = body_.vertices().row(body_.faces()(f, 0)), b = body_.vertices().row(body_.faces()(f, 1)),
                   c = body_.vertices().row(body_.faces()(f, 2));
        if (ray_hits(origin, dir, a, b, c)) ++hits;
      }
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  return hits;
}

bool BodyCollider::inside(const Vec3& p) const {
  if (!nodes_[0].box.contains(p)) return false;
  int votes = 0;
  for (const Vec3& d : kRays) votes += crossings(p, d) % 2;
  return votes >= 2;
}

BodyCollider::Closest BodyCollider::closest(const Vec3& p) const {
  Closest best;
  double best_sq = std::numeric_limits<double>::infinity();
  std::vector<int> stack = {0};
  while (!stack.empty()) {
    const Node& n = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    if (n.box.squaredExteriorDistance(p) >= best_sq) continue;
    if (n.left < 0) {
      for (int i = n.first; i < n.first + n.count; ++i) {
        const int f = order_[static_cast<std::size_t>(i)];
        const Vec3 q = closest_on_triangle(p, body_.vertices().row(body_.faces()(f, 0)),
                                           body_.vertices().row(body_.faces()(f, 1)),
                                           body_.vertices().row(body_.faces()(f, 2)));
        const double d = (q - p).squaredNorm();
        if (d < best_sq) {
          best_sq = d;
          best.point = q;
          best.face = f;
        }
      }
    } else {
      // Visit the nearer child first.
      const double dl = nodes_[static_cast<std::size_t>(n.left)].box.squaredExteriorDistance(p);
      const double dr = nodes_[static_cast<std::size_t>(n.right)].box.squaredExteriorDistance(p);
      if (dl < dr) {
        stack.push_back(n.right);
        stack.push_back(n.left);
      } else {
        stack.push_back(n.left);
        stack.push_back(n.right);
      }
    }
  }
  best.distance = std::sqrt(best_sq);
  return best;
}

double BodyCollider::signed_distance(const Vec3& p) const {
  const double d = closest(p).distance;
  return inside(p) ? -d : d;
}

TriMesh resolve_collisions(const TriMesh& garment, const BodyCollider& body, double epsilon, int* pushed) {
  if (!(epsilon >= 0) || !std::isfinite(epsilon)) throw InvalidArgument("collision offset must be >= 0");
  Positions v = garment.vertices();
  int moved = 0;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    Vec3 p = v.row(i);
    if (!body.inside(p)) continue;
    // A push can land inside a neighboring fold of a concave body; repeat
    // from the new position a few times.
    for (int pass = 0; pass < 4 && body.inside(p); ++pass) {
      const BodyCollider::Closest c = body.closest(p);
      Vec3 dir = c.point - p;
      if (dir.norm() > 1e-12) {
        dir.normalize();
      } else {
        const Faces& f = body.body().faces();
        const Positions& bv = body.body().vertices();
        const Vec3 a = bv.row(f(c.face, 0)), b = bv.row(f(c.face, 1)), cc = bv.row(f(c.face, 2));
        dir = (b - a).cross(cc - a).normalized();
      }
      p = c.point + epsilon * dir;
    }
    v.row(i) = p;
    ++moved;
  }
  if (pushed) *pushed = moved;
  return garment.with_vertices(v);
}

TriMesh resolve_collisions(const TriMesh& garment, const TriMesh& body, double epsilon, int* pushed) {
  return resolve_collisions(garment, BodyCollider(body), epsilon, pushed);
}

}  // namespace clothfit
