#include <doctest.h>

#include <limits>
#include <random>

#include "clothfit/collision.hpp"
#include "clothfit/error.hpp"
#include "clothfit/synth.hpp"
#include "test_util.hpp"

using namespace clothfit;

namespace {

// Brute force over all faces: closest point by projecting onto each face's
// plane, edges and corners.
double brute_distance(const TriMesh& body, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  auto seg = [&](const Vec3& a, const Vec3& b) {
    const double t = std::clamp((p - a).dot(b - a) / (b - a).squaredNorm(), 0.0, 1.0);
    return (a + t * (b - a) - p).norm();
  };
  for (Eigen::Index f = 0; f < body.num_faces(); ++f) {
    const Vec3 a = body.vertices().row(body.faces()(f, 0)), b = body.vertices().row(body.faces()(f, 1)),
               c = body.vertices().row(body.faces()(f, 2));
    const Vec3 n = (b - a).cross(c - a).normalized();
    const Vec3 q = p - n * n.dot(p - a);
    // Barycentric inside test for the plane projection.
    const Vec3 v0 = b - a, v1 = c - a, v2 = q - a;
    const double d00 = v0.dot(v0), d01 = v0.dot(v1), d11 = v1.dot(v1), d20 = v2.dot(v0), d21 = v2.dot(v1);
    const double den = d00 * d11 - d01 * d01;
    const double v = (d11 * d20 - d01 * d21) / den, w = (d00 * d21 - d01 * d20) / den;
    if (v >= 0 && w >= 0 && v + w <= 1) best = std::min(best, (q - p).norm());
    best = std::min({best, seg(a, b), seg(b, c), seg(c, a)});
  }
  return best;
}

// Ray parity along +x with a small skew, over every face.
bool brute_inside(const TriMesh& body, const Vec3& p) {
  const Vec3 d = Vec3(1.0, 0.0123, 0.0071).normalized();
  int hits = 0;
  for (Eigen::Index f = 0; f < body.num_faces(); ++f) {
    const Vec3 a = body.vertices().row(body.faces()(f, 0)), b = body.vertices().row(body.faces()(f, 1)),
               c = body.vertices().row(body.faces()(f, 2));
    const Vec3 n = (b - a).cross(c - a);
    const double den = n.dot(d);
    if (std::abs(den) < 1e-15) continue;
    const double t = n.dot(a - p) / den;
    if (t <= 0) continue;
    const Vec3 q = p + t * d;
    if ((b - a).cross(q - a).dot(n) >= 0 && (c - b).cross(q - b).dot(n) >= 0 && (a - c).cross(q - c).dot(n) >= 0) ++hits;
  }
  return hits % 2 == 1;
}

}  // namespace

TEST_CASE("vertex at the center of a sphere moves to the surface plus epsilon") {
  const TriMesh sphere = testing::icosphere(3);
  const TriMesh g = testing::make_mesh({{0, 0, 0}, {3, 0, 0}, {0, 3, 0}}, {{0, 1, 2}});
  int pushed = -1;
  const TriMesh out = resolve_collisions(g, sphere, 0.002, &pushed);
  CHECK(pushed == 1);
  const Vec3 p = out.vertices().row(0);
  // Radius: distance to the nearest facet plus epsilon, which is 1.002 up to
  // the tessellation.
  const double facet = brute_distance(sphere, Vec3::Zero());
  CHECK(p.norm() == doctest::Approx(facet + 0.002).epsilon(1e-9));
  CHECK(p.norm() == doctest::Approx(1.002).epsilon(1e-2));
  CHECK(out.vertices().row(1) == g.vertices().row(1));
  CHECK(out.vertices().row(2) == g.vertices().row(2));
}

TEST_CASE("collider queries match brute force") {
  const TriMesh body = make_body(40, 24);
  const BodyCollider col(body);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ux(-0.25, 0.25), uy(0.75, 1.75), uz(-0.2, 0.2);
  int inside = 0;
  for (int i = 0; i < 300; ++i) {
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    CHECK(col.closest(p).distance == doctest::Approx(brute_distance(body, p)).epsilon(1e-9));
    const bool in = col.inside(p);
    CHECK(in == brute_inside(body, p));
    inside += in;
  }
  CHECK(inside > 30);
  CHECK(inside < 270);
}

TEST_CASE("interpenetrating garment is pushed out and the result is stable") {
  const TriMesh body = make_body();
  const BodyCollider col(body);
  // Shrink the garment toward the torso axis so that a band cuts into the body.
  const TriMesh tmpl = make_garment_template();
  Positions v = tmpl.vertices();
  v.col(0) *= 0.8;
  v.col(2) *= 0.8;
  const TriMesh g = tmpl.with_vertices(v);
  int before = 0;
  for (Eigen::Index i = 0; i < v.rows(); ++i) before += brute_inside(body, v.row(i));
  REQUIRE(before > 100);

  int pushed = 0;
  const TriMesh out = resolve_collisions(g, col, 0.002, &pushed);
  CHECK(pushed == before);
  int after = 0;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const Vec3 p = out.vertices().row(i);
    if (brute_inside(body, p)) ++after;
    if (!col.inside(v.row(i))) {
      REQUIRE(out.vertices().row(i) == g.vertices().row(i));
    } else {
      CHECK(col.signed_distance(p) >= 0.002 - 1e-6);
    }
  }
  CHECK(after == 0);

  int again = -1;
  const TriMesh twice = resolve_collisions(out, col, 0.002, &again);
  CHECK(again == 0);
  CHECK(twice.vertices() == out.vertices());
}

TEST_CASE("garment outside the body is untouched") {
  const TriMesh body = make_body();
  const TriMesh g = make_garment_template();
  int pushed = -1;
  const TriMesh out = resolve_collisions(g, body, 0.002, &pushed);
  CHECK(pushed == 0);
  CHECK(out.vertices() == g.vertices());
}

TEST_CASE("open bodies are rejected") {
  const TriMesh sphere = testing::icosphere(1);
  Faces f = sphere.faces().topRows(sphere.num_faces() - 1);
  const TriMesh open(sphere.vertices(), f);
  CHECK_THROWS_AS(BodyCollider{open}, GeometryError);
  CHECK_THROWS_AS(resolve_collisions(sphere, open), GeometryError);
  CHECK_THROWS_AS(resolve_collisions(sphere, sphere, -1.0), InvalidArgument);
}
