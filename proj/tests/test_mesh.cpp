#include <doctest.h>

#include <fstream>
#include <random>

#include <Eigen/Geometry>

#include "clothfit/error.hpp"
#include "clothfit/image.hpp"
#include "clothfit/io.hpp"
#include "clothfit/mesh.hpp"
#include "test_util.hpp"

using namespace clothfit;
using clothfit::testing::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("load_obj reads a single triangle") {
  TempDir dir("mesh");
  write_text(dir / "tri.obj", "# one triangle\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  const TriMesh m = load_obj(dir / "tri.obj");
  CHECK(m.num_vertices() == 3);
  CHECK(m.num_faces() == 1);
  CHECK(m.vertices()(1, 0) == 1.0);
}

TEST_CASE("load_obj rejects index 0 and names the line") {
  TempDir dir("mesh");
  write_text(dir / "bad.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n");
  try {
    load_obj(dir / "bad.obj");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
}

TEST_CASE("load_obj reports degenerate faces by index") {
  TempDir dir("mesh");
  write_text(dir / "deg.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 1 2\n");
  try {
    load_obj(dir / "deg.obj");
    FAIL("expected a geometry error");
  } catch (const GeometryError& e) {
    CHECK(std::string(e.what()).find("face 1") != std::string::npos);
  }
}

TEST_CASE("load_obj handles quads, slashes and negative indices") {
  TempDir dir("mesh");
  write_text(dir / "quad.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 -1//1\n");
  const TriMesh m = load_obj(dir / "quad.obj");
  CHECK(m.num_faces() == 2);
  CHECK(m.faces()(1, 2) == 3);
}

TEST_CASE("OBJ round trip preserves coordinates and faces") {
  TempDir dir("mesh");
  const TriMesh m = testing::icosphere(2, 0.37, Vec3(0.1, -0.2, 1.0 / 3.0));
  save_obj(dir / "s.obj", m);
  const TriMesh back = load_obj(dir / "s.obj");
  CHECK((back.vertices() - m.vertices()).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(back.faces() == m.faces());
  CHECK(back.topology_id() == m.topology_id());
}

TEST_CASE("a garment-sized mesh keeps its vertex count") {
  TempDir dir("mesh");
  const TriMesh g = testing::grid(78, 55, 1.0, 1.0);  // 79 x 56 = 4424 vertices
  save_obj(dir / "g.obj", g);
  CHECK(load_obj(dir / "g.obj").num_vertices() == 4424);
}

TEST_CASE("vertex normals of a planar quad") {
  const TriMesh quad = testing::grid(1, 1, 1.0, 1.0);
  const Positions n = vertex_normals(quad);
  for (Eigen::Index i = 0; i < n.rows(); ++i) CHECK((n.row(i) - Eigen::RowVector3d(0, 0, 1)).norm() < 1e-12);
}

TEST_CASE("vertex normals of a regular tetrahedron") {
  const TriMesh tet = testing::make_mesh({{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}},
                                         {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}});
  const Positions n = vertex_normals(tet);
  const Positions& v = tet.vertices();
  for (int i = 0; i < 4; ++i) {
    Vec3 sum = Vec3::Zero();
    for (int f = 0; f < 4; ++f) {
      const auto face = tet.faces().row(f);
      if (face(0) != i && face(1) != i && face(2) != i) continue;
      const Vec3 a = v.row(face(0)), b = v.row(face(1)), c = v.row(face(2));
      sum += (b - a).cross(c - a).normalized();
    }
    CHECK((Vec3(n.row(i)) - sum.normalized()).norm() < 1e-12);
    // Regular tetrahedron: the vertex normal points away from the centroid.
    CHECK((Vec3(n.row(i)) - Vec3(v.row(i)).normalized()).norm() < 1e-12);
  }
}

TEST_CASE("icosphere normals are radial") {
  const TriMesh s = testing::icosphere(4);
  const Positions n = vertex_normals(s);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n.rows(); ++i) worst = std::max(worst, (n.row(i) - s.vertices().row(i).normalized()).norm());
  CHECK(worst < 1e-2);
}

TEST_CASE("vertex normals rotate with the mesh") {
  const TriMesh s = testing::icosphere(2, 1.0, Vec3(0.3, 0.1, -0.2));
  const Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Positions rotated = (s.vertices() * r.transpose()).eval();
  const Positions n0 = vertex_normals(s);
  const Positions n1 = vertex_normals(s.with_vertices(rotated));
  CHECK(((n0 * r.transpose()) - n1).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("vertex normals reject isolated vertices") {
  Positions v(4, 3);
  v << 0, 0, 0, 1, 0, 0, 0, 1, 0, 5, 5, 5;
  Faces f(1, 3);
  f << 0, 1, 2;
  try {
    vertex_normals(TriMesh(v, f));
    FAIL("expected error");
  } catch (const GeometryError& e) {
    CHECK(std::string(e.what()).find("vertex 3") != std::string::npos);
  }
}

TEST_CASE("vertex_normals_vjp matches finite differences") {
  const TriMesh s = testing::icosphere(1, 1.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  Positions v = s.vertices();
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] += 0.05 * g(rng);
  Positions w(v.rows(), 3);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
  auto loss = [&](const Positions& p) {
    Positions n;
    accumulate_vertex_normals(p, s.faces(), n);
    return (n.array() * w.array()).sum();
  };
  Positions n, raw;
  accumulate_vertex_normals(v, s.faces(), n, &raw);
  Positions grad = Positions::Zero(v.rows(), 3);
  vertex_normals_vjp(v, s.faces(), raw, w, grad);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    Positions vp = v, vm = v;
    vp.data()[i] += h;
    vm.data()[i] -= h;
    const double fd = (loss(vp) - loss(vm)) / (2 * h);
    CHECK(fd == doctest::Approx(grad.data()[i]).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("edge lengths of a right triangle") {
  const TriMesh t = testing::make_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}});
  const Eigen::VectorXd len = edge_lengths(t);
  REQUIRE(len.size() == 3);
  // Sorted pairs: (0,1), (0,2), (1,2).
  CHECK(len(0) == doctest::Approx(1.0));
  CHECK(len(1) == doctest::Approx(1.0));
  CHECK(len(2) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("edge lengths scale, translate and vanish against themselves") {
  const TriMesh s = testing::icosphere(2);
  const Eigen::VectorXd len = edge_lengths(s);
  const Eigen::VectorXd doubled = edge_lengths(s.with_vertices(2.0 * s.vertices()));
  CHECK((doubled - 2.0 * len).cwiseAbs().maxCoeff() < 1e-12);
  Positions moved = s.vertices();
  moved.rowwise() += Eigen::RowVector3d(3, -2, 7);
  CHECK((edge_lengths(s.with_vertices(moved)) - len).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((len - edge_lengths(s)).squaredNorm() == 0.0);
  // 30 * 4^2 edges on a level-2 icosphere, all positive.
  CHECK(len.size() == 480);
  CHECK(len.minCoeff() > 0.0);
}

TEST_CASE("topology ids agree for shared connectivity only") {
  const TriMesh a = testing::grid(3, 3, 1, 1);
  const TriMesh b = testing::grid(3, 3, 2, 5, 1.0);
  const TriMesh c = testing::grid(3, 4, 1, 1);
  CHECK(a.topology_id() == b.topology_id());
  CHECK(a.topology_id() != c.topology_id());
  CHECK_THROWS_AS(a.with_vertices(Positions::Zero(3, 3)), InvalidArgument);
}

TEST_CASE("PFM and PNG round trips") {
  TempDir dir("img");
  NormalImage n(5, 4);
  MaskImage m(5, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      const Vec3 v = Vec3(x - 2.0, y - 1.5, 3.0).normalized();
      for (int c = 0; c < 3; ++c) n.at(x, y, c) = v(c);
      m.at(x, y) = (x + 5 * y) / 19.0;
    }
  }
  n.at(0, 0, 0) = n.at(0, 0, 1) = n.at(0, 0, 2) = 0.0;
  save_pfm(dir / "n.pfm", n);
  const NormalImage nb = load_pfm_normals(dir / "n.pfm");
  REQUIRE(nb.same_size(n));
  for (std::size_t i = 0; i < n.data().size(); ++i) CHECK(std::abs(nb.data()[i] - n.data()[i]) < 1e-6);
  CHECK(is_background(nb, 0));
  save_png_mask(dir / "m.png", m);
  const MaskImage mb = load_png_mask(dir / "m.png");
  REQUIRE(mb.same_size(m));
  for (std::size_t i = 0; i < m.data().size(); ++i) CHECK(std::abs(mb.data()[i] - m.data()[i]) <= 0.5 / 255 + 1e-12);
}

TEST_CASE("PFM stores the bottom row first") {
  TempDir dir("img");
  NormalImage n(1, 2);
  n.at(0, 0, 2) = 1.0;   // top row
  n.at(0, 1, 0) = 1.0;   // bottom row
  save_pfm(dir / "n.pfm", n);
  std::ifstream in(dir / "n.pfm", std::ios::binary);
  std::string magic;
  int w, h;
  double scale;
  in >> magic >> w >> h >> scale;
  in.get();
  float first[3];
  in.read(reinterpret_cast<char*>(first), sizeof(first));
  CHECK(magic == "PF");
  CHECK(scale < 0.0);
  CHECK(first[0] == 1.0f);
  CHECK(first[2] == 0.0f);
}

TEST_CASE("image validation") {
  MaskImage m(3, 3, 0.5);
  CHECK_NOTHROW(validate_mask(m));
  m.at(1, 1) = 1.5;
  CHECK_THROWS_AS(validate_mask(m), InvalidArgument);
  NormalImage n(3, 3);
  n.at(1, 1, 2) = 1.00005;
  CHECK_NOTHROW(validate_normals(n));
  n.at(1, 1, 2) = 0.9;
  CHECK_THROWS_AS(validate_normals(n), InvalidArgument);
}

TEST_CASE("image gradient of constants and ramps") {
  MaskImage c(6, 5, 3.0);
  const auto gc = image_gradient(c);
  for (double v : gc.dx.data()) CHECK(v == 0.0);
  for (double v : gc.dy.data()) CHECK(v == 0.0);
  MaskImage ramp(6, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) ramp.at(x, y) = x;
  const auto gr = image_gradient(ramp);
  for (int y = 1; y < 4; ++y) {
    for (int x = 1; x < 5; ++x) {
      CHECK(gr.dx.at(x, y) == doctest::Approx(1.0));
      CHECK(gr.dy.at(x, y) == 0.0);
    }
  }
  CHECK_THROWS_AS(image_gradient(MaskImage(2, 5)), InvalidArgument);
}

TEST_CASE("image gradient is linear and its adjoint is the transpose") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  NormalImage a(7, 6), b(7, 6);
  for (auto& v : a.data()) v = u(rng);
  for (auto& v : b.data()) v = u(rng);
  NormalImage scaled = a;
  for (auto& v : scaled.data()) v *= 2.5;
  const auto ga = image_gradient(a);
  const auto gs = image_gradient(scaled);
  for (std::size_t i = 0; i < ga.dx.data().size(); ++i) {
    CHECK(gs.dx.data()[i] == doctest::Approx(2.5 * ga.dx.data()[i]));
    CHECK(gs.dy.data()[i] == doctest::Approx(2.5 * ga.dy.data()[i]));
  }
  // <G a, (p, q)> == <a, G^T (p, q)>
  ImageGradient<3> pq{b, a};
  double lhs = 0.0, rhs = 0.0;
  const auto adj = image_gradient_adjoint(pq);
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    lhs += ga.dx.data()[i] * b.data()[i] + ga.dy.data()[i] * a.data()[i];
    rhs += a.data()[i] * adj.data()[i];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("pose rows reject wrong widths") {
  TempDir dir("pose");
  write_text(dir / "p.txt", "0 0 0 0.1 0.2 0.3\n0 0 0 0 0 0\n");
  CHECK(load_pose_rows(dir / "p.txt", 6).size() == 2);
  CHECK_THROWS_AS(load_pose_rows(dir / "p.txt", 69), ParseError);
  std::vector<Pose> poses{Pose::Constant(69, 0.25), Pose::Zero(69)};
  save_pose_rows(dir / "q.txt", poses);
  const auto back = load_pose_rows(dir / "q.txt", 69);
  REQUIRE(back.size() == 2);
  CHECK((back[0] - poses[0]).cwiseAbs().maxCoeff() == 0.0);
}
