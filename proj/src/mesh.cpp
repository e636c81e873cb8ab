#include "clothfit/mesh.hpp"

#include <algorithm>
#include <array>
#include <string>

#include <Eigen/Geometry>

#include "clothfit/error.hpp"

namespace clothfit {

std::uint64_t topology_hash(const Faces& faces) {
  // FNV-1a over the index stream.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint32_t value) {
    for (int b = 0; b < 4; ++b) {
      h ^= (value >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  mix(static_cast<std::uint32_t>(faces.rows()));
  for (Eigen::Index i = 0; i < faces.size(); ++i) mix(static_cast<std::uint32_t>(faces.data()[i]));
  return h;
}

std::shared_ptr<const Topology> build_topology(const Faces& faces, int vertex_count) {
  auto topo = std::make_shared<Topology>();
  topo->faces = faces;
  topo->vertex_count = vertex_count;
  topo->id = topology_hash(faces);

  struct HalfEdge {
    int a, b, face;
  };
  std::vector<HalfEdge> half;
  half.reserve(static_cast<std::size_t>(faces.rows()) * 3);
  for (int f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = faces(f, k), b = faces(f, (k + 1) % 3);
      if (a > b) std::swap(a, b);
      half.push_back({a, b, f});
    }
  }
  std::sort(half.begin(), half.end(), [](const HalfEdge& x, const HalfEdge& y) {
    return x.a != y.a ? x.a < y.a : (x.b != y.b ? x.b < y.b : x.face < y.face);
  });

  std::vector<std::array<int, 4>> rows;  // a, b, f0, f1
  std::vector<std::uint8_t> counts;
  for (std::size_t i = 0; i < half.size();) {
    std::size_t j = i;
    while (j < half.size() && half[j].a == half[i].a && half[j].b == half[i].b) ++j;
    std::array<int, 4> row{half[i].a, half[i].b, half[i].face, j - i > 1 ? half[i + 1].face : -1};
    rows.push_back(row);
    counts.push_back(static_cast<std::uint8_t>(std::min<std::size_t>(j - i, 255)));
    i = j;
  }
  topo->edges.resize(static_cast<Eigen::Index>(rows.size()), 2);
  topo->edge_faces.resize(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t e = 0; e < rows.size(); ++e) {
    const auto r = static_cast<Eigen::Index>(e);
    topo->edges(r, 0) = rows[e][0];
    topo->edges(r, 1) = rows[e][1];
    topo->edge_faces(r, 0) = rows[e][2];
    topo->edge_faces(r, 1) = rows[e][3];
  }
  topo->edge_face_count = std::move(counts);
  return topo;
}

TriMesh::TriMesh(Positions vertices, Faces faces) : vertices_(std::move(vertices)) {
  const auto n = vertices_.rows();
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int idx = faces(f, k);
      if (idx < 0 || idx >= n) {
        throw GeometryError("face " + std::to_string(f) + " references vertex " + std::to_string(idx) +
                            " but the mesh has " + std::to_string(n) + " vertices");
      }
    }
    if (faces(f, 0) == faces(f, 1) || faces(f, 1) == faces(f, 2) || faces(f, 0) == faces(f, 2)) {
      throw GeometryError("degenerate face " + std::to_string(f) + " repeats a vertex index");
    }
  }
  if (!vertices_.allFinite()) throw GeometryError("mesh has non-finite vertex coordinates");
  topology_ = build_topology(faces, static_cast<int>(n));
}

TriMesh TriMesh::with_vertices(Positions vertices) const {
  if (vertices.rows() != vertices_.rows()) {
    throw InvalidArgument("with_vertices: expected " + std::to_string(vertices_.rows()) + " vertices, got " +
                          std::to_string(vertices.rows()));
  }
  TriMesh out;
  out.vertices_ = std::move(vertices);
  out.topology_ = topology_;
  return out;
}

void accumulate_vertex_normals(const Positions& vertices, const Faces& faces, Positions& normals, Positions* raw) {
  Positions sums = Positions::Zero(vertices.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const int i0 = faces(f, 0), i1 = faces(f, 1), i2 = faces(f, 2);
    const Vec3 p0 = vertices.row(i0), p1 = vertices.row(i1), p2 = vertices.row(i2);
    // |cross| is twice the area, so summing crosses is area weighting.
    const Vec3 c = (p1 - p0).cross(p2 - p0);
    sums.row(i0) += c;
    sums.row(i1) += c;
    sums.row(i2) += c;
  }
  normals.resize(vertices.rows(), 3);
  for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
    const double len = sums.row(i).norm();
    if (len > 0.0) {
      normals.row(i) = sums.row(i) / len;
    } else {
      normals.row(i).setZero();
    }
  }
  if (raw) *raw = std::move(sums);
}

void vertex_normals_vjp(const Positions& vertices, const Faces& faces, const Positions& raw,
                        const Positions& normals_grad, Positions& grad) {
  // n = u / |u|  =>  du = (I - n n^T) dn / |u|
  Positions u_grad(raw.rows(), 3);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const Vec3 u = raw.row(i);
    const double len = u.norm();
    if (len <= 0.0) {
      u_grad.row(i).setZero();
      continue;
    }
    const Vec3 n = u / len;
    const Vec3 g = normals_grad.row(i);
    u_grad.row(i) = (g - n * n.dot(g)) / len;
  }
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const int i0 = faces(f, 0), i1 = faces(f, 1), i2 = faces(f, 2);
    const Vec3 cg = Vec3(u_grad.row(i0)) + Vec3(u_grad.row(i1)) + Vec3(u_grad.row(i2));
    if (cg.isZero(0.0)) continue;
    const Vec3 p0 = vertices.row(i0), p1 = vertices.row(i1), p2 = vertices.row(i2);
    const Vec3 e1 = p1 - p0, e2 = p2 - p0;
    // c = e1 x e2: dL/de1 = e2 x cg, dL/de2 = cg x e1
    const Vec3 g1 = e2.cross(cg);
    const Vec3 g2 = cg.cross(e1);
    grad.row(i1) += g1;
    grad.row(i2) += g2;
    grad.row(i0) -= g1 + g2;
  }
}

Positions vertex_normals(const TriMesh& mesh) {
  Positions normals, raw;
  accumulate_vertex_normals(mesh.vertices(), mesh.faces(), normals, &raw);
  std::vector<std::uint8_t> referenced(static_cast<std::size_t>(mesh.num_vertices()), 0);
  for (Eigen::Index i = 0; i < mesh.faces().size(); ++i) referenced[mesh.faces().data()[i]] = 1;
  for (Eigen::Index i = 0; i < mesh.num_vertices(); ++i) {
    if (!referenced[static_cast<std::size_t>(i)]) {
      throw GeometryError("vertex " + std::to_string(i) + " has no incident face");
    }
    if (raw.row(i).norm() == 0.0) {
      throw GeometryError("vertex " + std::to_string(i) + " has zero incident face area");
    }
  }
  return normals;
}

Eigen::VectorXd edge_lengths(const Positions& vertices, const Edges& edges) {
  Eigen::VectorXd out(edges.rows());
  for (Eigen::Index e = 0; e < edges.rows(); ++e) {
    out(e) = (vertices.row(edges(e, 0)) - vertices.row(edges(e, 1))).norm();
  }
  return out;
}

Eigen::VectorXd edge_lengths(const TriMesh& mesh) { return edge_lengths(mesh.vertices(), mesh.topology().edges); }

Positions flatten_to_positions(const Eigen::VectorXd& flat) {
  if (flat.size() % 3 != 0) throw InvalidArgument("flat position vector length is not a multiple of 3");
  return Eigen::Map<const Positions>(flat.data(), flat.size() / 3, 3);
}

Eigen::VectorXd flatten(const Positions& positions) {
  return Eigen::Map<const Eigen::VectorXd>(positions.data(), positions.size());
}

}  // namespace clothfit
