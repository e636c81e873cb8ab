#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Core>

namespace clothfit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

// N x 3 row-major arrays: one row per vertex, contiguous xyzxyz... storage.
using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Edges = Eigen::Matrix<int, Eigen::Dynamic, 2, Eigen::RowMajor>;

// Connectivity shared by every mesh with the same face list.
struct Topology {
  Faces faces;
  int vertex_count = 0;
  std::uint64_t id = 0;
  // Unique undirected edges as sorted (i < j) pairs, lexicographic order.
  Edges edges;
  // Up to two incident faces per edge; -1 when absent. Edges with more than
  // two incident faces keep the first two and are flagged non-manifold.
  Eigen::Matrix<int, Eigen::Dynamic, 2, Eigen::RowMajor> edge_faces;
  std::vector<std::uint8_t> edge_face_count;
};

std::uint64_t topology_hash(const Faces& faces);

// Indexed triangle mesh. Immutable; copies share the topology block.
class TriMesh {
 public:
  TriMesh() = default;
  // Validates indices and rejects degenerate faces.
  TriMesh(Positions vertices, Faces faces);

  // Same topology, new positions. Throws if the vertex count differs.
  TriMesh with_vertices(Positions vertices) const;

  const Positions& vertices() const { return vertices_; }
  const Faces& faces() const { return topology_->faces; }
  const Topology& topology() const { return *topology_; }
  std::uint64_t topology_id() const { return topology_ ? topology_->id : 0; }
  Eigen::Index num_vertices() const { return vertices_.rows(); }
  Eigen::Index num_faces() const { return topology_ ? topology_->faces.rows() : 0; }
  bool empty() const { return !topology_; }

 private:
  Positions vertices_;
  std::shared_ptr<const Topology> topology_;
};

std::shared_ptr<const Topology> build_topology(const Faces& faces, int vertex_count);

// Area-weighted vertex normals. Throws GeometryError naming the first vertex
// that has no incident face or whose incident faces have zero total area.
Positions vertex_normals(const TriMesh& mesh);

// Same weighting without validation: unreferenced vertices get a zero normal.
// When `raw` is given it receives the unnormalized sums.
void accumulate_vertex_normals(const Positions& vertices, const Faces& faces, Positions& normals,
                               Positions* raw = nullptr);

// Vector-Jacobian product of accumulate_vertex_normals: given dL/dnormals,
// adds dL/dvertices into `grad`. `raw` are the unnormalized sums.
void vertex_normals_vjp(const Positions& vertices, const Faces& faces, const Positions& raw,
                        const Positions& normals_grad, Positions& grad);

// One length per entry of topology().edges.
Eigen::VectorXd edge_lengths(const TriMesh& mesh);
Eigen::VectorXd edge_lengths(const Positions& vertices, const Edges& edges);

Positions flatten_to_positions(const Eigen::VectorXd& flat);
Eigen::VectorXd flatten(const Positions& positions);

}  // namespace clothfit
