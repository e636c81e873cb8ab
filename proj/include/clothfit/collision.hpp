#pragma once

#include <vector>

#include <Eigen/Geometry>

#include "clothfit/mesh.hpp"

namespace clothfit {

// Bounding-volume hierarchy over a closed body mesh. Throws GeometryError
// unless every edge is shared by exactly two faces, since the inside test
// counts surface crossings.
class BodyCollider {
 public:
  explicit BodyCollider(const TriMesh& body);

  struct Closest {
    Vec3 point;
    int face = -1;
    double distance = 0.0;
  };

  // Majority vote of three ray-parity tests along fixed skew directions.
  bool inside(const Vec3& p) const;
  Closest closest(const Vec3& p) const;
  // Distance to the surface, negative inside.
  double signed_distance(const Vec3& p) const;

  const TriMesh& body() const { return body_; }

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1, right = -1;  // children, -1 at leaves
    int first = 0, count = 0;   // range into order_ at leaves
  };
  int build(int first, int count);
  int crossings(const Vec3& origin, const Vec3& dir) const;

  TriMesh body_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  std::vector<Vec3> centroids_;
};

// Moves every garment vertex that lies inside the body to its closest body
// point plus `epsilon` along the outward direction there. Vertices outside
// are left bitwise unchanged. `pushed` receives the number of moved
// vertices.
TriMesh resolve_collisions(const TriMesh& garment, const BodyCollider& body, double epsilon = 0.002,
                           int* pushed = nullptr);
TriMesh resolve_collisions(const TriMesh& garment, const TriMesh& body, double epsilon = 0.002, int* pushed = nullptr);

}  // namespace clothfit
