#pragma once

#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "clothfit/mesh.hpp"
#include "clothfit/rig.hpp"

namespace clothfit {

// Global posed frame of every joint.
struct JointTransforms {
  std::vector<Eigen::Isometry3d> global;
};

// Rodrigues rotation; exactly the identity for a zero vector.
Eigen::Matrix3d axis_angle_to_matrix(const Vec3& axis_angle);

// Root keeps its rest frame; each child composes its parent's posed frame
// with its rest offset and its own local rotation.
JointTransforms forward_kinematics(const RigBundle& rig, const Pose& pose);

// Per-vertex blended affine transforms for one pose. Computing this once per
// frame lets skin/unskin/vjp share the work.
class BlendedSkin {
 public:
  using Affine = Eigen::Matrix<double, 3, 4>;

  BlendedSkin(const RigBundle& rig, const Pose& pose);

  Eigen::Index vertex_count() const { return static_cast<Eigen::Index>(blended_.size()); }
  const Affine& transform(Eigen::Index vertex) const { return blended_[static_cast<std::size_t>(vertex)]; }

  Positions apply(const Positions& rest) const;
  // dL/drest from dL/dposed.
  Positions vjp(const Positions& posed_grad) const;
  // Throws GeometryError naming the vertex whose blended linear part has a
  // condition number above `max_condition`.
  Positions invert(const Positions& posed, double max_condition = 1e6) const;

 private:
  std::vector<Affine> blended_;
};

// Matrix-blend linear blend skinning.
Positions skin(const Positions& rest, const RigBundle& rig, const Pose& pose);
// Inverse of skin() through the per-vertex blended matrices.
Positions unskin(const Positions& posed, const RigBundle& rig, const Pose& pose, double max_condition = 1e6);

}  // namespace clothfit
