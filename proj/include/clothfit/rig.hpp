#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SparseCore>

namespace clothfit {

// Axis-angle rotation per non-root joint, 3 * (J - 1) radians.
using Pose = Eigen::VectorXd;

struct Joint {
  std::string name;
  int parent = -1;             // -1 for the root
  Eigen::Isometry3d rest = Eigen::Isometry3d::Identity();  // global rest frame, meters
};

using SkinWeights = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Kinematic tree plus per-vertex skinning weights. Parents precede children,
// which makes the tree acyclic by construction.
class RigBundle {
 public:
  RigBundle() = default;
  RigBundle(std::vector<Joint> joints, SkinWeights weights);

  const std::vector<Joint>& joints() const { return joints_; }
  const SkinWeights& weights() const { return weights_; }
  int joint_count() const { return static_cast<int>(joints_.size()); }
  Eigen::Index vertex_count() const { return weights_.rows(); }
  int pose_size() const { return 3 * (joint_count() - 1); }

 private:
  std::vector<Joint> joints_;
  SkinWeights weights_;
};

// Throws InvalidArgument unless the pose has 3 * (J - 1) finite entries and
// every axis-angle has magnitude below pi (plus 1e-6).
void validate_pose(const Pose& pose, int joint_count);

}  // namespace clothfit
