#include "clothfit/rig.hpp"

#include <cmath>

#include "clothfit/error.hpp"

namespace clothfit {

RigBundle::RigBundle(std::vector<Joint> joints, SkinWeights weights)
    : joints_(std::move(joints)), weights_(std::move(weights)) {
  if (joints_.empty()) throw GeometryError("rig has no joints");
  for (std::size_t j = 0; j < joints_.size(); ++j) {
    const int parent = joints_[j].parent;
    if (j == 0) {
      if (parent != -1) throw GeometryError("joint 0 must be the root (parent -1)");
      continue;
    }
    if (parent < 0 || parent >= static_cast<int>(j)) {
      throw GeometryError("joint " + std::to_string(j) + " has parent " + std::to_string(parent) +
                          "; parents must precede children and only joint 0 may be a root");
    }
    const Eigen::Matrix3d r = joints_[j].rest.linear();
    if (!(r * r.transpose()).isIdentity(1e-6) || std::abs(r.determinant() - 1.0) > 1e-6) {
      throw GeometryError("joint " + std::to_string(j) + " rest rotation is not orthonormal");
    }
  }
  if (weights_.cols() != joint_count()) {
    throw GeometryError("weight matrix has " + std::to_string(weights_.cols()) + " columns for " +
                        std::to_string(joint_count()) + " joints");
  }
  weights_.makeCompressed();
  for (Eigen::Index i = 0; i < weights_.rows(); ++i) {
    double sum = 0.0;
    for (SkinWeights::InnerIterator it(weights_, i); it; ++it) {
      if (!(it.value() >= 0.0)) {
        throw GeometryError("negative skinning weight at vertex " + std::to_string(i));
      }
      sum += it.value();
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw GeometryError("skinning weights of vertex " + std::to_string(i) + " sum to " + std::to_string(sum));
    }
  }
}

void validate_pose(const Pose& pose, int joint_count) {
  const Eigen::Index expected = 3 * (joint_count - 1);
  if (pose.size() != expected) {
    throw InvalidArgument("pose has " + std::to_string(pose.size()) + " values, rig expects " +
                          std::to_string(expected));
  }
  if (!pose.allFinite()) throw InvalidArgument("pose has non-finite entries");
  for (Eigen::Index j = 0; j < pose.size() / 3; ++j) {
    if (pose.segment<3>(3 * j).norm() >= M_PI + 1e-6) {
      throw InvalidArgument("pose rotation of joint " + std::to_string(j + 1) + " exceeds pi");
    }
  }
}

}  // namespace clothfit
