#include "clothfit/skinning.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/SVD>

#include "clothfit/error.hpp"

namespace clothfit {

Eigen::Matrix3d axis_angle_to_matrix(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

namespace {

// Skinning matrices A_j = G_j * rest_j^-1, built so that unrotated chains
// stay exactly the identity.
std::vector<Eigen::Isometry3d> skinning_matrices(const RigBundle& rig, const Pose& pose) {
  validate_pose(pose, rig.joint_count());
  const auto& joints = rig.joints();
  std::vector<Eigen::Isometry3d> a(joints.size(), Eigen::Isometry3d::Identity());
  std::vector<bool> identity(joints.size(), true);
  for (std::size_t j = 1; j < joints.size(); ++j) {
    const auto p = static_cast<std::size_t>(joints[j].parent);
    const Vec3 aa = pose.segment<3>(3 * static_cast<Eigen::Index>(j - 1));
    if (aa.isZero(0.0)) {
      a[j] = a[p];
      identity[j] = identity[p];
      continue;
    }
    Eigen::Isometry3d local = Eigen::Isometry3d::Identity();
    local.linear() = axis_angle_to_matrix(aa);
    const Eigen::Isometry3d conj = joints[j].rest * local * joints[j].rest.inverse();
    a[j] = identity[p] ? conj : a[p] * conj;
    identity[j] = false;
  }
  return a;
}

}  // namespace

JointTransforms forward_kinematics(const RigBundle& rig, const Pose& pose) {
  const auto a = skinning_matrices(rig, pose);
  JointTransforms out;
  out.global.resize(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out.global[j] = a[j] * rig.joints()[j].rest;
  return out;
}

BlendedSkin::BlendedSkin(const RigBundle& rig, const Pose& pose) {
  const auto a = skinning_matrices(rig, pose);
  std::vector<Affine> delta(a.size());
  std::vector<bool> is_zero(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    delta[j] = a[j].matrix().topRows<3>();
    delta[j].leftCols<3>() -= Eigen::Matrix3d::Identity();
    is_zero[j] = delta[j].isZero(0.0);
  }
  const auto& w = rig.weights();
  blended_.resize(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    // I + sum_j w_ij (A_j - I): equal to sum_j w_ij A_j for row-stochastic
    // weights, and exactly the identity when every A_j is.
    Affine m = Affine::Zero();
    for (SkinWeights::InnerIterator it(w, i); it; ++it) {
      const auto j = static_cast<std::size_t>(it.col());
      if (!is_zero[j]) m += it.value() * delta[j];
    }
    m.leftCols<3>() += Eigen::Matrix3d::Identity();
    blended_[static_cast<std::size_t>(i)] = m;
  }
}

Positions BlendedSkin::apply(const Positions& rest) const {
  if (rest.rows() != vertex_count()) {
    throw InvalidArgument("skin: " + std::to_string(rest.rows()) + " vertices but rig weights cover " +
                          std::to_string(vertex_count()));
  }
  Positions out(rest.rows(), 3);
  for (Eigen::Index i = 0; i < rest.rows(); ++i) {
    const Affine& m = blended_[static_cast<std::size_t>(i)];
    out.row(i) = (m.leftCols<3>() * rest.row(i).transpose() + m.col(3)).transpose();
  }
  return out;
}

Positions BlendedSkin::vjp(const Positions& posed_grad) const {
  if (posed_grad.rows() != vertex_count()) throw InvalidArgument("skin vjp: vertex count mismatch");
  Positions out(posed_grad.rows(), 3);
  for (Eigen::Index i = 0; i < posed_grad.rows(); ++i) {
    out.row(i) = (blended_[static_cast<std::size_t>(i)].leftCols<3>().transpose() * posed_grad.row(i).transpose())
                     .transpose();
  }
  return out;
}

Positions BlendedSkin::invert(const Positions& posed, double max_condition) const {
  if (posed.rows() != vertex_count()) {
    throw InvalidArgument("unskin: " + std::to_string(posed.rows()) + " vertices but rig weights cover " +
                          std::to_string(vertex_count()));
  }
  Positions out(posed.rows(), 3);
  for (Eigen::Index i = 0; i < posed.rows(); ++i) {
    const Affine& m = blended_[static_cast<std::size_t>(i)];
    const Eigen::Matrix3d lin = m.leftCols<3>();
    const Vec3 rhs = posed.row(i).transpose() - m.col(3);
    if (lin.isIdentity(0.0)) {
      out.row(i) = rhs.transpose();
      continue;
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(lin, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 s = svd.singularValues();
    const double cond = s(2) > 0.0 ? s(0) / s(2) : std::numeric_limits<double>::infinity();
    if (!(cond <= max_condition)) {
      throw GeometryError("unskin: blended transform of vertex " + std::to_string(i) +
                          " is near-singular (condition number " + std::to_string(cond) + ")");
    }
    out.row(i) = lin.partialPivLu().solve(rhs).transpose();
  }
  return out;
}

Positions skin(const Positions& rest, const RigBundle& rig, const Pose& pose) {
  return BlendedSkin(rig, pose).apply(rest);
}

Positions unskin(const Positions& posed, const RigBundle& rig, const Pose& pose, double max_condition) {
  return BlendedSkin(rig, pose).invert(posed, max_condition);
}

}  // namespace clothfit
