#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "clothfit/mesh.hpp"

namespace clothfit {

// Linear garment template: rest shape = mean + basis * p. The basis holds one
// flattened (x0 y0 z0 x1 ...) mode per column, orthonormal.
class GarmentSubspace {
 public:
  GarmentSubspace() = default;
  // Throws InvalidArgument on shape mismatches or a non-orthonormal basis.
  GarmentSubspace(TriMesh mean, Eigen::MatrixXd basis, Eigen::VectorXd stddev);

  int mode_count() const { return static_cast<int>(basis_.cols()); }
  Eigen::Index vertex_count() const { return mean_.num_vertices(); }
  const TriMesh& mean_mesh() const { return mean_; }
  const Positions& mean() const { return mean_.vertices(); }
  const Eigen::MatrixXd& basis() const { return basis_; }
  const Eigen::VectorXd& stddev() const { return stddev_; }

  Positions decode(const Eigen::VectorXd& p) const;
  TriMesh decode_mesh(const Eigen::VectorXd& p) const { return mean_.with_vertices(decode(p)); }
  // Least-squares latent of `vertices`: basis^T (vertices - mean).
  Eigen::VectorXd encode(const Positions& vertices) const;
  // dL/dp from dL/d(decoded vertices); decode is linear so this is basis^T g.
  Eigen::VectorXd decode_vjp(const Positions& vertex_grad) const;

 private:
  TriMesh mean_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd stddev_;
};

// PCA over a corpus sharing one topology. Modes are the leading principal
// directions with the first nonzero component made positive; stddev holds
// singular values / sqrt(n - 1). Throws InvalidArgument naming the first
// mesh whose topology differs, or if the corpus has fewer than modes + 1
// meshes.
GarmentSubspace fit_subspace(const std::vector<TriMesh>& corpus, int modes);

// Binary container, little-endian:
//   char[4] "CFSS", u32 version (1), u32 vertices, u32 modes, u32 faces
//   f32 mean[3 * vertices]
//   f32 basis[modes][3 * vertices]     (one mode after another)
//   f32 stddev[modes]
//   i32 faces[3 * faces]
// The basis is re-orthonormalized on load to undo float rounding.
void save_subspace(const std::filesystem::path& path, const GarmentSubspace& subspace);
GarmentSubspace load_subspace(const std::filesystem::path& path);

}  // namespace clothfit
