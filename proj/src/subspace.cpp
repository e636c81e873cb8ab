#include "clothfit/subspace.hpp"

#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "binary_io.hpp"
#include "clothfit/error.hpp"

namespace clothfit {

namespace {

// Modified Gram-Schmidt in column order; keeps each column's direction.
void orthonormalize(Eigen::MatrixXd& basis) {
  for (Eigen::Index k = 0; k < basis.cols(); ++k) {
    for (Eigen::Index j = 0; j < k; ++j) basis.col(k) -= basis.col(j).dot(basis.col(k)) * basis.col(j);
    const double len = basis.col(k).norm();
    if (!(len > 1e-8)) throw InvalidArgument("subspace basis is rank deficient at mode " + std::to_string(k));
    basis.col(k) /= len;
  }
}

}  // namespace

GarmentSubspace::GarmentSubspace(TriMesh mean, Eigen::MatrixXd basis, Eigen::VectorXd stddev)
    : mean_(std::move(mean)), basis_(std::move(basis)), stddev_(std::move(stddev)) {
  if (basis_.rows() != 3 * mean_.num_vertices()) {
    throw InvalidArgument("subspace basis has " + std::to_string(basis_.rows()) + " rows for " +
                          std::to_string(mean_.num_vertices()) + " vertices");
  }
  if (stddev_.size() != basis_.cols()) throw InvalidArgument("subspace needs one stddev per mode");
  if ((stddev_.array() < 0.0).any() || !stddev_.allFinite()) {
    throw InvalidArgument("subspace stddevs must be finite and non-negative");
  }
  const Eigen::MatrixXd gram = basis_.transpose() * basis_;
  if (!gram.isIdentity(1e-6)) throw InvalidArgument("subspace basis is not orthonormal");
}

Positions GarmentSubspace::decode(const Eigen::VectorXd& p) const {
  if (p.size() != mode_count()) {
    throw InvalidArgument("latent has " + std::to_string(p.size()) + " entries, subspace has " +
                          std::to_string(mode_count()) + " modes");
  }
  if (!p.allFinite()) throw InvalidArgument("latent has non-finite entries");
  Positions out = mean();
  Eigen::Map<Eigen::VectorXd>(out.data(), out.size()) += basis_ * p;
  return out;
}

Eigen::VectorXd GarmentSubspace::encode(const Positions& vertices) const {
  if (vertices.rows() != vertex_count()) throw InvalidArgument("encode: vertex count differs from the subspace");
  const Positions centered = vertices - mean();
  return basis_.transpose() * Eigen::Map<const Eigen::VectorXd>(centered.data(), centered.size());
}

Eigen::VectorXd GarmentSubspace::decode_vjp(const Positions& vertex_grad) const {
  if (vertex_grad.rows() != vertex_count()) throw InvalidArgument("decode_vjp: vertex count differs");
  return basis_.transpose() * Eigen::Map<const Eigen::VectorXd>(vertex_grad.data(), vertex_grad.size());
}

GarmentSubspace fit_subspace(const std::vector<TriMesh>& corpus, int modes) {
  if (modes < 1) throw InvalidArgument("subspace needs at least one mode");
  if (static_cast<int>(corpus.size()) < modes + 1) {
    throw InvalidArgument("subspace with " + std::to_string(modes) + " modes needs at least " +
                          std::to_string(modes + 1) + " meshes, got " + std::to_string(corpus.size()));
  }
  const TriMesh& first = corpus.front();
  for (std::size_t i = 1; i < corpus.size(); ++i) {
    if (corpus[i].topology_id() != first.topology_id() || corpus[i].num_vertices() != first.num_vertices()) {
      throw InvalidArgument("corpus mesh " + std::to_string(i) + " has a different topology than mesh 0");
    }
  }
  const Eigen::Index dim = 3 * first.num_vertices();
  const auto n = static_cast<Eigen::Index>(corpus.size());
  Eigen::MatrixXd data(dim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Positions& v = corpus[static_cast<std::size_t>(i)].vertices();
    data.col(i) = Eigen::Map<const Eigen::VectorXd>(v.data(), dim);
  }
  const Eigen::VectorXd mean = data.rowwise().mean();
  data.colwise() -= mean;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinU);
  Eigen::MatrixXd basis = svd.matrixU().leftCols(modes);
  const Eigen::VectorXd sigma = svd.singularValues().head(modes);
  for (Eigen::Index k = 0; k < modes; ++k) {
    for (Eigen::Index r = 0; r < dim; ++r) {
      if (std::abs(basis(r, k)) > 1e-12) {
        if (basis(r, k) < 0.0) basis.col(k) *= -1.0;
        break;
      }
    }
  }
  orthonormalize(basis);
  const Eigen::VectorXd stddev = sigma / std::sqrt(static_cast<double>(n - 1));

  Positions mean_pos = Eigen::Map<const Positions>(mean.data(), first.num_vertices(), 3);
  return GarmentSubspace(first.with_vertices(std::move(mean_pos)), std::move(basis), stddev);
}

void save_subspace(const std::filesystem::path& path, const GarmentSubspace& s) {
  detail::BinaryWriter out(path);
  out.magic("CFSS");
  out.u32(1);
  out.u32(static_cast<std::uint32_t>(s.vertex_count()));
  out.u32(static_cast<std::uint32_t>(s.mode_count()));
  out.u32(static_cast<std::uint32_t>(s.mean_mesh().num_faces()));
  out.f32_range(s.mean().data(), s.mean().data() + s.mean().size());
  out.f32_range(s.basis().data(), s.basis().data() + s.basis().size());
  out.f32_range(s.stddev().data(), s.stddev().data() + s.stddev().size());
  const Faces& f = s.mean_mesh().faces();
  for (Eigen::Index i = 0; i < f.size(); ++i) out.i32(f.data()[i]);
  out.finish();
}

GarmentSubspace load_subspace(const std::filesystem::path& path) {
  detail::BinaryReader in(path);
  in.expect_magic("CFSS");
  const std::uint32_t version = in.u32();
  if (version != 1) throw ParseError(path.string(), 0, "unsupported subspace version " + std::to_string(version));
  const std::uint32_t nv = in.u32(), modes = in.u32(), nf = in.u32();
  in.check_remaining(4ull * (3ull * nv + 3ull * nv * modes + modes + 3ull * nf));
  Positions mean(nv, 3);
  for (Eigen::Index i = 0; i < mean.size(); ++i) mean.data()[i] = in.f32();
  Eigen::MatrixXd basis(3 * static_cast<Eigen::Index>(nv), modes);
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = in.f32();
  Eigen::VectorXd stddev(modes);
  for (Eigen::Index i = 0; i < stddev.size(); ++i) stddev(i) = in.f32();
  Faces faces(nf, 3);
  for (Eigen::Index i = 0; i < faces.size(); ++i) faces.data()[i] = in.i32();
  orthonormalize(basis);
  try {
    return GarmentSubspace(TriMesh(std::move(mean), std::move(faces)), std::move(basis), std::move(stddev));
  } catch (const Error& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

}  // namespace clothfit
