#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <Eigen/SVD>

#include "clothfit/error.hpp"
#include "clothfit/subspace.hpp"
#include "test_util.hpp"

using namespace clothfit;

namespace {

// Corpus = base + sum_k c_k * mode_k with the given generating modes.
std::vector<TriMesh> linear_corpus(const TriMesh& base, const Eigen::MatrixXd& modes, int count, std::uint64_t seed,
                                   double noise = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<TriMesh> out;
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(base.vertices().data(), base.vertices().size());
    for (Eigen::Index k = 0; k < modes.cols(); ++k) flat += (0.05 / (k + 1)) * g(rng) * modes.col(k);
    for (Eigen::Index r = 0; r < flat.size(); ++r) flat(r) += noise * g(rng);
    out.push_back(base.with_vertices(Eigen::Map<const Positions>(flat.data(), base.num_vertices(), 3)));
  }
  return out;
}

Eigen::MatrixXd random_modes(Eigen::Index dim, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(dim, k);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ() * Eigen::MatrixXd::Identity(dim, k);
}

}  // namespace

TEST_CASE("identical corpus gives the mesh as mean") {
  const TriMesh m = testing::icosphere(1);
  const std::vector<TriMesh> corpus(5, m);
  const GarmentSubspace s = fit_subspace(corpus, 3);
  CHECK((s.decode(Eigen::VectorXd::Zero(3)) - m.vertices()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((s.basis().transpose() * s.basis()).isIdentity(1e-6));
  CHECK(s.stddev().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-mode linear corpus is recovered") {
  const TriMesh base = testing::icosphere(2);
  const Eigen::MatrixXd gen = random_modes(3 * base.num_vertices(), 2, 1);
  const GarmentSubspace s = fit_subspace(linear_corpus(base, gen, 20, 2), 2);
  // Principal angles from the singular values of gen^T basis.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gen.transpose() * s.basis());
  for (Eigen::Index k = 0; k < 2; ++k) {
    CHECK(std::acos(std::min(1.0, svd.singularValues()(k))) < 1e-4);
  }
}

TEST_CASE("25 modes on a 60-mesh corpus match the rank-25 truncation") {
  const TriMesh base = testing::icosphere(2);
  const Eigen::MatrixXd gen = random_modes(3 * base.num_vertices(), 40, 3);
  const auto corpus = linear_corpus(base, gen, 60, 4, 1e-3);
  const GarmentSubspace s = fit_subspace(corpus, 25);
  CHECK(s.mode_count() == 25);
  CHECK((s.basis().transpose() * s.basis()).isIdentity(1e-6));

  // Oracle: the residual of the best rank-25 approximation of the centered
  // data, from an independent SVD.
  const Eigen::Index dim = 3 * base.num_vertices();
  Eigen::MatrixXd data(60, dim);
  for (int i = 0; i < 60; ++i) data.row(i) = Eigen::Map<const Eigen::RowVectorXd>(corpus[i].vertices().data(), dim);
  const Eigen::RowVectorXd mean = data.colwise().mean();
  data.rowwise() -= mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(data);
  const double oracle_sq = svd.singularValues().tail(svd.singularValues().size() - 25).squaredNorm();

  double ours_sq = 0.0;
  for (const auto& m : corpus) ours_sq += (s.decode(s.encode(m.vertices())) - m.vertices()).squaredNorm();
  const double n_vals = 60.0 * base.num_vertices();
  CHECK(std::sqrt(ours_sq / n_vals) <= std::sqrt(oracle_sq / n_vals) * (1 + 1e-9) + 1e-12);
  // Stddevs are singular values / sqrt(n - 1), descending.
  for (int k = 0; k < 25; ++k) CHECK(s.stddev()(k) == doctest::Approx(svd.singularValues()(k) / std::sqrt(59.0)).epsilon(1e-9));
}

TEST_CASE("decode, encode and their algebra") {
  const TriMesh base = testing::icosphere(1);
  const GarmentSubspace s = fit_subspace(linear_corpus(base, random_modes(3 * base.num_vertices(), 6, 5), 12, 6), 4);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  Eigen::VectorXd p1(4), p2(4);
  for (int k = 0; k < 4; ++k) {
    p1(k) = g(rng);
    p2(k) = g(rng);
  }
  const Positions d0 = s.decode(Eigen::VectorXd::Zero(4));
  CHECK(d0 == s.mean());
  CHECK(((s.decode(p1 + p2) - d0) - ((s.decode(p1) - d0) + (s.decode(p2) - d0))).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((s.encode(s.decode(p1)) - p1).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(s.encode(s.mean()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((s.decode(p1) - s.decode(p2)).norm() == doctest::Approx((p1 - p2).norm()).epsilon(1e-9));

  // Orthogonal projection of a point outside the span.
  Positions v = s.mean();
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] += 0.1 * g(rng);
  const Positions proj = s.decode(s.encode(v));
  const Positions resid = v - proj;
  const Eigen::VectorXd along = s.basis().transpose() * Eigen::Map<const Eigen::VectorXd>(resid.data(), resid.size());
  CHECK(along.cwiseAbs().maxCoeff() < 1e-6);

  // d decode / dp equals the basis, by finite differences.
  const double h = 1e-6;
  for (int k = 0; k < 4; ++k) {
    Eigen::VectorXd pp = p1, pm = p1;
    pp(k) += h;
    pm(k) -= h;
    const Positions diff = (s.decode(pp) - s.decode(pm)) / (2 * h);
    const Eigen::VectorXd col = Eigen::Map<const Eigen::VectorXd>(diff.data(), diff.size());
    CHECK((col - s.basis().col(k)).norm() / s.basis().col(k).norm() < 1e-6);
  }
  // decode_vjp is basis^T.
  Positions w = Positions::Random(base.num_vertices(), 3);
  CHECK((s.decode_vjp(w) - s.basis().transpose() * Eigen::Map<const Eigen::VectorXd>(w.data(), w.size())).norm() < 1e-12);
  CHECK_THROWS_AS(s.decode(Eigen::VectorXd::Zero(3)), InvalidArgument);
}

TEST_CASE("fitting is deterministic with positive leading components") {
  const TriMesh base = testing::icosphere(1);
  const auto corpus = linear_corpus(base, random_modes(3 * base.num_vertices(), 5, 8), 10, 9);
  const GarmentSubspace a = fit_subspace(corpus, 4);
  const GarmentSubspace b = fit_subspace(corpus, 4);
  CHECK(a.basis() == b.basis());
  for (int k = 0; k < 4; ++k) {
    Eigen::Index r = 0;
    while (std::abs(a.basis()(r, k)) <= 1e-12) ++r;
    CHECK(a.basis()(r, k) > 0.0);
  }
}

TEST_CASE("fit_subspace input errors") {
  const TriMesh a = testing::grid(3, 3, 1, 1);
  const TriMesh b = testing::grid(3, 4, 1, 1);
  std::vector<TriMesh> mixed(4, a);
  mixed[2] = b;
  try {
    fit_subspace(mixed, 2);
    FAIL("expected topology error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("mesh 2") != std::string::npos);
  }
  CHECK_THROWS_AS(fit_subspace(std::vector<TriMesh>(3, a), 3), InvalidArgument);
}

TEST_CASE("subspace file round trip") {
  const TriMesh base = testing::icosphere(2);
  const GarmentSubspace s = fit_subspace(linear_corpus(base, random_modes(3 * base.num_vertices(), 8, 10), 12, 11), 5);
  testing::TempDir dir("subspace");
  save_subspace(dir / "s.bin", s);
  const GarmentSubspace back = load_subspace(dir / "s.bin");
  CHECK(back.mode_count() == 5);
  CHECK(back.mean_mesh().faces() == s.mean_mesh().faces());
  CHECK((back.mean() - s.mean()).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((back.basis() - s.basis()).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((back.basis().transpose() * back.basis()).isIdentity(1e-12));
  std::ofstream(dir / "junk.bin") << "nope";
  CHECK_THROWS_AS(load_subspace(dir / "junk.bin"), ParseError);
}
