#include <doctest.h>

#include <fstream>
#include <random>

#include "clothfit/error.hpp"
#include "clothfit/reconstruct.hpp"
#include "clothfit/render.hpp"
#include "clothfit/skinning.hpp"
#include "clothfit/synth.hpp"
#include "test_util.hpp"

using namespace clothfit;

namespace {

struct Fixture {
  SynthAssets assets = make_assets(1, 25, 128, 128);
  Eigen::VectorXd truth;
  Positions wrinkles;
  SyntheticScene scene;   // latent only
  SyntheticScene wrinkled;

  Fixture() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    truth.resize(25);
    for (int k = 0; k < 25; ++k) truth(k) = 0.8 * g(rng) * assets.subspace.stddev()(k);
    const auto poses = make_pose_sequence(1, 0.2, 9);
    scene = generate_scene(assets.subspace, assets.rig, poses, {truth}, {}, assets.camera);
    WrinkleScript w;
    w.amplitude = 0.004;
    wrinkles = wrinkle_displacements(assets.subspace, {truth}, w)[0];
    wrinkled = generate_scene(assets.subspace, assets.rig, poses, {truth}, {wrinkles}, assets.camera);
  }
  const FrameFeatures& frame() const { return scene.features[0]; }
  const GarmentSubspace& sub() const { return assets.subspace; }
  const RigBundle& rig() const { return assets.rig; }
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

Eigen::VectorXd random_latent(std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::VectorXd p(25);
  for (int k = 0; k < 25; ++k) p(k) = scale * g(rng) * fx().sub().stddev()(k);
  return p;
}

}  // namespace

TEST_CASE("coarse config validation") {
  CoarseConfig c;
  CHECK_NOTHROW(c.validate());
  c.lambda_sil = -1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.first_iterations = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  FineConfig f;
  f.eta_min = 0.01;
  f.eta_max = 0.0;
  CHECK_THROWS_AS(f.validate(), InvalidArgument);
  f.eta_min = f.eta_max = 0.0;
  CHECK_NOTHROW(f.validate());
}

TEST_CASE("coarse energy vanishes at the true latent") {
  const auto& f = fx();
  CoarseConfig cfg;
  cfg.lambda_reg = 0.0;
  // Hard mask: the normal term compares renders of the same mesh.
  const CoarseEnergy e = coarse_energy(f.truth, nullptr, f.frame(), f.sub(), f.rig(), cfg);
  CHECK(e.terms.data < 1e-12);
  // Soft mask at the fitting sharpness: the silhouette term is zero too.
  FrameFeatures soft = f.frame();
  soft.mask = render_silhouette(f.scene.posed[0], f.assets.camera, cfg.sharpness);
  const CoarseEnergy s = coarse_energy(f.truth, nullptr, soft, f.sub(), f.rig(), cfg);
  CHECK(s.terms.sil < 1e-12);
  CHECK(s.terms.temp == 0.0);
  const CoarseEnergy m = coarse_energy(Eigen::VectorXd::Zero(25), nullptr, soft, f.sub(), f.rig(), cfg);
  CHECK(m.terms.sil > 1.0);
  CHECK(m.terms.data > 1.0);
}

TEST_CASE("coarse terms scale with their weights") {
  const auto& f = fx();
  const Eigen::VectorXd p = random_latent(11, 0.5);
  const Eigen::VectorXd prev = random_latent(12, 0.5);
  CoarseConfig cfg;
  const CoarseEnergy a = coarse_energy(p, &prev, f.frame(), f.sub(), f.rig(), cfg);
  CHECK(a.terms.total == doctest::Approx(a.terms.data + a.terms.sil + a.terms.temp + a.terms.reg));
  CHECK(a.terms.edge == 0.0);

  CoarseConfig twice = cfg;
  twice.lambda_sil *= 2;
  const CoarseEnergy b = coarse_energy(p, &prev, f.frame(), f.sub(), f.rig(), twice);
  CHECK(b.terms.sil == doctest::Approx(2 * a.terms.sil).epsilon(1e-12));
  CHECK(b.terms.data == a.terms.data);

  CoarseConfig off = cfg;
  off.lambda_coarse = off.lambda_sil = off.lambda_temp = off.lambda_reg = 0;
  const CoarseEnergy z = coarse_energy(p, &prev, f.frame(), f.sub(), f.rig(), off);
  CHECK(z.terms.total == 0.0);
  CHECK(z.gradient.cwiseAbs().maxCoeff() == 0.0);

  // Temporal term vanishes when the latent repeats the previous frame.
  const CoarseEnergy same = coarse_energy(p, &p, f.frame(), f.sub(), f.rig(), cfg);
  CHECK(same.terms.temp == 0.0);
  // Prior on whitened latents.
  const Eigen::VectorXd zed = p.cwiseQuotient(f.sub().stddev());
  CHECK(a.terms.reg == doctest::Approx(cfg.lambda_reg * zed.squaredNorm()).epsilon(1e-12));
  // Schedule override.
  const CoarseEnergy held = coarse_energy(p, &prev, f.frame(), f.sub(), f.rig(), cfg, 0.0);
  CHECK(held.terms.data == 0.0);
  CHECK(held.terms.sil == a.terms.sil);
}

TEST_CASE("coarse gradient matches central differences") {
  const auto& f = fx();
  const Eigen::VectorXd p = random_latent(21, 0.5);
  const Eigen::VectorXd prev = random_latent(22, 0.5);
  CoarseConfig cfg;
  const CoarseEnergy e = coarse_energy(p, &prev, f.frame(), f.sub(), f.rig(), cfg);
  std::mt19937_64 rng(23);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::VectorXd dir(25);
    for (int k = 0; k < 25; ++k) dir(k) = g(rng) * f.sub().stddev()(k);
    const double h = 1e-6;
    const Eigen::VectorXd pp = p + h * dir, pm = p - h * dir;
    const double fd = (coarse_energy(pp, &prev, f.frame(), f.sub(), f.rig(), cfg).terms.total -
                       coarse_energy(pm, &prev, f.frame(), f.sub(), f.rig(), cfg).terms.total) / (2 * h);
    const double an = e.gradient.dot(dir);
    CHECK(an == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("coarse fit reduces the energy and lands near the truth") {
  const auto& f = fx();
  FrameFeatures soft = f.frame();
  CoarseConfig cfg;
  soft.mask = render_silhouette(f.scene.posed[0], f.assets.camera, cfg.sharpness);
  const CoarseResult r = fit_coarse(soft, f.sub(), f.rig(), cfg);
  REQUIRE(r.trace.size() == static_cast<std::size_t>(cfg.first_iterations + 1));
  CHECK(r.trace.back().sil < r.trace.front().sil);
  CHECK(r.trace.front().temp == 0.0);
  const double err = (r.latent - f.truth).norm() / f.truth.norm();
  INFO("relative latent error ", err);
  // 128 x 128 is coarse; the 512 x 512 bound lives in the acceptance run.
  CHECK(err < 0.15);
}

TEST_CASE("strong temporal weight pins the latent to the previous frame") {
  const auto& f = fx();
  CoarseConfig cfg;
  cfg.lambda_temp = 1e6;
  const Eigen::VectorXd prev = random_latent(31, 0.5);
  const CoarseResult r = fit_coarse(f.frame(), f.sub(), f.rig(), cfg, &prev);
  CHECK(r.trace.size() == static_cast<std::size_t>(cfg.warm_iterations + 1));
  CHECK((r.latent - prev).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("coarse fit reports non-finite energies") {
  const auto& f = fx();
  CoarseConfig cfg;
  cfg.lambda_reg = 1e308;
  const Eigen::VectorXd start = random_latent(41, 2.0);
  try {
    fit_coarse(f.frame(), f.sub(), f.rig(), cfg, &start);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("iterate 0") != std::string::npos);
  }
}

TEST_CASE("coarse fit rejects bad inputs") {
  const auto& f = fx();
  CoarseConfig cfg;
  FrameFeatures bad = f.frame();
  bad.pose.resize(10);
  CHECK_THROWS_AS(fit_coarse(bad, f.sub(), f.rig(), cfg), InvalidArgument);
  bad = f.frame();
  bad.mask = MaskImage(64, 64);
  CHECK_THROWS_AS(fit_coarse(bad, f.sub(), f.rig(), cfg), InvalidArgument);
  const Eigen::VectorXd wrong = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(fit_coarse(f.frame(), f.sub(), f.rig(), cfg, &wrong), InvalidArgument);
  bad = f.frame();
  bad.camera.translation = Vec3(0, -1.26, 5.0);  // garment behind the camera
  CHECK_THROWS_AS(fit_coarse(bad, f.sub(), f.rig(), cfg), GeometryError);
}

TEST_CASE("fine energy terms") {
  const auto& f = fx();
  FineConfig cfg;
  const Positions zero = Positions::Zero(f.sub().vertex_count(), 3);
  const FineEnergy e0 = fine_energy(zero, &zero, f.truth, f.wrinkled.features[0], f.sub(), f.rig(), cfg);
  CHECK(e0.terms.edge == 0.0);
  CHECK(e0.terms.temp == 0.0);
  CHECK(e0.terms.reg == 0.0);
  CHECK(e0.terms.data > 0.0);

  // At the scripted displacement the data term is (numerically) gone.
  const FineEnergy es = fine_energy(f.wrinkles, nullptr, f.truth, f.wrinkled.features[0], f.sub(), f.rig(), cfg);
  CHECK(es.terms.data < 1e-8 * e0.terms.data);
  CHECK(es.terms.reg == doctest::Approx(cfg.lambda_reg * f.wrinkles.squaredNorm()).epsilon(1e-12));
  CHECK(es.terms.edge > 0.0);
  CHECK(es.terms.total == doctest::Approx(es.terms.data + es.terms.edge + es.terms.temp + es.terms.reg));

  // A rigid shift has no edge energy.
  Positions shift = zero;
  shift.col(0).setConstant(0.01);
  const FineEnergy et = fine_energy(shift, &zero, f.truth, f.wrinkled.features[0], f.sub(), f.rig(), cfg);
  CHECK(et.terms.edge < 1e-20);
  CHECK(et.terms.temp == doctest::Approx(cfg.lambda_temp * shift.squaredNorm()).epsilon(1e-12));

  FineConfig off = cfg;
  off.lambda_fine = off.lambda_edge = off.lambda_temp = off.lambda_reg = 0;
  const FineEnergy ez = fine_energy(f.wrinkles, &zero, f.truth, f.wrinkled.features[0], f.sub(), f.rig(), off);
  CHECK(ez.terms.total == 0.0);
  CHECK(ez.gradient.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fine gradient matches central differences") {
  const auto& f = fx();
  FineConfig cfg;
  const Positions prev = 0.5 * f.wrinkles;
  const Positions V = 0.3 * f.wrinkles;
  const FineEnergy e = fine_energy(V, &prev, f.truth, f.wrinkled.features[0], f.sub(), f.rig(), cfg);
  std::mt19937_64 rng(51);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 3; ++trial) {
    Positions dir(V.rows(), 3);
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir.data()[i] = g(rng);
    const double h = 1e-7;
    const Positions vp = V + h * dir, vm = V - h * dir;
    const double fd =
        (fine_energy(vp, &prev, f.truth, f.wrinkled.features[0], f.sub(), f.rig(), cfg).terms.total -
         fine_energy(vm, &prev, f.truth, f.wrinkled.features[0], f.sub(), f.rig(), cfg).terms.total) / (2 * h);
    const double an = (e.gradient.array() * dir.array()).sum();
    CHECK(an == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("fine data term ignores targets outside the coarse mask") {
  const auto& f = fx();
  FineConfig cfg;
  const FrameFeatures& clean = f.wrinkled.features[0];
  // Coarse silhouette at the mask sharpness; pixels whose whole 3 x 3
  // neighborhood has a zero mask cannot reach the image gradients.
  const TriMesh coarse = f.sub().mean_mesh().with_vertices(skin(f.sub().decode(f.truth), f.rig(), clean.pose));
  const MaskImage m = render_silhouette(coarse, clean.camera, cfg.mask_sharpness);
  FrameFeatures noisy = clean;
  std::mt19937_64 rng(61);
  std::normal_distribution<double> g;
  int changed = 0;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      bool far = true;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::clamp(x + dx, 0, m.width() - 1), yy = std::clamp(y + dy, 0, m.height() - 1);
          if (m.at(xx, yy) >= 1e-6) far = false;
        }
      }
      if (!far) continue;
      Vec3 n(g(rng), g(rng), g(rng));
      n.normalize();
      for (int c = 0; c < 3; ++c) noisy.normals.at(x, y, c) = n(c);
      noisy.mask.at(x, y) = 1.0;
      ++changed;
    }
  }
  REQUIRE(changed > 1000);
  const Positions V = 0.5 * f.wrinkles;
  const FineEnergy a = fine_energy(V, nullptr, f.truth, clean, f.sub(), f.rig(), cfg);
  const FineEnergy b = fine_energy(V, nullptr, f.truth, noisy, f.sub(), f.rig(), cfg);
  CHECK(a.terms.data == b.terms.data);
  CHECK(a.gradient == b.gradient);
}

TEST_CASE("fine fit respects the displacement box") {
  const auto& f = fx();
  FineConfig cfg;
  cfg.first_iterations = 60;
  const FineResult r = fit_fine(f.truth, f.wrinkled.features[0], f.sub(), f.rig(), cfg);
  REQUIRE(r.trace.size() == 61);
  CHECK(r.trace.back().total < r.trace.front().total);
  CHECK(r.displacement.maxCoeff() <= cfg.eta_max);
  CHECK(r.displacement.minCoeff() >= cfg.eta_min);
  CHECK(r.displacement.cwiseAbs().maxCoeff() > 0.0);

  FineConfig pinned = cfg;
  pinned.eta_min = pinned.eta_max = 0.0;
  const FineResult z = fit_fine(f.truth, f.wrinkled.features[0], f.sub(), f.rig(), pinned);
  CHECK(z.displacement.cwiseAbs().maxCoeff() == 0.0);

  FineConfig tight = cfg;
  tight.eta_min = -0.001;
  tight.eta_max = 0.0005;
  tight.lambda_edge = tight.lambda_reg = tight.lambda_temp = 0.0;
  tight.step = 1e-3;
  const FineResult t = fit_fine(f.truth, f.wrinkled.features[0], f.sub(), f.rig(), tight);
  CHECK(t.displacement.maxCoeff() <= 0.0005);
  CHECK(t.displacement.minCoeff() >= -0.001);
}

TEST_CASE("fine fit moves toward the scripted displacement") {
  const auto& f = fx();
  FineConfig cfg;
  const FineResult r = fit_fine(f.truth, f.wrinkled.features[0], f.sub(), f.rig(), cfg);
  // Front-facing vertices, where the normals carry information.
  const Positions rest = f.sub().decode(f.truth);
  const Positions n = vertex_normals(f.sub().mean_mesh().with_vertices(rest));
  double err = 0.0, base = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < n.rows(); ++i) {
    if (n(i, 2) < 0.3) continue;
    err += (r.displacement.row(i) - f.wrinkles.row(i)).squaredNorm();
    base += f.wrinkles.row(i).squaredNorm();
    ++count;
  }
  REQUIRE(count > 100);
  INFO("rmse ", std::sqrt(err / count), " baseline ", std::sqrt(base / count));
  CHECK(err < base);
}

TEST_CASE("unregularized displacement grows with iterations") {
  const auto& f = fx();
  SceneOptions o;
  o.normal_noise = 0.1;
  o.seed = 2;
  const auto poses = make_pose_sequence(1, 0.2, 9);
  const auto noisy = generate_scene(f.sub(), f.rig(), poses, {f.truth}, {}, f.assets.camera, o);
  FineConfig cfg;
  cfg.lambda_edge = cfg.lambda_reg = cfg.lambda_temp = 0.0;
  cfg.first_iterations = 30;
  const double short_run =
      fit_fine(f.truth, noisy.features[0], f.sub(), f.rig(), cfg).displacement.cwiseAbs().maxCoeff();
  cfg.first_iterations = 120;
  const FineResult long_run = fit_fine(f.truth, noisy.features[0], f.sub(), f.rig(), cfg);
  CHECK(long_run.displacement.cwiseAbs().maxCoeff() > short_run);
  CHECK(long_run.displacement.cwiseAbs().maxCoeff() <= cfg.eta_max);
}

TEST_CASE("one-frame sequence matches the two stages") {
  const auto& f = fx();
  CoarseConfig coarse;
  coarse.first_iterations = 20;
  FineConfig fine;
  fine.first_iterations = 20;
  int seen = 0;
  const auto out = reconstruct_sequence({f.wrinkled.features[0]}, f.sub(), f.rig(), coarse, fine,
                                        [&](const FrameResult&) { ++seen; });
  REQUIRE(out.size() == 1);
  CHECK(seen == 1);
  const CoarseResult c = fit_coarse(f.wrinkled.features[0], f.sub(), f.rig(), coarse);
  const FineResult v = fit_fine(c.latent, f.wrinkled.features[0], f.sub(), f.rig(), fine);
  CHECK(out[0].latent == c.latent);
  CHECK(out[0].displacement == v.displacement);
  CHECK(out[0].unposed.vertices() == f.sub().decode(c.latent) + v.displacement);
  CHECK(out[0].posed.vertices() == skin(out[0].unposed.vertices(), f.rig(), f.wrinkled.features[0].pose));
  CHECK(out[0].coarse_trace.size() == 21);
  CHECK(out[0].fine_trace.size() == 21);

  fine.enabled = false;
  const auto nofine = reconstruct_sequence({f.wrinkled.features[0]}, f.sub(), f.rig(), coarse, fine);
  CHECK(nofine[0].displacement.cwiseAbs().maxCoeff() == 0.0);
  CHECK(nofine[0].fine_trace.empty());
}

TEST_CASE("sequence warm-starts and names failing frames") {
  const auto& f = fx();
  CoarseConfig coarse;
  coarse.first_iterations = 10;
  coarse.warm_iterations = 5;
  FineConfig fine;
  fine.first_iterations = 10;
  fine.warm_iterations = 5;
  std::vector<FrameFeatures> frames(3, f.frame());
  for (int t = 0; t < 3; ++t) frames[t].index = 10 + t;
  const auto out = reconstruct_sequence(frames, f.sub(), f.rig(), coarse, fine);
  REQUIRE(out.size() == 3);
  CHECK(out[2].frame == 12);
  CHECK(out[0].coarse_trace.size() == 11);
  CHECK(out[1].coarse_trace.size() == 6);
  CHECK(out[1].fine_trace.size() == 6);

  frames[1].camera.translation = Vec3(0, -1.26, 5.0);
  frames[1].normals = NormalImage(128, 128);
  try {
    reconstruct_sequence(frames, f.sub(), f.rig(), coarse, fine);
    FAIL("expected an error");
  } catch (const GeometryError& e) {
    CHECK(std::string(e.what()).rfind("frame 11: ", 0) == 0);
  }
  CHECK_THROWS_AS(reconstruct_sequence({}, f.sub(), f.rig(), coarse, fine), InvalidArgument);
}

TEST_CASE("trace csv layout") {
  testing::TempDir dir("trace");
  EnergyTrace t(2);
  t[1].total = 3.5;
  t[1].data = 1.5;
  save_trace_csv(dir / "c.csv", t, false);
  save_trace_csv(dir / "f.csv", t, true);
  std::ifstream c(dir / "c.csv"), fi(dir / "f.csv");
  std::string line;
  std::getline(c, line);
  CHECK(line == "iter,E_total,E_coarse,E_sil,E_temp,E_reg,E_edge");
  std::getline(c, line);
  std::getline(c, line);
  CHECK(line == "1,3.5,1.5,0,0,0,0");
  std::getline(fi, line);
  CHECK(line == "iter,E_total,E_fine,E_sil,E_temp,E_reg,E_edge");
}
