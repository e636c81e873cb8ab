#include "clothfit/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "clothfit/error.hpp"
#include "clothfit/render.hpp"
#include "clothfit/skinning.hpp"

namespace clothfit {

namespace {

void require_non_negative(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(name) + " must be a finite value >= 0");
}

bool finite(const EnergyTerms& e) {
  return std::isfinite(e.total) && std::isfinite(e.data) && std::isfinite(e.sil) && std::isfinite(e.temp) &&
         std::isfinite(e.reg) && std::isfinite(e.edge);
}

void check_inputs(const FrameFeatures& f, const GarmentSubspace& subspace, const RigBundle& rig) {
  validate_features(f);
  validate_pose(f.pose, rig.joint_count());
  if (rig.vertex_count() != subspace.vertex_count()) {
    throw InvalidArgument("rig has weights for " + std::to_string(rig.vertex_count()) + " vertices, garment has " +
                          std::to_string(subspace.vertex_count()));
  }
}

// N * S, the masked target normals.
NormalImage masked_target(const FrameFeatures& f) {
  NormalImage t = f.normals;
  for (std::size_t p = 0; p < t.pixel_count(); ++p) {
    const double s = f.mask.data()[p];
    double* n = t.pixel(p);
    n[0] *= s;
    n[1] *= s;
    n[2] *= s;
  }
  return t;
}

// Weights 1 / stddev^2 of the whitened norms; modes with zero spread are
// excluded and stay fixed during fitting.
Eigen::VectorXd whitening_weights(const GarmentSubspace& s) {
  Eigen::VectorXd w(s.mode_count());
  for (int k = 0; k < s.mode_count(); ++k) w(k) = s.stddev()(k) > 0 ? 1.0 / (s.stddev()(k) * s.stddev()(k)) : 0.0;
  return w;
}

// Image sums are scaled to this pixel count, so the weights keep their
// meaning at other resolutions.
constexpr double kReferencePixels = 512.0 * 512.0;

double image_scale(std::size_t pixels) { return kReferencePixels / static_cast<double>(pixels); }

// Precomputed per-frame state of the coarse stage.
class CoarseProblem {
 public:
  struct Evaluation {
    CoarseEnergy energy;  // configured weights, gradient under the active weight
    double active_total = 0.0;
    Fragments fragments;
    Positions rest;
  };

  CoarseProblem(const FrameFeatures& f, const GarmentSubspace& s, const RigBundle& rig, const CoarseConfig& cfg)
      : f_(f), s_(s), cfg_(cfg), skin_(rig, f.pose), target_(masked_target(f)), white_(whitening_weights(s)),
        scale_(image_scale(f.mask.pixel_count())) {
    options_.sharpness = cfg.sharpness;
    options_.tile_size = cfg.tile_size;
  }

  Evaluation evaluate(const Eigen::VectorXd& p, const Eigen::VectorXd* prev, double lambda_coarse_active,
                      bool with_gradient = true) const {
    if (p.size() != s_.mode_count()) throw InvalidArgument("latent has the wrong size");
    Evaluation ev;
    ev.rest = s_.decode(p);
    const TriMesh mesh = s_.mean_mesh().with_vertices(skin_.apply(ev.rest));
    ev.fragments = rasterize(mesh, f_.camera, options_);
    if (ev.fragments.visible_faces == 0) throw GeometryError("garment has no face in front of the camera");
    const Fragments& frags = ev.fragments;

    CoarseEnergy& out = ev.energy;
    EnergyTerms& e = out.terms;
    NormalImage n_adj;
    MaskImage s_adj;
    if (cfg_.lambda_coarse > 0) {
      const NormalImage n = shade_normals(mesh, f_.camera, frags);
      double sum = 0.0;
      n_adj = NormalImage(n.width(), n.height());
      for (std::size_t i = 0; i < n.data().size(); ++i) {
        const double r = n.data()[i] - target_.data()[i];
        sum += r * r;
        n_adj.data()[i] = 2.0 * lambda_coarse_active * scale_ * r;
      }
      e.data = cfg_.lambda_coarse * scale_ * sum;
      ev.active_total += lambda_coarse_active * scale_ * sum;
    }
    if (cfg_.lambda_sil > 0) {
      const MaskImage sil = shade_silhouette(mesh, f_.camera, frags);
      double sum = 0.0;
      s_adj = MaskImage(sil.width(), sil.height());
      for (std::size_t i = 0; i < sil.data().size(); ++i) {
        const double r = sil.data()[i] - f_.mask.data()[i];
        sum += r * r;
        s_adj.data()[i] = 2.0 * cfg_.lambda_sil * scale_ * r;
      }
      e.sil = cfg_.lambda_sil * scale_ * sum;
    }
    const bool use_normals = cfg_.lambda_coarse > 0 && lambda_coarse_active > 0;
    const bool use_sil = cfg_.lambda_sil > 0;
    if (with_gradient && (use_normals || use_sil)) {
      const Positions g = backprop_image_loss(use_normals ? &n_adj : nullptr, use_sil ? &s_adj : nullptr, frags,
                                              mesh, f_.camera);
      out.gradient = s_.decode_vjp(skin_.vjp(g));
    } else {
      out.gradient = Eigen::VectorXd::Zero(p.size());
    }
    if (prev && cfg_.lambda_temp > 0) {
      if (prev->size() != p.size()) throw InvalidArgument("previous latent has the wrong size");
      const Eigen::VectorXd d = p - *prev;
      e.temp = cfg_.lambda_temp * d.cwiseProduct(d).dot(white_);
      out.gradient += 2.0 * cfg_.lambda_temp * d.cwiseProduct(white_);
    }
    if (cfg_.lambda_reg > 0) {
      e.reg = cfg_.lambda_reg * p.cwiseProduct(p).dot(white_);
      out.gradient += 2.0 * cfg_.lambda_reg * p.cwiseProduct(white_);
    }
    e.total = e.data + e.sil + e.temp + e.reg;
    ev.active_total += e.sil + e.temp + e.reg;
    return ev;
  }

  // Gauss-Newton approximation of the Hessian in whitened coordinates. The
  // image Jacobian comes from forward differences of the shading passes
  // with the fragments of `ev` held fixed, over covered and band pixels only.
  Eigen::MatrixXd gauss_newton(const Evaluation& ev, bool has_prev, double lambda_coarse_active) const {
    const int modes = s_.mode_count();
    const Eigen::VectorXd& sigma = s_.stddev();
    const Fragments& frags = ev.fragments;
    const bool use_normals = cfg_.lambda_coarse > 0 && lambda_coarse_active > 0;
    const bool use_sil = cfg_.lambda_sil > 0;

    std::vector<std::uint32_t> active;
    for (std::size_t px = 0; px < frags.face.size(); ++px) {
      if (frags.face[px] >= 0) active.push_back(static_cast<std::uint32_t>(px));
    }
    for (const auto& smp : frags.silhouette) active.push_back(smp.pixel);
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());

    const Eigen::Index rows = static_cast<Eigen::Index>(active.size()) * ((use_normals ? 3 : 0) + (use_sil ? 1 : 0));
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(rows, modes);
    const double wn = std::sqrt(lambda_coarse_active * scale_), ws = std::sqrt(cfg_.lambda_sil * scale_);
    auto shade_rows = [&](const Positions& rest, Eigen::Ref<Eigen::VectorXd> col) {
      const TriMesh mesh = s_.mean_mesh().with_vertices(skin_.apply(rest));
      Eigen::Index r = 0;
      if (use_normals) {
        const NormalImage n = shade_normals(mesh, f_.camera, frags);
        for (std::uint32_t px : active) {
          for (int c = 0; c < 3; ++c) col(r++) = wn * n.pixel(px)[c];
        }
      }
      if (use_sil) {
        const MaskImage sil = shade_silhouette(mesh, f_.camera, frags);
        for (std::uint32_t px : active) col(r++) = ws * sil.data()[px];
      }
    };
    Eigen::VectorXd base(rows);
    shade_rows(ev.rest, base);
    constexpr double h = 1e-5;
    for (int k = 0; k < modes; ++k) {
      if (!(sigma(k) > 0)) continue;
      Positions rest = ev.rest;
      Eigen::Map<Eigen::VectorXd>(rest.data(), rest.size()) += (h * sigma(k)) * s_.basis().col(k);
      shade_rows(rest, jac.col(k));
      jac.col(k) = (jac.col(k) - base) / h;
    }
    Eigen::MatrixXd hess = 2.0 * jac.transpose() * jac;
    double prior = 0.0;
    if (cfg_.lambda_reg > 0) prior += 2.0 * cfg_.lambda_reg;
    if (has_prev && cfg_.lambda_temp > 0) prior += 2.0 * cfg_.lambda_temp;
    for (int k = 0; k < modes; ++k) {
      if (sigma(k) > 0) hess(k, k) += prior;
    }
    return hess;
  }

 private:
  const FrameFeatures& f_;
  const GarmentSubspace& s_;
  CoarseConfig cfg_;
  BlendedSkin skin_;
  NormalImage target_;
  Eigen::VectorXd white_;
  double scale_;
  RenderOptions options_;
};

// Precomputed per-frame state of the fine stage: the coarse garment, its
// frozen silhouette mask and the target image gradients.
class FineProblem {
 public:
  FineProblem(const Eigen::VectorXd& p, const FrameFeatures& f, const GarmentSubspace& s, const RigBundle& rig,
              const FineConfig& cfg)
      : f_(f), s_(s), cfg_(cfg), skin_(rig, f.pose), coarse_rest_(s.decode(p)) {
    options_.sharpness = -1.0;  // the normal pass needs no silhouette band
    options_.tile_size = cfg.tile_size;
    rest_lengths_ = edge_lengths(coarse_rest_, s.mean_mesh().topology().edges);
    if (cfg.lambda_fine > 0) {
      const TriMesh coarse = s.mean_mesh().with_vertices(skin_.apply(coarse_rest_));
      RenderOptions mo;
      mo.sharpness = cfg.mask_sharpness;
      mo.tile_size = cfg.tile_size;
      const Fragments frags = rasterize(coarse, f.camera, mo);
      mask_ = shade_silhouette(coarse, f.camera, frags);
      for (double& m : mask_.data()) {
        if (m < 1e-6) m = 0.0;
      }
      target_grad_ = image_gradient(masked_target(f));
    }
  }

  FineEnergy evaluate(const Positions& V, const Positions* prev) const {
    if (V.rows() != s_.vertex_count()) throw InvalidArgument("displacement has the wrong vertex count");
    FineEnergy out;
    EnergyTerms& e = out.terms;
    const Positions rest = coarse_rest_ + V;
    out.gradient = Positions::Zero(V.rows(), 3);
    if (cfg_.lambda_fine > 0) {
      const TriMesh mesh = s_.mean_mesh().with_vertices(skin_.apply(rest));
      const Fragments frags = rasterize(mesh, f_.camera, options_);
      if (frags.visible_faces == 0) throw GeometryError("garment has no face in front of the camera");
      const NormalImage n = shade_normals(mesh, f_.camera, frags);
      ImageGradient<3> g = image_gradient(n);
      const double scale = image_scale(mask_.pixel_count());
      double sum = 0.0;
      for (std::size_t px = 0; px < mask_.pixel_count(); ++px) {
        const double m = mask_.data()[px];
        for (int c = 0; c < 3; ++c) {
          const std::size_t i = 3 * px + c;
          const double rx = (g.dx.data()[i] - target_grad_.dx.data()[i]) * m;
          const double ry = (g.dy.data()[i] - target_grad_.dy.data()[i]) * m;
          sum += rx * rx + ry * ry;
          g.dx.data()[i] = 2.0 * cfg_.lambda_fine * scale * rx * m;
          g.dy.data()[i] = 2.0 * cfg_.lambda_fine * scale * ry * m;
        }
      }
      e.data = cfg_.lambda_fine * scale * sum;
      const NormalImage n_adj = image_gradient_adjoint(g);
      out.gradient += skin_.vjp(backprop_image_loss(&n_adj, nullptr, frags, mesh, f_.camera));
    }
    if (cfg_.lambda_edge > 0) {
      const Edges& edges = s_.mean_mesh().topology().edges;
      double sum = 0.0;
      for (Eigen::Index k = 0; k < edges.rows(); ++k) {
        const int a = edges(k, 0), b = edges(k, 1);
        const Vec3 d = (rest.row(a) - rest.row(b)).transpose();
        const double len = d.norm();
        const double r = len - rest_lengths_(k);
        sum += r * r;
        if (len > 0) {
          const Vec3 gd = (2.0 * cfg_.lambda_edge * r / len) * d;
          out.gradient.row(a) += gd.transpose();
          out.gradient.row(b) -= gd.transpose();
        }
      }
      e.edge = cfg_.lambda_edge * sum;
    }
    if (prev && cfg_.lambda_temp > 0) {
      if (prev->rows() != V.rows()) throw InvalidArgument("previous displacement has the wrong vertex count");
      const Positions d = V - *prev;
      e.temp = cfg_.lambda_temp * d.squaredNorm();
      out.gradient += 2.0 * cfg_.lambda_temp * d;
    }
    if (cfg_.lambda_reg > 0) {
      e.reg = cfg_.lambda_reg * V.squaredNorm();
      out.gradient += 2.0 * cfg_.lambda_reg * V;
    }
    e.total = e.data + e.edge + e.temp + e.reg;
    return out;
  }

  const Positions& coarse_rest() const { return coarse_rest_; }
  const BlendedSkin& skin() const { return skin_; }

 private:
  const FrameFeatures& f_;
  const GarmentSubspace& s_;
  FineConfig cfg_;
  BlendedSkin skin_;
  Positions coarse_rest_;
  Eigen::VectorXd rest_lengths_;
  MaskImage mask_;
  ImageGradient<3> target_grad_;
  RenderOptions options_;
};

}  // namespace

void validate_features(const FrameFeatures& f) {
  f.camera.validate();
  if (!f.normals.same_size(f.camera.width, f.camera.height)) {
    throw InvalidArgument("frame " + std::to_string(f.index) + ": normal map is " + std::to_string(f.normals.width()) +
                          "x" + std::to_string(f.normals.height()) + ", camera expects " +
                          std::to_string(f.camera.width) + "x" + std::to_string(f.camera.height));
  }
  if (!f.mask.same_size(f.normals)) {
    throw InvalidArgument("frame " + std::to_string(f.index) + ": mask and normal map differ in size");
  }
  validate_mask(f.mask);
  validate_normals(f.normals);
}

void CoarseConfig::validate() const {
  require_non_negative(lambda_coarse, "lambda_coarse");
  require_non_negative(lambda_sil, "lambda_sil");
  require_non_negative(lambda_temp, "lambda_temp");
  require_non_negative(lambda_reg, "lambda_reg");
  if (first_iterations < 1 || warm_iterations < 1) throw InvalidArgument("coarse iteration counts must be >= 1");
  if (!(step > 0) || !(max_step > 0)) throw InvalidArgument("coarse steps must be positive");
  require_non_negative(damping, "damping");
  if (!(sharpness > 0)) throw InvalidArgument("coarse silhouette sharpness must be positive");
  if (tile_size < 1) throw InvalidArgument("tile size must be positive");
}

void FineConfig::validate() const {
  require_non_negative(lambda_fine, "lambda_fine");
  require_non_negative(lambda_edge, "lambda_edge");
  require_non_negative(lambda_temp, "lambda_temp");
  require_non_negative(lambda_reg, "lambda_reg");
  if (!std::isfinite(eta_min) || !std::isfinite(eta_max) || eta_min > eta_max) {
    throw InvalidArgument("displacement bounds need eta_min <= eta_max");
  }
  if (first_iterations < 1 || warm_iterations < 1) throw InvalidArgument("fine iteration counts must be >= 1");
  if (!(step > 0)) throw InvalidArgument("fine step must be positive");
  if (!(mask_sharpness > 0)) throw InvalidArgument("mask sharpness must be positive");
  if (tile_size < 1) throw InvalidArgument("tile size must be positive");
}

CoarseEnergy coarse_energy(const Eigen::VectorXd& p, const Eigen::VectorXd* prev_p, const FrameFeatures& features,
                           const GarmentSubspace& subspace, const RigBundle& rig, const CoarseConfig& cfg,
                           double lambda_coarse) {
  CoarseConfig c = cfg;
  if (lambda_coarse >= 0) c.lambda_coarse = lambda_coarse;
  c.validate();
  check_inputs(features, subspace, rig);
  const CoarseProblem problem(features, subspace, rig, c);
  return problem.evaluate(p, prev_p, c.lambda_coarse).energy;
}

CoarseResult fit_coarse(const FrameFeatures& features, const GarmentSubspace& subspace, const RigBundle& rig,
                        const CoarseConfig& cfg, const Eigen::VectorXd* prev_p) {
  cfg.validate();
  check_inputs(features, subspace, rig);
  if (prev_p && prev_p->size() != subspace.mode_count()) throw InvalidArgument("previous latent has the wrong size");
  const CoarseProblem problem(features, subspace, rig, cfg);
  const Eigen::VectorXd& sigma = subspace.stddev();
  const int iterations = prev_p ? cfg.warm_iterations : cfg.first_iterations;

  // Fixed-step descent along the damped Gauss-Newton direction in whitened
  // coordinates z = p / stddev. Steps longer than cfg.max_step are
  // shortened. No line search: the energy is discontinuous where coverage
  // changes, which would stall an acceptance test.
  Eigen::VectorXd p = prev_p ? *prev_p : Eigen::VectorXd::Zero(subspace.mode_count());
  CoarseResult result;
  for (int it = 0; it <= iterations; ++it) {
    const double active = 2 * it < iterations ? 0.0 : cfg.lambda_coarse;
    const CoarseProblem::Evaluation ev = problem.evaluate(p, prev_p, active);
    if (!finite(ev.energy.terms) || !ev.energy.gradient.allFinite()) {
      throw NumericalError("coarse fit: non-finite energy at iterate " + std::to_string(it));
    }
    result.trace.push_back(ev.energy.terms);
    if (it == iterations) break;

    const Eigen::VectorXd gz = ev.energy.gradient.cwiseProduct(sigma);
    Eigen::MatrixXd lhs = problem.gauss_newton(ev, prev_p != nullptr, active);
    const double mean_diag = lhs.diagonal().mean();
    for (Eigen::Index k = 0; k < lhs.rows(); ++k) lhs(k, k) += cfg.damping * mean_diag + 1e-12;
    Eigen::VectorXd dz = -cfg.step * lhs.ldlt().solve(gz);
    for (Eigen::Index k = 0; k < dz.size(); ++k) {
      if (!(sigma(k) > 0)) dz(k) = 0.0;
    }
    if (dz.norm() > cfg.max_step) dz *= cfg.max_step / dz.norm();
    p += dz.cwiseProduct(sigma);
  }
  result.latent = p;
  return result;
}

FineEnergy fine_energy(const Positions& V, const Positions* prev_V, const Eigen::VectorXd& p,
                       const FrameFeatures& features, const GarmentSubspace& subspace, const RigBundle& rig,
                       const FineConfig& cfg) {
  cfg.validate();
  check_inputs(features, subspace, rig);
  const FineProblem problem(p, features, subspace, rig, cfg);
  return problem.evaluate(V, prev_V);
}

FineResult fit_fine(const Eigen::VectorXd& p, const FrameFeatures& features, const GarmentSubspace& subspace,
                    const RigBundle& rig, const FineConfig& cfg, const Positions* prev_V) {
  cfg.validate();
  check_inputs(features, subspace, rig);
  if (p.size() != subspace.mode_count()) throw InvalidArgument("latent has the wrong size");
  if (prev_V && prev_V->rows() != subspace.vertex_count()) {
    throw InvalidArgument("previous displacement has the wrong vertex count");
  }
  const FineProblem problem(p, features, subspace, rig, cfg);
  const int iterations = prev_V ? cfg.warm_iterations : cfg.first_iterations;
  Positions V = prev_V ? *prev_V : Positions::Zero(subspace.vertex_count(), 3);
  V = V.cwiseMax(cfg.eta_min).cwiseMin(cfg.eta_max);

  FineResult result;
  for (int it = 0; it <= iterations; ++it) {
    const FineEnergy e = problem.evaluate(V, prev_V);
    if (!finite(e.terms) || !e.gradient.allFinite()) {
      throw NumericalError("fine fit: non-finite energy at iterate " + std::to_string(it));
    }
    result.trace.push_back(e.terms);
    if (it == iterations) break;
    // Fixed step: the largest coordinate moves by exactly cfg.step.
    const double gmax = e.gradient.cwiseAbs().maxCoeff();
    if (gmax > 0) V -= (cfg.step / gmax) * e.gradient;
    V = V.cwiseMax(cfg.eta_min).cwiseMin(cfg.eta_max);
  }
  result.displacement = std::move(V);
  return result;
}

namespace {

template <class E>
[[noreturn]] void rethrow_for_frame(int frame, const E& e) {
  throw E("frame " + std::to_string(frame) + ": " + e.what());
}

}  // namespace

std::vector<FrameResult> reconstruct_sequence(const std::vector<FrameFeatures>& features,
                                              const GarmentSubspace& subspace, const RigBundle& rig,
                                              const CoarseConfig& coarse, const FineConfig& fine,
                                              const std::function<void(const FrameResult&)>& on_frame) {
  if (features.empty()) throw InvalidArgument("reconstruct_sequence needs at least one frame");
  coarse.validate();
  fine.validate();
  std::vector<FrameResult> results;
  for (std::size_t t = 0; t < features.size(); ++t) {
    const FrameFeatures& f = features[t];
    const FrameResult* prev = t > 0 ? &results.back() : nullptr;
    FrameResult r;
    r.frame = f.index;
    try {
      if (prev && !f.normals.same_size(features[0].normals)) {
        throw InvalidArgument("image size differs from frame " + std::to_string(features[0].index));
      }
      CoarseResult c = fit_coarse(f, subspace, rig, coarse, prev ? &prev->latent : nullptr);
      r.latent = std::move(c.latent);
      r.coarse_trace = std::move(c.trace);
      if (fine.enabled) {
        FineResult v = fit_fine(r.latent, f, subspace, rig, fine, prev ? &prev->displacement : nullptr);
        r.displacement = std::move(v.displacement);
        r.fine_trace = std::move(v.trace);
      } else {
        r.displacement = Positions::Zero(subspace.vertex_count(), 3);
      }
      const Positions rest = subspace.decode(r.latent) + r.displacement;
      r.unposed = subspace.mean_mesh().with_vertices(rest);
      r.posed = subspace.mean_mesh().with_vertices(skin(rest, rig, f.pose));
    } catch (const NumericalError& e) {
      rethrow_for_frame(f.index, e);
    } catch (const GeometryError& e) {
      rethrow_for_frame(f.index, e);
    } catch (const InvalidArgument& e) {
      rethrow_for_frame(f.index, e);
    } catch (const Error& e) {
      rethrow_for_frame(f.index, e);
    }
    results.push_back(std::move(r));
    if (on_frame) on_frame(results.back());
  }
  return results;
}

void save_trace_csv(const std::filesystem::path& path, const EnergyTrace& trace, bool fine) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "iter,E_total," << (fine ? "E_fine" : "E_coarse") << ",E_sil,E_temp,E_reg,E_edge\n";
  char buf[256];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const EnergyTerms& e = trace[i];
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", i, e.total, e.data, e.sil, e.temp,
                  e.reg, e.edge);
    out << buf;
  }
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace clothfit
