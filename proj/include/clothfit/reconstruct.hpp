#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "clothfit/features.hpp"
#include "clothfit/mesh.hpp"
#include "clothfit/rig.hpp"
#include "clothfit/subspace.hpp"

namespace clothfit {

// Latent fit. Image terms are sums over pixels rescaled to a 512 x 512
// reference, so the weights mean the same thing at any resolution. The
// temporal and prior terms act on whitened latents p / stddev.
struct CoarseConfig {
  double lambda_coarse = 1.0;  // normal term, held at 0 for the first half of every run
  double lambda_sil = 1.0;
  double lambda_temp = 1.0;
  double lambda_reg = 0.01;
  int first_iterations = 200;
  int warm_iterations = 20;
  double step = 0.5;           // fraction of the Gauss-Newton step taken
  double max_step = 1.0;       // longest latent update, whitened units
  double damping = 1e-3;       // added to the diagonal, relative to its mean
  double sharpness = 2.0;      // soft silhouette slope, 1/px
  int tile_size = 32;

  void validate() const;
};

// Per-vertex displacement fit on top of a fixed latent. The data term is
// scaled like the coarse image terms; edge, temporal and prior terms are plain sums over
// edges and vertex coordinates.
struct FineConfig {
  bool enabled = true;
  double lambda_fine = 650.0;
  double lambda_edge = 1e4;
  double lambda_temp = 1e6;
  double lambda_reg = 0.1;
  double eta_min = -0.03;  // meters, per component
  double eta_max = 0.03;
  int first_iterations = 200;
  int warm_iterations = 20;
  double step = 1e-4;      // meters, largest coordinate change per step
  double mask_sharpness = 50.0;  // slope of the frozen coarse silhouette used as the mask
  int tile_size = 32;

  void validate() const;
};

// One row of an energy trace. `data` is the normal term of the active stage,
// the remaining fields are zero where a stage has no such term.
struct EnergyTerms {
  double total = 0.0;
  double data = 0.0;
  double sil = 0.0;
  double temp = 0.0;
  double reg = 0.0;
  double edge = 0.0;
};
using EnergyTrace = std::vector<EnergyTerms>;

struct CoarseEnergy {
  EnergyTerms terms;
  Eigen::VectorXd gradient;  // d total / d p
};

struct FineEnergy {
  EnergyTerms terms;
  Positions gradient;        // d total / d V
};

// Full coarse objective with the configured weights. `lambda_coarse`
// replaces cfg.lambda_coarse when not negative.
CoarseEnergy coarse_energy(const Eigen::VectorXd& p, const Eigen::VectorXd* prev_p, const FrameFeatures& features,
                           const GarmentSubspace& subspace, const RigBundle& rig, const CoarseConfig& cfg,
                           double lambda_coarse = -1.0);

struct CoarseResult {
  Eigen::VectorXd latent;
  EnergyTrace trace;  // iterations + 1 rows; row k is the iterate before step k
};

// Fixed-step descent along damped Gauss-Newton directions on whitened
// latents. Starts from prev_p (warm, cfg.warm_iterations, temporal term on)
// or from zero (cfg.first_iterations, temporal term off). Throws
// NumericalError naming the iterate on a non-finite energy.
CoarseResult fit_coarse(const FrameFeatures& features, const GarmentSubspace& subspace, const RigBundle& rig,
                        const CoarseConfig& cfg, const Eigen::VectorXd* prev_p = nullptr);

FineEnergy fine_energy(const Positions& V, const Positions* prev_V, const Eigen::VectorXd& p,
                       const FrameFeatures& features, const GarmentSubspace& subspace, const RigBundle& rig,
                       const FineConfig& cfg);

struct FineResult {
  Positions displacement;
  EnergyTrace trace;
};

// Projected gradient descent. Each step moves along the negative gradient
// so that the largest coordinate changes by cfg.step, then clamps every
// component of V into [eta_min, eta_max]. p stays fixed.
FineResult fit_fine(const Eigen::VectorXd& p, const FrameFeatures& features, const GarmentSubspace& subspace,
                    const RigBundle& rig, const FineConfig& cfg, const Positions* prev_V = nullptr);

struct FrameResult {
  int frame = 0;
  Eigen::VectorXd latent;
  Positions displacement;
  TriMesh unposed;  // decode(p) + V
  TriMesh posed;
  EnergyTrace coarse_trace;
  EnergyTrace fine_trace;
};

// Coarse then fine for every frame, warm-starting from the previous frame.
// A failing frame aborts the run; the error message starts with
// "frame <index>: ". `on_frame` sees each result as soon as it is ready.
std::vector<FrameResult> reconstruct_sequence(const std::vector<FrameFeatures>& features,
                                              const GarmentSubspace& subspace, const RigBundle& rig,
                                              const CoarseConfig& coarse, const FineConfig& fine,
                                              const std::function<void(const FrameResult&)>& on_frame = {});

// CSV with header iter,E_total,E_coarse,E_sil,E_temp,E_reg,E_edge (coarse)
// or iter,E_total,E_fine,E_sil,E_temp,E_reg,E_edge (fine).
void save_trace_csv(const std::filesystem::path& path, const EnergyTrace& trace, bool fine);

}  // namespace clothfit
