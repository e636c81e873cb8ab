#pragma once

#include <filesystem>
#include <vector>

#include "clothfit/features.hpp"
#include "clothfit/image.hpp"
#include "clothfit/mesh.hpp"
#include "clothfit/reconstruct.hpp"
#include "clothfit/synth.hpp"

namespace clothfit {

// Root mean square of the angle between normals, in degrees, over pixels
// where region > 0.5 and both normals are foreground. Throws
// InvalidArgument on size mismatch or an empty region.
double normal_rmse(const NormalImage& pred, const NormalImage& gt, const MaskImage& region);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

struct SilhouetteOptions {
  double threshold = 0.5;
  // An empty prediction scores (0, 0) instead of throwing.
  bool empty_prediction_is_zero = false;
};

// Both masks binarized at the threshold (value > threshold). Throws
// InvalidArgument when the ground truth is empty, or the prediction is
// empty and empty_prediction_is_zero is off.
PrecisionRecall silhouette_pr(const MaskImage& pred, const MaskImage& gt, const SilhouetteOptions& options = {});

struct FrameScore {
  int frame = 0;
  double normal_rmse_deg = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double max_displacement = 0.0;  // meters, largest |V| row of the reconstruction
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct EvalReport {
  std::vector<FrameScore> frames;
  Aggregate normal_rmse_deg, precision, recall, max_displacement;
};

// Renders `posed` with the frame's camera and compares against clean
// ground-truth normals and the ground-truth mask.
FrameScore score_frame(const TriMesh& posed, const NormalImage& gt_normals, const MaskImage& gt_mask,
                       const Camera& camera);

// Fills the aggregates from the per-frame rows.
EvalReport make_report(std::vector<FrameScore> frames);

// Reconstructs the scene's features and scores every frame against clean
// renders of the ground-truth meshes. Reconstruction errors propagate with
// their frame index. `results` receives the reconstructions when given.
EvalReport run_eval(const SyntheticScene& scene, const GarmentSubspace& subspace, const RigBundle& rig,
                    const CoarseConfig& coarse, const FineConfig& fine, std::vector<FrameResult>* results = nullptr);

// CSV: frame,normal_rmse_deg,precision,recall,max_displacement_m
void save_report_csv(const std::filesystem::path& path, const EvalReport& report);
// JSON: frame count plus mean and std of every column.
void save_report_json(const std::filesystem::path& path, const EvalReport& report);

}  // namespace clothfit
