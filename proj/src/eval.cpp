#include "clothfit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "clothfit/error.hpp"
#include "clothfit/render.hpp"
#include "parallel.hpp"

namespace clothfit {

double normal_rmse(const NormalImage& pred, const NormalImage& gt, const MaskImage& region) {
  if (!pred.same_size(gt) || pred.width() != region.width() || pred.height() != region.height()) {
    throw InvalidArgument("normal_rmse: image sizes differ");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < pred.pixel_count(); ++p) {
    if (!(region.data()[p] > 0.5) || is_background(pred, p) || is_background(gt, p)) continue;
    const double* a = pred.pixel(p);
    const double* b = gt.pixel(p);
    // atan2 stays accurate near 0 degrees where acos does not.
    const Vec3 va(a[0], a[1], a[2]), vb(b[0], b[1], b[2]);
    const double angle = std::atan2(va.cross(vb).norm(), va.dot(vb)) * 180.0 / M_PI;
    sum += angle * angle;
    ++count;
  }
  if (count == 0) throw InvalidArgument("normal_rmse: no pixel in the evaluation region");
  return std::sqrt(sum / static_cast<double>(count));
}

PrecisionRecall silhouette_pr(const MaskImage& pred, const MaskImage& gt, const SilhouetteOptions& options) {
  if (pred.width() != gt.width() || pred.height() != gt.height()) {
    throw InvalidArgument("silhouette_pr: mask sizes differ");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t p = 0; p < pred.pixel_count(); ++p) {
    const bool a = pred.data()[p] > options.threshold, b = gt.data()[p] > options.threshold;
    tp += a && b;
    fp += a && !b;
    fn += !a && b;
  }
  if (tp + fn == 0) throw InvalidArgument("silhouette_pr: ground-truth mask is empty");
  if (tp + fp == 0) {
    if (options.empty_prediction_is_zero) return {};
    throw InvalidArgument("silhouette_pr: predicted mask is empty");
  }
  return {static_cast<double>(tp) / static_cast<double>(tp + fp), static_cast<double>(tp) / static_cast<double>(tp + fn)};
}

FrameScore score_frame(const TriMesh& posed, const NormalImage& gt_normals, const MaskImage& gt_mask,
                       const Camera& camera) {
  Fragments frags;
  const NormalImage n = render_normals(posed, camera, &frags);
  const MaskImage s = shade_silhouette(posed, camera, frags);
  FrameScore score;
  score.normal_rmse_deg = normal_rmse(n, gt_normals, gt_mask);
  const PrecisionRecall pr = silhouette_pr(s, gt_mask, {0.5, true});
  score.precision = pr.precision;
  score.recall = pr.recall;
  return score;
}

EvalReport make_report(std::vector<FrameScore> frames) {
  EvalReport r;
  r.frames = std::move(frames);
  if (r.frames.empty()) return r;
  auto agg = [&r](double FrameScore::*field) {
    Aggregate a;
    const double n = static_cast<double>(r.frames.size());
    for (const FrameScore& f : r.frames) a.mean += f.*field / n;
    for (const FrameScore& f : r.frames) a.std += (f.*field - a.mean) * (f.*field - a.mean) / n;
    a.std = std::sqrt(a.std);
    return a;
  };
  r.normal_rmse_deg = agg(&FrameScore::normal_rmse_deg);
  r.precision = agg(&FrameScore::precision);
  r.recall = agg(&FrameScore::recall);
  r.max_displacement = agg(&FrameScore::max_displacement);
  return r;
}

EvalReport run_eval(const SyntheticScene& scene, const GarmentSubspace& subspace, const RigBundle& rig,
                    const CoarseConfig& coarse, const FineConfig& fine, std::vector<FrameResult>* results) {
  if (scene.features.empty() || scene.features.size() != scene.posed.size()) {
    throw InvalidArgument("run_eval: scene has no frames or mismatched ground truth");
  }
  std::vector<FrameResult> rec = reconstruct_sequence(scene.features, subspace, rig, coarse, fine);
  std::vector<FrameScore> scores(rec.size());
  detail::parallel_for(static_cast<int>(rec.size()), [&](int t) {
    const auto i = static_cast<std::size_t>(t);
    const FrameFeatures& f = scene.features[i];
    // Clean ground truth: the features may carry noise.
    const NormalImage gt = render_normals(scene.posed[i], f.camera);
    FrameScore s = score_frame(rec[i].posed, gt, f.mask, f.camera);
    s.frame = f.index;
    s.max_displacement = rec[i].displacement.rows() ? rec[i].displacement.rowwise().norm().maxCoeff() : 0.0;
    scores[i] = s;
  });
  if (results) *results = std::move(rec);
  return make_report(std::move(scores));
}

void save_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "frame,normal_rmse_deg,precision,recall,max_displacement_m\n";
  char buf[256];
  for (const FrameScore& f : report.frames) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g\n", f.frame, f.normal_rmse_deg, f.precision, f.recall,
                  f.max_displacement);
    out << buf;
  }
  if (!out) throw Error("failed writing " + path.string());
}

void save_report_json(const std::filesystem::path& path, const EvalReport& report) {
  auto agg = [](const Aggregate& a) { return nlohmann::json{{"mean", a.mean}, {"std", a.std}}; };
  const nlohmann::json j = {{"frames", report.frames.size()},
                            {"normal_rmse_deg", agg(report.normal_rmse_deg)},
                            {"precision", agg(report.precision)},
                            {"recall", agg(report.recall)},
                            {"max_displacement_m", agg(report.max_displacement)}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace clothfit
