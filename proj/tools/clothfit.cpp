// clothfit: garment reconstruction and pose-driven animation from the
// command line. Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clothfit/collision.hpp"
#include "clothfit/config.hpp"
#include "clothfit/error.hpp"
#include "clothfit/eval.hpp"
#include "clothfit/io.hpp"
#include "clothfit/reconstruct.hpp"
#include "clothfit/regressor.hpp"
#include "clothfit/skinning.hpp"
#include "clothfit/subspace.hpp"
#include "clothfit/synth.hpp"

namespace fs = std::filesystem;
using namespace clothfit;

namespace {

// Bad flags, config files or paths; maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Assets {
  GarmentSubspace subspace;
  RigBundle rig;
  std::optional<TriMesh> body;
  std::optional<RigBundle> body_rig;
};

void save_assets(const fs::path& dir, const SynthAssets& a) {
  fs::create_directories(dir);
  save_subspace(dir / "subspace.cfss", a.subspace);
  save_rig(dir / "rig.txt", a.rig);
  save_obj(dir / "body.obj", a.body);
  save_rig(dir / "body_rig.txt", a.body_rig);
}

Assets load_assets(const fs::path& dir, bool need_subspace) {
  Assets a;
  if (need_subspace) a.subspace = load_subspace(dir / "subspace.cfss");
  a.rig = load_rig(dir / "rig.txt");
  if (fs::exists(dir / "body.obj") && fs::exists(dir / "body_rig.txt")) {
    a.body = load_obj(dir / "body.obj");
    a.body_rig = load_rig(dir / "body_rig.txt");
  }
  return a;
}

// Resolves a path from a flag or, when the flag is empty, from the config.
fs::path pick(const std::string& flag, const fs::path& from_config, const char* what) {
  fs::path p = flag.empty() ? from_config : fs::path(flag);
  if (p.empty()) throw UsageError(std::string("no ") + what + " given (flag or config)");
  return p;
}

fs::path existing(const std::string& flag, const fs::path& from_config, const char* what) {
  fs::path p = pick(flag, from_config, what);
  if (!fs::exists(p)) throw UsageError(std::string(what) + " '" + p.string() + "' does not exist");
  return p;
}

// "a..b", half-open.
std::vector<int> frame_range(const std::string& text, int count) {
  std::vector<int> frames;
  if (text.empty()) {
    for (int i = 0; i < count; ++i) frames.push_back(i);
    return frames;
  }
  const auto dots = text.find("..");
  int a = -1, b = -1;
  try {
    if (dots == std::string::npos) throw std::invalid_argument("");
    std::size_t used = 0;
    a = std::stoi(text.substr(0, dots), &used);
    if (used != dots) throw std::invalid_argument("");
    const std::string tail = text.substr(dots + 2);
    b = std::stoi(tail, &used);
    if (used != tail.size()) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw UsageError("--frames expects a..b, got '" + text + "'");
  }
  if (a < 0 || b <= a || b > count) {
    throw UsageError("--frames " + text + " is not a non-empty range inside [0, " + std::to_string(count) + ")");
  }
  for (int i = a; i < b; ++i) frames.push_back(i);
  return frames;
}

// --- commands --------------------------------------------------------------

struct FitSubspaceArgs {
  std::string corpus, out;
  int modes = 0;
};

void cmd_fit_subspace(const RunConfig& cfg, const FitSubspaceArgs& args) {
  const fs::path dir = existing(args.corpus, {}, "corpus directory");
  const fs::path out = pick(args.out, cfg.paths.output.empty() ? fs::path() : cfg.paths.output / "subspace.cfss",
                            "output file");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".obj") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("no .obj files in " + dir.string());
  const int modes = args.modes > 0 ? args.modes : cfg.synth.modes;
  if (modes > static_cast<int>(files.size()) - 1) {
    throw InvalidArgument(std::to_string(modes) + " modes need at least " + std::to_string(modes + 1) +
                          " meshes, the corpus has " + std::to_string(files.size()));
  }
  std::vector<TriMesh> corpus;
  corpus.reserve(files.size());
  for (const fs::path& f : files) {
    corpus.push_back(load_obj(f));
    const TriMesh& m = corpus.back();
    if (m.num_vertices() != corpus.front().num_vertices() || m.topology_id() != corpus.front().topology_id()) {
      throw GeometryError(f.string() + ": topology differs from " + files.front().string());
    }
  }
  const GarmentSubspace s = fit_subspace(corpus, modes);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_subspace(out, s);
  std::printf("subspace: %d modes over %zu meshes (%ld vertices) -> %s\n", s.mode_count(), corpus.size(),
              static_cast<long>(s.vertex_count()), out.string().c_str());
}

struct SynthArgs {
  std::string out;
  int frames = 0;
};

void cmd_synth(RunConfig cfg, const SynthArgs& args) {
  const fs::path out = pick(args.out, cfg.paths.output, "output directory");
  if (args.frames > 0) cfg.synth.frames = args.frames;
  cfg.validate();
  const auto t0 = Clock::now();
  const SynthAssets a = make_assets(cfg.seed, cfg.synth.modes, cfg.width, cfg.height);
  const auto poses = make_pose_sequence(cfg.synth.frames, cfg.synth.pose_amplitude, cfg.seed + 1);
  const auto latents = pose_driven_latents(a.subspace, poses, cfg.seed + 2, cfg.synth.latent_gain);
  WrinkleScript w;
  w.amplitude = cfg.synth.wrinkle_amplitude;
  w.wavelength = cfg.synth.wrinkle_wavelength;
  w.phase_per_frame = cfg.synth.wrinkle_phase_per_frame;
  const auto disp = w.amplitude > 0 ? wrinkle_displacements(a.subspace, latents, w) : std::vector<Positions>{};
  SceneOptions so;
  so.normal_noise = cfg.synth.normal_noise;
  so.seed = cfg.seed + 3;
  so.eta = std::min(-cfg.fine.eta_min, cfg.fine.eta_max);
  const SyntheticScene scene = generate_scene(a.subspace, a.rig, poses, latents, disp, a.camera, so);

  save_assets(out / "assets", a);
  save_scene(out / "scene", scene, a.subspace);
  cfg.paths.assets = out / "assets";
  cfg.paths.scene = out / "scene";
  cfg.paths.output = out;
  save_run_config(out / "config.ini", cfg);
  std::printf("synth: %d frames at %dx%d, %d modes, %ld garment vertices -> %s (%.1f s)\n", cfg.synth.frames,
              cfg.width, cfg.height, a.subspace.mode_count(), static_cast<long>(a.subspace.vertex_count()),
              out.string().c_str(), seconds_since(t0));
}

struct SceneArgs {
  std::string scene, assets, out, frames;
};

void cmd_reconstruct(const RunConfig& cfg, const SceneArgs& args) {
  const fs::path scene = existing(args.scene, cfg.paths.scene, "scene directory");
  const fs::path assets_dir = existing(args.assets, cfg.paths.assets, "assets directory");
  const fs::path out = pick(args.out, cfg.paths.output.empty() ? fs::path() : cfg.paths.output / "recon",
                            "output directory");
  const std::vector<int> frames = frame_range(args.frames, scene_frame_count(scene));
  const Assets a = load_assets(assets_dir, true);
  const std::vector<FrameFeatures> features = load_features(scene, frames);
  fs::create_directories(out);

  std::vector<Eigen::VectorXd> poses, latents;
  auto t = Clock::now();
  const auto on_frame = [&](const FrameResult& r) {
    const std::string name = frame_name(r.frame);
    save_obj(out / (name + ".obj"), r.posed);
    save_obj(out / (name + "_rest.obj"), r.unposed);
    save_trace_csv(out / (name + "_coarse.csv"), r.coarse_trace, false);
    if (!r.fine_trace.empty()) save_trace_csv(out / (name + "_fine.csv"), r.fine_trace, true);
    const double e_coarse = r.coarse_trace.back().total;
    const double e_fine = r.fine_trace.empty() ? 0.0 : r.fine_trace.back().total;
    std::fprintf(stderr, "frame %d: E_coarse %.6g, E_fine %.6g, %.2f s\n", r.frame, e_coarse, e_fine,
                 seconds_since(t));
    t = Clock::now();
    latents.push_back(r.latent);
  };
  reconstruct_sequence(features, a.subspace, a.rig, cfg.coarse, cfg.fine, on_frame);
  for (const FrameFeatures& f : features) poses.push_back(f.pose);
  save_pose_rows(out / "poses.txt", poses);
  save_pose_rows(out / "latents.txt", latents);
  {
    std::ofstream idx(out / "frames.txt");
    for (int f : frames) idx << f << "\n";
    if (!idx) throw Error("failed writing " + (out / "frames.txt").string());
  }
  std::printf("reconstruct: %zu frames -> %s\n", frames.size(), out.string().c_str());
}

struct BuildDatasetArgs {
  std::vector<std::string> recon;
  std::string assets, out;
};

GarmentSequence load_reconstruction(const fs::path& dir, int pose_size) {
  const auto poses = load_pose_rows(dir / "poses.txt", pose_size);
  std::ifstream idx(dir / "frames.txt");
  if (!idx) throw ParseError((dir / "frames.txt").string(), 0, "cannot open");
  std::vector<int> frames;
  int f;
  while (idx >> f) frames.push_back(f);
  if (!idx.eof()) throw ParseError((dir / "frames.txt").string(), frames.size() + 1, "expected a frame number");
  if (frames.size() != poses.size()) {
    throw ParseError((dir / "frames.txt").string(), 0,
                     std::to_string(frames.size()) + " frames but " + std::to_string(poses.size()) + " poses");
  }
  GarmentSequence seq;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    seq.push_back({frames[i], poses[i], load_obj(dir / (frame_name(frames[i]) + ".obj"))});
  }
  return seq;
}

void cmd_build_dataset(const RunConfig& cfg, const BuildDatasetArgs& args) {
  std::vector<fs::path> dirs;
  for (const std::string& r : args.recon) dirs.push_back(existing(r, {}, "reconstruction directory"));
  if (dirs.empty()) dirs.push_back(existing({}, cfg.paths.output.empty() ? fs::path() : cfg.paths.output / "recon",
                                            "reconstruction directory"));
  const fs::path assets_dir = existing(args.assets, cfg.paths.assets, "assets directory");
  const fs::path out = pick(args.out, cfg.paths.output.empty() ? fs::path() : cfg.paths.output / "dataset.cfds",
                            "output file");
  const Assets a = load_assets(assets_dir, false);
  std::vector<GarmentSequence> seqs;
  for (const fs::path& d : dirs) seqs.push_back(load_reconstruction(d, a.rig.pose_size()));
  const GarmentDataset data = build_dataset(seqs, a.rig);
  for (const SkippedFrame& s : data.skipped) {
    std::fprintf(stderr, "skipped sequence %d frame %d: %s\n", s.sequence, s.frame, s.reason.c_str());
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(out, data);
  std::printf("build-dataset: %zu samples, %zu skipped -> %s\n", data.samples.size(), data.skipped.size(),
              out.string().c_str());
}

struct TrainArgs {
  std::string dataset, out, log;
};

void cmd_train(const RunConfig& cfg, const TrainArgs& args) {
  const fs::path dataset = existing(args.dataset,
                                    cfg.paths.output.empty() ? fs::path() : cfg.paths.output / "dataset.cfds",
                                    "dataset file");
  const fs::path out = pick(args.out, cfg.paths.output.empty() ? fs::path() : cfg.paths.output / "model.cfrm",
                            "model file");
  const GarmentDataset data = load_dataset(dataset);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  std::vector<Pose> poses;
  for (const GarmentSample& s : data.samples) poses.push_back(s.pose);
  // The encoder needs more poses than modes.
  const int modes = std::min({cfg.pose_modes, static_cast<int>(poses.front().size()), static_cast<int>(poses.size()) - 1});
  if (modes < 1) throw InvalidArgument("training needs at least two samples");
  if (modes < cfg.pose_modes) {
    std::fprintf(stderr, "note: %zu samples support %d pose modes, not %d\n", poses.size(), modes, cfg.pose_modes);
  }
  const PoseEncoder enc = fit_pose_encoder(poses, modes);
  const auto t0 = Clock::now();
  const TrainResult r = train_regressor(data, tc, &enc);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_regressor(out, r.model);
  const fs::path log = args.log.empty() ? fs::path(out).replace_extension(".log.csv") : fs::path(args.log);
  save_training_log(log, r.log);
  std::printf("train: %zu samples, loss %.6g -> %.6g in %.1f s -> %s\n", data.samples.size(),
              r.initial_loss.total(tc.weights), r.final_loss.total(tc.weights), seconds_since(t0),
              out.string().c_str());
}

struct AnimateArgs {
  std::string model, poses, assets, out;
  bool no_collide = false;
};

void cmd_animate(const RunConfig& cfg, const AnimateArgs& args) {
  const fs::path model_path = existing(args.model,
                                       cfg.paths.output.empty() ? fs::path() : cfg.paths.output / "model.cfrm",
                                       "model file");
  const fs::path pose_path = existing(args.poses, {}, "pose file");
  const fs::path assets_dir = existing(args.assets, cfg.paths.assets, "assets directory");
  const fs::path out = pick(args.out, cfg.paths.output.empty() ? fs::path() : cfg.paths.output / "animated",
                            "output directory");
  const RegressorModel model = load_regressor(model_path);
  const Assets a = load_assets(assets_dir, false);
  if (a.rig.vertex_count() != model.vertex_count()) {
    throw InvalidArgument("rig has " + std::to_string(a.rig.vertex_count()) + " vertices, model has " +
                          std::to_string(model.vertex_count()));
  }
  const auto poses = load_pose_rows(pose_path, model.encoder.pose_size());
  const bool collide = cfg.collide && !args.no_collide && a.body;
  fs::create_directories(out);
  double t_forward = 0, t_pose = 0, t_collide = 0;
  int pushed_total = 0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    auto t = Clock::now();
    const Positions offsets = model.forward(poses[i]);
    t_forward += seconds_since(t);
    t = Clock::now();
    TriMesh mesh = model.mean_unposed.with_vertices(skin(model.mean_unposed.vertices() + offsets, a.rig, poses[i]));
    t_pose += seconds_since(t);
    if (collide) {
      t = Clock::now();
      const TriMesh body = a.body->with_vertices(skin(a.body->vertices(), *a.body_rig, poses[i]));
      int pushed = 0;
      mesh = resolve_collisions(mesh, body, cfg.collision_offset, &pushed);
      pushed_total += pushed;
      t_collide += seconds_since(t);
    }
    save_obj(out / (frame_name(static_cast<int>(i)) + ".obj"), mesh);
  }
  const double n = static_cast<double>(poses.size());
  std::printf("animate: %zu frames -> %s; per frame: forward %.2f ms, posing %.2f ms", poses.size(),
              out.string().c_str(), 1e3 * t_forward / n, 1e3 * t_pose / n);
  if (collide) std::printf(", collision %.2f ms (%d vertices pushed)", 1e3 * t_collide / n, pushed_total);
  std::printf("\n");
}

void cmd_eval(const RunConfig& cfg, const SceneArgs& args) {
  const fs::path scene_dir = existing(args.scene, cfg.paths.scene, "scene directory");
  const fs::path assets_dir = existing(args.assets, cfg.paths.assets, "assets directory");
  const fs::path out = pick(args.out, cfg.paths.output.empty() ? fs::path() : cfg.paths.output / "eval",
                            "output directory");
  const std::vector<int> frames = frame_range(args.frames, scene_frame_count(scene_dir));
  const Assets a = load_assets(assets_dir, true);
  SyntheticScene scene;
  scene.camera = load_scene_camera(scene_dir);
  scene.features = load_features(scene_dir, frames);
  for (int f : frames) scene.posed.push_back(load_obj(scene_dir / "gt" / (frame_name(f) + ".obj")));
  const EvalReport r = run_eval(scene, a.subspace, a.rig, cfg.coarse, cfg.fine);
  fs::create_directories(out);
  save_report_csv(out / "report.csv", r);
  save_report_json(out / "report.json", r);
  std::printf("eval: %zu frames, normal RMSE %.3f +- %.3f deg, precision %.4f, recall %.4f -> %s\n", r.frames.size(),
              r.normal_rmse_deg.mean, r.normal_rmse_deg.std, r.precision.mean, r.recall.mean, out.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Garment reconstruction from normal maps and pose-driven garment animation."};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> settings;
  app.add_option("-c,--config", config_path, "Config file (INI); defaults apply to keys it leaves out");
  app.add_option("--set", settings, "Override a config key, section.key=value (repeatable)");

  FitSubspaceArgs fit_args;
  auto* fit = app.add_subcommand("fit-subspace", "PCA garment subspace from a directory of OBJ meshes");
  fit->add_option("--corpus", fit_args.corpus, "Directory of same-topology .obj meshes")->required();
  fit->add_option("--modes", fit_args.modes, "Number of modes (default synth.modes)");
  fit->add_option("-o,--out", fit_args.out, "Subspace file to write");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate assets and a synthetic scene");
  synth->add_option("-o,--out", synth_args.out, "Output directory (assets/, scene/, config.ini)");
  synth->add_option("--frames", synth_args.frames, "Frame count (default synth.frames)");

  SceneArgs rec_args;
  auto* rec = app.add_subcommand("reconstruct", "Fit the garment to every frame of a scene");
  rec->add_option("--scene", rec_args.scene, "Scene directory (default paths.scene)");
  rec->add_option("--assets", rec_args.assets, "Assets directory (default paths.assets)");
  rec->add_option("-o,--out", rec_args.out, "Output directory (default paths.output/recon)");
  rec->add_option("--frames", rec_args.frames, "Half-open frame range a..b");

  BuildDatasetArgs ds_args;
  auto* ds = app.add_subcommand("build-dataset", "Unpose reconstructions into a training set");
  ds->add_option("--recon", ds_args.recon, "Reconstruction directory, one per sequence (repeatable)");
  ds->add_option("--assets", ds_args.assets, "Assets directory (default paths.assets)");
  ds->add_option("-o,--out", ds_args.out, "Dataset file (default paths.output/dataset.cfds)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train the pose-to-offset regressor");
  train->add_option("--dataset", train_args.dataset, "Dataset file (default paths.output/dataset.cfds)");
  train->add_option("-o,--out", train_args.out, "Model file (default paths.output/model.cfrm)");
  train->add_option("--log", train_args.log, "Training log CSV (default next to the model)");

  AnimateArgs anim_args;
  auto* anim = app.add_subcommand("animate", "Predict and pose the garment for a pose sequence");
  anim->add_option("--model", anim_args.model, "Model file (default paths.output/model.cfrm)");
  anim->add_option("--poses", anim_args.poses, "Pose rows, one frame per line")->required();
  anim->add_option("--assets", anim_args.assets, "Assets directory (default paths.assets)");
  anim->add_option("-o,--out", anim_args.out, "Output directory (default paths.output/animated)");
  anim->add_flag("--no-collide", anim_args.no_collide, "Skip the body collision pass");

  SceneArgs eval_args;
  auto* ev = app.add_subcommand("eval", "Reconstruct a synthetic scene and score it against ground truth");
  ev->add_option("--scene", eval_args.scene, "Scene directory (default paths.scene)");
  ev->add_option("--assets", eval_args.assets, "Assets directory (default paths.assets)");
  ev->add_option("-o,--out", eval_args.out, "Report directory (default paths.output/eval)");
  ev->add_option("--frames", eval_args.frames, "Half-open frame range a..b");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_run_config(config_path);
    for (const std::string& s : settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got '" + s + "'");
      apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.validate();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  try {
    if (*fit) cmd_fit_subspace(cfg, fit_args);
    if (*synth) cmd_synth(cfg, synth_args);
    if (*rec) cmd_reconstruct(cfg, rec_args);
    if (*ds) cmd_build_dataset(cfg, ds_args);
    if (*train) cmd_train(cfg, train_args);
    if (*anim) cmd_animate(cfg, anim_args);
    if (*ev) cmd_eval(cfg, eval_args);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
