#include "clothfit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "clothfit/error.hpp"
#include "clothfit/io.hpp"
#include "clothfit/render.hpp"
#include "clothfit/skinning.hpp"

namespace clothfit {

namespace {

struct JointSpec {
  const char* name;
  int parent;
  double x, y, z;
};

constexpr JointSpec kSkeleton[] = {
    {"pelvis", -1, 0.0, 0.95, 0.0},        {"left_hip", 0, 0.09, 0.88, 0.0},
    {"right_hip", 0, -0.09, 0.88, 0.0},    {"spine1", 0, 0.0, 1.07, -0.01},
    {"left_knee", 1, 0.10, 0.50, 0.0},     {"right_knee", 2, -0.10, 0.50, 0.0},
    {"spine2", 3, 0.0, 1.20, -0.01},       {"left_ankle", 4, 0.10, 0.09, -0.02},
    {"right_ankle", 5, -0.10, 0.09, -0.02}, {"spine3", 6, 0.0, 1.33, -0.01},
    {"left_foot", 7, 0.11, 0.03, 0.10},    {"right_foot", 8, -0.11, 0.03, 0.10},
    {"neck", 9, 0.0, 1.52, -0.02},         {"left_collar", 9, 0.07, 1.45, -0.01},
    {"right_collar", 9, -0.07, 1.45, -0.01}, {"head", 12, 0.0, 1.62, 0.02},
    {"left_shoulder", 13, 0.18, 1.43, -0.02}, {"right_shoulder", 14, -0.18, 1.43, -0.02},
    {"left_elbow", 16, 0.44, 1.43, -0.03}, {"right_elbow", 17, -0.44, 1.43, -0.03},
    {"left_wrist", 18, 0.69, 1.43, -0.02}, {"right_wrist", 19, -0.69, 1.43, -0.02},
    {"left_hand", 20, 0.77, 1.43, -0.02},  {"right_hand", 21, -0.77, 1.43, -0.02},
};

// Joints that may carry weight on torso geometry.
constexpr int kTorsoJoints[] = {0, 1, 2, 3, 6, 9, 12, 13, 14, 16, 17};

double legendre(int l, double x) {
  switch (l) {
    case 0: return 1.0;
    case 1: return x;
    case 2: return 0.5 * (3 * x * x - 1);
    default: return 0.5 * (5 * x * x * x - 3 * x);
  }
}

constexpr double kGarmentBottom = 1.00, kGarmentTop = 1.52;
constexpr double kGarmentRadiusX = 0.17, kGarmentRadiusZ = 0.115;

SkinWeights torso_weights(const Positions& rest, const std::vector<Joint>& joints) {
  constexpr double sigma = 0.09;
  constexpr int influences = 4;
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(rest.rows()) * influences);
  for (Eigen::Index i = 0; i < rest.rows(); ++i) {
    const Vec3 v = rest.row(i).transpose();
    std::vector<std::pair<double, int>> w;
    for (int j : kTorsoJoints) {
      const double d = (v - joints[j].rest.translation()).norm();
      w.emplace_back(-d, j);
    }
    std::sort(w.begin(), w.end(), [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    double sum = 0.0;
    for (int k = 0; k < influences; ++k) {
      w[k].first = std::exp(-(w[k].first * w[k].first) / (2 * sigma * sigma));
      sum += w[k].first;
    }
    if (!(sum > 1e-300)) {
      // Far from every joint: bind rigidly to the nearest one.
      triplets.emplace_back(static_cast<int>(i), w[0].second, 1.0);
      continue;
    }
    for (int k = 0; k < influences; ++k) triplets.emplace_back(static_cast<int>(i), w[k].second, w[k].first / sum);
  }
  SkinWeights weights(rest.rows(), static_cast<Eigen::Index>(joints.size()));
  weights.setFromTriplets(triplets.begin(), triplets.end());
  return weights;
}

}  // namespace

std::vector<Joint> make_skeleton() {
  std::vector<Joint> joints;
  for (const auto& s : kSkeleton) {
    Joint j;
    j.name = s.name;
    j.parent = s.parent;
    j.rest = Eigen::Isometry3d::Identity();
    j.rest.translation() = Vec3(s.x, s.y, s.z);
    joints.push_back(j);
  }
  return joints;
}

RigBundle make_rig(const Positions& rest_vertices) {
  std::vector<Joint> joints = make_skeleton();
  SkinWeights w = torso_weights(rest_vertices, joints);
  return RigBundle(std::move(joints), std::move(w));
}

TriMesh make_garment_template(int rows, int cols) {
  if (rows < 2 || cols < 3) throw InvalidArgument("garment template needs at least 2 rows and 3 columns");
  Positions v(static_cast<Eigen::Index>(rows) * cols, 3);
  for (int i = 0; i < rows; ++i) {
    const double y = kGarmentBottom + (kGarmentTop - kGarmentBottom) * i / (rows - 1);
    for (int j = 0; j < cols; ++j) {
      const double phi = 2 * M_PI * j / cols;
      v.row(i * cols + j) << kGarmentRadiusX * std::sin(phi), y, kGarmentRadiusZ * std::cos(phi);
    }
  }
  Faces f(2 * (rows - 1) * cols, 3);
  int k = 0;
  for (int i = 0; i + 1 < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const int a = i * cols + j, b = i * cols + (j + 1) % cols;
      const int c = (i + 1) * cols + (j + 1) % cols, d = (i + 1) * cols + j;
      f.row(k++) << a, b, c;
      f.row(k++) << a, c, d;
    }
  }
  return TriMesh(std::move(v), std::move(f));
}

std::vector<TriMesh> make_garment_corpus(const TriMesh& garment_template, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  const Positions& base = garment_template.vertices();
  std::vector<TriMesh> corpus;
  corpus.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) {
    // Coefficients for (l, m, cos/sin) on the radial and vertical fields.
    double radial[4][4][2], vertical[4][4][2];
    for (int l = 0; l < 4; ++l) {
      for (int m = 0; m < 4; ++m) {
        for (int s = 0; s < 2; ++s) {
          radial[l][m][s] = (m == 0 && s == 1) ? 0.0 : 0.012 / (1 + l + m) * g(rng);
          vertical[l][m][s] = (m == 0 && s == 1) ? 0.0 : 0.006 / (1 + l + m) * g(rng);
        }
      }
    }
    Positions v = base;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      const double h = 2 * (base(i, 1) - kGarmentBottom) / (kGarmentTop - kGarmentBottom) - 1;
      const double phi = std::atan2(base(i, 0) / kGarmentRadiusX, base(i, 2) / kGarmentRadiusZ);
      double dr = 0.0, dy = 0.0;
      for (int l = 0; l < 4; ++l) {
        const double pl = legendre(l, h);
        for (int m = 0; m < 4; ++m) {
          const double c = std::cos(m * phi), s = std::sin(m * phi);
          dr += pl * (radial[l][m][0] * c + radial[l][m][1] * s);
          dy += pl * (vertical[l][m][0] * c + vertical[l][m][1] * s);
        }
      }
      v(i, 0) += dr * std::sin(phi);
      v(i, 1) += dy;
      v(i, 2) += dr * std::cos(phi);
    }
    corpus.push_back(garment_template.with_vertices(std::move(v)));
  }
  return corpus;
}

TriMesh make_body(int rings, int segments) {
  if (rings < 2 || segments < 3) throw InvalidArgument("body needs at least 2 rings and 3 segments");
  constexpr double cy = 1.25, half_height = 0.40, rx = 0.15, rz = 0.10;
  Positions v(static_cast<Eigen::Index>(rings) * segments + 2, 3);
  v.row(0) << 0.0, cy - half_height, 0.0;
  for (int r = 0; r < rings; ++r) {
    const double theta = M_PI * (r + 1) / (rings + 1);
    // A softened profile keeps the torso fuller than an ellipsoid.
    const double s = std::pow(std::sin(theta), 0.6);
    const double y = cy - half_height * std::cos(theta);
    for (int k = 0; k < segments; ++k) {
      const double phi = 2 * M_PI * k / segments;
      v.row(1 + r * segments + k) << rx * s * std::sin(phi), y, rz * s * std::cos(phi);
    }
  }
  const int top = rings * segments + 1;
  v.row(top) << 0.0, cy + half_height, 0.0;
  Faces f(2 * segments * rings, 3);
  int n = 0;
  auto ring = [&](int r, int k) { return 1 + r * segments + (k % segments); };
  for (int k = 0; k < segments; ++k) f.row(n++) << 0, ring(0, k + 1), ring(0, k);
  for (int r = 0; r + 1 < rings; ++r) {
    for (int k = 0; k < segments; ++k) {
      f.row(n++) << ring(r, k), ring(r, k + 1), ring(r + 1, k + 1);
      f.row(n++) << ring(r, k), ring(r + 1, k + 1), ring(r + 1, k);
    }
  }
  for (int k = 0; k < segments; ++k) f.row(n++) << top, ring(rings - 1, k), ring(rings - 1, k + 1);
  return TriMesh(std::move(v), std::move(f));
}

Camera make_camera(int width, int height) {
  const double focal = 1170.0 * std::min(width, height) / 512.0;
  return Camera::look_at(Vec3(0.0, 1.26, 2.2), Vec3(0.0, 1.26, 0.0), Vec3::UnitY(), focal, width, height);
}

std::vector<Pose> make_pose_sequence(int frames, double amplitude, std::uint64_t seed) {
  if (frames < 0) throw InvalidArgument("negative frame count");
  const int values = 3 * (static_cast<int>(std::size(kSkeleton)) - 1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd amp(values), freq(values), phase(values);
  for (int k = 0; k < values; ++k) {
    const int joint = k / 3 + 1;
    const bool spine = joint == 3 || joint == 6 || joint == 9;
    const double scale = spine ? 0.5 : 1.0;
    amp(k) = amplitude * scale * (0.3 + 0.7 * u(rng));
    freq(k) = 0.1 + 0.3 * u(rng);
    phase(k) = 2 * M_PI * u(rng);
  }
  std::vector<Pose> poses;
  for (int t = 0; t < frames; ++t) {
    Pose p(values);
    for (int k = 0; k < values; ++k) p(k) = amp(k) * std::sin(freq(k) * t + phase(k));
    poses.push_back(p);
  }
  return poses;
}

std::vector<Eigen::VectorXd> pose_driven_latents(const GarmentSubspace& subspace, const std::vector<Pose>& poses,
                                                 std::uint64_t seed, double gain) {
  std::vector<Eigen::VectorXd> out;
  if (poses.empty()) return out;
  const Eigen::Index dim = poses[0].size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  Eigen::MatrixXd b(subspace.mode_count(), dim);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = g(rng);
  for (const Pose& p : poses) {
    if (p.size() != dim) throw InvalidArgument("poses differ in length");
    out.push_back(subspace.stddev().cwiseProduct((gain * (b * p)).array().tanh().matrix()));
  }
  return out;
}

std::vector<Positions> wrinkle_displacements(const GarmentSubspace& subspace,
                                             const std::vector<Eigen::VectorXd>& latents,
                                             const WrinkleScript& script) {
  if (!(script.wavelength > 0)) throw InvalidArgument("wrinkle wavelength must be positive");
  const Vec3 dir = script.direction.normalized();
  std::vector<Positions> out;
  for (std::size_t t = 0; t < latents.size(); ++t) {
    const TriMesh rest = subspace.decode_mesh(latents[t]);
    const Positions normals = vertex_normals(rest);
    const double phase = script.phase + script.phase_per_frame * static_cast<double>(t);
    Positions v(rest.num_vertices(), 3);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      // The wave runs over template coordinates so that it stays attached to
      // the cloth when the latent changes.
      const double s = dir.dot(subspace.mean().row(i).transpose());
      v.row(i) = script.amplitude * std::sin(2 * M_PI * s / script.wavelength + phase) * normals.row(i);
    }
    out.push_back(std::move(v));
  }
  return out;
}

SyntheticScene generate_scene(const GarmentSubspace& subspace, const RigBundle& rig, const std::vector<Pose>& poses,
                              const std::vector<Eigen::VectorXd>& latents, const std::vector<Positions>& displacements,
                              const Camera& camera, const SceneOptions& options) {
  camera.validate();
  if (latents.size() != poses.size()) {
    throw InvalidArgument("latent script has " + std::to_string(latents.size()) + " frames, pose sequence has " +
                          std::to_string(poses.size()));
  }
  if (!displacements.empty() && displacements.size() != poses.size()) {
    throw InvalidArgument("wrinkle script has " + std::to_string(displacements.size()) +
                          " frames, pose sequence has " + std::to_string(poses.size()));
  }
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> g;
  SyntheticScene scene;
  scene.camera = camera;
  for (std::size_t t = 0; t < poses.size(); ++t) {
    Positions v = Positions::Zero(subspace.vertex_count(), 3);
    if (!displacements.empty()) {
      v = displacements[t];
      if (v.rows() != subspace.vertex_count()) throw InvalidArgument("displacement has the wrong vertex count");
      if (v.cwiseAbs().maxCoeff() > options.eta) {
        throw InvalidArgument("displacement of frame " + std::to_string(t) + " leaves the bound of " +
                              std::to_string(options.eta) + " m");
      }
    }
    const Positions rest = subspace.decode(latents[t]) + v;
    const TriMesh posed = subspace.mean_mesh().with_vertices(skin(rest, rig, poses[t]));
    Fragments frags;
    RenderOptions ro;
    FrameFeatures f;
    f.normals = render_normals(posed, camera, &frags, ro);
    const MaskImage soft = shade_silhouette(posed, camera, frags);
    f.mask = MaskImage(camera.width, camera.height);
    for (std::size_t p = 0; p < soft.data().size(); ++p) f.mask.data()[p] = soft.data()[p] >= 0.5 ? 1.0 : 0.0;
    if (options.normal_noise > 0) {
      for (std::size_t p = 0; p < f.normals.pixel_count(); ++p) {
        if (is_background(f.normals, p)) continue;
        double* n = f.normals.pixel(p);
        Vec3 m(n[0] + options.normal_noise * g(rng), n[1] + options.normal_noise * g(rng),
               n[2] + options.normal_noise * g(rng));
        if (m.norm() < 1e-9) m = Vec3::UnitZ();
        m.normalize();
        n[0] = m.x();
        n[1] = m.y();
        n[2] = m.z();
      }
    }
    f.pose = poses[t];
    f.camera = camera;
    f.index = static_cast<int>(t);
    scene.features.push_back(std::move(f));
    scene.posed.push_back(posed);
    scene.latents.push_back(latents[t]);
    scene.displacements.push_back(std::move(v));
  }
  return scene;
}

SynthAssets make_assets(std::uint64_t seed, int modes, int width, int height) {
  const TriMesh garment = make_garment_template();
  SynthAssets a;
  a.subspace = fit_subspace(make_garment_corpus(garment, 60, seed), modes);
  a.rig = make_rig(a.subspace.mean());
  a.body = make_body();
  a.body_rig = make_rig(a.body.vertices());
  a.camera = make_camera(width, height);
  return a;
}

std::string frame_name(int frame) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d", frame);
  return buf;
}

void save_camera_ini(const std::filesystem::path& path, const Camera& camera, int frames) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  auto num = [](double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  tree.put("camera.fx", num(camera.fx));
  tree.put("camera.fy", num(camera.fy));
  tree.put("camera.cx", num(camera.cx));
  tree.put("camera.cy", num(camera.cy));
  tree.put("camera.width", camera.width);
  tree.put("camera.height", camera.height);
  std::string rot, trans;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot += (rot.empty() ? "" : " ") + num(camera.rotation(r, c));
  for (int k = 0; k < 3; ++k) trans += (trans.empty() ? "" : " ") + num(camera.translation(k));
  tree.put("camera.rotation", rot);
  tree.put("camera.translation", trans);
  tree.put("scene.frames", frames);
  pt::write_ini(path.string(), tree);
}

namespace {

boost::property_tree::ptree read_scene_ini(const std::filesystem::path& dir) {
  const auto path = dir / "scene.ini";
  if (!std::filesystem::exists(path)) throw ParseError(path.string(), 0, "scene file not found");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(path.string(), e.line(), e.message());
  }
  return tree;
}

std::vector<double> numbers(const std::string& text, std::size_t count, const std::string& path, const char* key) {
  std::istringstream in(text);
  std::vector<double> out;
  double x;
  while (in >> x) out.push_back(x);
  if (out.size() != count || !in.eof()) {
    throw ParseError(path, 0, std::string(key) + " needs " + std::to_string(count) + " numbers");
  }
  return out;
}

}  // namespace

Camera load_scene_camera(const std::filesystem::path& dir) {
  const auto tree = read_scene_ini(dir);
  const std::string path = (dir / "scene.ini").string();
  Camera cam;
  try {
    cam.fx = tree.get<double>("camera.fx");
    cam.fy = tree.get<double>("camera.fy");
    cam.cx = tree.get<double>("camera.cx");
    cam.cy = tree.get<double>("camera.cy");
    cam.width = tree.get<int>("camera.width");
    cam.height = tree.get<int>("camera.height");
    const auto r = numbers(tree.get<std::string>("camera.rotation"), 9, path, "camera.rotation");
    const auto t = numbers(tree.get<std::string>("camera.translation"), 3, path, "camera.translation");
    for (int k = 0; k < 9; ++k) cam.rotation(k / 3, k % 3) = r[k];
    cam.translation = Vec3(t[0], t[1], t[2]);
  } catch (const boost::property_tree::ptree_error& e) {
    throw ParseError(path, 0, e.what());
  }
  cam.validate();
  return cam;
}

int scene_frame_count(const std::filesystem::path& dir) {
  const auto tree = read_scene_ini(dir);
  try {
    return tree.get<int>("scene.frames");
  } catch (const boost::property_tree::ptree_error& e) {
    throw ParseError((dir / "scene.ini").string(), 0, e.what());
  }
}

void save_scene(const std::filesystem::path& dir, const SyntheticScene& scene, const GarmentSubspace& subspace) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "normals");
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "gt");
  const int frames = static_cast<int>(scene.features.size());
  save_camera_ini(dir / "scene.ini", scene.camera, frames);
  std::vector<Pose> poses;
  for (const auto& f : scene.features) poses.push_back(f.pose);
  save_pose_rows(dir / "poses.txt", poses);
  save_pose_rows(dir / "gt" / "latents.txt", scene.latents);
  for (int t = 0; t < frames; ++t) {
    const std::string name = frame_name(t);
    save_pfm(dir / "normals" / (name + ".pfm"), scene.features[t].normals);
    save_png_mask(dir / "masks" / (name + ".png"), scene.features[t].mask);
    save_obj(dir / "gt" / (name + ".obj"), scene.posed[t]);
    save_obj(dir / "gt" / (name + "_rest.obj"),
             subspace.mean_mesh().with_vertices(subspace.decode(scene.latents[t]) + scene.displacements[t]));
  }
}

std::vector<FrameFeatures> load_features(const std::filesystem::path& dir, const std::vector<int>& frames) {
  const Camera cam = load_scene_camera(dir);
  const int count = scene_frame_count(dir);
  const std::vector<Pose> poses = load_pose_rows(dir / "poses.txt");
  if (static_cast<int>(poses.size()) < count) {
    throw ParseError((dir / "poses.txt").string(), 0,
                     "has " + std::to_string(poses.size()) + " rows for " + std::to_string(count) + " frames");
  }
  std::vector<int> which = frames;
  if (which.empty()) {
    for (int t = 0; t < count; ++t) which.push_back(t);
  }
  std::vector<FrameFeatures> out;
  for (int t : which) {
    if (t < 0 || t >= count) {
      throw InvalidArgument("frame " + std::to_string(t) + " is outside the scene's " + std::to_string(count) + " frames");
    }
    const std::string name = frame_name(t);
    const auto npath = dir / "normals" / (name + ".pfm");
    const auto mpath = dir / "masks" / (name + ".png");
    if (!std::filesystem::exists(npath)) throw ParseError(npath.string(), 0, "normal map for frame " + std::to_string(t) + " not found");
    if (!std::filesystem::exists(mpath)) throw ParseError(mpath.string(), 0, "mask for frame " + std::to_string(t) + " not found");
    FrameFeatures f;
    f.normals = load_pfm_normals(npath);
    f.mask = load_png_mask(mpath);
    f.pose = poses[static_cast<std::size_t>(t)];
    f.camera = cam;
    f.index = t;
    validate_features(f);
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace clothfit
