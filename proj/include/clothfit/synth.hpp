#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "clothfit/features.hpp"
#include "clothfit/mesh.hpp"
#include "clothfit/rig.hpp"
#include "clothfit/subspace.hpp"

namespace clothfit {

// Procedural stand-ins for a body model, a garment template and a captured
// sequence. Units are meters, y is up and the body faces +z.

// 24-joint humanoid skeleton (69 pose values) with identity rest rotations.
std::vector<Joint> make_skeleton();

// Gaussian falloff weights over the torso and shoulder joints, four
// influences per vertex, rows normalized.
RigBundle make_rig(const Positions& rest_vertices);

// Open elliptic tube around the torso: `rows` rings of `cols` vertices.
// The defaults give 4424 vertices.
TriMesh make_garment_template(int rows = 79, int cols = 56);

// Smooth random deformations of the template (radial and vertical fields
// built from low-order Legendre x Fourier terms).
std::vector<TriMesh> make_garment_corpus(const TriMesh& garment_template, int count, std::uint64_t seed);

// Closed torso-shaped ellipsoid lying inside the garment template, used as
// the collision body. Defaults give 6962 vertices.
TriMesh make_body(int rings = 120, int segments = 58);

// 512 x 512 camera two meters in front of the torso.
Camera make_camera(int width = 512, int height = 512);

// Smooth random motion: every joint angle follows its own sinusoid with an
// amplitude up to `amplitude` radians. A zero amplitude gives the rest pose
// for every frame.
std::vector<Pose> make_pose_sequence(int frames, double amplitude, std::uint64_t seed);

// Latent script driven by the pose: p = stddev * tanh(gain * B pose) with a
// fixed random B (seeded), so the garment shape is a smooth function of the
// pose that a regressor can learn.
std::vector<Eigen::VectorXd> pose_driven_latents(const GarmentSubspace& subspace, const std::vector<Pose>& poses,
                                                 std::uint64_t seed, double gain = 1.0);

struct WrinkleScript {
  double amplitude = 0.005;   // meters, along the rest vertex normals
  double wavelength = 0.06;   // meters, measured along `direction`
  Vec3 direction = Vec3::UnitY();
  double phase = 0.0;         // radians at frame 0
  double phase_per_frame = 0.0;
};

// Per-frame rest-space displacement fields for the given latents.
std::vector<Positions> wrinkle_displacements(const GarmentSubspace& subspace,
                                             const std::vector<Eigen::VectorXd>& latents,
                                             const WrinkleScript& script);

struct SceneOptions {
  double normal_noise = 0.0;  // per-channel Gaussian noise on foreground normals
  std::uint64_t seed = 0;
  double eta = 0.03;          // displacement bound checked against the script
};

struct SyntheticScene {
  Camera camera;
  std::vector<FrameFeatures> features;
  std::vector<TriMesh> posed;       // ground-truth garment per frame
  std::vector<Eigen::VectorXd> latents;
  std::vector<Positions> displacements;
};

// Renders skin(decode(p_t) + V_t) for every frame. Masks are hard (soft
// silhouette thresholded at 0.5). An empty displacement list means zero
// displacements. Throws InvalidArgument on length mismatches or a
// displacement component outside [-eta, eta].
SyntheticScene generate_scene(const GarmentSubspace& subspace, const RigBundle& rig, const std::vector<Pose>& poses,
                              const std::vector<Eigen::VectorXd>& latents, const std::vector<Positions>& displacements,
                              const Camera& camera, const SceneOptions& options = {});

// Everything a scene needs besides per-frame scripts.
struct SynthAssets {
  GarmentSubspace subspace;
  RigBundle rig;
  TriMesh body;
  RigBundle body_rig;
  Camera camera;
};

// Template, 60-mesh corpus reduced to `modes` modes, rigs, body, camera.
SynthAssets make_assets(std::uint64_t seed, int modes = 25, int width = 512, int height = 512);

// Scene directory:
//   scene.ini                [camera] fx fy cx cy width height rotation translation, [scene] frames
//   poses.txt                one pose row per frame
//   normals/NNNN.pfm         masks/NNNN.png
//   gt/NNNN.obj              posed ground truth
//   gt/NNNN_rest.obj         unposed ground truth, decode(p) + V
//   gt/latents.txt           one latent row per frame
// Frame numbers are zero-padded to four digits.
void save_scene(const std::filesystem::path& dir, const SyntheticScene& scene, const GarmentSubspace& subspace);

// Reads the camera, poses and per-frame images of a scene directory. Frames
// listed in `frames` (all when empty). Throws ParseError naming the missing
// or malformed file.
std::vector<FrameFeatures> load_features(const std::filesystem::path& dir, const std::vector<int>& frames = {});
int scene_frame_count(const std::filesystem::path& dir);
Camera load_scene_camera(const std::filesystem::path& dir);
void save_camera_ini(const std::filesystem::path& path, const Camera& camera, int frames);

std::string frame_name(int frame);

}  // namespace clothfit
