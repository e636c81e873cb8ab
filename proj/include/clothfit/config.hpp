#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clothfit/reconstruct.hpp"
#include "clothfit/regressor.hpp"

namespace clothfit {

struct PathsConfig {
  std::filesystem::path assets;  // subspace.cfss, rig.txt, body.obj, body_rig.txt
  std::filesystem::path scene;   // scene directory (features and ground truth)
  std::filesystem::path output;
};

struct SynthConfig {
  int frames = 20;
  int modes = 25;
  double pose_amplitude = 0.3;   // radians
  double latent_gain = 1.0;
  double normal_noise = 0.0;
  double wrinkle_amplitude = 0.005;
  double wrinkle_wavelength = 0.06;
  double wrinkle_phase_per_frame = 0.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int width = 512;
  int height = 512;
  PathsConfig paths;
  CoarseConfig coarse;
  FineConfig fine;
  TrainConfig train;
  int pose_modes = 10;
  bool collide = true;
  double collision_offset = 0.002;
  SynthConfig synth;

  // Numeric invariants of every section; throws InvalidArgument.
  void validate() const;
};

// Key/value text with [section] headers:
//
//   [run]     seed width height
//   [paths]   assets scene output
//   [coarse]  lambda_coarse lambda_sil lambda_temp lambda_reg first_iterations
//             warm_iterations step max_step damping sharpness
//   [fine]    enabled lambda_fine lambda_edge lambda_temp lambda_reg eta_min
//             eta_max first_iterations warm_iterations step mask_sharpness
//   [train]   epochs batch_size lr_start lr_end weight_offset weight_normal
//             slope dropout pose_modes
//   [animate] collide collision_offset
//   [synth]   frames modes pose_amplitude latent_gain normal_noise
//             wrinkle_amplitude wrinkle_wavelength wrinkle_phase_per_frame
//
// Missing keys keep their defaults. Unknown sections or keys, keys outside
// a section and unparsable values raise ParseError.
RunConfig load_run_config(const std::filesystem::path& path);
// Writes every key with its current value.
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

// `key` is "section.name". Throws InvalidArgument on an unknown key or a
// value that does not parse.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
// Every "section.name" in file order.
std::vector<std::string> config_keys();

}  // namespace clothfit
