#pragma once

#include "clothfit/camera.hpp"
#include "clothfit/image.hpp"
#include "clothfit/rig.hpp"

namespace clothfit {

// Per-frame reconstruction inputs: predicted normals, garment mask, body pose.
struct FrameFeatures {
  NormalImage normals;
  MaskImage mask;
  Pose pose;
  Camera camera;
  int index = 0;
};

// Throws InvalidArgument when the images disagree in size with each other or
// with the camera, or hold out-of-range values.
void validate_features(const FrameFeatures& features);

}  // namespace clothfit
