#pragma once

#include <cstdint>
#include <vector>

#include "clothfit/camera.hpp"
#include "clothfit/image.hpp"
#include "clothfit/mesh.hpp"

namespace clothfit {

struct RenderOptions {
  // Soft silhouette slope in 1/px; <= 0 skips the silhouette band.
  double sharpness = 50.0;
  // Half-width of the soft band in units of 1/sharpness. Outside the band the
  // silhouette is clamped to 0 or 1 and carries no gradient.
  double band_sigmas = 3.0;
  int tile_size = 32;
  // Faces with a vertex closer than this (meters) are culled.
  double near_plane = 1e-3;
};

// A pixel inside the soft band of one silhouette edge.
struct SilhouetteSample {
  std::uint32_t pixel;
  int v0, v1;         // edge endpoints, projected to a and b
  std::int8_t mode;   // 0: distance to the edge line, 1: to a, 2: to b
  std::int8_t inner;  // sign of cross(b - a, q - a) on the covered side
  std::int8_t sign;   // sign of the signed distance when rasterized
};

// Discrete outcome of rasterization: which face every pixel sees and which
// pixels sit on the soft silhouette band. Shading and backprop evaluate the
// continuous quantities against a fixed Fragments, so gradients hold the
// assignment fixed.
struct Fragments {
  int width = 0, height = 0;
  std::uint64_t topology = 0;
  RenderOptions options;
  int visible_faces = 0;
  std::vector<int> face;               // per pixel, front-most face or -1
  std::vector<std::int8_t> face_sign;  // per face: +1 front-facing, -1 back-facing, 0 culled
  std::vector<SilhouetteSample> silhouette;  // sorted by pixel
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<int>> tile_faces;  // sorted face ids per tile
};

Fragments rasterize(const TriMesh& mesh, const Camera& camera, const RenderOptions& options = {});

// Camera-space normals: barycentric blend of camera-space vertex normals of
// the assigned face, flipped on back-facing faces, renormalized.
NormalImage shade_normals(const TriMesh& mesh, const Camera& camera, const Fragments& fragments);

// Soft coverage: sigmoid(sharpness * signed distance) inside the band, hard
// coverage outside.
MaskImage shade_silhouette(const TriMesh& mesh, const Camera& camera, const Fragments& fragments);

// Throws GeometryError if no face lies in front of the camera.
NormalImage render_normals(const TriMesh& mesh, const Camera& camera, Fragments* fragments = nullptr,
                           const RenderOptions& options = {});
MaskImage render_silhouette(const TriMesh& mesh, const Camera& camera, double sharpness,
                            Fragments* fragments = nullptr);

// dL/dvertices (world space) given dL/d(normal image) and/or dL/d(silhouette).
// Either adjoint may be null. Throws InvalidArgument if the fragments were
// produced for a different topology or image size.
Positions backprop_image_loss(const NormalImage* normal_adjoint, const MaskImage* silhouette_adjoint,
                              const Fragments& fragments, const TriMesh& mesh, const Camera& camera);

}  // namespace clothfit
