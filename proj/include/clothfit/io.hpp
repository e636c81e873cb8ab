#pragma once

#include <filesystem>
#include <vector>

#include "clothfit/image.hpp"
#include "clothfit/mesh.hpp"
#include "clothfit/rig.hpp"

namespace clothfit {

// Wavefront OBJ, `v` and `f` records only. Faces with more than three
// corners are fan-triangulated; `v/vt/vn` corner syntax is accepted.
TriMesh load_obj(const std::filesystem::path& path);
void save_obj(const std::filesystem::path& path, const TriMesh& mesh);

// Portable float map. Three-channel files hold normals, one-channel files
// hold masks. Written little-endian, bottom row first as the format requires.
NormalImage load_pfm_normals(const std::filesystem::path& path);
void save_pfm(const std::filesystem::path& path, const NormalImage& image);
void save_pfm(const std::filesystem::path& path, const MaskImage& image);

// 8-bit grayscale PNG, [0, 255] <-> [0, 1].
MaskImage load_png_mask(const std::filesystem::path& path);
void save_png_mask(const std::filesystem::path& path, const MaskImage& mask);

// Rig bundle text schema:
//
//   clothfit-rig 1
//   joints <J>
//   <parent> <name> <qw> <qx> <qy> <qz> <tx> <ty> <tz>     (J lines, rest frames)
//   weights <vertex-count> <nonzero-count>
//   <vertex> <joint> <weight>                               (nonzero-count lines)
//
// Lines starting with '#' are comments.
RigBundle load_rig(const std::filesystem::path& path);
void save_rig(const std::filesystem::path& path, const RigBundle& rig);

// One whitespace-separated row per frame. If `expected_width` is non-zero,
// every row must have exactly that many values.
std::vector<Pose> load_pose_rows(const std::filesystem::path& path, int expected_width = 0);
void save_pose_rows(const std::filesystem::path& path, const std::vector<Pose>& poses);

}  // namespace clothfit
