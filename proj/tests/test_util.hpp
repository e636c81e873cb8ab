#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>

#include "clothfit/mesh.hpp"

namespace clothfit::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("clothfit_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline TriMesh make_mesh(std::initializer_list<Vec3> verts, std::initializer_list<Eigen::Vector3i> faces) {
  Positions v(static_cast<Eigen::Index>(verts.size()), 3);
  Eigen::Index i = 0;
  for (const auto& p : verts) v.row(i++) = p;
  Faces f(static_cast<Eigen::Index>(faces.size()), 3);
  i = 0;
  for (const auto& t : faces) f.row(i++) = t;
  return TriMesh(v, f);
}

// Unit-radius icosphere with `levels` rounds of 4:1 subdivision, outward
// winding.
inline TriMesh icosphere(int levels, double radius = 1.0, const Vec3& center = Vec3::Zero()) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Eigen::Vector3i> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                    {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                    {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                    {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < levels; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<Eigen::Vector3i> next;
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.emplace_back(tri[0], a, c);
      next.emplace_back(tri[1], b, a);
      next.emplace_back(tri[2], c, b);
      next.emplace_back(a, b, c);
    }
    f = std::move(next);
  }
  Positions pv(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) pv.row(static_cast<Eigen::Index>(i)) = center + radius * v[i];
  Faces pf(static_cast<Eigen::Index>(f.size()), 3);
  for (std::size_t i = 0; i < f.size(); ++i) pf.row(static_cast<Eigen::Index>(i)) = f[i];
  return TriMesh(pv, pf);
}

// Axis-aligned box with outward winding.
inline TriMesh cube(double half = 0.5, const Vec3& center = Vec3::Zero()) {
  Positions v(8, 3);
  for (int i = 0; i < 8; ++i) {
    v.row(i) = center + half * Vec3((i & 1) ? 1 : -1, (i & 2) ? 1 : -1, (i & 4) ? 1 : -1);
  }
  Faces f(12, 3);
  f << 0, 2, 1, 1, 2, 3,  // z-
      4, 5, 6, 5, 7, 6,   // z+
      0, 1, 4, 1, 5, 4,   // y-
      2, 6, 3, 3, 6, 7,   // y+
      0, 4, 2, 2, 4, 6,   // x-
      1, 3, 5, 3, 7, 5;   // x+
  return TriMesh(v, f);
}

// Regular grid in the z = `z` plane, (nx + 1) x (ny + 1) vertices.
inline TriMesh grid(int nx, int ny, double sx, double sy, double z = 0.0) {
  Positions v((nx + 1) * (ny + 1), 3);
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      v.row(j * (nx + 1) + i) = Vec3(sx * (static_cast<double>(i) / nx - 0.5), sy * (static_cast<double>(j) / ny - 0.5), z);
    }
  }
  Faces f(2 * nx * ny, 3);
  int k = 0;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int a = j * (nx + 1) + i, b = a + 1, c = a + nx + 1, d = c + 1;
      f.row(k++) = Eigen::Vector3i(a, b, d);
      f.row(k++) = Eigen::Vector3i(a, d, c);
    }
  }
  return TriMesh(v, f);
}

}  // namespace clothfit::testing
