#pragma once

#include <Eigen/Core>

#include "clothfit/mesh.hpp"

namespace clothfit {

// Pinhole camera. Camera space follows the usual graphics convention: +x
// right, +y up, the camera looks down -z, so a surface facing the camera has
// normal (0, 0, 1). Pixel (x, y) covers [x, x+1) x [y, y+1) with row 0 at
// the top; pixel centers sit at half-integer coordinates.
struct Camera {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();

  // Throws InvalidArgument on non-positive focal lengths, an empty image, a
  // principal point outside the image or a non-rigid rotation.
  void validate() const;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }

  // Camera at `eye` looking at `target`; field of view chosen from `focal`.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width, int height);
};

// Screen-space projection of one camera-space point.
struct Projected {
  Vec2 uv;       // pixels
  double depth;  // distance along the viewing axis, > 0 in front
};

inline Projected project(const Camera& cam, const Vec3& pc) {
  const double d = -pc.z();
  return {Vec2(cam.cx + cam.fx * pc.x() / d, cam.cy - cam.fy * pc.y() / d), d};
}

// d(u, v) / d(camera-space point), 2 x 3.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vec3& pc) {
  const double d = -pc.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx / d, 0.0, cam.fx * pc.x() / (d * d),  //
      0.0, -cam.fy / d, -cam.fy * pc.y() / (d * d);
  return j;
}

}  // namespace clothfit
