#include "clothfit/camera.hpp"

#include <cmath>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "clothfit/error.hpp"

namespace clothfit {

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvalidArgument("camera image size must be positive");
  if (!(cx >= 0.0 && cx <= width && cy >= 0.0 && cy <= height)) {
    throw InvalidArgument("camera principal point lies outside the image");
  }
  if (!(rotation * rotation.transpose()).isIdentity(1e-6) || std::abs(rotation.determinant() - 1.0) > 1e-6) {
    throw InvalidArgument("camera rotation is not a rotation matrix");
  }
  if (!translation.allFinite()) throw InvalidArgument("camera translation is not finite");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width, int height) {
  const Vec3 back = (eye - target).normalized();  // camera +z
  const Vec3 right = up.cross(back).normalized();
  const Vec3 true_up = back.cross(right);
  Camera cam;
  cam.fx = cam.fy = focal;
  cam.width = width;
  cam.height = height;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = true_up.transpose();
  cam.rotation.row(2) = back.transpose();
  cam.translation = -cam.rotation * eye;
  return cam;
}

}  // namespace clothfit
