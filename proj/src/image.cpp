#include "clothfit/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "clothfit/error.hpp"

namespace clothfit {

template <int C>
ImageGradient<C> image_gradient(const Image<C>& img) {
  const int w = img.width(), h = img.height();
  if (w < 3 || h < 3) {
    throw InvalidArgument("image_gradient needs at least 3x3 pixels, got " + std::to_string(w) + "x" +
                          std::to_string(h));
  }
  ImageGradient<C> out{Image<C>(w, h), Image<C>(w, h)};
  for (int y = 0; y < h; ++y) {
    const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
      for (int c = 0; c < C; ++c) {
        out.dx.at(x, y, c) = 0.5 * (img.at(xp, y, c) - img.at(xm, y, c));
        out.dy.at(x, y, c) = 0.5 * (img.at(x, yp, c) - img.at(x, ym, c));
      }
    }
  }
  return out;
}

template <int C>
Image<C> image_gradient_adjoint(const ImageGradient<C>& grad) {
  const int w = grad.dx.width(), h = grad.dx.height();
  Image<C> out(w, h);
  for (int y = 0; y < h; ++y) {
    const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
      for (int c = 0; c < C; ++c) {
        const double gx = 0.5 * grad.dx.at(x, y, c);
        const double gy = 0.5 * grad.dy.at(x, y, c);
        out.at(xp, y, c) += gx;
        out.at(xm, y, c) -= gx;
        out.at(x, yp, c) += gy;
        out.at(x, ym, c) -= gy;
      }
    }
  }
  return out;
}

template ImageGradient<1> image_gradient(const Image<1>&);
template ImageGradient<3> image_gradient(const Image<3>&);
template Image<1> image_gradient_adjoint(const ImageGradient<1>&);
template Image<3> image_gradient_adjoint(const ImageGradient<3>&);

void validate_mask(const MaskImage& mask) {
  for (double v : mask.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("mask value outside [0, 1]: " + std::to_string(v));
  }
}

void validate_normals(const NormalImage& normals, double tolerance) {
  for (std::size_t p = 0; p < normals.pixel_count(); ++p) {
    if (is_background(normals, p)) continue;
    const double* n = normals.pixel(p);
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if (!(std::abs(len - 1.0) <= tolerance)) {
      throw InvalidArgument("normal at pixel " + std::to_string(p) + " has length " + std::to_string(len));
    }
  }
}

}  // namespace clothfit
