#pragma once

#include <cstddef>
#include <vector>

namespace clothfit {

// Row-major, channel-interleaved image of doubles. Row 0 is the top row.
template <int Channels>
class Image {
 public:
  static constexpr int channels = Channels;

  Image() = default;
  Image(int width, int height, double fill = 0.0)
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height * Channels, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }
  double* pixel(std::size_t p) { return data_.data() + p * Channels; }
  const double* pixel(std::size_t p) const { return data_.data() + p * Channels; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_size(int width, int height) const { return width_ == width && height_ == height; }
  template <int C>
  bool same_size(const Image<C>& other) const {
    return width_ == other.width() && height_ == other.height();
  }

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * Channels + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// Camera-space unit normals; background pixels hold the zero vector.
using NormalImage = Image<3>;
// Coverage in [0, 1].
using MaskImage = Image<1>;

template <int C>
struct ImageGradient {
  Image<C> dx;
  Image<C> dy;
};

// Central differences with replicated borders. Requires width, height >= 3.
template <int C>
ImageGradient<C> image_gradient(const Image<C>& img);

// Adjoint of image_gradient: returns G^T applied to (dx, dy).
template <int C>
Image<C> image_gradient_adjoint(const ImageGradient<C>& grad);

// Background test used by the normal pass and the metrics.
inline bool is_background(const NormalImage& img, std::size_t p) {
  const double* n = img.pixel(p);
  return n[0] == 0.0 && n[1] == 0.0 && n[2] == 0.0;
}

// Throws InvalidArgument if a mask value leaves [0, 1] or a foreground normal
// deviates from unit length by more than `tolerance`.
void validate_mask(const MaskImage& mask);
void validate_normals(const NormalImage& normals, double tolerance = 1e-4);

}  // namespace clothfit
