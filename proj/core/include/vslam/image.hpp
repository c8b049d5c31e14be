#pragma once

#include <string>
#include <vector>

namespace vslam {

/// Grayscale image with intensities in [0, 1]. Quantization to 8 bits happens
/// only at file boundaries.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  double at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  double& at(int x, int y) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }

  /// Bilinear sample with edge clamping.
  double sample(double x, double y) const;

  bool empty() const { return pixels.empty(); }
};

/// Reads an 8-bit PGM (P2/P5) or PNG image; color PNG is converted to
/// luminance. Throws MalformedFile / IoError with path diagnostics.
GrayImage read_gray_image(const std::string& path);

/// Binary 8-bit PGM.
void write_pgm(const GrayImage& img, const std::string& path);

/// 8-bit grayscale PNG.
void write_png(const GrayImage& img, const std::string& path);

}  // namespace vslam
