#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace flamegs {

/// Single-channel row-major image. Pixel (x, y) has its center at integer
/// coordinates (x, y) in the pixel frame used by the camera model.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  [[nodiscard]] std::size_t size() const { return pixels.size(); }
  [[nodiscard]] bool empty() const { return pixels.empty(); }

  double& operator()(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double operator()(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }

  [[nodiscard]] bool same_shape(const Image& other) const {
    return width == other.width && height == other.height;
  }
};

/// Copy with every pixel clamped to [0, 1].
Image clamp01(const Image& img);

/// Binary P5 PGM, 16-bit big-endian samples, maxval 65535.
void write_pgm16(const std::filesystem::path& path, const Image& img);
Image read_pgm16(const std::filesystem::path& path);

}  // namespace flamegs
