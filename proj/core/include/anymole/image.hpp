#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace anymole::img {

/// Planar float image, values nominally in [0, 1]. Channel layout is
/// c * height * width + y * width + x; channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  static Image zeros(int width, int height, int channels = 1);

  double& at(int c, int y, int x) {
    return data[static_cast<size_t>((c * height + y) * width + x)];
  }
  double at(int c, int y, int x) const {
    return data[static_cast<size_t>((c * height + y) * width + x)];
  }
  size_t size() const { return data.size(); }

  /// Rec.601 luma for RGB; identity for grayscale.
  Image to_luminance() const;
};

bool same_dims(const Image& a, const Image& b);

/// Mean absolute difference over all samples (dimensions must match).
double mean_abs_diff(const Image& a, const Image& b);

/// 8-bit PNG round trip. Writing quantizes with round(v * 255) after
/// clamping to [0, 1]; identical images produce identical files.
void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

}  // namespace anymole::img
