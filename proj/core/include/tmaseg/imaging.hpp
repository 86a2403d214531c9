#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tmaseg {

// 8-bit RGB raster, row-major, interleaved R,G,B.
class ImageRGB {
 public:
  ImageRGB(int height, int width);
  ImageRGB(int height, int width, std::vector<std::uint8_t> data);

  int height() const { return height_; }
  int width() const { return width_; }
  std::int64_t pixel_count() const { return std::int64_t{height_} * width_; }

  const std::vector<std::uint8_t>& data() const { return data_; }
  std::vector<std::uint8_t>& data() { return data_; }

  std::uint8_t* pixel(int row, int col) { return &data_[offset(row, col)]; }
  const std::uint8_t* pixel(int row, int col) const { return &data_[offset(row, col)]; }

  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;

 private:
  std::size_t offset(int row, int col) const {
    return (static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col)) * 3;
  }

  int height_;
  int width_;
  std::vector<std::uint8_t> data_;
};

// Per-pixel cancer probability over a core, every value in [0, 1].
class Heatmap {
 public:
  Heatmap(int height, int width, float fill = 0.0f);
  Heatmap(int height, int width, std::vector<float> data);

  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<float>& data() const { return data_; }
  float at(int row, int col) const {
    return data_[static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col)];
  }

  friend bool operator==(const Heatmap&, const Heatmap&) = default;

 private:
  int height_;
  int width_;
  std::vector<float> data_;
};

/// Decodes an 8-bit RGB/RGBA (or palette) PNG. Alpha is dropped, not composited.
ImageRGB load_rgb(const std::filesystem::path& path);

void save_rgb(const ImageRGB& image, const std::filesystem::path& path);

/// Writes an 8-bit grayscale PNG with gray = floor(255 * p + 0.5).
void save_heatmap(const Heatmap& heatmap, const std::filesystem::path& path);

/// Reads an 8-bit grayscale PNG back as gray / 255.
Heatmap load_heatmap(const std::filesystem::path& path);

std::uint8_t probability_to_gray(float p);

}  // namespace tmaseg
