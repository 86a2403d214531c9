#include "tmaseg/imaging.hpp"

#include <png.h>

#include <cmath>
#include <cstring>

#include "tmaseg/error.hpp"

namespace tmaseg {

namespace {

void check_dims(int height, int width) {
  if (height < 1 || width < 1) {
    throw Error(ErrorCode::InvalidArgument,
                "raster dimensions must be positive, got " + std::to_string(height) + "x" + std::to_string(width));
  }
}

std::size_t area(int height, int width) {
  return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
}

struct PngImage {
  png_image image{};
  PngImage() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

void open_for_read(PngImage& png, const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorCode::FileNotFound, path.string());
  }
  if (!png_image_begin_read_from_file(&png.image, path.c_str())) {
    throw Error(ErrorCode::DecodeError, path.string() + ": " + png.image.message);
  }
  if (png.image.format & PNG_FORMAT_FLAG_LINEAR) {
    throw Error(ErrorCode::DecodeError, path.string() + ": 16-bit channels are not supported");
  }
}

}  // namespace

ImageRGB::ImageRGB(int height, int width) : height_(height), width_(width) {
  check_dims(height, width);
  data_.assign(area(height, width) * 3, 0);
}

ImageRGB::ImageRGB(int height, int width, std::vector<std::uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
  check_dims(height, width);
  if (data_.size() != area(height, width) * 3) {
    throw Error(ErrorCode::DimensionMismatch, "RGB data length does not match " + std::to_string(height) +
                                                  "x" + std::to_string(width));
  }
}

Heatmap::Heatmap(int height, int width, float fill) : height_(height), width_(width) {
  check_dims(height, width);
  if (!(fill >= 0.0f && fill <= 1.0f)) throw Error(ErrorCode::InvalidArgument, "heatmap fill outside [0,1]");
  data_.assign(area(height, width), fill);
}

Heatmap::Heatmap(int height, int width, std::vector<float> data)
    : height_(height), width_(width), data_(std::move(data)) {
  check_dims(height, width);
  if (data_.size() != area(height, width)) {
    throw Error(ErrorCode::DimensionMismatch, "heatmap data length does not match " +
                                                  std::to_string(height) + "x" + std::to_string(width));
  }
  for (float p : data_) {
    if (!(p >= 0.0f && p <= 1.0f)) {
      throw Error(ErrorCode::InvalidArgument, "heatmap value " + std::to_string(p) + " outside [0,1]");
    }
  }
}

ImageRGB load_rgb(const std::filesystem::path& path) {
  PngImage png;
  open_for_read(png, path);
  if (!(png.image.format & PNG_FORMAT_FLAG_COLOR)) {
    throw Error(ErrorCode::DecodeError, path.string() + ": grayscale PNG, expected RGB or RGBA");
  }
  const int height = static_cast<int>(png.image.height);
  const int width = static_cast<int>(png.image.width);
  png.image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(area(height, width) * 4);
  if (!png_image_finish_read(&png.image, nullptr, rgba.data(), 0, nullptr)) {
    throw Error(ErrorCode::DecodeError, path.string() + ": " + png.image.message);
  }
  ImageRGB out(height, width);
  auto& dst = out.data();
  for (std::size_t i = 0, n = area(height, width); i < n; ++i) {
    dst[3 * i + 0] = rgba[4 * i + 0];
    dst[3 * i + 1] = rgba[4 * i + 1];
    dst[3 * i + 2] = rgba[4 * i + 2];
  }
  return out;
}

void save_rgb(const ImageRGB& image, const std::filesystem::path& path) {
  PngImage png;
  png.image.width = static_cast<png_uint_32>(image.width());
  png.image.height = static_cast<png_uint_32>(image.height());
  png.image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, image.data().data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, path.string() + ": " + png.image.message);
  }
}

std::uint8_t probability_to_gray(float p) {
  return static_cast<std::uint8_t>(std::floor(255.0 * static_cast<double>(p) + 0.5));
}

void save_heatmap(const Heatmap& heatmap, const std::filesystem::path& path) {
  std::vector<std::uint8_t> gray(heatmap.data().size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = probability_to_gray(heatmap.data()[i]);
  PngImage png;
  png.image.width = static_cast<png_uint_32>(heatmap.width());
  png.image.height = static_cast<png_uint_32>(heatmap.height());
  png.image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, gray.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, path.string() + ": " + png.image.message);
  }
}

Heatmap load_heatmap(const std::filesystem::path& path) {
  PngImage png;
  open_for_read(png, path);
  const int height = static_cast<int>(png.image.height);
  const int width = static_cast<int>(png.image.width);
  png.image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> gray(area(height, width));
  if (!png_image_finish_read(&png.image, nullptr, gray.data(), 0, nullptr)) {
    throw Error(ErrorCode::DecodeError, path.string() + ": " + png.image.message);
  }
  std::vector<float> p(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) p[i] = static_cast<float>(gray[i]) / 255.0f;
  return Heatmap(height, width, std::move(p));
}

}  // namespace tmaseg
