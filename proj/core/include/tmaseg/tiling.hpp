#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <vector>

#include "tmaseg/annotation.hpp"
#include "tmaseg/imaging.hpp"
#include "tmaseg/tensor.hpp"

namespace tmaseg {

struct Origin {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Origin&, const Origin&) = default;
};

struct PatchGrid {
  int core_height = 0;
  int core_width = 0;
  int patch_h = 0;
  int patch_w = 0;
  int stride_y = 0;
  int stride_x = 0;
  std::vector<Origin> origins;  // row-major, unique

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

// One training or inference example.
//   image:  [h, w, 3], channel value c mapped to c/255 - 0.5
//   target: h*w values in {0 benign, 1 cancer, -1 ignore}
//   weight: [h, w, 1], 0 exactly where target is -1
struct Patch {
  Origin origin;
  Tensor image;
  std::vector<std::int8_t> target;
  Tensor weight;

  int height() const { return static_cast<int>(image.dim(0)); }
  int width() const { return static_cast<int>(image.dim(1)); }
  bool all_ignored() const;

  friend bool operator==(const Patch&, const Patch&) = default;
};

/// Per-axis origins 0, stride, 2*stride, ... with the last one clamped to
/// extent - patch so the far border is covered.
std::vector<int> axis_origins(int extent, int patch, int stride);

PatchGrid plan_grid(int core_height, int core_width, int patch, int stride);

Real normalize_channel(std::uint8_t value);

Patch extract_patch(const ImageRGB& core, const BinaryTarget& target, Origin origin, int patch_h, int patch_w);

std::vector<Patch> extract(const ImageRGB& core, const BinaryTarget& target, const PatchGrid& grid);

/// Normalized [h, w, 3] input for an unlabelled window of the core.
Tensor extract_image(const ImageRGB& core, Origin origin, int patch_h, int patch_w);

/// Averages overlapping patch probability maps (each patch_h*patch_w values,
/// row-major) into a core-sized heatmap. Accumulation runs in origin order.
Heatmap stitch(const PatchGrid& grid, std::span<const std::vector<float>> patch_probs);

}  // namespace tmaseg
