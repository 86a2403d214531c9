#include "tmaseg/tiling.hpp"

#include <algorithm>
#include <string>

#include "tmaseg/error.hpp"

namespace tmaseg {

bool Patch::all_ignored() const {
  return std::all_of(weight.data().begin(), weight.data().end(), [](Real w) { return w == Real(0); });
}

std::vector<int> axis_origins(int extent, int patch, int stride) {
  std::vector<int> out;
  for (int o = 0; o + patch <= extent; o += stride) out.push_back(o);
  if (out.empty() || out.back() + patch < extent) out.push_back(extent - patch);
  return out;
}

PatchGrid plan_grid(int core_height, int core_width, int patch, int stride) {
  if (patch > core_height || patch > core_width) {
    throw Error(ErrorCode::PatchLargerThanCore, "patch " + std::to_string(patch) + " exceeds core " +
                                                    std::to_string(core_height) + "x" + std::to_string(core_width));
  }
  if (stride < 1 || stride > patch) {
    throw Error(ErrorCode::InvalidArgument,
                "stride must lie in [1, patch], got " + std::to_string(stride) + " for patch " + std::to_string(patch));
  }
  PatchGrid grid{core_height, core_width, patch, patch, stride, stride, {}};
  const auto rows = axis_origins(core_height, patch, stride);
  const auto cols = axis_origins(core_width, patch, stride);
  grid.origins.reserve(rows.size() * cols.size());
  for (int r : rows) {
    for (int c : cols) grid.origins.push_back({r, c});
  }
  return grid;
}

Real normalize_channel(std::uint8_t value) {
  return static_cast<Real>(value) / Real(255) - Real(0.5);
}

Tensor extract_image(const ImageRGB& core, Origin origin, int patch_h, int patch_w) {
  if (origin.row < 0 || origin.col < 0 || origin.row + patch_h > core.height() ||
      origin.col + patch_w > core.width()) {
    throw Error(ErrorCode::PatchLargerThanCore, "patch window leaves the core");
  }
  Tensor image({patch_h, patch_w, 3});
  Real* dst = image.ptr();
  for (int y = 0; y < patch_h; ++y) {
    const std::uint8_t* src = core.pixel(origin.row + y, origin.col);
    for (int i = 0; i < patch_w * 3; ++i) *dst++ = normalize_channel(src[i]);
  }
  return image;
}

Patch extract_patch(const ImageRGB& core, const BinaryTarget& target, Origin origin, int patch_h, int patch_w) {
  if (core.height() != target.height || core.width() != target.width) {
    throw Error(ErrorCode::DimensionMismatch, "annotation " + std::to_string(target.height) + "x" +
                                                  std::to_string(target.width) + " does not match core " +
                                                  std::to_string(core.height()) + "x" + std::to_string(core.width()));
  }
  Patch p;
  p.origin = origin;
  p.image = extract_image(core, origin, patch_h, patch_w);
  p.target.resize(static_cast<std::size_t>(patch_h) * static_cast<std::size_t>(patch_w));
  p.weight = Tensor({patch_h, patch_w, 1});
  std::size_t k = 0;
  for (int y = 0; y < patch_h; ++y) {
    for (int x = 0; x < patch_w; ++x, ++k) {
      const std::int8_t t = target.at(origin.row + y, origin.col + x);
      p.target[k] = t;
      p.weight[static_cast<std::int64_t>(k)] = t == kTargetIgnore ? Real(0) : Real(1);
    }
  }
  return p;
}

std::vector<Patch> extract(const ImageRGB& core, const BinaryTarget& target, const PatchGrid& grid) {
  if (core.height() != grid.core_height || core.width() != grid.core_width) {
    throw Error(ErrorCode::DimensionMismatch, "grid was planned for a different core size");
  }
  std::vector<Patch> out;
  out.reserve(grid.origins.size());
  for (const auto& o : grid.origins) out.push_back(extract_patch(core, target, o, grid.patch_h, grid.patch_w));
  return out;
}

Heatmap stitch(const PatchGrid& grid, std::span<const std::vector<float>> patch_probs) {
  if (patch_probs.size() != grid.origins.size()) {
    throw Error(ErrorCode::CountMismatch, std::to_string(patch_probs.size()) + " probability maps for " +
                                              std::to_string(grid.origins.size()) + " grid origins");
  }
  const std::size_t patch_area = static_cast<std::size_t>(grid.patch_h) * static_cast<std::size_t>(grid.patch_w);
  const std::size_t w = static_cast<std::size_t>(grid.core_width);
  std::vector<double> sum(static_cast<std::size_t>(grid.core_height) * w, 0.0);
  std::vector<std::uint32_t> count(sum.size(), 0);
  for (std::size_t i = 0; i < grid.origins.size(); ++i) {
    const auto& map = patch_probs[i];
    if (map.size() != patch_area) {
      throw Error(ErrorCode::DimensionMismatch, "probability map " + std::to_string(i) + " has " +
                                                    std::to_string(map.size()) + " values, expected " +
                                                    std::to_string(patch_area));
    }
    const auto o = grid.origins[i];
    for (int y = 0; y < grid.patch_h; ++y) {
      const std::size_t row = static_cast<std::size_t>(o.row + y) * w + static_cast<std::size_t>(o.col);
      const float* src = &map[static_cast<std::size_t>(y) * static_cast<std::size_t>(grid.patch_w)];
      for (int x = 0; x < grid.patch_w; ++x) {
        sum[row + static_cast<std::size_t>(x)] += static_cast<double>(src[x]);
        ++count[row + static_cast<std::size_t>(x)];
      }
    }
  }
  std::vector<float> out(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    if (count[i] == 0) throw Error(ErrorCode::InvalidArgument, "grid leaves a pixel uncovered");
    out[i] = std::clamp(static_cast<float>(sum[i] / count[i]), 0.0f, 1.0f);
  }
  return Heatmap(grid.core_height, grid.core_width, std::move(out));
}

}  // namespace tmaseg
