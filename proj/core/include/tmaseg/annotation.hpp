#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tmaseg/imaging.hpp"

namespace tmaseg {

// Order matters: it is the tie-break order of the palette lookup.
enum class TissueClass : std::uint8_t { Cancer, Stroma, Necrosis, NormalLung, Exclude, Unannotated };

inline constexpr int kTissueClassCount = 6;

struct PaletteColor {
  std::uint8_t r, g, b;
  friend bool operator==(const PaletteColor&, const PaletteColor&) = default;
};

/// Annotation colours, indexed by TissueClass.
inline constexpr std::array<PaletteColor, kTissueClassCount> kPalette{{
    {255, 0, 0},      // Cancer: red
    {0, 0, 255},      // Stroma: blue
    {0, 0, 0},        // Necrosis: black
    {0, 255, 0},      // NormalLung: green
    {255, 255, 0},    // Exclude: yellow
    {255, 255, 255},  // Unannotated: white
}};

/// Max-channel distance beyond which a colour decodes to Exclude.
inline constexpr int kPaletteTolerance = 32;

struct LabelMask {
  int height = 0;
  int width = 0;
  std::vector<TissueClass> labels;

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

struct ClassAreas {
  std::int64_t cancer = 0;
  std::int64_t stroma = 0;
  std::int64_t necrosis = 0;
  std::int64_t normal = 0;

  std::int64_t total() const { return cancer + stroma + necrosis + normal; }
  std::array<std::int64_t, 4> as_array() const { return {cancer, stroma, necrosis, normal}; }
  ClassAreas& operator+=(const ClassAreas& o) {
    cancer += o.cancer;
    stroma += o.stroma;
    necrosis += o.necrosis;
    normal += o.normal;
    return *this;
  }
  friend bool operator==(const ClassAreas&, const ClassAreas&) = default;
};

inline constexpr std::int8_t kTargetBenign = 0;
inline constexpr std::int8_t kTargetCancer = 1;
inline constexpr std::int8_t kTargetIgnore = -1;

struct BinaryTarget {
  int height = 0;
  int width = 0;
  std::vector<std::int8_t> target;
  ClassAreas areas;

  std::int8_t at(int row, int col) const {
    return target[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)];
  }
  friend bool operator==(const BinaryTarget&, const BinaryTarget&) = default;
};

TissueClass classify_color(std::uint8_t r, std::uint8_t g, std::uint8_t b);

LabelMask decode_annotation(const ImageRGB& mask_image);

/// Cancer -> 1, Exclude -> -1, every other class -> 0 (benign).
BinaryTarget to_binary_target(const LabelMask& mask);

ImageRGB encode_labels(const LabelMask& mask);

const char* tissue_class_name(TissueClass c);

}  // namespace tmaseg
