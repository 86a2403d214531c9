#include "tmaseg/annotation.hpp"

#include <algorithm>
#include <cstdlib>

#include "tmaseg/error.hpp"

namespace tmaseg {

TissueClass classify_color(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  int best = 0;
  int best_distance = 256;
  for (int i = 0; i < kTissueClassCount; ++i) {
    const auto& p = kPalette[static_cast<std::size_t>(i)];
    const int d = std::max({std::abs(int{r} - int{p.r}), std::abs(int{g} - int{p.g}), std::abs(int{b} - int{p.b})});
    if (d < best_distance) {
      best_distance = d;
      best = i;
    }
  }
  if (best_distance > kPaletteTolerance) return TissueClass::Exclude;
  return static_cast<TissueClass>(best);
}

LabelMask decode_annotation(const ImageRGB& mask_image) {
  LabelMask mask{mask_image.height(), mask_image.width(), {}};
  mask.labels.resize(static_cast<std::size_t>(mask_image.pixel_count()));
  const auto& rgb = mask_image.data();
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    mask.labels[i] = classify_color(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
  }
  return mask;
}

BinaryTarget to_binary_target(const LabelMask& mask) {
  if (mask.labels.size() != static_cast<std::size_t>(mask.height) * static_cast<std::size_t>(mask.width)) {
    throw Error(ErrorCode::DimensionMismatch, "label mask data does not match its dimensions");
  }
  BinaryTarget out{mask.height, mask.width, {}, {}};
  out.target.resize(mask.labels.size());
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    switch (mask.labels[i]) {
      case TissueClass::Cancer:
        out.target[i] = kTargetCancer;
        ++out.areas.cancer;
        break;
      case TissueClass::Stroma:
        out.target[i] = kTargetBenign;
        ++out.areas.stroma;
        break;
      case TissueClass::Necrosis:
        out.target[i] = kTargetBenign;
        ++out.areas.necrosis;
        break;
      case TissueClass::NormalLung:
        out.target[i] = kTargetBenign;
        ++out.areas.normal;
        break;
      case TissueClass::Unannotated:
        out.target[i] = kTargetBenign;
        break;
      case TissueClass::Exclude:
        out.target[i] = kTargetIgnore;
        break;
    }
  }
  return out;
}

ImageRGB encode_labels(const LabelMask& mask) {
  ImageRGB out(mask.height, mask.width);
  auto& rgb = out.data();
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    const auto& p = kPalette[static_cast<std::size_t>(mask.labels[i])];
    rgb[3 * i] = p.r;
    rgb[3 * i + 1] = p.g;
    rgb[3 * i + 2] = p.b;
  }
  return out;
}

const char* tissue_class_name(TissueClass c) {
  switch (c) {
    case TissueClass::Cancer: return "cancer";
    case TissueClass::Stroma: return "stroma";
    case TissueClass::Necrosis: return "necrosis";
    case TissueClass::NormalLung: return "normal";
    case TissueClass::Exclude: return "exclude";
    case TissueClass::Unannotated: return "unannotated";
  }
  return "?";
}

}  // namespace tmaseg
