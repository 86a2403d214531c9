#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tmaseg/imaging.hpp"

namespace tmaseg {

// Synthetic stand-in for a stained tissue core: a pink tissue disc on a pale
// background with stroma, normal lung, necrosis and an excluded smear, plus
// one to three dark purple cancer discs. The annotation uses exact palette
// colours.
struct SyntheticCore {
  std::string core_id;
  ImageRGB image;
  ImageRGB annotation;
};

SyntheticCore make_synthetic_core(std::string core_id, std::uint64_t seed, int size = 512);

/// Writes `count` cores as <dir>/core_NNN.png and core_NNN_mask.png; returns the ids.
std::vector<std::string> write_synthetic_dataset(const std::filesystem::path& directory, int count,
                                                 std::uint64_t seed, int size = 512);

}  // namespace tmaseg
