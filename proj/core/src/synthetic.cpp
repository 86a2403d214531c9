#include "tmaseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tmaseg/annotation.hpp"
#include "tmaseg/error.hpp"
#include "tmaseg/random.hpp"

namespace tmaseg {

namespace {

struct Disc {
  double cy, cx, r;
  bool contains(int y, int x) const {
    const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
    return dy * dy + dx * dx <= r * r;
  }
};

struct Stain {
  int r, g, b;
};

// Base colours per region; per-pixel noise is added on top.
constexpr Stain kBackground{242, 238, 240};
constexpr Stain kStroma{226, 160, 190};
constexpr Stain kNormal{244, 206, 222};
constexpr Stain kNecrosis{186, 140, 110};
constexpr Stain kExclude{170, 175, 180};
constexpr Stain kCancer{110, 50, 140};

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

Disc inside(Rng& rng, const Disc& tissue, double r_lo, double r_hi) {
  const double r = rng.uniform(r_lo, r_hi);
  const double reach = std::max(0.0, tissue.r - r);
  const double angle = rng.uniform(0.0, 2.0 * M_PI);
  const double dist = reach * std::sqrt(rng.uniform());
  return {tissue.cy + dist * std::sin(angle), tissue.cx + dist * std::cos(angle), r};
}

}  // namespace

SyntheticCore make_synthetic_core(std::string core_id, std::uint64_t seed, int size) {
  if (size < 64) throw Error(ErrorCode::InvalidArgument, "synthetic cores need size >= 64");
  Rng rng(seed);
  const double s = size;
  const Disc tissue{s / 2 + rng.uniform(-0.03, 0.03) * s, s / 2 + rng.uniform(-0.03, 0.03) * s,
                    rng.uniform(0.40, 0.46) * s};
  const Disc normal = inside(rng, tissue, 0.10 * s, 0.16 * s);
  const Disc necrosis = inside(rng, tissue, 0.04 * s, 0.07 * s);
  const Disc exclude = inside(rng, tissue, 0.03 * s, 0.05 * s);
  std::vector<Disc> cancer;
  const int n_cancer = 1 + static_cast<int>(rng.below(3));
  for (int i = 0; i < n_cancer; ++i) cancer.push_back(inside(rng, tissue, 0.07 * s, 0.14 * s));

  SyntheticCore out{std::move(core_id), ImageRGB(size, size), ImageRGB(size, size)};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      // Later regions are painted over earlier ones.
      Stain stain = kBackground;
      TissueClass label = TissueClass::Unannotated;
      if (tissue.contains(y, x)) {
        stain = kStroma;
        label = TissueClass::Stroma;
        if (normal.contains(y, x)) stain = kNormal, label = TissueClass::NormalLung;
        if (necrosis.contains(y, x)) stain = kNecrosis, label = TissueClass::Necrosis;
        if (exclude.contains(y, x)) stain = kExclude, label = TissueClass::Exclude;
        for (const auto& c : cancer) {
          if (c.contains(y, x)) stain = kCancer, label = TissueClass::Cancer;
        }
      }
      const double shade = rng.uniform(-12.0, 12.0);
      std::uint8_t* px = out.image.pixel(y, x);
      px[0] = clamp_byte(stain.r + shade + rng.uniform(-8.0, 8.0));
      px[1] = clamp_byte(stain.g + shade + rng.uniform(-8.0, 8.0));
      px[2] = clamp_byte(stain.b + shade + rng.uniform(-8.0, 8.0));
      const auto& colour = kPalette[static_cast<std::size_t>(label)];
      std::uint8_t* m = out.annotation.pixel(y, x);
      m[0] = colour.r;
      m[1] = colour.g;
      m[2] = colour.b;
    }
  }
  return out;
}

std::vector<std::string> write_synthetic_dataset(const std::filesystem::path& directory, int count,
                                                 std::uint64_t seed, int size) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "synthetic dataset needs at least one core");
  std::filesystem::create_directories(directory);
  std::vector<std::string> ids;
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "core_%03d", i);
    const auto core = make_synthetic_core(id, mix_seed(seed, static_cast<std::uint64_t>(i)), size);
    save_rgb(core.image, directory / (core.core_id + ".png"));
    save_rgb(core.annotation, directory / (core.core_id + "_mask.png"));
    ids.push_back(core.core_id);
  }
  return ids;
}

}  // namespace tmaseg
