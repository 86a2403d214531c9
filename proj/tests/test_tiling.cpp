#include <doctest.h>

#include <cmath>

#include "tmaseg/error.hpp"
#include "tmaseg/random.hpp"
#include "tmaseg/tiling.hpp"

using namespace tmaseg;

namespace {

// Every pixel lies inside at least one patch; origins sorted, unique, in bounds.
bool grid_is_valid(const PatchGrid& g) {
  std::vector<char> covered(static_cast<std::size_t>(g.core_height) * static_cast<std::size_t>(g.core_width), 0);
  for (std::size_t i = 0; i < g.origins.size(); ++i) {
    const auto o = g.origins[i];
    if (i > 0 && !(g.origins[i - 1] < o)) return false;
    if (o.row < 0 || o.col < 0 || o.row + g.patch_h > g.core_height || o.col + g.patch_w > g.core_width) return false;
    for (int y = o.row; y < o.row + g.patch_h; ++y) {
      for (int x = o.col; x < o.col + g.patch_w; ++x) {
        covered[static_cast<std::size_t>(y) * static_cast<std::size_t>(g.core_width) + static_cast<std::size_t>(x)] = 1;
      }
    }
  }
  return std::all_of(covered.begin(), covered.end(), [](char c) { return c == 1; });
}

BinaryTarget benign_target(int h, int w) {
  return {h, w, std::vector<std::int8_t>(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0), {}};
}

}  // namespace

TEST_CASE("grid examples") {
  CHECK(plan_grid(1024, 1024, 512, 512).origins.size() == 4);
  const PatchGrid g = plan_grid(1000, 1000, 512, 256);
  CHECK(axis_origins(1000, 512, 256) == std::vector<int>{0, 256, 488});
  REQUIRE(g.origins.size() == 9);
  CHECK(g.origins.front() == Origin{0, 0});
  CHECK(g.origins[1] == Origin{0, 256});
  CHECK(g.origins.back() == Origin{488, 488});
  CHECK(grid_is_valid(g));
  const PatchGrid one = plan_grid(512, 512, 512, 512);
  CHECK(one.origins == std::vector<Origin>{{0, 0}});
}

TEST_CASE("grid errors") {
  CHECK_THROWS_AS(plan_grid(100, 300, 128, 64), Error);
  try {
    plan_grid(300, 100, 128, 64);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PatchLargerThanCore);
  }
  CHECK_THROWS_AS(plan_grid(300, 300, 128, 0), Error);
}

TEST_CASE("brute-force coverage over random grids") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int patch = 1 + static_cast<int>(rng.below(64));
    const int stride = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(patch)));
    const int h = patch + static_cast<int>(rng.below(120));
    const int w = patch + static_cast<int>(rng.below(120));
    REQUIRE(grid_is_valid(plan_grid(h, w, patch, stride)));
  }
}

TEST_CASE("extract normalizes pixels and copies targets") {
  ImageRGB core(4, 4);
  core.pixel(0, 0)[0] = 255;
  core.pixel(0, 0)[1] = 0;
  BinaryTarget t = benign_target(4, 4);
  t.target[5] = kTargetIgnore;
  t.target[6] = kTargetCancer;
  const auto patches = extract(core, t, plan_grid(4, 4, 2, 2));
  REQUIRE(patches.size() == 4);
  CHECK(patches[0].image[0] == doctest::Approx(0.5));
  CHECK(patches[0].image[1] == doctest::Approx(-0.5));
  CHECK(patches[0].target[3] == kTargetIgnore);
  CHECK(patches[0].weight[3] == 0);
  CHECK(patches[0].weight[0] == 1);
  CHECK(patches[1].origin == Origin{0, 2});
  CHECK(patches[1].target[2] == kTargetCancer);
  CHECK_THROWS_AS(extract(core, benign_target(4, 5), plan_grid(4, 4, 2, 2)), Error);
}

TEST_CASE("nine-patch extraction follows grid order") {
  const ImageRGB core(1000, 1000);
  const PatchGrid g = plan_grid(1000, 1000, 512, 256);
  const auto patches = extract(core, benign_target(1000, 1000), g);
  REQUIRE(patches.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) CHECK(patches[i].origin == g.origins[i]);
}

TEST_CASE("stitch averages overlaps") {
  // 1x6 core, patches of width 4 at columns 0 and 2: columns 2..3 are shared.
  PatchGrid g{1, 6, 1, 4, 1, 2, {{0, 0}, {0, 2}}};
  const std::vector<std::vector<float>> maps{{0.2f, 0.2f, 0.2f, 0.2f}, {0.6f, 0.6f, 0.6f, 0.6f}};
  const Heatmap h = stitch(g, maps);
  CHECK(h.at(0, 0) == doctest::Approx(0.2));
  CHECK(h.at(0, 2) == doctest::Approx(0.4));
  CHECK(h.at(0, 5) == doctest::Approx(0.6));

  const PatchGrid g9 = plan_grid(100, 100, 40, 30);
  std::vector<std::vector<float>> constant(g9.origins.size(), std::vector<float>(1600, 0.7f));
  const Heatmap c = stitch(g9, constant);
  for (float v : c.data()) REQUIRE(v == doctest::Approx(0.7));

  CHECK_THROWS_AS(stitch(g9, std::span(constant).first(3)), Error);
}

TEST_CASE("disjoint tiling concatenates patches") {
  const PatchGrid g = plan_grid(4, 4, 2, 2);
  std::vector<std::vector<float>> maps;
  for (int i = 0; i < 4; ++i) maps.push_back(std::vector<float>(4, 0.1f * static_cast<float>(i + 1)));
  const Heatmap h = stitch(g, maps);
  CHECK(h.at(0, 0) == doctest::Approx(0.1));
  CHECK(h.at(0, 3) == doctest::Approx(0.2));
  CHECK(h.at(3, 0) == doctest::Approx(0.3));
  CHECK(h.at(3, 3) == doctest::Approx(0.4));
}

TEST_CASE("consistent field survives a stitch round trip") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const int patch = 8 + static_cast<int>(rng.below(24));
    const int stride = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(patch)));
    const int h = patch + static_cast<int>(rng.below(60)), w = patch + static_cast<int>(rng.below(60));
    std::vector<float> field(static_cast<std::size_t>(h * w));
    for (auto& v : field) v = static_cast<float>(rng.uniform());
    const PatchGrid g = plan_grid(h, w, patch, stride);
    std::vector<std::vector<float>> maps;
    for (const auto o : g.origins) {
      std::vector<float> m;
      for (int y = 0; y < patch; ++y) {
        for (int x = 0; x < patch; ++x) m.push_back(field[static_cast<std::size_t>((o.row + y) * w + o.col + x)]);
      }
      maps.push_back(std::move(m));
    }
    const Heatmap out = stitch(g, maps);
    for (std::size_t i = 0; i < field.size(); ++i) REQUIRE(std::abs(out.data()[i] - field[i]) <= 1e-6);
  }
}
