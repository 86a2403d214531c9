#include <doctest.h>

#include <png.h>

#include <cmath>
#include <functional>

#include "support/test_util.hpp"
#include "tmaseg/error.hpp"
#include "tmaseg/imaging.hpp"
#include "tmaseg/random.hpp"

using namespace tmaseg;
using tmaseg::test::TempDir;

namespace {

// Writes a PNG through libpng directly, bypassing save_rgb.
void write_png(const std::filesystem::path& path, int w, int h, png_uint_32 format, const void* data) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  REQUIRE(png_image_write_to_file(&img, path.c_str(), 0, data, 0, nullptr) != 0);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("single red pixel loads as itself") {
  TempDir dir;
  const std::uint8_t px[3] = {255, 0, 0};
  write_png(dir / "red.png", 1, 1, PNG_FORMAT_RGB, px);
  const ImageRGB img = load_rgb(dir / "red.png");
  CHECK(img.height() == 1);
  CHECK(img.width() == 1);
  CHECK(img.data() == std::vector<std::uint8_t>{255, 0, 0});
}

TEST_CASE("alpha channel is dropped") {
  TempDir dir;
  const std::uint8_t px[4] = {10, 20, 30, 128};
  write_png(dir / "rgba.png", 1, 1, PNG_FORMAT_RGBA, px);
  CHECK(load_rgb(dir / "rgba.png").data() == std::vector<std::uint8_t>{10, 20, 30});
}

TEST_CASE("load errors") {
  TempDir dir;
  CHECK(code_of([&] { load_rgb(dir / "missing.png"); }) == ErrorCode::FileNotFound);

  ImageRGB img(8, 9);
  for (auto& b : img.data()) b = 77;
  save_rgb(img, dir / "ok.png");
  const std::string bytes = tmaseg::test::read_bytes(dir / "ok.png");
  tmaseg::test::write_text(dir / "truncated.png", bytes.substr(0, bytes.size() / 2));
  CHECK(code_of([&] { load_rgb(dir / "truncated.png"); }) == ErrorCode::DecodeError);
  tmaseg::test::write_text(dir / "junk.png", "definitely not a png");
  CHECK(code_of([&] { load_rgb(dir / "junk.png"); }) == ErrorCode::DecodeError);

  const std::uint16_t deep[3] = {1000, 2000, 3000};
  write_png(dir / "deep.png", 1, 1, PNG_FORMAT_RGB | PNG_FORMAT_FLAG_LINEAR, deep);
  CHECK(code_of([&] { load_rgb(dir / "deep.png"); }) == ErrorCode::DecodeError);

  const std::uint8_t gray[1] = {9};
  write_png(dir / "gray.png", 1, 1, PNG_FORMAT_GRAY, gray);
  CHECK(code_of([&] { load_rgb(dir / "gray.png"); }) == ErrorCode::DecodeError);

  try {
    load_rgb(dir / "junk.png");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("junk.png") != std::string::npos);
  }
}

TEST_CASE("rgb round trip is bit exact") {
  TempDir dir;
  Rng rng(3);
  ImageRGB img(17, 23);
  for (auto& b : img.data()) b = static_cast<std::uint8_t>(rng.below(256));
  save_rgb(img, dir / "rt.png");
  CHECK(load_rgb(dir / "rt.png") == img);
}

TEST_CASE("heatmap gray encoding rounds half up") {
  CHECK(probability_to_gray(0.0f) == 0);
  CHECK(probability_to_gray(1.0f) == 255);
  CHECK(probability_to_gray(0.5f) == 128);
  CHECK(probability_to_gray(1.0f / 255.0f) == 1);
}

TEST_CASE("heatmap png keeps dimensions and values within 1/510") {
  TempDir dir;
  Rng rng(11);
  std::vector<float> p(6);
  for (auto& v : p) v = static_cast<float>(rng.uniform());
  const Heatmap h(2, 3, p);
  save_heatmap(h, dir / "h.png");

  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  REQUIRE(png_image_begin_read_from_file(&img, (dir / "h.png").c_str()) != 0);
  CHECK(img.width == 3);
  CHECK(img.height == 2);
  png_image_free(&img);

  const Heatmap back = load_heatmap(dir / "h.png");
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 3; ++x) CHECK(std::abs(back.at(y, x) - h.at(y, x)) <= 1.0 / 510.0 + 1e-7);
  }
}

TEST_CASE("raster invariants") {
  CHECK_THROWS_AS(ImageRGB(0, 4), Error);
  CHECK_THROWS_AS(ImageRGB(2, 2, std::vector<std::uint8_t>(11)), Error);
  CHECK_THROWS_AS(Heatmap(1, 2, std::vector<float>{0.5f, 1.5f}), Error);
  CHECK_THROWS_AS(Heatmap(1, 2, std::vector<float>{0.5f}), Error);
}
