// Writes a synthetic core directory usable by `tmaseg split/train/evaluate`.
#include <CLI11.hpp>

#include <iostream>

#include "tmaseg/error.hpp"
#include "tmaseg/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app("Generate synthetic tissue cores with palette annotations", "tmaseg-synth");
  std::string out;
  int count = 8, size = 512;
  std::uint64_t seed = 0;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--count", count, "Number of cores")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--size", size, "Core side length in pixels")->capture_default_str()->check(CLI::Range(64, 8192));
  app.add_option("--seed", seed, "Generator seed")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    for (const auto& id : tmaseg::write_synthetic_dataset(out, count, seed, size)) std::cout << id << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
