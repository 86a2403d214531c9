#include <doctest.h>

#include <cmath>
#include <sstream>

#include "support/test_util.hpp"
#include "tmaseg/error.hpp"
#include "tmaseg/evaluation.hpp"
#include "tmaseg/ops.hpp"
#include "tmaseg/tiling.hpp"

using namespace tmaseg;
using tmaseg::test::TempDir;
using tmaseg::test::write_text;

namespace {

BinaryTarget make_target(int h, int w, std::vector<std::int8_t> values) {
  BinaryTarget t;
  t.height = h;
  t.width = w;
  t.target = std::move(values);
  return t;
}

ImageRGB random_image(int h, int w, Rng& rng) {
  ImageRGB img(h, w);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

// Naive per-pixel recount.
PixelCounts oracle_counts(const Heatmap& h, const BinaryTarget& t, double thr) {
  PixelCounts c;
  for (int y = 0; y < h.height(); ++y) {
    for (int x = 0; x < h.width(); ++x) {
      const int truth = t.at(y, x);
      if (truth < 0) continue;
      const bool positive = static_cast<double>(h.at(y, x)) >= thr;
      if (positive && truth == 1) ++c.tp;
      if (positive && truth == 0) ++c.fp;
      if (!positive && truth == 1) ++c.fn;
      if (!positive && truth == 0) ++c.tn;
    }
  }
  return c;
}

struct RandomCase {
  Heatmap heat;
  BinaryTarget target;
};

RandomCase random_case(std::uint64_t seed, int h = 64, int w = 64) {
  Rng rng(seed);
  std::vector<float> p(static_cast<std::size_t>(h * w));
  std::vector<std::int8_t> t(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    // A quarter of the scores sit exactly on grid thresholds to exercise ties.
    p[i] = rng.below(4) == 0 ? static_cast<float>(grid_threshold(static_cast<int>(rng.below(101))))
                             : static_cast<float>(rng.uniform());
    t[i] = static_cast<std::int8_t>(static_cast<int>(rng.below(3)) - 1);
  }
  return {Heatmap(h, w, std::move(p)), make_target(h, w, std::move(t))};
}

// Network that maps each pixel independently: 1x1 conv, relu, 1x1 conv.
Network per_pixel_network() {
  return Network(preset("unet-compact", 4), 8, [](LayerContext& ctx, ad::Var x) {
    ad::Var h = ad::relu(ctx.conv(x, "mix", 6, 1, 1, 1, true));
    return ctx.conv(h, "head", 1, 1, 1, 1, true);
  });
}

}  // namespace

TEST_CASE("toy counts") {
  // 10 cancer, 4 benign, 2 ignore pixels.
  std::vector<std::int8_t> t(16, kTargetCancer);
  for (int i = 10; i < 14; ++i) t[static_cast<std::size_t>(i)] = kTargetBenign;
  t[14] = t[15] = kTargetIgnore;
  const std::vector<float> p{0.9f, 0.9f, 0.9f, 0.9f, 0.9f, 0.9f, 0.9f, 0.9f, 0.1f, 0.1f,
                             0.7f, 0.7f, 0.2f, 0.2f, 0.9f, 0.1f};
  const Heatmap h(4, 4, p);
  const BinaryTarget target = make_target(4, 4, t);
  const PixelCounts c = pixel_counts(h, target, 0.5);
  CHECK(c == PixelCounts{8, 2, 2, 2});
  const Scores s = prf1(c);
  CHECK(s.precision == doctest::Approx(0.8));
  CHECK(s.recall == doctest::Approx(0.8));
  CHECK(s.f1 == doctest::Approx(0.8));

  CHECK(pixel_counts(h, target, 0.0) == PixelCounts{10, 4, 0, 0});
  CHECK(pixel_counts(h, make_target(4, 4, std::vector<std::int8_t>(16, kTargetIgnore)), 0.5) == PixelCounts{});
  // Ties count as positive.
  CHECK(pixel_counts(h, target, static_cast<double>(0.7f)).fp == 2);
}

TEST_CASE("pixel_counts preconditions") {
  const Heatmap h(2, 2, 0.5f);
  try {
    (void)pixel_counts(h, make_target(2, 3, std::vector<std::int8_t>(6, 0)), 0.5);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
  CHECK_THROWS_AS(pixel_counts(h, make_target(2, 2, std::vector<std::int8_t>(4, 0)), 1.5), Error);
  CHECK_THROWS_AS(pixel_counts(h, make_target(2, 2, std::vector<std::int8_t>(4, 0)), -0.1), Error);
}

TEST_CASE("degenerate metric rules") {
  CHECK(prf1({0, 0, 0, 7}) == Scores{1.0, 1.0, 1.0});
  CHECK(prf1({0, 3, 0, 1}) == Scores{0.0, 0.0, 0.0});
  CHECK(prf1({0, 0, 3, 1}) == Scores{0.0, 0.0, 0.0});
  CHECK(prf1({0, 2, 2, 0}) == Scores{0.0, 0.0, 0.0});
  const Scores s = prf1({3, 1, 0, 0});
  CHECK(s.precision == 0.75);
  CHECK(s.recall == 1.0);
  CHECK(s.f1 == doctest::Approx(2 * 0.75 / 1.75));
}

TEST_CASE("counts agree with a naive loop") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto rc = random_case(seed);
    Rng rng(seed + 1000);
    const double thr = rng.uniform();
    CHECK(pixel_counts(rc.heat, rc.target, thr) == oracle_counts(rc.heat, rc.target, thr));
    const ScoreHistogram hist = score_histogram("c", rc.heat, rc.target);
    for (int i = 0; i <= kThresholdSteps; ++i) {
      const PixelCounts expected = oracle_counts(rc.heat, rc.target, grid_threshold(i));
      if (!(hist.counts_at(i) == expected)) {
        FAIL("histogram mismatch at seed " << seed << " threshold index " << i);
      }
      CHECK(pixel_counts(rc.heat, rc.target, grid_threshold(i)) == expected);
    }
  }
}

TEST_CASE("recall and predicted positives never increase with the threshold") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto rc = random_case(500 + seed, 32, 48);
    const ScoreHistogram hist = score_histogram("c", rc.heat, rc.target);
    double last_recall = 2.0;
    std::int64_t last_positive = std::numeric_limits<std::int64_t>::max();
    for (int i = 0; i <= kThresholdSteps; ++i) {
      const PixelCounts c = hist.counts_at(i);
      const double recall = prf1(c).recall;
      CHECK(recall <= last_recall);
      CHECK(c.tp + c.fp <= last_positive);
      last_recall = recall;
      last_positive = c.tp + c.fp;
    }
  }
}

TEST_CASE("threshold grid") {
  CHECK(grid_threshold(0) == 0.0);
  CHECK(grid_threshold(37) == 0.37);
  CHECK(grid_threshold(100) == 1.0);
  CHECK(threshold_index(0.37) == 37);
  CHECK(threshold_index(1.0) == 100);
  CHECK_THROWS_AS(threshold_index(0.375), Error);
  CHECK_THROWS_AS(threshold_index(1.01), Error);
}

TEST_CASE("macro averaging is per core, not pooled") {
  // Small core: perfect. Large core: half its cancer pixels missed.
  const Heatmap small(1, 4, std::vector<float>{1, 1, 0, 0});
  const BinaryTarget small_t = make_target(1, 4, {1, 1, 0, 0});
  std::vector<float> big_p(400, 0.0f);
  std::vector<std::int8_t> big_t(400, 0);
  for (int i = 0; i < 200; ++i) big_t[static_cast<std::size_t>(i)] = 1;
  for (int i = 0; i < 100; ++i) big_p[static_cast<std::size_t>(i)] = 1.0f;
  const Heatmap big(20, 20, big_p);
  const BinaryTarget big_t2 = make_target(20, 20, big_t);
  const std::vector<ScoreHistogram> hists{score_histogram("a", small, small_t), score_histogram("b", big, big_t2)};
  const EvalReport r = make_report("m", 0.5, hists);
  REQUIRE(r.cores.size() == 2);
  CHECK(r.cores[1].scores.recall == 0.5);
  CHECK(r.macro.recall == doctest::Approx(0.75));
  CHECK(r.macro.precision == doctest::Approx(1.0));
  CHECK(r.macro.f1 == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
  // Pooled recall would be 102 / 202.
  CHECK(std::abs(r.macro.recall - 102.0 / 202.0) > 0.2);
  CHECK_THROWS_AS(make_report("m", 0.5, std::vector<CoreMetrics>{}), Error);
}

TEST_CASE("sweep on a perfect predictor") {
  std::vector<ScoreHistogram> hists;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto rc = random_case(seed, 16, 16);
    std::vector<float> p(rc.target.target.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = rc.target.target[i] == 1 ? 1.0f : 0.0f;
    hists.push_back(score_histogram("c" + std::to_string(seed), Heatmap(16, 16, p), rc.target));
  }
  const ThresholdSweep sweep = sweep_threshold(hists);
  REQUIRE(sweep.curve.size() == 101);
  CHECK(sweep.best_threshold == 0.01);
  CHECK(sweep.best.f1 == 1.0);
  CHECK(sweep.curve[0].macro.f1 < 1.0);
  for (int i = 1; i <= 100; ++i) CHECK(sweep.curve[static_cast<std::size_t>(i)].macro.f1 == 1.0);
}

TEST_CASE("constant one-half heatmap steps at 0.5") {
  const auto rc = random_case(7, 16, 16);
  const std::vector<ScoreHistogram> hists{score_histogram("c", Heatmap(16, 16, 0.5f), rc.target)};
  const ThresholdSweep sweep = sweep_threshold(hists);
  for (const auto& pt : sweep.curve) {
    INFO("threshold " << pt.threshold);
    CHECK(pt.macro.recall == (pt.threshold <= 0.5 ? 1.0 : 0.0));
  }
  // Ties go to the lowest threshold.
  CHECK(sweep.best_threshold == 0.0);
  CHECK_THROWS_AS(sweep_threshold(std::vector<ScoreHistogram>{}), Error);
}

TEST_CASE("two-decimal formatting rounds halves up") {
  CHECK(format_2dp(0.801) == "0.80");
  CHECK(format_2dp(0.856) == "0.86");
  CHECK(format_2dp(0.802) == "0.80");
  CHECK(format_2dp(0.805) == "0.81");
  CHECK(format_2dp(0.125) == "0.13");
  CHECK(format_2dp(0.995) == "1.00");
  CHECK(format_2dp(0.994999) == "0.99");
  CHECK(format_2dp(0.0) == "0.00");
  CHECK(format_2dp(1.0) == "1.00");

  EvalReport r;
  r.model = "unet";
  r.threshold = 0.42;
  r.macro = {0.801, 0.856, 0.802};
  r.cores.push_back({"core_1", {0.801, 0.856, 0.802}, {10, 2, 3, 40}});
  const std::string text = render_report(r);
  CHECK(text.find("macro 0.80 0.86 0.80\n") != std::string::npos);
  CHECK(text.find("threshold 0.42\n") != std::string::npos);
  CHECK(text.find("core core_1 0.80 0.86 0.80 10 2 3 40\n") != std::string::npos);
}

TEST_CASE("report round trip at two decimals") {
  TempDir dir;
  std::vector<ScoreHistogram> hists;
  for (std::uint64_t seed = 0; seed < 4; ++seed) hists.push_back(score_histogram("core_" + std::to_string(3 - seed),
                                                                                random_case(seed, 24, 24).heat,
                                                                                random_case(seed, 24, 24).target));
  const EvalReport r = make_report("unet-compact", 0.37, hists);
  CHECK(r.cores.front().core_id == "core_0");
  write_report(r, dir / "report.txt");
  const EvalReport back = read_report(dir / "report.txt");
  CHECK(back.model == r.model);
  CHECK(back.threshold == 0.37);
  REQUIRE(back.cores.size() == r.cores.size());
  auto same = [](const Scores& a, const Scores& b) {
    CHECK(format_2dp(a.precision) == format_2dp(b.precision));
    CHECK(format_2dp(a.recall) == format_2dp(b.recall));
    CHECK(format_2dp(a.f1) == format_2dp(b.f1));
  };
  same(back.macro, r.macro);
  for (std::size_t i = 0; i < r.cores.size(); ++i) {
    CHECK(back.cores[i].core_id == r.cores[i].core_id);
    CHECK(back.cores[i].counts == r.cores[i].counts);
    same(back.cores[i].scores, r.cores[i].scores);
  }
  write_report(back, dir / "again.txt");
  CHECK(tmaseg::test::read_bytes(dir / "again.txt") == tmaseg::test::read_bytes(dir / "report.txt"));

  write_text(dir / "bad.txt", "model m\nthreshold 0.5\nmacro 1.00 1.00 1.00\nsomething else\n");
  CHECK_THROWS_AS(read_report(dir / "bad.txt"), Error);
  write_text(dir / "short.txt", "model m\nthreshold 0.5\n");
  CHECK_THROWS_AS(read_report(dir / "short.txt"), Error);
}

TEST_CASE("curve file") {
  const auto rc = random_case(3, 8, 8);
  const std::vector<ScoreHistogram> hists{score_histogram("c", rc.heat, rc.target)};
  TempDir dir;
  write_curve(sweep_threshold(hists), dir / "curve.tsv");
  std::istringstream in(tmaseg::test::read_bytes(dir / "curve.tsv"));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (n == 0) CHECK(line.rfind("0.00\t", 0) == 0);
    if (n == 100) CHECK(line.rfind("1.00\t", 0) == 0);
    CHECK(std::count(line.begin(), line.end(), '\t') == 3);
    ++n;
  }
  CHECK(n == 101);
}

TEST_CASE("alignment padding") {
  Padding2d p = alignment_padding(300, 317, 16, 64);
  CHECK(p.top == 2);
  CHECK(p.bottom == 2);
  CHECK(p.left == 1);
  CHECK(p.right == 2);
  p = alignment_padding(20, 64, 8, 64);
  CHECK(p.top == 22);
  CHECK(p.bottom == 22);
  CHECK(p.left == 0);
  CHECK(p.right == 0);

  ImageRGB img(1, 2, std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6});
  const ImageRGB padded = pad_edge(img, {1, 0, 0, 1});
  REQUIRE(padded.height() == 2);
  REQUIRE(padded.width() == 3);
  CHECK(padded.pixel(0, 0)[0] == 1);
  CHECK(padded.pixel(1, 2)[2] == 6);
  CHECK(padded.pixel(0, 2)[0] == 4);
}

TEST_CASE("zero-logit network predicts one half") {
  Network net = build_model(preset("unet-compact", 2));
  net.zero_head();
  Rng rng(1);
  const Heatmap h = predict_core(net, random_image(70, 90, rng), 64, 32);
  CHECK(h.height() == 70);
  CHECK(h.width() == 90);
  for (float v : h.data()) CHECK(v == 0.5f);
}

TEST_CASE("non-aligned core keeps its dimensions") {
  const Network net = build_model(preset("123s-compact", 2));
  Rng rng(2);
  const Heatmap h = predict_core(net, random_image(300, 317, rng), 64, 48);
  CHECK(h.height() == 300);
  CHECK(h.width() == 317);
  for (float v : h.data()) CHECK((v >= 0.0f && v <= 1.0f));
  CHECK_THROWS_AS(predict_core(net, random_image(10, 10, rng), 60, 30), Error);
}

TEST_CASE("a single patch equals the direct forward pass") {
  const Network net = build_model(preset("unet-compact", 3));
  Rng rng(3);
  const ImageRGB core = random_image(256, 256, rng);
  const Heatmap h = predict_core(net, core, 256, 128);
  const Tensor logits = net.infer(extract_image(core, {0, 0}, 256, 256).reshaped({1, 256, 256, 3}));
  REQUIRE(h.data().size() == static_cast<std::size_t>(logits.size()));
  for (std::int64_t i = 0; i < logits.size(); ++i) {
    CHECK(h.data()[static_cast<std::size_t>(i)] == ad::sigmoid(logits[i]));
  }
}

TEST_CASE("per-pixel model is independent of patch and stride") {
  const Network net = per_pixel_network();
  Rng rng(4);
  const ImageRGB core = random_image(100, 130, rng);
  const Padding2d pad = alignment_padding(100, 130, 8, 8);
  const ImageRGB padded = pad_edge(core, pad);
  const Tensor logits =
      net.infer(extract_image(padded, {0, 0}, padded.height(), padded.width())
                    .reshaped({1, padded.height(), padded.width(), 3}));
  for (auto [patch, stride] : {std::pair{32, 32}, {64, 16}, {96, 40}, {8, 5}}) {
    const Heatmap h = predict_core(net, core, patch, stride);
    double worst = 0.0;
    for (int y = 0; y < 100; ++y) {
      for (int x = 0; x < 130; ++x) {
        const double expected = ad::sigmoid(logits.at(0, y + pad.top, x + pad.left, 0));
        worst = std::max(worst, std::abs(h.at(y, x) - expected));
      }
    }
    INFO("patch " << patch << " stride " << stride);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("thread count does not change predictions") {
  const Network net = build_model(preset("123s-compact", 5));
  Rng rng(5);
  const ImageRGB core = random_image(100, 90, rng);
  const Heatmap one = predict_core(net, core, 32, 16, 1);
  CHECK(predict_core(net, core, 32, 16, 3) == one);
  CHECK(predict_core(net, core, 32, 16, 64) == one);
}

TEST_CASE("scoring an empty split") {
  const Network net = build_model(preset("123s-compact"));
  CoreStore store;
  SplitManifest m;
  try {
    (void)score_split(net, m, Split::Test, store, 32, 32);
    FAIL("expected EmptySplit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySplit);
  }
}
