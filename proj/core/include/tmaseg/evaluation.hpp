#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tmaseg/annotation.hpp"
#include "tmaseg/dataset.hpp"
#include "tmaseg/imaging.hpp"
#include "tmaseg/models.hpp"

namespace tmaseg {

/// Edge-replicates `core` so both sides are multiples of `alignment`
/// (at least `min_size`), splitting the padding evenly with the extra
/// pixel at the bottom/right.
struct Padding2d {
  int top = 0, bottom = 0, left = 0, right = 0;
};
Padding2d alignment_padding(int height, int width, int alignment, int min_size);
ImageRGB pad_edge(const ImageRGB& core, Padding2d pad);

/// Full-core cancer probability map: pad to the model alignment, run the
/// network on every grid patch, stitch the sigmoid outputs and crop.
/// Patches are evaluated on up to `threads` workers; the result does not
/// depend on the thread count.
Heatmap predict_core(const Network& net, const ImageRGB& core, int patch, int stride, int threads = 1);

struct PixelCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const PixelCounts&, const PixelCounts&) = default;
};

/// Predicted cancer iff p >= threshold; ignore pixels are skipped.
PixelCounts pixel_counts(const Heatmap& heatmap, const BinaryTarget& target, double threshold);

struct Scores {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  friend bool operator==(const Scores&, const Scores&) = default;
};

/// Empty truth and empty prediction score (1, 1, 1); a zero denominator
/// otherwise gives 0 for that metric.
Scores prf1(const PixelCounts& counts);

struct CoreMetrics {
  std::string core_id;
  Scores scores;
  PixelCounts counts;
};

// Thresholds 0.00, 0.01, ..., 1.00.
inline constexpr int kThresholdSteps = 100;
double grid_threshold(int index);
/// Index of a grid threshold; throws InvalidArgument off the grid.
int threshold_index(double threshold);

// Per-core counts of positive/negative pixels binned by the highest grid
// threshold each probability reaches, so counts at every grid threshold
// follow exactly from suffix sums.
struct ScoreHistogram {
  std::string core_id;
  std::array<std::int64_t, kThresholdSteps + 1> cancer{};
  std::array<std::int64_t, kThresholdSteps + 1> benign{};

  PixelCounts counts_at(int index) const;
};

ScoreHistogram score_histogram(std::string core_id, const Heatmap& heatmap, const BinaryTarget& target);

struct CurvePoint {
  double threshold = 0.0;
  Scores macro;
};

struct ThresholdSweep {
  double best_threshold = 0.0;
  Scores best;
  std::vector<CurvePoint> curve;
};

/// Macro F1 at every grid threshold; the lowest threshold wins ties.
ThresholdSweep sweep_threshold(std::span<const ScoreHistogram> cores);

struct EvalReport {
  std::string model;
  double threshold = 0.5;
  std::vector<CoreMetrics> cores;  // ascending core_id
  Scores macro;
};

/// Per-core metrics at `threshold` (a grid value) and their unweighted mean.
EvalReport make_report(std::string model, double threshold, std::span<const ScoreHistogram> cores);
EvalReport make_report(std::string model, double threshold, std::vector<CoreMetrics> cores);

/// Two decimals, halves rounded up: 0.805 -> "0.81".
std::string format_2dp(double value);

// Report text:
//   model <name>
//   threshold <t>
//   macro <P> <R> <F1>
//   core <id> <P> <R> <F1> <tp> <fp> <fn> <tn>     (one per core)
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);
std::string render_report(const EvalReport& report);

/// `threshold<TAB>P<TAB>R<TAB>F1` per grid threshold.
void write_curve(const ThresholdSweep& sweep, const std::filesystem::path& path);

/// Predicts every core of `split` and bins its scores; cores in id order.
std::vector<ScoreHistogram> score_split(const Network& net, const SplitManifest& manifest, Split split,
                                        CoreStore& cores, int patch, int stride, int threads = 1);

}  // namespace tmaseg
