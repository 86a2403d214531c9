#include "tmaseg/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "tmaseg/error.hpp"
#include "tmaseg/ops.hpp"
#include "tmaseg/tiling.hpp"

namespace tmaseg {

Padding2d alignment_padding(int height, int width, int alignment, int min_size) {
  auto target = [&](int n) {
    int t = std::max(n, min_size);
    return (t + alignment - 1) / alignment * alignment;
  };
  const int ph = target(height) - height, pw = target(width) - width;
  return {ph / 2, ph - ph / 2, pw / 2, pw - pw / 2};
}

ImageRGB pad_edge(const ImageRGB& core, Padding2d pad) {
  const int h = core.height() + pad.top + pad.bottom;
  const int w = core.width() + pad.left + pad.right;
  ImageRGB out(h, w);
  for (int y = 0; y < h; ++y) {
    const int sy = std::clamp(y - pad.top, 0, core.height() - 1);
    for (int x = 0; x < w; ++x) {
      const int sx = std::clamp(x - pad.left, 0, core.width() - 1);
      std::copy_n(core.pixel(sy, sx), 3, out.pixel(y, x));
    }
  }
  return out;
}

Heatmap predict_core(const Network& net, const ImageRGB& core, int patch, int stride, int threads) {
  if (patch < 1 || stride < 1) throw Error(ErrorCode::InvalidArgument, "patch and stride must be positive");
  if (patch % net.alignment() != 0) {
    throw Error(ErrorCode::AlignmentError, "patch " + std::to_string(patch) + " is not a multiple of " +
                                               std::to_string(net.alignment()));
  }
  const Padding2d pad = alignment_padding(core.height(), core.width(), net.alignment(), patch);
  const ImageRGB padded = pad_edge(core, pad);
  const PatchGrid grid = plan_grid(padded.height(), padded.width(), patch, stride);

  std::vector<std::vector<float>> probs(grid.origins.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < grid.origins.size(); i = next++) {
      try {
        Tensor x = extract_image(padded, grid.origins[i], patch, patch).reshaped({1, patch, patch, 3});
        const Tensor logits = net.infer(x);
        auto& out = probs[i];
        out.resize(static_cast<std::size_t>(logits.size()));
        for (std::int64_t k = 0; k < logits.size(); ++k) out[static_cast<std::size_t>(k)] = ad::sigmoid(logits[k]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = grid.origins.size();
      }
    }
  };
  const int workers = std::clamp(threads, 1, static_cast<int>(std::max<std::size_t>(grid.origins.size(), 1)));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  const Heatmap full = stitch(grid, probs);
  if (pad.top == 0 && pad.bottom == 0 && pad.left == 0 && pad.right == 0) return full;
  std::vector<float> cropped(static_cast<std::size_t>(core.pixel_count()));
  for (int y = 0; y < core.height(); ++y) {
    for (int x = 0; x < core.width(); ++x) {
      cropped[static_cast<std::size_t>(y) * static_cast<std::size_t>(core.width()) + static_cast<std::size_t>(x)] =
          full.at(y + pad.top, x + pad.left);
    }
  }
  return Heatmap(core.height(), core.width(), std::move(cropped));
}

namespace {

void check_dims(const Heatmap& heatmap, const BinaryTarget& target) {
  if (heatmap.height() != target.height || heatmap.width() != target.width) {
    throw Error(ErrorCode::DimensionMismatch, "heatmap " + std::to_string(heatmap.height()) + "x" +
                                                  std::to_string(heatmap.width()) + " vs target " +
                                                  std::to_string(target.height) + "x" + std::to_string(target.width));
  }
}

}  // namespace

PixelCounts pixel_counts(const Heatmap& heatmap, const BinaryTarget& target, double threshold) {
  check_dims(heatmap, target);
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "threshold must lie in [0, 1]");
  }
  PixelCounts c;
  const auto& p = heatmap.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto t = target.target[i];
    if (t == kTargetIgnore) continue;
    const bool positive = static_cast<double>(p[i]) >= threshold;
    if (t == kTargetCancer) {
      (positive ? c.tp : c.fn) += 1;
    } else {
      (positive ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

Scores prf1(const PixelCounts& c) {
  const std::int64_t predicted = c.tp + c.fp, actual = c.tp + c.fn;
  if (predicted == 0 && actual == 0) return {1.0, 1.0, 1.0};
  Scores s;
  s.precision = predicted == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(predicted);
  s.recall = actual == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(actual);
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

double grid_threshold(int index) { return static_cast<double>(index) / kThresholdSteps; }

int threshold_index(double threshold) {
  const double scaled = threshold * kThresholdSteps;
  const double r = std::round(scaled);
  if (!(r >= 0 && r <= kThresholdSteps) || std::abs(scaled - r) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "threshold must be a multiple of 0.01 in [0, 1]");
  }
  return static_cast<int>(r);
}

namespace {

// Highest grid index i with p >= i/100, using the same comparison as pixel_counts.
int bin_of(float p) {
  const double v = p;
  int k = std::clamp(static_cast<int>(std::floor(v * kThresholdSteps)), 0, kThresholdSteps);
  while (k < kThresholdSteps && v >= grid_threshold(k + 1)) ++k;
  while (k > 0 && v < grid_threshold(k)) --k;
  return k;
}

}  // namespace

PixelCounts ScoreHistogram::counts_at(int index) const {
  PixelCounts c;
  for (int k = 0; k <= kThresholdSteps; ++k) {
    const auto i = static_cast<std::size_t>(k);
    if (k >= index) {
      c.tp += cancer[i];
      c.fp += benign[i];
    } else {
      c.fn += cancer[i];
      c.tn += benign[i];
    }
  }
  return c;
}

ScoreHistogram score_histogram(std::string core_id, const Heatmap& heatmap, const BinaryTarget& target) {
  check_dims(heatmap, target);
  ScoreHistogram h;
  h.core_id = std::move(core_id);
  const auto& p = heatmap.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto t = target.target[i];
    if (t == kTargetIgnore) continue;
    auto& bins = t == kTargetCancer ? h.cancer : h.benign;
    ++bins[static_cast<std::size_t>(bin_of(p[i]))];
  }
  return h;
}

namespace {

Scores macro_of(std::span<const Scores> per_core) {
  Scores m;
  for (const auto& s : per_core) {
    m.precision += s.precision;
    m.recall += s.recall;
    m.f1 += s.f1;
  }
  const double n = static_cast<double>(per_core.size());
  return {m.precision / n, m.recall / n, m.f1 / n};
}

}  // namespace

ThresholdSweep sweep_threshold(std::span<const ScoreHistogram> cores) {
  if (cores.empty()) throw Error(ErrorCode::EmptySplit, "threshold sweep over no cores");
  ThresholdSweep sweep;
  std::vector<Scores> per_core(cores.size());
  for (int i = 0; i <= kThresholdSteps; ++i) {
    for (std::size_t c = 0; c < cores.size(); ++c) per_core[c] = prf1(cores[c].counts_at(i));
    const Scores macro = macro_of(per_core);
    sweep.curve.push_back({grid_threshold(i), macro});
    if (i == 0 || macro.f1 > sweep.best.f1) {
      sweep.best = macro;
      sweep.best_threshold = grid_threshold(i);
    }
  }
  return sweep;
}

EvalReport make_report(std::string model, double threshold, std::vector<CoreMetrics> cores) {
  if (cores.empty()) throw Error(ErrorCode::EmptySplit, "report over no cores");
  std::sort(cores.begin(), cores.end(), [](const CoreMetrics& a, const CoreMetrics& b) { return a.core_id < b.core_id; });
  EvalReport r;
  r.model = std::move(model);
  r.threshold = threshold;
  std::vector<Scores> per_core;
  for (const auto& c : cores) per_core.push_back(c.scores);
  r.macro = macro_of(per_core);
  r.cores = std::move(cores);
  return r;
}

EvalReport make_report(std::string model, double threshold, std::span<const ScoreHistogram> cores) {
  const int index = threshold_index(threshold);
  std::vector<CoreMetrics> metrics;
  for (const auto& h : cores) {
    const PixelCounts c = h.counts_at(index);
    metrics.push_back({h.core_id, prf1(c), c});
  }
  return make_report(std::move(model), grid_threshold(index), std::move(metrics));
}

std::string format_2dp(double value) {
  if (!std::isfinite(value)) throw Error(ErrorCode::InvalidArgument, "cannot format non-finite value");
  // The small bias turns binary near-halves such as 0.285 (stored as
  // 0.28499999...) into the decimal half-up result.
  const double scaled = std::floor(std::abs(value) * 100.0 + 0.5 + 1e-9);
  const auto cents = static_cast<long long>(scaled);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%lld.%02lld", value < 0 && cents != 0 ? "-" : "", cents / 100, cents % 100);
  return buf;
}

namespace {

void check_token(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " '" + s + "' must be a non-empty word");
  }
}

}  // namespace

std::string render_report(const EvalReport& r) {
  check_token(r.model, "model name");
  std::ostringstream out;
  out << "model " << r.model << '\n';
  out << "threshold " << format_2dp(r.threshold) << '\n';
  out << "macro " << format_2dp(r.macro.precision) << ' ' << format_2dp(r.macro.recall) << ' '
      << format_2dp(r.macro.f1) << '\n';
  for (const auto& c : r.cores) {
    check_token(c.core_id, "core id");
    out << "core " << c.core_id << ' ' << format_2dp(c.scores.precision) << ' ' << format_2dp(c.scores.recall) << ' '
        << format_2dp(c.scores.f1) << ' ' << c.counts.tp << ' ' << c.counts.fp << ' ' << c.counts.fn << ' '
        << c.counts.tn << '\n';
  }
  return out.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  const std::string text = render_report(report);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  EvalReport r;
  std::string line;
  int line_no = 0;
  bool have_model = false, have_threshold = false, have_macro = false;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "model") {
      if (!(fields >> r.model)) fail("missing model name");
      have_model = true;
    } else if (key == "threshold") {
      if (!(fields >> r.threshold)) fail("bad threshold");
      have_threshold = true;
    } else if (key == "macro") {
      if (!(fields >> r.macro.precision >> r.macro.recall >> r.macro.f1)) fail("bad macro line");
      have_macro = true;
    } else if (key == "core") {
      CoreMetrics c;
      if (!(fields >> c.core_id >> c.scores.precision >> c.scores.recall >> c.scores.f1 >> c.counts.tp >>
            c.counts.fp >> c.counts.fn >> c.counts.tn)) {
        fail("bad core line");
      }
      r.cores.push_back(std::move(c));
    } else {
      fail("unknown record '" + key + "'");
    }
    std::string extra;
    if (fields >> extra) fail("trailing field '" + extra + "'");
  }
  if (!have_model || !have_threshold || !have_macro) {
    throw Error(ErrorCode::ParseError, path.string() + ": missing model, threshold or macro line");
  }
  return r;
}

void write_curve(const ThresholdSweep& sweep, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  char buf[128];
  for (const auto& p : sweep.curve) {
    std::snprintf(buf, sizeof buf, "%.2f\t%.6f\t%.6f\t%.6f\n", p.threshold, p.macro.precision, p.macro.recall,
                  p.macro.f1);
    out << buf;
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

std::vector<ScoreHistogram> score_split(const Network& net, const SplitManifest& manifest, Split split,
                                        CoreStore& cores, int patch, int stride, int threads) {
  const auto ids = manifest.cores(split);
  if (ids.empty()) throw Error(ErrorCode::EmptySplit, std::string(split_name(split)) + " split has no cores");
  std::vector<ScoreHistogram> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto core = cores.get(id);
    const Heatmap h = predict_core(net, core->image, patch, stride, threads);
    out.push_back(score_histogram(id, h, core->target));
  }
  return out;
}

}  // namespace tmaseg
