#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "tmaseg/checkpoint.hpp"
#include "tmaseg/dataset.hpp"
#include "tmaseg/models.hpp"
#include "tmaseg/optim.hpp"

namespace tmaseg {

struct TrainConfig {
  ModelConfig model;
  int patch = 64;
  int batch = 4;
  std::int64_t steps = 2000;
  ad::AdamOptions adam;
  std::uint64_t seed = 0;
  bool augment = false;
  /// Validate every this many steps (and always after the last step).
  std::int64_t val_interval = 250;
  /// Latest checkpoint; the best one goes to best_checkpoint_path(). Empty: keep in memory only.
  std::filesystem::path checkpoint;
  /// Optional `step<TAB>loss` log.
  std::filesystem::path log;
  /// Values above 1 prefetch batches on a producer thread.
  int threads = 1;
};

void validate(const TrainConfig& cfg);

struct TrainResult {
  Checkpoint latest;
  /// Training loss for each step run by this call.
  std::vector<double> losses;
  /// (step, mean validation loss) at every multiple of val_interval.
  std::vector<std::pair<std::int64_t, double>> validation;
};

/// One training batch: images [n, p, p, 3], targets and weights [n, p, p, 1].
struct Batch {
  Tensor images;
  Tensor targets;
  Tensor weights;
};

/// Batch drawn for 1-based `step`; depends only on (seed, step) and the data.
Batch make_batch(const TrainConfig& cfg, const std::vector<std::string>& train_cores, CoreStore& cores,
                 std::int64_t step);

/// Runs steps (resume ? resume->params.step() : 0) + 1 .. cfg.steps.
TrainResult train(const TrainConfig& cfg, const SplitManifest& manifest, CoreStore& cores,
                  const Checkpoint* resume = nullptr);

/// Pixel-weighted mean BCE over non-overlapping patch-grid tiles of every
/// core in `split`, in eval mode.
double validate(const Network& net, const SplitManifest& manifest, Split split, CoreStore& cores, int patch);

}  // namespace tmaseg
