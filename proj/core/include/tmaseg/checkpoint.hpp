#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>

#include "tmaseg/models.hpp"
#include "tmaseg/optim.hpp"

namespace tmaseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything needed to rebuild a network and resume its optimizer.
// params carries values, batch-norm buffers, Adam moments and the step
// counter; gradients are never stored.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  std::uint64_t train_seed = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  ad::ParameterSet params;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Snapshot of a network's state with gradients dropped.
Checkpoint make_checkpoint(const Network& net, std::uint64_t train_seed, double best_val_loss);

/// Network with the checkpoint's architecture and state.
Network restore_network(const Checkpoint& checkpoint);

// Layout (little-endian):
//   "TMASEG01"  u32 version
//   config:  u32 arch, u32 base_channels, f64 depth_scale, u32 growth_rate, u64 seed, u8 dilation
//   u64 train_seed, f64 best_val_loss
//   four tensor tables (parameters, buffers, adam m, adam v), each
//     u32 count, then per entry: u32 name_len, name, u8 dtype (0 f32, 1 f64), u32 rank, u64 extents[rank], data
//   u64 step
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// "<dir>/<stem>.best<ext>" next to `path`.
std::filesystem::path best_checkpoint_path(const std::filesystem::path& path);

}  // namespace tmaseg
