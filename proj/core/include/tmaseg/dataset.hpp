#pragma once

#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tmaseg/annotation.hpp"
#include "tmaseg/imaging.hpp"
#include "tmaseg/tiling.hpp"

namespace tmaseg {

enum class Split { Train, Val, Test };

inline constexpr Split kAllSplits[] = {Split::Train, Split::Val, Split::Test};

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct CoreRecord {
  std::string core_id;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  ClassAreas areas;
};

struct SplitFractions {
  double train = 0.5;
  double val = 0.25;
  double test = 0.25;

  double operator[](Split s) const { return s == Split::Train ? train : s == Split::Val ? val : test; }
};

struct SplitManifest {
  std::uint64_t seed = 0;
  std::map<std::string, Split> assignments;
  std::map<std::string, ClassAreas> areas;

  /// Member core ids in ascending order.
  std::vector<std::string> cores(Split split) const;
  std::size_t count(Split split) const;
  ClassAreas totals(Split split) const;

  friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

/// Greedy area balancing: cores are shuffled by `seed`, stably sorted by total
/// annotated area (descending) and each is placed in the split that
/// minimizes sum over splits and classes of |class share - split fraction|.
/// Every split is kept non-empty.
SplitManifest balance_split(std::span<const CoreRecord> cores, SplitFractions fractions, std::uint64_t seed);

/// The balancing objective evaluated on a finished manifest.
double split_imbalance(const SplitManifest& manifest, SplitFractions fractions);

void write_manifest(const SplitManifest& manifest, const std::filesystem::path& path);
SplitManifest read_manifest(const std::filesystem::path& path);

// Eight symmetries of the square, applied identically to image, target and weight.
enum class Dihedral : std::uint8_t {
  Identity,
  Rot90,
  Rot180,
  Rot270,
  FlipHorizontal,
  FlipVertical,
  Transpose,
  AntiTranspose,
};

Patch apply_dihedral(const Patch& patch, Dihedral transform);

struct LoadedCore {
  std::string core_id;
  ImageRGB image;
  BinaryTarget target;
};

LoadedCore load_core(const CoreRecord& record);

/// Uniformly random patch windows. Windows whose weight is all zero are
/// redrawn up to 100 times. With `augment`, each patch gets an independently
/// drawn dihedral transform. Fully determined by `seed`.
std::vector<Patch> sample_patches(const LoadedCore& core, int count, int patch, std::uint64_t seed, bool augment);
std::vector<Patch> sample_patches(const CoreRecord& record, int count, int patch, std::uint64_t seed, bool augment);

// Cores on disk as <dir>/<id>.png with annotation <dir>/<id>_mask.png.
// Decoded cores are cached (LRU); access is thread-safe.
class CoreStore {
 public:
  explicit CoreStore(std::filesystem::path directory, std::size_t cache_capacity = 16);
  /// In-memory store; cores are added with put().
  CoreStore();

  std::filesystem::path image_path(const std::string& core_id) const;
  std::filesystem::path mask_path(const std::string& core_id) const;

  /// Every <id>_mask.png in the directory with its annotated areas, by id.
  std::vector<CoreRecord> scan() const;

  std::shared_ptr<const LoadedCore> get(const std::string& core_id);
  /// Pins a core in memory; pinned cores are never evicted.
  void put(LoadedCore core);

 private:
  std::filesystem::path directory_;
  std::size_t capacity_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const LoadedCore>> pinned_;
  std::list<std::pair<std::string, std::shared_ptr<const LoadedCore>>> cache_;
};

inline constexpr std::string_view kMaskSuffix = "_mask.png";

}  // namespace tmaseg
