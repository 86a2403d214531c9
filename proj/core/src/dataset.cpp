#include "tmaseg/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "tmaseg/error.hpp"
#include "tmaseg/random.hpp"

namespace tmaseg {

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (auto s : kAllSplits) {
    if (split_name(s) == name) return s;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown split '" + std::string(name) + "' (train|val|test)");
}

std::vector<std::string> SplitManifest::cores(Split split) const {
  std::vector<std::string> out;
  for (const auto& [id, s] : assignments) {
    if (s == split) out.push_back(id);
  }
  return out;
}

std::size_t SplitManifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(assignments.begin(), assignments.end(), [split](const auto& kv) { return kv.second == split; }));
}

ClassAreas SplitManifest::totals(Split split) const {
  ClassAreas t;
  for (const auto& [id, s] : assignments) {
    if (s != split) continue;
    auto it = areas.find(id);
    if (it != areas.end()) t += it->second;
  }
  return t;
}

namespace {

constexpr int kSplits = 3;
constexpr int kClasses = 4;

void check_fractions(SplitFractions f) {
  for (auto s : kAllSplits) {
    if (!(f[s] > 0.0 && f[s] <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "split fractions must be positive, got " + std::to_string(f[s]));
    }
  }
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-6) {
    throw Error(ErrorCode::InvalidArgument, "split fractions must sum to 1");
  }
}

double class_term(double area, double total, double fraction) { return std::abs(area / total - fraction); }

}  // namespace

SplitManifest balance_split(std::span<const CoreRecord> cores, SplitFractions fractions, std::uint64_t seed) {
  if (cores.size() < static_cast<std::size_t>(kSplits)) {
    throw Error(ErrorCode::DegenerateInput,
                std::to_string(cores.size()) + " cores cannot fill " + std::to_string(kSplits) + " splits");
  }
  check_fractions(fractions);

  std::array<double, kClasses> class_total{};
  std::set<std::string> seen;
  for (const auto& c : cores) {
    if (!seen.insert(c.core_id).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate core id '" + c.core_id + "'");
    }
    const auto a = c.areas.as_array();
    for (int k = 0; k < kClasses; ++k) {
      if (a[static_cast<std::size_t>(k)] < 0) throw Error(ErrorCode::InvalidArgument, "negative area for " + c.core_id);
      class_total[static_cast<std::size_t>(k)] += static_cast<double>(a[static_cast<std::size_t>(k)]);
    }
  }

  std::vector<std::size_t> order(cores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cores[a].areas.total() > cores[b].areas.total(); });

  std::array<std::array<double, kClasses>, kSplits> area{};
  std::array<std::size_t, kSplits> members{};
  SplitManifest manifest;
  manifest.seed = seed;
  const double n = static_cast<double>(cores.size());

  for (std::size_t k = 0; k < order.size(); ++k) {
    const CoreRecord& core = cores[order[k]];
    const auto a = core.areas.as_array();
    const std::size_t remaining = order.size() - k;
    const auto empty = static_cast<std::size_t>(std::count(members.begin(), members.end(), std::size_t{0}));
    const bool forced = remaining <= empty;

    int best = -1;
    double best_delta = 0.0, best_deficit = 0.0;
    for (int s = 0; s < kSplits; ++s) {
      if (forced && members[static_cast<std::size_t>(s)] != 0) continue;
      const double f = fractions[static_cast<Split>(s)];
      double delta = 0.0;
      for (int c = 0; c < kClasses; ++c) {
        const double total = class_total[static_cast<std::size_t>(c)];
        if (total <= 0.0) continue;
        const double before = area[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
        delta += class_term(before + static_cast<double>(a[static_cast<std::size_t>(c)]), total, f) -
                 class_term(before, total, f);
      }
      // Equal area cost (every split below target looks the same): prefer the
      // split least filled relative to its fraction, so splits grow in step.
      double fill = 0.0;
      for (int c = 0; c < kClasses; ++c) {
        const double total = class_total[static_cast<std::size_t>(c)];
        if (total > 0.0) fill += area[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] / total;
      }
      const double deficit = -(fill + static_cast<double>(members[static_cast<std::size_t>(s)]) / n) / f;
      if (best < 0 || delta < best_delta - 1e-12 || (std::abs(delta - best_delta) <= 1e-12 && deficit > best_deficit)) {
        best = s;
        best_delta = delta;
        best_deficit = deficit;
      }
    }
    for (int c = 0; c < kClasses; ++c) {
      area[static_cast<std::size_t>(best)][static_cast<std::size_t>(c)] += static_cast<double>(a[static_cast<std::size_t>(c)]);
    }
    ++members[static_cast<std::size_t>(best)];
    manifest.assignments[core.core_id] = static_cast<Split>(best);
    manifest.areas[core.core_id] = core.areas;
  }
  return manifest;
}

double split_imbalance(const SplitManifest& manifest, SplitFractions fractions) {
  ClassAreas all;
  for (const auto& [id, a] : manifest.areas) all += a;
  const auto total = all.as_array();
  double j = 0.0;
  for (auto s : kAllSplits) {
    const auto part = manifest.totals(s).as_array();
    for (int c = 0; c < kClasses; ++c) {
      if (total[static_cast<std::size_t>(c)] <= 0) continue;
      j += class_term(static_cast<double>(part[static_cast<std::size_t>(c)]),
                      static_cast<double>(total[static_cast<std::size_t>(c)]), fractions[s]);
    }
  }
  return j;
}

// Manifest text format:
//   seed<TAB><u64>
//   <core_id><TAB><train|val|test><TAB><cancer>,<stroma>,<necrosis>,<normal>
// Core lines are sorted by id.
void write_manifest(const SplitManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << "seed\t" << manifest.seed << '\n';
  for (const auto& [id, split] : manifest.assignments) {
    if (id.empty() || id.find_first_of("\t\r\n") != std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "core id '" + id + "' cannot be stored in a manifest");
    }
    ClassAreas a;
    if (auto it = manifest.areas.find(id); it != manifest.areas.end()) a = it->second;
    out << id << '\t' << split_name(split) << '\t' << a.cancer << ',' << a.stroma << ',' << a.necrosis << ','
        << a.normal << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

namespace {

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line, const std::string& what) {
  throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(s);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::int64_t parse_count(const std::string& s, const std::filesystem::path& path, int line) {
  std::size_t used = 0;
  long long v = -1;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    parse_fail(path, line, "bad area value '" + s + "'");
  }
  if (used != s.size() || v < 0) parse_fail(path, line, "bad area value '" + s + "'");
  return v;
}

}  // namespace

SplitManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  SplitManifest m;
  std::string text;
  int line_no = 0;
  bool have_seed = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    const auto fields = split_on(text, '\t');
    if (!have_seed) {
      if (fields.size() != 2 || fields[0] != "seed") parse_fail(path, line_no, "expected 'seed<TAB>N' header");
      try {
        std::size_t used = 0;
        m.seed = std::stoull(fields[1], &used);
        if (used != fields[1].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        parse_fail(path, line_no, "bad seed '" + fields[1] + "'");
      }
      have_seed = true;
      continue;
    }
    if (fields.size() != 3) parse_fail(path, line_no, "expected 3 tab-separated fields");
    const std::string& id = fields[0];
    if (id.empty()) parse_fail(path, line_no, "empty core id");
    if (m.assignments.count(id)) parse_fail(path, line_no, "duplicate core id '" + id + "'");
    Split split;
    try {
      split = parse_split(fields[1]);
    } catch (const Error&) {
      parse_fail(path, line_no, "unknown split '" + fields[1] + "'");
    }
    const auto nums = split_on(fields[2], ',');
    if (nums.size() != 4) parse_fail(path, line_no, "expected 4 comma-separated areas");
    ClassAreas a{parse_count(nums[0], path, line_no), parse_count(nums[1], path, line_no),
                 parse_count(nums[2], path, line_no), parse_count(nums[3], path, line_no)};
    m.assignments[id] = split;
    m.areas[id] = a;
  }
  if (!have_seed) parse_fail(path, std::max(line_no, 1), "empty manifest");
  return m;
}

// ---------------------------------------------------------------------------

Patch apply_dihedral(const Patch& patch, Dihedral transform) {
  const int h = patch.height(), w = patch.width();
  const bool swap = transform == Dihedral::Rot90 || transform == Dihedral::Rot270 ||
                    transform == Dihedral::Transpose || transform == Dihedral::AntiTranspose;
  const int oh = swap ? w : h, ow = swap ? h : w;
  Patch out;
  out.origin = patch.origin;
  out.image = Tensor({oh, ow, 3});
  out.weight = Tensor({oh, ow, 1});
  out.target.resize(patch.target.size());
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      int sy = y, sx = x;
      switch (transform) {
        case Dihedral::Identity: break;
        case Dihedral::Rot90: sy = h - 1 - x; sx = y; break;
        case Dihedral::Rot180: sy = h - 1 - y; sx = w - 1 - x; break;
        case Dihedral::Rot270: sy = x; sx = w - 1 - y; break;
        case Dihedral::FlipHorizontal: sx = w - 1 - x; break;
        case Dihedral::FlipVertical: sy = h - 1 - y; break;
        case Dihedral::Transpose: sy = x; sx = y; break;
        case Dihedral::AntiTranspose: sy = h - 1 - x; sx = w - 1 - y; break;
      }
      const std::size_t dst = static_cast<std::size_t>(y) * static_cast<std::size_t>(ow) + static_cast<std::size_t>(x);
      const std::size_t src = static_cast<std::size_t>(sy) * static_cast<std::size_t>(w) + static_cast<std::size_t>(sx);
      for (std::size_t c = 0; c < 3; ++c) {
        out.image[static_cast<std::int64_t>(dst * 3 + c)] = patch.image[static_cast<std::int64_t>(src * 3 + c)];
      }
      out.target[dst] = patch.target[src];
      out.weight[static_cast<std::int64_t>(dst)] = patch.weight[static_cast<std::int64_t>(src)];
    }
  }
  return out;
}

LoadedCore load_core(const CoreRecord& record) {
  LoadedCore core{record.core_id, load_rgb(record.image_path), {}};
  core.target = to_binary_target(decode_annotation(load_rgb(record.mask_path)));
  if (core.target.height != core.image.height() || core.target.width != core.image.width()) {
    throw Error(ErrorCode::DimensionMismatch, "annotation " + record.mask_path.string() +
                                                  " does not match core image " + record.image_path.string());
  }
  return core;
}

std::vector<Patch> sample_patches(const LoadedCore& core, int count, int patch, std::uint64_t seed, bool augment) {
  if (patch < 1 || patch > core.image.height() || patch > core.image.width()) {
    throw Error(ErrorCode::PatchLargerThanCore, "patch " + std::to_string(patch) + " exceeds core " + core.core_id);
  }
  constexpr int kMaxRetries = 100;
  Rng rng(seed);
  const auto rows = static_cast<std::uint64_t>(core.image.height() - patch + 1);
  const auto cols = static_cast<std::uint64_t>(core.image.width() - patch + 1);
  std::vector<Patch> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    Patch p;
    for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
      const Origin o{static_cast<int>(rng.below(rows)), static_cast<int>(rng.below(cols))};
      p = extract_patch(core.image, core.target, o, patch, patch);
      if (!p.all_ignored()) break;
    }
    if (augment) p = apply_dihedral(p, static_cast<Dihedral>(rng.below(8)));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Patch> sample_patches(const CoreRecord& record, int count, int patch, std::uint64_t seed, bool augment) {
  return sample_patches(load_core(record), count, patch, seed, augment);
}

// ---------------------------------------------------------------------------

CoreStore::CoreStore(std::filesystem::path directory, std::size_t cache_capacity)
    : directory_(std::move(directory)), capacity_(std::max<std::size_t>(cache_capacity, 1)) {
  std::error_code ec;
  if (!std::filesystem::is_directory(directory_, ec)) {
    throw Error(ErrorCode::FileNotFound, "core directory " + directory_.string());
  }
}

CoreStore::CoreStore() : capacity_(1) {}

std::filesystem::path CoreStore::image_path(const std::string& core_id) const {
  return directory_ / (core_id + ".png");
}

std::filesystem::path CoreStore::mask_path(const std::string& core_id) const {
  return directory_ / (core_id + std::string(kMaskSuffix));
}

std::vector<CoreRecord> CoreStore::scan() const {
  std::vector<CoreRecord> out;
  if (directory_.empty()) return out;
  for (const auto& entry : std::filesystem::directory_iterator(directory_)) {
    const std::string file = entry.path().filename().string();
    if (!entry.is_regular_file() || file.size() <= kMaskSuffix.size() ||
        file.compare(file.size() - kMaskSuffix.size(), kMaskSuffix.size(), kMaskSuffix) != 0) {
      continue;
    }
    CoreRecord r;
    r.core_id = file.substr(0, file.size() - kMaskSuffix.size());
    r.image_path = image_path(r.core_id);
    r.mask_path = entry.path();
    r.areas = to_binary_target(decode_annotation(load_rgb(r.mask_path))).areas;
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const CoreRecord& a, const CoreRecord& b) { return a.core_id < b.core_id; });
  return out;
}

std::shared_ptr<const LoadedCore> CoreStore::get(const std::string& core_id) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = pinned_.find(core_id); it != pinned_.end()) return it->second;
    for (auto it = cache_.begin(); it != cache_.end(); ++it) {
      if (it->first == core_id) {
        cache_.splice(cache_.begin(), cache_, it);
        return cache_.front().second;
      }
    }
  }
  if (directory_.empty()) throw Error(ErrorCode::FileNotFound, "core '" + core_id + "' not in store");
  CoreRecord record{core_id, image_path(core_id), mask_path(core_id), {}};
  auto core = std::make_shared<const LoadedCore>(load_core(record));
  std::lock_guard lock(mutex_);
  cache_.emplace_front(core_id, core);
  while (cache_.size() > capacity_) cache_.pop_back();
  return core;
}

void CoreStore::put(LoadedCore core) {
  std::lock_guard lock(mutex_);
  auto id = core.core_id;
  pinned_[id] = std::make_shared<const LoadedCore>(std::move(core));
}

}  // namespace tmaseg
