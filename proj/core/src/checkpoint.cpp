#include "tmaseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <type_traits>

#include "tmaseg/error.hpp"

namespace tmaseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'M', 'A', 'S', 'E', 'G', '0', '1'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    out_.append(p, sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }

  void tensor(const std::string& name, const Tensor& t) {
    put(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    put(std::is_same_v<Real, float> ? kDtypeF32 : kDtypeF64);
    put(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put(static_cast<std::uint64_t>(e));
    bytes(reinterpret_cast<const char*>(t.ptr()), static_cast<std::size_t>(t.size()) * sizeof(Real));
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }

  const char* take(std::size_t n) {
    if (n > in_.size() - pos_) {
      throw Error(ErrorCode::TruncatedFile, "checkpoint ends at byte " + std::to_string(in_.size()) + ", needed " +
                                                std::to_string(pos_ + n));
    }
    const char* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::pair<std::string, Tensor> tensor() {
    const auto len = get<std::uint32_t>();
    std::string name(take(len), len);
    const auto dtype = get<std::uint8_t>();
    if (dtype != kDtypeF32 && dtype != kDtypeF64) {
      throw Error(ErrorCode::DecodeError, "unknown dtype tag " + std::to_string(dtype) + " for " + name);
    }
    const auto rank = get<std::uint32_t>();
    if (rank > 8) throw Error(ErrorCode::DecodeError, "implausible rank for " + name);
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto e = get<std::uint64_t>();
      if (e == 0 || e > (std::uint64_t{1} << 32)) throw Error(ErrorCode::DecodeError, "bad extent for " + name);
      count *= e;
      if (count > in_.size()) throw Error(ErrorCode::TruncatedFile, "tensor " + name + " exceeds file size");
      shape.push_back(static_cast<std::int64_t>(e));
    }
    std::vector<Real> data(count);
    if (dtype == kDtypeF32) {
      const char* p = take(count * sizeof(float));
      for (std::uint64_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, p + i * sizeof(float), sizeof(float));
        data[i] = static_cast<Real>(f);
      }
    } else {
      const char* p = take(count * sizeof(double));
      for (std::uint64_t i = 0; i < count; ++i) {
        double d;
        std::memcpy(&d, p + i * sizeof(double), sizeof(double));
        data[i] = static_cast<Real>(d);
      }
    }
    return {std::move(name), Tensor(std::move(shape), std::move(data))};
  }

  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

std::map<std::string, Tensor> read_table(Reader& r, const char* what) {
  std::map<std::string, Tensor> table;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    if (!table.emplace(name, std::move(t)).second) {
      throw Error(ErrorCode::DecodeError, std::string("duplicate ") + what + " entry " + name);
    }
  }
  return table;
}

}  // namespace

Checkpoint make_checkpoint(const Network& net, std::uint64_t train_seed, double best_val_loss) {
  Checkpoint c;
  c.config = net.config();
  c.train_seed = train_seed;
  c.best_val_loss = best_val_loss;
  c.params = net.params();
  for (auto& [name, p] : c.params.parameters()) p.grad = Tensor();
  return c;
}

Network restore_network(const Checkpoint& checkpoint) {
  Network net = build_model(checkpoint.config);
  net.load_parameters(checkpoint.params);
  return net;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put(c.version);
  w.put(static_cast<std::uint32_t>(c.config.arch));
  w.put(static_cast<std::uint32_t>(c.config.base_channels));
  w.put(c.config.depth_scale);
  w.put(static_cast<std::uint32_t>(c.config.growth_rate));
  w.put(c.config.seed);
  w.put(static_cast<std::uint8_t>(c.config.dilation ? 1 : 0));
  w.put(c.train_seed);
  w.put(c.best_val_loss);

  const auto& params = c.params.parameters();
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) w.tensor(name, p.value);
  w.put(static_cast<std::uint32_t>(c.params.buffers().size()));
  for (const auto& [name, b] : c.params.buffers()) w.tensor(name, b);
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) w.tensor(name, p.m);
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) w.tensor(name, p.v);
  w.put(c.params.step());
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic) throw Error(ErrorCode::TruncatedFile, "checkpoint shorter than its magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::BadMagic, "not a tmaseg checkpoint");
  }
  Reader r(bytes);
  r.take(sizeof kMagic);
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  if (c.version != kCheckpointVersion) {
    throw Error(ErrorCode::VersionUnsupported, "checkpoint version " + std::to_string(c.version) + ", supported " +
                                                   std::to_string(kCheckpointVersion));
  }
  const auto arch = r.get<std::uint32_t>();
  if (arch > static_cast<std::uint32_t>(Architecture::DensenetD103)) {
    throw Error(ErrorCode::DecodeError, "unknown architecture tag " + std::to_string(arch));
  }
  c.config.arch = static_cast<Architecture>(arch);
  c.config.base_channels = static_cast<int>(r.get<std::uint32_t>());
  c.config.depth_scale = r.get<double>();
  c.config.growth_rate = static_cast<int>(r.get<std::uint32_t>());
  c.config.seed = r.get<std::uint64_t>();
  c.config.dilation = r.get<std::uint8_t>() != 0;
  c.train_seed = r.get<std::uint64_t>();
  c.best_val_loss = r.get<double>();

  auto values = read_table(r, "parameter");
  auto buffers = read_table(r, "buffer");
  auto m = read_table(r, "adam m");
  auto v = read_table(r, "adam v");
  c.params.set_step(r.get<std::uint64_t>());
  if (!r.done()) throw Error(ErrorCode::DecodeError, "trailing bytes after checkpoint");

  for (auto& [name, value] : values) {
    auto& p = c.params.add(name, std::move(value));
    auto mi = m.find(name);
    auto vi = v.find(name);
    if (mi == m.end() || vi == v.end()) throw Error(ErrorCode::DecodeError, "missing Adam state for " + name);
    if (mi->second.shape() != p.value.shape() || vi->second.shape() != p.value.shape()) {
      throw Error(ErrorCode::DecodeError, "Adam state shape mismatch for " + name);
    }
    p.m = std::move(mi->second);
    p.v = std::move(vi->second);
    m.erase(mi);
    v.erase(vi);
  }
  if (!m.empty() || !v.empty()) throw Error(ErrorCode::DecodeError, "Adam state for unknown parameter");
  for (auto& [name, b] : buffers) c.params.add_buffer(name, std::move(b));
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  // Write then rename so a crash never leaves a half-written checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) throw Error(ErrorCode::FileNotFound, path.string());
    throw Error(ErrorCode::IoError, "cannot open " + path.string());
  }
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

std::filesystem::path best_checkpoint_path(const std::filesystem::path& path) {
  auto name = path.stem().string() + ".best" + path.extension().string();
  return path.parent_path() / name;
}

}  // namespace tmaseg
