#include "tmaseg/models.hpp"

#include <cmath>

#include "tmaseg/error.hpp"
#include "tmaseg/ops.hpp"

namespace tmaseg {

namespace {

struct PresetInfo {
  Architecture arch;
  int base_channels;
  int growth_rate;
};

// Full-scale widths; compact variants use base 16, growth 8, depth 0.25.
constexpr PresetInfo kFullPresets[] = {
    {Architecture::Fcn123S, 64, 0},     {Architecture::DilatedNet, 64, 0},   {Architecture::DrnC26, 16, 0},
    {Architecture::DrnC42, 16, 0},      {Architecture::Unet, 64, 0},         {Architecture::DensenetD56, 48, 12},
    {Architecture::DensenetD103, 48, 16}};

constexpr int kCompactBase = 16;
constexpr double kCompactDepth = 0.25;
constexpr int kCompactGrowth = 8;

bool is_densenet(Architecture a) { return a == Architecture::DensenetD56 || a == Architecture::DensenetD103; }

ModelConfig full_config(Architecture arch) {
  for (const auto& p : kFullPresets) {
    if (p.arch == arch) {
      ModelConfig cfg;
      cfg.arch = arch;
      cfg.base_channels = p.base_channels;
      cfg.depth_scale = 1.0;
      cfg.growth_rate = is_densenet(arch) ? p.growth_rate : 0;
      return cfg;
    }
  }
  throw Error(ErrorCode::InvalidConfig, "no preset for architecture");
}

ModelConfig compact_config(Architecture arch) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.base_channels = kCompactBase;
  cfg.depth_scale = kCompactDepth;
  cfg.growth_rate = is_densenet(arch) ? kCompactGrowth : 0;
  return cfg;
}

}  // namespace

std::string_view architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::Fcn123S: return "123s";
    case Architecture::DilatedNet: return "dilatednet";
    case Architecture::DrnC26: return "drn-c26";
    case Architecture::DrnC42: return "drn-c42";
    case Architecture::Unet: return "unet";
    case Architecture::DensenetD56: return "densenet-d56";
    case Architecture::DensenetD103: return "densenet-d103";
  }
  return "?";
}

ModelConfig preset(std::string_view name, std::uint64_t seed) {
  constexpr std::string_view suffix = "-compact";
  const bool compact = name.size() > suffix.size() && name.substr(name.size() - suffix.size()) == suffix;
  const std::string_view base = compact ? name.substr(0, name.size() - suffix.size()) : name;
  for (auto arch : kAllArchitectures) {
    if (architecture_name(arch) == base) {
      ModelConfig cfg = compact ? compact_config(arch) : full_config(arch);
      cfg.seed = seed;
      return cfg;
    }
  }
  throw Error(ErrorCode::InvalidConfig, "unknown architecture preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (auto arch : kAllArchitectures) {
    out.emplace_back(architecture_name(arch));
    out.push_back(std::string(architecture_name(arch)) + "-compact");
  }
  return out;
}

std::string model_name(const ModelConfig& cfg) {
  ModelConfig probe = cfg;
  probe.seed = 0;
  const std::string base(architecture_name(cfg.arch));
  if (probe == full_config(cfg.arch)) return base;
  if (probe == compact_config(cfg.arch)) return base + "-compact";
  return base + "-custom";
}

int alignment_of(Architecture arch) {
  switch (arch) {
    case Architecture::Fcn123S:
    case Architecture::DilatedNet:
    case Architecture::DrnC26:
    case Architecture::DrnC42: return 8;
    case Architecture::Unet: return 16;
    case Architecture::DensenetD56:
    case Architecture::DensenetD103: return 32;
  }
  return 1;
}

void validate(const ModelConfig& cfg) {
  if (cfg.base_channels < 4) {
    throw Error(ErrorCode::InvalidConfig, "base_channels must be >= 4, got " + std::to_string(cfg.base_channels));
  }
  if (!(cfg.depth_scale > 0.0 && cfg.depth_scale <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "depth_scale must lie in (0, 1], got " + std::to_string(cfg.depth_scale));
  }
  if (is_densenet(cfg.arch) && cfg.growth_rate < 1) {
    throw Error(ErrorCode::InvalidConfig, "densenet growth_rate must be >= 1");
  }
}

// ---------------------------------------------------------------------------

LayerContext::LayerContext(ad::Graph& graph, ad::ParameterSet& params, ad::Mode mode, Rng* init)
    : graph_(graph), mutable_params_(&params), params_(params), mode_(mode), init_(init) {}

LayerContext::LayerContext(ad::Graph& graph, const ad::ParameterSet& params)
    : graph_(graph), mutable_params_(nullptr), params_(params), mode_(ad::Mode::Eval), init_(nullptr) {}

ad::Var LayerContext::bind(const std::string& name, const Shape& shape, double init_std, Real fill) {
  if (!params_.contains(name)) {
    if (!init_ || !mutable_params_) throw Error(ErrorCode::InvalidConfig, "missing parameter '" + name + "'");
    Tensor t(shape, fill);
    if (init_std > 0.0) {
      for (auto& v : t.data()) v = static_cast<Real>(init_->normal() * init_std);
    }
    mutable_params_->add(name, std::move(t));
  }
  if (mutable_params_) {
    ad::Parameter& p = mutable_params_->at(name);
    if (p.value.shape() != shape) {
      throw Error(ErrorCode::ShapeMismatch, "parameter '" + name + "' has shape " + shape_string(p.value.shape()) +
                                                ", layer expects " + shape_string(shape));
    }
    if (mode_ == ad::Mode::Train) return graph_.parameter(p);
    return graph_.constant(p.value);
  }
  const ad::Parameter& p = params_.at(name);
  if (p.value.shape() != shape) {
    throw Error(ErrorCode::ShapeMismatch, "parameter '" + name + "' has shape " + shape_string(p.value.shape()) +
                                              ", layer expects " + shape_string(shape));
  }
  return graph_.constant(p.value);
}

const Tensor& LayerContext::buffer(const std::string& name, const Shape& shape, Real fill) {
  if (!params_.buffers().count(name)) {
    if (!init_ || !mutable_params_) throw Error(ErrorCode::InvalidConfig, "missing buffer '" + name + "'");
    mutable_params_->add_buffer(name, Tensor(shape, fill));
  }
  return params_.buffer(name);
}

ad::Var LayerContext::conv(ad::Var x, const std::string& name, int out_channels, int kernel, int stride,
                           int dilation, bool bias) {
  const std::int64_t in_channels = x.value().dim(3);
  const double fan_in = static_cast<double>(kernel * kernel) * static_cast<double>(in_channels);
  ad::Var w = bind(name + ".weight", {kernel, kernel, in_channels, out_channels}, std::sqrt(2.0 / fan_in), 0);
  ad::Var b = bias ? bind(name + ".bias", {out_channels}, 0.0, 0) : ad::Var{};
  return ad::conv2d(x, w, b, {stride, dilation, ad::Padding::Same});
}

ad::Var LayerContext::transposed_conv(ad::Var x, const std::string& name, int out_channels, int kernel, int stride,
                                      bool bias) {
  const std::int64_t in_channels = x.value().dim(3);
  const double taps = std::max(1.0, static_cast<double>(kernel * kernel) / static_cast<double>(stride * stride));
  const double fan_in = taps * static_cast<double>(in_channels);
  ad::Var w = bind(name + ".weight", {in_channels, kernel, kernel, out_channels}, std::sqrt(2.0 / fan_in), 0);
  ad::Var b = bias ? bind(name + ".bias", {out_channels}, 0.0, 0) : ad::Var{};
  return ad::transposed_conv2d(x, w, b, stride);
}

ad::Var LayerContext::batch_norm(ad::Var x, const std::string& name) {
  const std::int64_t c = x.value().dim(3);
  ad::Var gamma = bind(name + ".gamma", {c}, 0.0, 1);
  ad::Var beta = bind(name + ".beta", {c}, 0.0, 0);
  const Tensor& mean = buffer(name + ".running_mean", {c}, 0);
  const Tensor& var = buffer(name + ".running_var", {c}, 1);
  if (mode_ == ad::Mode::Train) {
    return ad::batch_norm(x, gamma, beta, mutable_params_->buffer(name + ".running_mean"),
                          mutable_params_->buffer(name + ".running_var"), ad::Mode::Train);
  }
  return ad::batch_norm_eval(x, gamma, beta, mean, var);
}

ad::Var LayerContext::conv_bn(ad::Var x, const std::string& name, int out_channels, int kernel, int stride,
                              int dilation) {
  return batch_norm(conv(x, name, out_channels, kernel, stride, dilation), name + ".bn");
}

ad::Var LayerContext::conv_bn_relu(ad::Var x, const std::string& name, int out_channels, int kernel, int stride,
                                   int dilation) {
  return ad::relu(conv_bn(x, name, out_channels, kernel, stride, dilation));
}

void LayerContext::mark_head(const std::string& name) { head_.push_back(name); }

// ---------------------------------------------------------------------------

Network::Network(ModelConfig cfg, int alignment, Body body)
    : cfg_(cfg), alignment_(alignment), body_(std::move(body)) {
  if (alignment_ < 1) throw Error(ErrorCode::InvalidConfig, "alignment must be >= 1");
  Rng init(mix_seed(cfg_.seed, 0x1417));
  ad::Graph graph;
  LayerContext ctx(graph, params_, ad::Mode::Eval, &init);
  ad::Var x = graph.constant(Tensor({1, alignment_, alignment_, 3}));
  ad::Var y = body_(ctx, x);
  if (y.value().shape() != Shape{1, alignment_, alignment_, 1}) {
    throw Error(ErrorCode::InvalidConfig, "network body maps " + shape_string(x.value().shape()) + " to " +
                                              shape_string(y.value().shape()));
  }
  head_ = ctx.head_layers();
}

void Network::check_input(const Tensor& batch) const {
  if (batch.rank() != 4 || batch.dim(3) != 3) {
    throw Error(ErrorCode::ShapeMismatch, "network input must be [n,h,w,3], got " + shape_string(batch.shape()));
  }
  if (batch.dim(1) % alignment_ != 0 || batch.dim(2) % alignment_ != 0 || batch.dim(1) == 0 || batch.dim(2) == 0) {
    throw Error(ErrorCode::AlignmentError, "input " + std::to_string(batch.dim(1)) + "x" +
                                               std::to_string(batch.dim(2)) + " must be a positive multiple of " +
                                               std::to_string(alignment_) + " for " + model_name(cfg_));
  }
}

ad::Var Network::forward(ad::Graph& graph, ad::Var batch, ad::Mode mode) {
  check_input(batch.value());
  LayerContext ctx(graph, params_, mode);
  return body_(ctx, batch);
}

ad::Var Network::forward(ad::Graph& graph, ad::Var batch) const {
  check_input(batch.value());
  LayerContext ctx(graph, params_);
  return body_(ctx, batch);
}

Tensor Network::infer(const Tensor& batch) const {
  ad::Graph graph;
  ad::Var x = graph.constant(batch);
  return forward(graph, x).value();
}

void Network::zero_head() {
  for (const auto& layer : head_) {
    for (const char* suffix : {".weight", ".bias"}) {
      const std::string name = layer + suffix;
      if (params_.contains(name)) params_.at(name).value.fill(Real(0));
    }
  }
}

void Network::load_parameters(ad::ParameterSet params) {
  const auto& mine = params_.parameters();
  const auto& theirs = params.parameters();
  if (mine.size() != theirs.size() || params_.buffers().size() != params.buffers().size()) {
    throw Error(ErrorCode::InvalidConfig, "parameter set does not match " + model_name(cfg_));
  }
  for (const auto& [name, p] : mine) {
    auto it = theirs.find(name);
    if (it == theirs.end() || it->second.value.shape() != p.value.shape()) {
      throw Error(ErrorCode::InvalidConfig, "parameter '" + name + "' missing or mis-shaped for " + model_name(cfg_));
    }
  }
  for (const auto& [name, b] : params_.buffers()) {
    auto it = params.buffers().find(name);
    if (it == params.buffers().end() || it->second.shape() != b.shape()) {
      throw Error(ErrorCode::InvalidConfig, "buffer '" + name + "' missing or mis-shaped for " + model_name(cfg_));
    }
  }
  params_ = std::move(params);
}

std::int64_t receptive_field(const ModelConfig& cfg) {
  const Network net = build_model(cfg);
  ad::Graph graph;
  ad::Var x = graph.constant(Tensor({1, net.alignment(), net.alignment(), 3}));
  ad::Var y = net.forward(graph, x);
  return static_cast<std::int64_t>(std::llround(graph.receptive_field(y).size));
}

}  // namespace tmaseg
