#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "tmaseg/graph.hpp"
#include "tmaseg/optim.hpp"
#include "tmaseg/random.hpp"

namespace tmaseg {

enum class Architecture { Fcn123S, DilatedNet, DrnC26, DrnC42, Unet, DensenetD56, DensenetD103 };

inline constexpr Architecture kAllArchitectures[] = {
    Architecture::Fcn123S, Architecture::DilatedNet,  Architecture::DrnC26,      Architecture::DrnC42,
    Architecture::Unet,    Architecture::DensenetD56, Architecture::DensenetD103};

struct ModelConfig {
  Architecture arch = Architecture::Unet;
  int base_channels = 16;
  double depth_scale = 0.25;
  int growth_rate = 8;  // densenet only
  std::uint64_t seed = 0;
  // Off builds the equal-depth counterpart with every dilation set to 1.
  bool dilation = true;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Stable CLI identifiers: 123s, dilatednet, drn-c26, drn-c42, unet,
/// densenet-d56, densenet-d103.
std::string_view architecture_name(Architecture arch);

/// Accepts "<arch>" (full scale) and "<arch>-compact".
ModelConfig preset(std::string_view name, std::uint64_t seed = 0);
std::vector<std::string> preset_names();
/// Preset name the config corresponds to, or "<arch>-custom".
std::string model_name(const ModelConfig& cfg);

int alignment_of(Architecture arch);
void validate(const ModelConfig& cfg);

// Parameter-aware building blocks used by the architecture definitions.
// When constructed with an initializer, missing parameters are created on
// first use (He-normal conv kernels, zero biases, unit/zero batch-norm
// affine); otherwise every parameter must already exist.
class LayerContext {
 public:
  LayerContext(ad::Graph& graph, ad::ParameterSet& params, ad::Mode mode, Rng* init = nullptr);
  /// Read-only evaluation; parameters enter the graph as constants.
  LayerContext(ad::Graph& graph, const ad::ParameterSet& params);

  ad::Graph& graph() { return graph_; }
  ad::Mode mode() const { return mode_; }

  ad::Var conv(ad::Var x, const std::string& name, int out_channels, int kernel, int stride = 1, int dilation = 1,
               bool bias = false);
  ad::Var transposed_conv(ad::Var x, const std::string& name, int out_channels, int kernel, int stride,
                          bool bias = false);
  ad::Var batch_norm(ad::Var x, const std::string& name);
  ad::Var conv_bn(ad::Var x, const std::string& name, int out_channels, int kernel, int stride = 1,
                  int dilation = 1);
  ad::Var conv_bn_relu(ad::Var x, const std::string& name, int out_channels, int kernel, int stride = 1,
                       int dilation = 1);

  /// Records `name` as a logit-head layer (see Network::zero_head).
  void mark_head(const std::string& name);
  const std::vector<std::string>& head_layers() const { return head_; }

 private:
  ad::Var bind(const std::string& name, const Shape& shape, double init_std, Real fill);
  const Tensor& buffer(const std::string& name, const Shape& shape, Real fill);

  ad::Graph& graph_;
  ad::ParameterSet* mutable_params_;
  const ad::ParameterSet& params_;
  ad::Mode mode_;
  Rng* init_;
  std::vector<std::string> head_;
};

// Fully convolutional network f(x; theta): [n, h, w, 3] -> [n, h, w, 1] logits.
class Network {
 public:
  using Body = std::function<ad::Var(LayerContext&, ad::Var)>;

  /// Declares and initializes parameters (seeded by cfg.seed) by tracing
  /// `body` once on an alignment-sized input.
  Network(ModelConfig cfg, int alignment, Body body);

  const ModelConfig& config() const { return cfg_; }
  int alignment() const { return alignment_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  std::int64_t parameter_count() const { return params_.parameter_count(); }

  /// Train mode binds parameters for backward and updates batch-norm running
  /// statistics; Eval mode only reads them.
  ad::Var forward(ad::Graph& graph, ad::Var batch, ad::Mode mode);
  /// Read-only eval-mode forward; safe to call concurrently.
  ad::Var forward(ad::Graph& graph, ad::Var batch) const;
  /// Eval-mode logits for a [n, h, w, 3] batch.
  Tensor infer(const Tensor& batch) const;

  void zero_head();
  const std::vector<std::string>& head_layers() const { return head_; }

  /// Replaces all parameters, buffers and optimizer state; names and shapes
  /// must match this architecture.
  void load_parameters(ad::ParameterSet params);

 private:
  void check_input(const Tensor& batch) const;

  ModelConfig cfg_;
  int alignment_;
  Body body_;
  ad::ParameterSet params_;
  std::vector<std::string> head_;
};

Network build_model(const ModelConfig& cfg);

/// Analytic receptive field (pixels) of one output logit.
std::int64_t receptive_field(const ModelConfig& cfg);

/// Each layer consumes the concatenation of the block input and all earlier
/// layer outputs and adds `growth` channels. Returns input + new features
/// when `keep_input`, otherwise only the new features.
ad::Var dense_block(LayerContext& ctx, ad::Var x, const std::string& name, int layers, int growth, bool keep_input);

}  // namespace tmaseg
