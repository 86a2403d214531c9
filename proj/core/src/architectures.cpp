// Desk-scale reconstructions of the seven segmentation architectures. Every
// body maps [n, h, w, 3] inputs to [n, h, w, 1] logits; convolutions are
// followed by batch norm except the logit head.

#include <array>
#include <cmath>
#include <vector>

#include "tmaseg/error.hpp"
#include "tmaseg/models.hpp"
#include "tmaseg/ops.hpp"

namespace tmaseg {

namespace {

using ad::Var;

int scaled(int layers, double depth_scale) {
  return std::max(1, static_cast<int>(std::lround(layers * depth_scale)));
}

std::string idx(const std::string& prefix, int i) { return prefix + std::to_string(i); }

// conv-bn-relu repeated `count` times.
Var conv_stack(LayerContext& ctx, Var x, const std::string& name, int channels, int count, int dilation = 1) {
  for (int i = 0; i < count; ++i) x = ctx.conv_bn_relu(x, idx(name + ".conv", i), channels, 3, 1, dilation);
  return x;
}

// Full-resolution head shared by the dilation-based networks: reduce, three
// nearest x2 upsamplings, then a 3x3 logit conv.
Var upsample8_head(LayerContext& ctx, Var x, int channels) {
  x = ctx.conv_bn_relu(x, "head.reduce", channels, 1);
  for (int i = 0; i < 3; ++i) x = ad::nearest_upsample(x, 2);
  ctx.mark_head("head.logit");
  return ctx.conv(x, "head.logit", 1, 3, 1, 1, true);
}

// FCN-8S-style: three conv/pool stages down to 1/8, a conv context block,
// scores from the context, stage 3 and (strided) stage 2 fused by addition,
// then a single x8 transposed-conv logit head.
Var fcn123s(LayerContext& ctx, Var x, const ModelConfig& cfg) {
  const int c = cfg.base_channels;
  const int n = scaled(2, cfg.depth_scale);
  x = ad::max_pool2d(conv_stack(ctx, x, "stage1", c, n));
  const Var s2 = ad::max_pool2d(conv_stack(ctx, x, "stage2", 2 * c, n));
  const Var s3 = ad::max_pool2d(conv_stack(ctx, s2, "stage3", 4 * c, n));
  Var f = ctx.conv_bn_relu(s3, "context.conv0", 8 * c, 3);
  f = ctx.conv_bn_relu(f, "context.conv1", 8 * c, 1);
  const Var score_context = ctx.conv_bn(f, "score.context", c, 1);
  const Var score3 = ctx.conv_bn(s3, "score.stage3", c, 1);
  const Var score2 = ctx.conv_bn(s2, "score.stage2", c, 3, 2);
  const Var fused = ad::add(ad::add(score_context, score3), score2);
  ctx.mark_head("head.up8");
  return ctx.transposed_conv(fused, "head.up8", 1, 16, 8, true);
}

// Front end downsampling x8, then the context block of 3x3 convs with
// dilations 1,1,2,4,8,16,1,1 in place of transposed-conv upsampling.
Var dilatednet(LayerContext& ctx, Var x, const ModelConfig& cfg) {
  const int c = cfg.base_channels;
  const int n = scaled(2, cfg.depth_scale);
  for (int s = 0; s < 3; ++s) x = ad::max_pool2d(conv_stack(ctx, x, idx("front", s), c << s, n));
  constexpr std::array<int, 8> kContextDilations{1, 1, 2, 4, 8, 16, 1, 1};
  for (std::size_t i = 0; i < kContextDilations.size(); ++i) {
    const int d = cfg.dilation ? kContextDilations[i] : 1;
    x = ctx.conv_bn_relu(x, idx("context.conv", static_cast<int>(i)), 4 * c, 3, 1, d);
  }
  return upsample8_head(ctx, x, c);
}

Var residual_block(LayerContext& ctx, Var x, const std::string& name, int channels, int stride, int dilation) {
  Var y = ctx.conv_bn_relu(x, name + ".conv0", channels, 3, stride, dilation);
  y = ctx.conv_bn(y, name + ".conv1", channels, 3, 1, dilation);
  Var shortcut = x;
  if (stride != 1 || x.value().dim(3) != channels) shortcut = ctx.conv_bn(x, name + ".proj", channels, 1, stride);
  return ad::relu(ad::add(y, shortcut));
}

// Dilated residual network, type C: residual stages with output stride 8,
// the last two stages dilated 2 and 4 instead of strided, then two
// non-residual dilation-1 degridding layers.
Var drn(LayerContext& ctx, Var x, const ModelConfig& cfg, const std::array<int, 6>& blocks) {
  const int c = cfg.base_channels;
  constexpr std::array<int, 6> kWidth{1, 2, 4, 8, 8, 8};
  constexpr std::array<int, 6> kStride{1, 2, 2, 2, 1, 1};
  constexpr std::array<int, 6> kDilation{1, 1, 1, 1, 2, 4};
  x = ctx.conv_bn_relu(x, "stem", c, 7);
  for (std::size_t level = 0; level < blocks.size(); ++level) {
    const int count = scaled(blocks[level], cfg.depth_scale);
    const int d = cfg.dilation ? kDilation[level] : 1;
    for (int b = 0; b < count; ++b) {
      x = residual_block(ctx, x, "level" + std::to_string(level + 1) + ".block" + std::to_string(b),
                         c * kWidth[level], b == 0 ? kStride[level] : 1, d);
    }
  }
  x = ctx.conv_bn_relu(x, "degrid.conv0", 8 * c, 3);
  x = ctx.conv_bn_relu(x, "degrid.conv1", 8 * c, 3);
  return upsample8_head(ctx, x, c);
}

// Four pooling levels; the decoder upsamples with 2x2 transposed convs and
// concatenates the matching encoder features.
Var unet(LayerContext& ctx, Var x, const ModelConfig& cfg) {
  const int c = cfg.base_channels;
  const int n = scaled(2, cfg.depth_scale);
  std::vector<Var> skips;
  for (int level = 0; level < 4; ++level) {
    x = conv_stack(ctx, x, idx("enc", level), c << level, n);
    skips.push_back(x);
    x = ad::max_pool2d(x);
  }
  x = conv_stack(ctx, x, "bottleneck", c << 4, n);
  for (int level = 3; level >= 0; --level) {
    const std::string name = idx("dec", level);
    Var up = ad::relu(ctx.batch_norm(ctx.transposed_conv(x, name + ".up", c << level, 2, 2), name + ".up.bn"));
    const std::array<Var, 2> parts{up, skips[static_cast<std::size_t>(level)]};
    x = conv_stack(ctx, ad::concat_channels(parts), name, c << level, n);
  }
  ctx.mark_head("head.logit");
  return ctx.conv(x, "head.logit", 1, 1, 1, 1, true);
}

// FC-DenseNet: dense blocks with transition-down (1x1 conv + pool) on the
// way down and transition-up (3x3 stride-2 transposed conv) plus skip
// concatenation on the way up.
Var densenet(LayerContext& ctx, Var x, const ModelConfig& cfg, const std::array<int, 5>& down, int bottleneck) {
  const int growth = cfg.growth_rate;
  x = ctx.conv_bn_relu(x, "stem", cfg.base_channels, 3);
  std::vector<Var> skips;
  for (int i = 0; i < 5; ++i) {
    x = dense_block(ctx, x, idx("down", i), scaled(down[static_cast<std::size_t>(i)], cfg.depth_scale), growth, true);
    skips.push_back(x);
    x = ctx.conv_bn_relu(x, idx("td", i), static_cast<int>(x.value().dim(3)), 1);
    x = ad::max_pool2d(x);
  }
  Var fresh = dense_block(ctx, x, "bottleneck", scaled(bottleneck, cfg.depth_scale), growth, false);
  for (int i = 4; i >= 0; --i) {
    const std::string tu = idx("tu", i);
    Var up = ctx.transposed_conv(fresh, tu, static_cast<int>(fresh.value().dim(3)), 3, 2);
    up = ad::relu(ctx.batch_norm(up, tu + ".bn"));
    const std::array<Var, 2> parts{up, skips[static_cast<std::size_t>(i)]};
    fresh = dense_block(ctx, ad::concat_channels(parts), idx("up", i),
                        scaled(down[static_cast<std::size_t>(i)], cfg.depth_scale), growth, i == 0);
  }
  ctx.mark_head("head.logit");
  return ctx.conv(fresh, "head.logit", 1, 1, 1, 1, true);
}

}  // namespace

Var dense_block(LayerContext& ctx, Var x, const std::string& name, int layers, int growth, bool keep_input) {
  std::vector<Var> features{x};
  std::vector<Var> fresh;
  for (int l = 0; l < layers; ++l) {
    Var in = features.size() == 1 ? features[0] : ad::concat_channels(features);
    Var y = ctx.conv_bn_relu(in, idx(name + ".layer", l), growth, 3);
    features.push_back(y);
    fresh.push_back(y);
  }
  if (keep_input) return ad::concat_channels(features);
  return fresh.size() == 1 ? fresh[0] : ad::concat_channels(fresh);
}

Network build_model(const ModelConfig& cfg) {
  validate(cfg);
  Network::Body body;
  switch (cfg.arch) {
    case Architecture::Fcn123S:
      body = [cfg](LayerContext& ctx, Var x) { return fcn123s(ctx, x, cfg); };
      break;
    case Architecture::DilatedNet:
      body = [cfg](LayerContext& ctx, Var x) { return dilatednet(ctx, x, cfg); };
      break;
    case Architecture::DrnC26:
      body = [cfg](LayerContext& ctx, Var x) { return drn(ctx, x, cfg, {1, 1, 2, 2, 2, 2}); };
      break;
    case Architecture::DrnC42:
      body = [cfg](LayerContext& ctx, Var x) { return drn(ctx, x, cfg, {1, 1, 3, 4, 6, 3}); };
      break;
    case Architecture::Unet:
      body = [cfg](LayerContext& ctx, Var x) { return unet(ctx, x, cfg); };
      break;
    case Architecture::DensenetD56:
      body = [cfg](LayerContext& ctx, Var x) { return densenet(ctx, x, cfg, {4, 4, 4, 4, 4}, 4); };
      break;
    case Architecture::DensenetD103:
      body = [cfg](LayerContext& ctx, Var x) { return densenet(ctx, x, cfg, {4, 5, 7, 10, 12}, 15); };
      break;
  }
  return Network(cfg, alignment_of(cfg.arch), std::move(body));
}

}  // namespace tmaseg
