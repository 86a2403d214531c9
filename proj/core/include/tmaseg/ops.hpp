#pragma once

#include <span>
#include <vector>

#include "tmaseg/graph.hpp"

namespace tmaseg::ad {

enum class Padding { Same, Valid };

struct Conv2dOptions {
  int stride = 1;
  int dilation = 1;
  Padding padding = Padding::Same;
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
};

// Scalar forms of the loss head.
Real sigmoid(Real z);
/// -y log s(z) - (1-y) log(1 - s(z)) in the fused form max(z,0) - z y + log(1 + exp(-|z|)).
double bce_with_logits(double z, double y);

/// Cross-correlation over NHWC input with a [kh, kw, cin, cout] kernel.
/// `bias` may be an empty Var. Same padding yields ceil(in / stride).
Var conv2d(Var input, Var kernel, Var bias, Conv2dOptions options = {});

/// Adjoint of a same-padded strided conv2d: [n,h,w,cin] -> [n,h*s,w*s,cout]
/// with a [cin, k, k, cout] kernel.
Var transposed_conv2d(Var input, Var kernel, Var bias, int stride);

Var relu(Var x);
Var sigmoid(Var x);
Var max_pool2d(Var x, int window = 2);
Var nearest_upsample(Var x, int factor = 2);
Var concat_channels(std::span<const Var> parts);
Var add(Var a, Var b);

/// Train mode normalizes with batch statistics and updates the running
/// estimates in place; eval mode uses the running estimates.
Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, Mode mode,
               BatchNormOptions options = {});
Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var,
                    BatchNormOptions options = {});

/// Scalar sum(x * weights); used for probing and gradient checks.
Var weighted_sum(Var x, const Tensor& weights);

/// Mean binary cross-entropy over pixels with weight 1. Returns 0 (with zero
/// gradient) when every weight is 0.
Var bce_loss(Var logits, const Tensor& target, const Tensor& weight);

}  // namespace tmaseg::ad
