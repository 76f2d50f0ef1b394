#pragma once

#include "sam/nn/autograd.hpp"

// Differentiable operations. Spatial ops act on the trailing [C,H,W] axes and
// accept an optional leading batch axis ([B,C,H,W]).

namespace sam::nn {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

/// x + mask (.) delta, where mask is a constant [H,W] map broadcast over channels.
Var add_masked(const Var& x, const Tensor& mask, const Var& delta);

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_squares(const Var& a);
Var mse(const Var& a, const Var& b);

Var leaky_relu(const Var& x, double negative_slope, double gain = 1.0);
Var relu(const Var& x);
/// log(1 + e^x): a smooth rectifier whose gradient never vanishes entirely.
Var softplus(const Var& x);

Var reshape(const Var& x, Shape shape);
/// Row r of a [N,D] matrix as a [D] vector.
Var row(const Var& x, int r);

/// y = W x + b for x of shape [in] or [B,in]; W is [out,in]. `bias` may be empty.
Var linear(const Var& x, const Var& weight, const Var& bias);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

/// Cross-correlation with weight [Co,Ci,k,k]; `bias` ([Co]) may be empty.
Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions options = {});

/// Per-input-channel style modulation of a conv weight, with optional
/// output-channel demodulation.
Var modulate(const Var& weight, const Var& style, bool demodulate, double eps = 1e-8);

Var upsample_nearest2x(const Var& x);
Var avg_pool2x(const Var& x);
Var max_pool2x(const Var& x);
Var resize_bilinear(const Var& x, int out_h, int out_w);

/// x / (||x||_channels + eps) at every spatial position.
Var normalize_channels(const Var& x, double eps = 1e-10);
/// Sum over channels weighted by constant `weights` ([C]); output [1,H,W].
Var weighted_channel_sum(const Var& x, const Tensor& weights);
Var concat_channels(const Var& a, const Var& b);
/// Mean over the spatial axes, [B,C,H,W] -> [B,C].
Var global_avg_pool(const Var& x);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Batch normalization over [B,C,H,W]. Training mode uses batch statistics
/// and updates `state`; inference mode uses the running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
               bool training);

// Non-differentiable helpers shared with image processing.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

}  // namespace sam::nn
