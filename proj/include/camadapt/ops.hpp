#pragma once

#include <vector>

#include "camadapt/autograd.hpp"

// Differentiable primitives. Every op records its backward rule on the tape
// when gradient recording is enabled and an input requires grad.
namespace camadapt::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var neg(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
Var mean_square(const Var& a);
Var mean_abs(const Var& a);

Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);

// Clamp with pass-through gradient inside [lo, hi] and zero gradient outside.
Var clamp(const Var& a, double lo, double hi);

// x: [N, Cin, H, W]; weight: [Cout, Cin, k, k]; bias: [Cout] (may be empty Var).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

// x: [N, Cin, H, W]; weight: [Cin, Cout, k, k]; output spatial size is
// (H - 1) * stride - 2 * pad + k.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

// Per-sample, per-channel standardization without affine parameters.
Var instance_norm(const Var& x, double eps = 1e-5);

// [N, C, H, W] -> [N, C]
Var global_avg_pool(const Var& x);

// x: [N, in]; weight: [out, in]; bias: [out].
Var linear(const Var& x, const Var& weight, const Var& bias);

// Concatenates [N, Fi] blocks along the feature axis.
Var concat_columns(const std::vector<Var>& blocks);

// (x - shift) / divisor per column of an [N, F] batch; shift/divisor are constants.
Var standardize_columns(const Var& x, const std::vector<double>& shift,
                        const std::vector<double>& divisor);

// Elementwise log(sigmoid(z)) (positive) or log(1 - sigmoid(z)) (negative),
// evaluated stably from logits and clamped below at log(floor). The clamped
// region has zero gradient.
Var log_sigmoid_clamped(const Var& logits, bool positive, double floor = 1e-7);

// Mean cross-entropy of softmax(logits) against integer labels. logits: [N, K].
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

// Triangular-kernel soft histogram per channel: [N, C, H, W] -> [N, C * bins].
// Each value splits its unit mass linearly between its two nearest bin
// centres (i + 0.5) / bins; values beyond the outer centres go to the edge bin.
Var soft_histogram(const Var& x, int bins);

// Plug-in mutual information (nats) of the soft joint histogram for the
// channel pairs (0,1), (0,2), (1,2): [N, 3, H, W] -> [N, 3].
Var soft_channel_mutual_information(const Var& x, int bins);

// Triangular kernel weights for one value: returns (lower bin, weight of lower
// bin, d weight / d value). The upper bin receives 1 - weight.
struct SoftBin {
  int lower;
  double lower_weight;
  double slope;
};
SoftBin soft_bin(double value, int bins);

}  // namespace camadapt::ops
