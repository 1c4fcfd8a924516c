#pragma once

#include <span>

#include "seffsal/autograd.hpp"

namespace seffsal::ops {

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  /// 1 (dense) or equal to the input channel count (depthwise).
  int groups = 1;
};

/// Output extent along one axis for a kernel of size `k`.
int conv_out_size(int in, int k, const ConvSpec& spec);

/// 2-D cross-correlation. `weight` is [Cout, Cin/groups, k, k]; `bias` may be undefined or [1,Cout,1,1].
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec);

/// Per-channel running statistics owned by a normalization layer.
struct RunningStats {
  Tensor mean;  // [1,C,1,1]
  Tensor var;   // [1,C,1,1]
};

/// Batch normalization over (N, H, W). In training mode batch statistics are used and
/// `stats` is updated with `momentum`; otherwise `stats` is used as-is.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, RunningStats& stats,
               bool training, double momentum = 0.1, double eps = 1e-5);

Var relu(const Var& x);

/// Logistic function with outputs clamped to [2^-53, 1 - 2^-53] so every value stays
/// strictly inside (0, 1) in double precision.
Var sigmoid(const Var& x);

/// Elementwise sum. `b` may also be [N,C,1,1] and is then broadcast over space.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);

Var concat_channels(std::span<const Var> parts);

/// Bilinear resampling with half-pixel centres (corners not aligned).
Var resize_bilinear(const Var& x, Size2 size);
Tensor resize_bilinear(const Tensor& x, Size2 size);

/// Mean over H×W; the reduction sorts values first so it is exactly invariant to
/// any spatial permutation of the input.
Var global_avg_pool(const Var& x);

/// Scalar Σ x.
Var sum(const Var& x);
/// Scalar Σ x ⊙ weights.
Var weighted_sum(const Var& x, const Tensor& weights);
/// Sum of single-element Vars.
Var add_scalars(std::span<const Var> terms);

}  // namespace seffsal::ops
