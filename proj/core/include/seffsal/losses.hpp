#pragma once

#include <span>
#include <vector>

#include "seffsal/msnet.hpp"

namespace seffsal {

/// Adaptive pixel intensity loss settings.
struct ApiWeights {
  double lambda_bce = 1.0;
  double lambda_iou = 0.5;
  double lambda_l1 = 0.3;
  std::vector<int> pooling_kernels{3, 15, 31};
  double omega_mu = 0.5;

  void validate() const;
};

/// Clamp for log arguments and the IoU denominator.
inline constexpr double kLossEps = 1e-7;

/// ω = 1 + μ Σ_k |avgpool_k(gt) − gt|, where avgpool_k is a same-size k×k box mean with
/// replicated borders. gt is [N,1,H,W] with values in [0, 1].
Tensor adaptive_weight(const Tensor& gt, std::span<const int> kernels, double mu);

/// Batch-mean values of the three weighted sub-losses.
struct ApiTerms {
  double bce = 0.0;
  double iou = 0.0;
  double l1 = 0.0;
};

/// Per-sample weighted BCE, IoU and L1 of pred against gt under ω, averaged over the batch.
ApiTerms api_terms(const Tensor& pred, const Tensor& gt, const Tensor& omega);
double a_bce(const Tensor& pred, const Tensor& gt, const Tensor& omega);
double a_iou(const Tensor& pred, const Tensor& gt, const Tensor& omega);
double a_l1(const Tensor& pred, const Tensor& gt, const Tensor& omega);

/// λ1·bce + λ2·iou + λ3·l1.
double combine_api(const ApiTerms& terms, const ApiWeights& weights);

struct ApiLoss {
  Var value;  // scalar, differentiable w.r.t. pred
  ApiTerms terms;
};

/// Differentiable adaptive pixel intensity loss of one prediction map.
ApiLoss api_loss(const Var& pred, const Tensor& gt, const ApiWeights& weights);

/// Area-average resampling of a full-resolution mask to `size`, re-binarized at 0.5.
Tensor resize_mask(const Tensor& gt, Size2 size);

/// Area-average resampling (no thresholding).
Tensor resize_area(const Tensor& x, Size2 size);

struct HeadLoss {
  int scale = 0;
  int layer = 0;
  double value = 0.0;
  ApiTerms terms;
};

struct LossBreakdown {
  Var total;
  std::vector<HeadLoss> heads;
};

/// Σ over every map in the bundle of api_loss(S_ij, resize_mask(gt)).
LossBreakdown total_loss(const SaliencyBundle& bundle, const Tensor& gt,
                         const ApiWeights& weights = {});

}  // namespace seffsal
