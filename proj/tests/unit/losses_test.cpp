#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <vector>

#include "seffsal/losses.hpp"
#include "support/gradcheck.hpp"

namespace {
#include "oracles/oracle_cases.inc"
}

using namespace seffsal;
using seffsal::testing::check_gradients;
using seffsal::testing::random_tensor;

namespace {

const std::array<int, 3> kKernels{3, 15, 31};

Tensor half_plane(int n = 8) {
  Tensor t({1, 1, n, n});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n / 2; ++x) t.at(0, 0, y, x) = 1.0;
  return t;
}

Tensor square_mask(int n, int lo, int hi) {
  Tensor t({1, 1, n, n});
  for (int y = lo; y < hi; ++y)
    for (int x = lo; x < hi; ++x) t.at(0, 0, y, x) = 1.0;
  return t;
}

// Maps of assorted sizes for every head, filled by `fill(scale, layer, size)`.
template <class F>
SaliencyBundle make_bundle(F fill) {
  SaliencyBundle b;
  const int sizes[3][4] = {{16, 8, 4, 2}, {8, 4, 2, 1}, {4, 2, 1, 1}};
  for (int i = 1; i <= 3; ++i)
    for (int j = 1; j <= 4; ++j) b.set(i, j, fill(i, j, sizes[i - 1][j - 1]));
  return b;
}

}  // namespace

TEST(AdaptiveWeight, ConstantMasksGiveUnitWeight) {
  for (double v : {0.0, 1.0}) {
    Tensor w = adaptive_weight(Tensor({2, 1, 9, 7}, v), kKernels, 0.5);
    for (double x : w.values()) EXPECT_EQ(x, 1.0);
  }
}

TEST(AdaptiveWeight, HalfPlaneMatchesPoolingOracle) {
  Tensor w = adaptive_weight(half_plane(), kKernels, 0.5);
  for (int i = 0; i < 64; ++i) EXPECT_NEAR(w[i], kHalfPlaneOmega[i], 1e-12) << i;
  for (int y = 0; y < 8; ++y) {
    EXPECT_GT(w.at(0, 0, y, 3), w.at(0, 0, y, 0));
    EXPECT_GT(w.at(0, 0, y, 4), w.at(0, 0, y, 7));
    EXPECT_GT(w.at(0, 0, y, 3), w.at(0, 0, y, 1));
  }
}

TEST(AdaptiveWeight, BoundedBelowByOne) {
  Tensor gt = random_tensor({2, 1, 12, 10}, 3, 0.0, 1.0);
  const Tensor omega = adaptive_weight(gt, kKernels, 0.5);
  for (double x : omega.values()) EXPECT_GE(x, 1.0);
  Tensor big = square_mask(80, 0, 20);
  Tensor w = adaptive_weight(big, kKernels, 0.5);
  // Further than 15 pixels from the only edge, every box sees a constant mask.
  EXPECT_EQ(w.at(0, 0, 70, 70), 1.0);
}

TEST(AdaptiveWeight, RejectsOutOfRangeMasks) {
  Tensor gt({1, 1, 4, 4}, 0.0);
  gt[3] = 1.5;
  EXPECT_THROW(adaptive_weight(gt, kKernels, 0.5), ContractError);
}

TEST(ApiLoss, ClosedFormAtHalf) {
  Tensor pred({1, 1, 6, 6}, 0.5), gt({1, 1, 6, 6}, 1.0), w({1, 1, 6, 6}, 1.0);
  ApiTerms t = api_terms(pred, gt, w);
  EXPECT_NEAR(t.bce, std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(t.l1, 0.5);
  EXPECT_NEAR(t.iou, 0.5, 1e-8);
  EXPECT_NEAR(combine_api(t, ApiWeights{}), 1.0931, 5e-5);
  EXPECT_NEAR(combine_api(t, ApiWeights{}), std::log(2.0) + 0.25 + 0.15, 1e-8);
  ApiLoss l = api_loss(Var(pred), gt, ApiWeights{});
  EXPECT_NEAR(l.value.value()[0], 1.0931, 5e-5);
}

TEST(ApiLoss, UnitSubLossesCombineToOnePointEight) {
  EXPECT_EQ(combine_api({1.0, 1.0, 1.0}, ApiWeights{}), 1.8);
}

TEST(ApiLoss, PerfectPrediction) {
  Tensor gt = square_mask(8, 2, 6);
  ApiLoss l = api_loss(Var(gt), gt, ApiWeights{});
  EXPECT_LE(l.terms.bce, 1e-6);
  EXPECT_LT(l.terms.iou, 1e-8);
  EXPECT_EQ(l.terms.l1, 0.0);
  EXPECT_LE(l.value.value()[0], 1e-5);
}

TEST(ApiLoss, RatioTermsIgnoreWeightScale) {
  Tensor pred = random_tensor({2, 1, 8, 8}, 5, 0.05, 0.95);
  Tensor gt = square_mask(8, 1, 5);
  std::array<Tensor, 2> g2{gt, half_plane()};
  Tensor gts = stack_batch(g2);
  Tensor w = adaptive_weight(gts, kKernels, 0.5);
  Tensor w3 = w;
  for (auto& v : w3.values()) v *= 3.7;
  ApiTerms a = api_terms(pred, gts, w), b = api_terms(pred, gts, w3);
  EXPECT_NEAR(a.bce, b.bce, 1e-14);
  EXPECT_NEAR(a.l1, b.l1, 1e-14);
}

TEST(ApiLoss, TermsAreNonNegative) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Tensor pred = random_tensor({1, 1, 8, 8}, seed, 0.0, 1.0);
    Tensor gt = random_tensor({1, 1, 8, 8}, seed + 100, 0.0, 1.0);
    for (auto& v : gt.values()) v = v > 0.5 ? 1.0 : 0.0;
    ApiTerms t = api_terms(pred, gt, adaptive_weight(gt, kKernels, 0.5));
    EXPECT_GE(t.bce, 0.0);
    EXPECT_GE(t.iou, 0.0);
    EXPECT_GE(t.l1, 0.0);
  }
}

TEST(ApiLoss, EmptyMaskIouIsOne) {
  // 1 - 0 / (0 + eps): the IoU term cannot be reduced on an empty mask.
  Tensor gt({1, 1, 4, 4}, 0.0);
  Tensor pred({1, 1, 4, 4}, 1e-9);
  ApiTerms t = api_terms(pred, gt, adaptive_weight(gt, kKernels, 0.5));
  EXPECT_NEAR(t.iou, 1.0, 1e-12);
}

TEST(ApiLoss, ShapeMismatch) {
  EXPECT_THROW(api_terms(Tensor({1, 1, 4, 4}), Tensor({1, 1, 4, 5}), Tensor({1, 1, 4, 4})),
               ContractError);
}

TEST(ResizeMask, AreaThenThreshold) {
  Tensor gt = square_mask(8, 0, 4);
  Tensor r = resize_mask(gt, {2, 2});
  EXPECT_EQ(r[0], 1.0);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[3], 0.0);
  Tensor a = resize_area(gt, {1, 1});
  EXPECT_DOUBLE_EQ(a[0], 0.25);
  EXPECT_EQ(resize_mask(gt, {1, 1})[0], 0.0);
  Tensor b = resize_area(gt, {3, 3});
  double s = 0.0;
  for (double v : b.values()) s += v;
  EXPECT_NEAR(s / 9.0, 0.25, 1e-12);
}

TEST(TotalLoss, SumsEveryHead) {
  Tensor gt = square_mask(32, 4, 28);
  SaliencyBundle b = make_bundle([](int i, int j, int n) {
    return Var(random_tensor({1, 1, n, n}, 10 * i + j, 0.02, 0.98));
  });
  LossBreakdown lb = total_loss(b, gt);
  ASSERT_EQ(lb.heads.size(), 12u);
  double sum = 0.0;
  for (auto [i, j] : b.entries()) {
    const Tensor& m = b.at(i, j).value();
    sum += api_loss(b.at(i, j), resize_mask(gt, m.spatial()), ApiWeights{}).value.value()[0];
  }
  EXPECT_NEAR(lb.total.value()[0], sum, 1e-9);
}

TEST(TotalLoss, PerfectHeads) {
  Tensor gt = square_mask(32, 4, 28);
  SaliencyBundle b = make_bundle(
      [&](int, int, int n) { return Var(resize_mask(gt, {n, n})); });
  LossBreakdown lb = total_loss(b, gt);
  EXPECT_LE(lb.total.value()[0], 1.2e-4);
  for (const auto& h : lb.heads) EXPECT_LE(h.value, 1e-5);
}

TEST(TotalLoss, BatchMismatch) {
  Tensor gt = square_mask(32, 4, 28);
  SaliencyBundle b = make_bundle(
      [](int, int, int n) { return Var(Tensor({2, 1, n, n}, 0.5)); });
  EXPECT_THROW(total_loss(b, gt), ContractError);
}

TEST(TotalLossGradient, EveryHeadOnEightByEightMaps) {
  Tensor gt = stack_batch(std::array<Tensor, 2>{square_mask(16, 3, 12), half_plane(16)});
  SaliencyBundle b;
  std::vector<std::pair<std::string, Var>> vars;
  for (int i = 1; i <= 3; ++i) {
    for (int j = 1; j <= 4; ++j) {
      Var v(random_tensor({2, 1, 8, 8}, 100 + 10 * i + j, 0.05, 0.95), true);
      b.set(i, j, v);
      vars.emplace_back("S" + std::to_string(i) + std::to_string(j), v);
    }
  }
  auto loss = [&] { return total_loss(b, gt).total; };
  auto terms = [&] {
    std::vector<double> t;
    for (const auto& h : total_loss(b, gt).heads) t.push_back(h.value);
    return t;
  };
  auto r = check_gradients(loss, terms, vars, 64, 1e-6, 1e-8);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_EQ(r.checked, 12 * 64);
}
