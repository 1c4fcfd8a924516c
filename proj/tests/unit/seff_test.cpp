#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "seffsal/cbr_fusion.hpp"
#include "seffsal/seff.hpp"
#include "support/gradcheck.hpp"

using namespace seffsal;
using seffsal::testing::check_gradients;
using seffsal::testing::random_tensor;
using seffsal::testing::random_weights;

namespace {

void zero(Var& v) { v.mutable_value().fill(0.0); }

void zero_bottleneck(ChannelBottleneck& b) {
  zero(b.squeeze().weight());
  zero(b.norm().gamma());
  zero(b.norm().beta());
  zero(b.expand().weight());
  zero(b.expand().bias());
}

// Reverses the order of spatial positions in every plane.
Tensor reverse_spatial(const Tensor& t) {
  Tensor r = t;
  const auto& s = t.shape();
  const std::size_t p = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (std::size_t i = 0; i < p; ++i) r.plane(n, c)[i] = t.plane(n, c)[p - 1 - i];
    }
  }
  return r;
}

struct Inputs {
  Var f1, f2, s;
};

Inputs make_inputs(Shape feat, std::uint64_t seed, bool grad = false) {
  return {Var(random_tensor(feat, seed), grad), Var(random_tensor(feat, seed + 1), grad),
          Var(random_tensor({feat.n, 4, feat.h, feat.w}, seed + 2, 0.0, 1.0), grad)};
}

}  // namespace

TEST(Seff, OutputShape) {
  SeffBlock block({64, 4}, 1);
  auto in = make_inputs({2, 64, 22, 22}, 3);
  EXPECT_EQ(block.fuse(in.f1, in.f2, in.s, Mode::train).shape(), (Shape{2, 64, 22, 22}));
}

TEST(Seff, ReductionMustDivideChannels) {
  EXPECT_THROW(SeffBlock({10, 4}, 1), ContractError);
  EXPECT_NO_THROW(SeffBlock({12, 4}, 1));
}

TEST(Seff, ShapeMismatchAndNonFiniteInputsAreRejected) {
  SeffBlock block({8, 4}, 1);
  auto in = make_inputs({1, 8, 4, 4}, 3);
  Var wrong(Tensor({1, 8, 4, 5}, 0.0));
  EXPECT_THROW((void)block.fuse(in.f1, wrong, in.s, Mode::eval), ContractError);
  Var wrong_guidance(Tensor({1, 4, 2, 2}, 0.0));
  EXPECT_THROW((void)block.fuse(in.f1, in.f2, wrong_guidance, Mode::eval), ContractError);
  Tensor bad = in.f1.value();
  bad[5] = std::nan("");
  EXPECT_THROW((void)block.fuse(Var(bad), in.f2, in.s, Mode::eval), NumericError);
}

TEST(Seff, ZeroedGateAveragesRefinedFeatures) {
  SeffBlock block({16, 4}, 2);
  zero_bottleneck(block.local_context());
  zero_bottleneck(block.global_context());
  auto in = make_inputs({1, 16, 6, 6}, 5);
  SeffTrace t = block.fuse_traced(in.f1, in.f2, in.s, Mode::train);
  for (double w : t.gate.value().values()) EXPECT_EQ(w, 0.5);
  const Tensor& a = t.refined1.value();
  const Tensor& b = t.refined2.value();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_NEAR(t.output.value()[i], 0.5 * a[i] + 0.5 * b[i], 1e-12);
  }
}

TEST(Seff, SaturatedGateSelectsFirstRefinedFeature) {
  SeffBlock block({16, 4}, 2);
  zero_bottleneck(block.local_context());
  zero_bottleneck(block.global_context());
  block.local_context().expand().bias().mutable_value().fill(20.0);
  block.global_context().expand().bias().mutable_value().fill(20.0);
  auto in = make_inputs({1, 16, 6, 6}, 7);
  SeffTrace t = block.fuse_traced(in.f1, in.f2, in.s, Mode::train);
  EXPECT_LT(max_abs_diff(t.output.value(), t.refined1.value()), 1e-6);
}

TEST(Seff, GateIsConvex) {
  SeffBlock block({8, 4}, 3);
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    auto in = make_inputs({2, 8, 5, 5}, seed);
    SeffTrace t = block.fuse_traced(in.f1, in.f2, in.s, Mode::train);
    for (std::size_t i = 0; i < t.gate.value().numel(); ++i) {
      const double w = t.gate.value()[i];
      ASSERT_GT(w, 0.0);
      ASSERT_LT(w, 1.0);
      const double a = t.refined1.value()[i];
      const double b = t.refined2.value()[i];
      const double o = t.output.value()[i];
      ASSERT_GE(o, std::min(a, b) - 1e-15);
      ASSERT_LE(o, std::max(a, b) + 1e-15);
    }
  }
}

TEST(Seff, Deterministic) {
  SeffBlock a({8, 4}, 4), b({8, 4}, 4);
  auto in = make_inputs({1, 8, 4, 4}, 21);
  EXPECT_EQ(a.fuse(in.f1, in.f2, in.s, Mode::train).value(),
            b.fuse(in.f1, in.f2, in.s, Mode::train).value());
}

TEST(Seff, TiedRefinePathsMakeGateIrrelevant) {
  SeffBlock block({8, 4}, 6);
  for (int layer = 0; layer < 2; ++layer) {
    auto& src = block.refine(1, layer);
    auto& dst = block.refine(2, layer);
    dst.conv().weight().mutable_value() = src.conv().weight().value();
    if (src.conv().bias().defined()) dst.conv().bias().mutable_value() = src.conv().bias().value();
    dst.norm().gamma().mutable_value() = src.norm().gamma().value();
    dst.norm().beta().mutable_value() = src.norm().beta().value();
  }
  auto in = make_inputs({1, 8, 5, 5}, 31);
  SeffTrace t = block.fuse_traced(in.f1, in.f1, in.s, Mode::train);
  EXPECT_EQ(t.output.value(), t.refined1.value());
}

TEST(Lcc, ShapeAndSpatialEquivariance) {
  SeffBlock block({64, 4}, 8);
  Tensor u = random_tensor({1, 64, 8, 8}, 41);
  Tensor out = block.lcc(Var(u), Mode::eval).value();
  EXPECT_EQ(out.shape(), (Shape{1, 64, 8, 8}));
  Tensor permuted = block.lcc(Var(reverse_spatial(u)), Mode::eval).value();
  EXPECT_EQ(permuted, reverse_spatial(out));
  // Batch statistics in training mode are order dependent only through summation order.
  Tensor tr = block.lcc(Var(u), Mode::train).value();
  Tensor trp = block.lcc(Var(reverse_spatial(u)), Mode::train).value();
  EXPECT_LT(max_abs_diff(trp, reverse_spatial(tr)), 1e-12);
}

TEST(Lcc, ZeroWeightsGiveBiasMap) {
  SeffBlock block({8, 4}, 9);
  zero_bottleneck(block.local_context());
  Tensor bias({1, 8, 1, 1});
  for (int c = 0; c < 8; ++c) bias[c] = 0.1 * c - 0.3;
  block.local_context().expand().bias().mutable_value() = bias;
  Tensor out = block.lcc(Var(random_tensor({1, 8, 3, 3}, 1)), Mode::train).value();
  for (int c = 0; c < 8; ++c) {
    for (int i = 0; i < 9; ++i) EXPECT_EQ(out.plane(0, c)[i], bias[c]);
  }
}

TEST(Lcc, ChannelMismatch) {
  SeffBlock block({8, 4}, 9);
  EXPECT_THROW((void)block.lcc(Var(Tensor({1, 4, 3, 3})), Mode::eval), ContractError);
  EXPECT_THROW((void)block.gcc(Var(Tensor({1, 4, 3, 3})), Mode::eval), ContractError);
}

TEST(Gcc, ShapeAndPermutationInvariance) {
  SeffBlock block({64, 4}, 10);
  Tensor u = random_tensor({1, 64, 8, 8}, 51);
  Tensor out = block.gcc(Var(u), Mode::eval).value();
  EXPECT_EQ(out.shape(), (Shape{1, 64, 1, 1}));
  EXPECT_EQ(block.gcc(Var(reverse_spatial(u)), Mode::eval).value(), out);
  Tensor two = random_tensor({2, 64, 8, 8}, 52);
  EXPECT_EQ(block.gcc(Var(reverse_spatial(two)), Mode::train).value(),
            block.gcc(Var(two), Mode::train).value());
}

TEST(Gcc, ConstantInputPoolsToChannelVector) {
  SeffBlock block({8, 4}, 11);
  Tensor vec = random_tensor({1, 8, 1, 1}, 61);
  Tensor u({1, 8, 5, 5});
  for (int c = 0; c < 8; ++c) std::fill(u.plane(0, c), u.plane(0, c) + 25, vec[c]);
  // The pooled mean of 25 equal values may differ from the value in the last bit.
  EXPECT_LT(max_abs_diff(block.gcc(Var(u), Mode::eval).value(),
                         block.global_context().forward(Var(vec), Mode::eval).value()),
            1e-14);
}

TEST(SeffGradient, AllInputsAndParameters) {
  SeffBlock block({8, 4}, 12);
  // The GCC batch norm normalizes across the batch alone: one sample yields exactly
  // beta (a ReLU kink), two yield ±1 with vanishing gradients. Four is well conditioned.
  auto in = make_inputs({4, 8, 4, 4}, 71, true);
  Tensor w = random_weights({4, 8, 4, 4}, 72);
  auto loss = [&] { return ops::weighted_sum(block.fuse(in.f1, in.f2, in.s, Mode::train), w); };
  auto plain = [&] { return ops::sum(block.fuse(in.f1, in.f2, in.s, Mode::train)); };
  std::vector<std::pair<std::string, Var>> vars{{"f1", in.f1}, {"f2", in.f2}, {"s", in.s}};
  for (auto& p : block.named_parameters("seff.")) vars.push_back(p);
  auto r = check_gradients(loss, vars, 24, 1e-5, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst << " (" << r.checked << " checked)";
  auto rs = check_gradients(plain, vars, 24, 1e-5, 1e-6);
  EXPECT_LT(rs.max_rel_error, 1e-4) << rs.worst << " (" << rs.checked << " checked)";
}

TEST(CbrFusion, ParameterMatchedWithinFivePercent) {
  for (int c : {8, 16, 32, 64, 128}) {
    SeffBlock seff({c, 4}, 1);
    CbrFusion cbr = CbrFusion::matched(c, 4, 1);
    const double ps = static_cast<double>(seff.parameter_count());
    const double pc = static_cast<double>(cbr.parameter_count());
    EXPECT_LT(std::abs(pc - ps) / ps, 0.05) << "channels " << c;
  }
}

TEST(CbrFusion, IgnoresGuidance) {
  CbrFusion cbr = CbrFusion::matched(8, 4, 3);
  auto in = make_inputs({1, 8, 4, 4}, 81);
  Var other(random_tensor({1, 4, 4, 4}, 99));
  EXPECT_EQ(cbr.fuse(in.f1, in.f2, in.s, Mode::eval).value(),
            cbr.fuse(in.f1, in.f2, other, Mode::eval).value());
  EXPECT_EQ(cbr.fuse(in.f1, in.f2, in.s, Mode::eval).shape(), (Shape{1, 8, 4, 4}));
}
