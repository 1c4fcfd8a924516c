#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "seffsal/msnet.hpp"
#include "support/fixtures.hpp"

using namespace seffsal;
using namespace seffsal::testing;

namespace {

const TraceEvent* find_write(const std::vector<TraceEvent>& trace, const std::string& name) {
  for (const auto& ev : trace) {
    if (std::find(ev.writes.begin(), ev.writes.end(), name) != ev.writes.end()) return &ev;
  }
  return nullptr;
}

bool reads(const TraceEvent& ev, const std::string& name) {
  return std::find(ev.reads.begin(), ev.reads.end(), name) != ev.reads.end();
}

SaliencyBundle constant_bundle(int first_scale, double v, int n = 1) {
  SaliencyBundle b;
  for (int i = first_scale; i <= 3; ++i) {
    for (int j = 1; j <= 4; ++j) b.set(i, j, Var(Tensor({n, 1, 12 - 2 * j, 12 - 2 * j}, v)));
  }
  return b;
}

}  // namespace

TEST(Guidance, ScaleThreeIsZero) {
  GuidanceMap g = build_guidance(SaliencyBundle{}, 3, {11, 11}, 2, nullptr);
  EXPECT_EQ(g.tensor.shape(), (Shape{2, 4, 11, 11}));
  EXPECT_EQ(g.provenance, GuidanceMap::Provenance::zeros);
  for (double v : g.tensor.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Guidance, ScaleTwoResizesScaleThreeMaps) {
  GuidanceMap g = build_guidance(constant_bundle(3, 0.5), 2, {9, 7}, 1, nullptr);
  EXPECT_EQ(g.tensor.shape(), (Shape{1, 4, 9, 7}));
  for (double v : g.tensor.value().values()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Guidance, ScaleOneProjectsEightToFour) {
  Conv2d proj({.in = 8, .out = 4, .kernel = 1}, 3);
  GuidanceMap g = build_guidance(constant_bundle(2, 0.25), 1, {5, 5}, 1, &proj);
  EXPECT_EQ(g.tensor.shape(), (Shape{1, 4, 5, 5}));
  EXPECT_EQ(g.provenance, GuidanceMap::Provenance::scale2_3);
  EXPECT_THROW(build_guidance(constant_bundle(2, 0.25), 1, {5, 5}, 1, nullptr), ContractError);
}

TEST(Guidance, MissingMapsAreSequencingErrors) {
  EXPECT_THROW(build_guidance(SaliencyBundle{}, 2, {4, 4}, 1, nullptr), SequencingError);
  Conv2d proj({.in = 8, .out = 4, .kernel = 1}, 3);
  EXPECT_THROW(build_guidance(constant_bundle(3, 0.5), 1, {4, 4}, 1, &proj), SequencingError);
  EXPECT_THROW((void)SaliencyBundle{}.at(1, 1), SequencingError);
}

TEST(CrossScale, ResizesCoarseAndRejectsScaleThree) {
  SeffBlock block({8, 4}, 1);
  Var fine(random_tensor({1, 8, 44, 44}, 1));
  Var coarse(random_tensor({1, 8, 22, 22}, 2));
  GuidanceMap g{Var(random_tensor({1, 4, 44, 44}, 3, 0.0, 1.0)),
                GuidanceMap::Provenance::scale3};
  EXPECT_EQ(fuse_cross_scale(block, 2, fine, coarse, g, Mode::eval).shape(),
            (Shape{1, 8, 44, 44}));
  EXPECT_THROW((void)fuse_cross_scale(block, 3, fine, coarse, g, Mode::eval), ContractError);
}

TEST(CrossScale, SaturatedGateFollowsFineBranch) {
  SeffBlock block({8, 4}, 2);
  for (auto* b : {&block.local_context(), &block.global_context()}) {
    for (auto& [name, p] : b->named_parameters()) p.mutable_value().fill(0.0);
    b->expand().bias().mutable_value().fill(20.0);
  }
  Var fine(random_tensor({1, 8, 11, 11}, 1));
  Var coarse(random_tensor({1, 8, 6, 6}, 2));
  GuidanceMap g{Var(random_tensor({1, 4, 11, 11}, 3, 0.0, 1.0)),
                GuidanceMap::Provenance::scale2_3};
  Var out = fuse_cross_scale(block, 1, fine, coarse, g, Mode::eval);
  Var refined = block.refine_first(fine, g.tensor, Mode::eval);
  EXPECT_LT(max_abs_diff(out.value(), refined.value()), 1e-6);
}

TEST(Heads, SigmoidOfOneByOneConv) {
  Conv2d head({.in = 64, .out = 1, .kernel = 1}, 1);
  Var f(random_tensor({2, 64, 44, 44}, 1));
  EXPECT_EQ(predict_head(f, head).shape(), (Shape{2, 1, 44, 44}));
  head.weight().mutable_value().fill(0.0);
  const Tensor half = predict_head(f, head).value();
  for (double v : half.values()) ASSERT_EQ(v, 0.5);
  head.bias().mutable_value().fill(-40.0);
  const Tensor low = predict_head(f, head).value();
  for (double v : low.values()) ASSERT_LT(v, 1e-12);
  Conv2d wide({.in = 64, .out = 2, .kernel = 1}, 1);
  EXPECT_THROW((void)predict_head(f, wide), ContractError);
}

TEST(MsNet, FullVariantResolutions) {
  NetConfig cfg = micro_config();
  cfg.input_size = 352;
  MsNet net(cfg, 1);
  ForwardResult r = net.forward(random_inputs(cfg, 1, 3), Mode::eval);
  EXPECT_EQ(r.bundle.count(), 12);
  const int expect[3][4] = {{88, 44, 22, 11}, {44, 22, 11, 6}, {22, 11, 6, 3}};
  for (int i = 1; i <= 3; ++i) {
    for (int j = 1; j <= 4; ++j) {
      const Shape& s = r.bundle.at(i, j).shape();
      EXPECT_EQ(s.h, expect[i - 1][j - 1]) << "S" << i << j;
      EXPECT_EQ(s.w, expect[i - 1][j - 1]);
      EXPECT_EQ(s.c, 1);
    }
  }
}

TEST(MsNet, MapsStrictlyInsideUnitInterval) {
  NetConfig cfg = micro_config();
  MsNet net(cfg, 2);
  NetInputs in = random_inputs(cfg, 2, 5);
  for (auto& t : in.rgb) for (auto& v : t.values()) v *= 1e3;
  ForwardResult r = net.forward(in, Mode::train);
  for (auto [i, j] : r.bundle.entries()) {
    for (double v : r.bundle.at(i, j).value().values()) {
      ASSERT_GT(v, 0.0);
      ASSERT_LT(v, 1.0);
    }
  }
}

TEST(MsNet, ScaleThreeGuidanceIsZero) {
  NetConfig cfg = micro_config();
  MsNet net(cfg, 3);
  ForwardResult r = net.forward(random_inputs(cfg, 1, 7), Mode::eval);
  for (double v : r.features.at("G3.rgbd").value().values()) ASSERT_EQ(v, 0.0);
  EXPECT_EQ(r.features.at("G2.rgbd").shape().c, 4);
  EXPECT_EQ(r.features.at("G1.rgbd").shape().c, 4);
}

TEST(MsNet, TraceChainsCrossScaleFusion) {
  NetConfig cfg = micro_config();
  MsNet net(cfg, 4);
  ForwardResult r = net.forward(random_inputs(cfg, 1, 9), Mode::eval);
  for (int j = 1; j <= 4; ++j) {
    const std::string s = std::to_string(j);
    const TraceEvent* f1 = find_write(r.trace, "F1" + s + "^CSF");
    ASSERT_NE(f1, nullptr);
    EXPECT_TRUE(reads(*f1, "F2" + s + "^CSF"));
    EXPECT_FALSE(reads(*f1, "F2" + s + "^CPR"));
    EXPECT_TRUE(reads(*f1, "F1" + s + "^CPR"));
    const TraceEvent* f2 = find_write(r.trace, "F2" + s + "^CSF");
    ASSERT_NE(f2, nullptr);
    EXPECT_TRUE(reads(*f2, "F3" + s + "^CPR"));
    EXPECT_EQ(find_write(r.trace, "F3" + s + "^CSF"), nullptr);
  }
}

TEST(MsNet, TraceIsAcyclicAndOrderedThreeTwoOne) {
  NetConfig cfg = micro_config();
  MsNet net(cfg, 5);
  ForwardResult r = net.forward(random_inputs(cfg, 1, 11), Mode::eval);
  std::set<std::string> written = {"I1.rgb", "I1.depth", "I2.rgb", "I2.depth", "I3.rgb",
                                   "I3.depth"};
  int last_scale = 4;
  for (const auto& ev : r.trace) {
    for (const auto& name : ev.reads) {
      EXPECT_TRUE(written.count(name)) << ev.op << " reads " << name << " before it is written";
    }
    for (const auto& name : ev.writes) {
      EXPECT_TRUE(written.insert(name).second) << name << " written twice";
      if (name.size() > 1 && (name[0] == 'F' || name[0] == 'S')) {
        const int scale = name[1] - '0';
        EXPECT_LE(scale, last_scale);
        last_scale = scale;
      }
    }
  }
}

TEST(MsNet, ScaleOneVariantMatchesScaleThreeOfFull) {
  NetConfig cfg = micro_config();
  MsNet full = build_variant(cfg, Variant::full, 42);
  MsNet small = build_variant(cfg, Variant::scale1, 42);
  EXPECT_FALSE(small.config().is_active(1));
  NetInputs in = random_inputs(cfg, 2, 13);
  ForwardResult a = full.forward(in, Mode::eval);
  NetInputs only3;
  only3.rgb[2] = in.rgb[2];
  only3.depth[2] = in.depth[2];
  ForwardResult b = small.forward(only3, Mode::eval);
  EXPECT_EQ(b.bundle.count(), 4);
  for (int j = 1; j <= 4; ++j) EXPECT_EQ(a.bundle.at(3, j).value(), b.bundle.at(3, j).value());
  for (double v : b.features.at("G3.rgbd").value().values()) ASSERT_EQ(v, 0.0);
  auto pf = full.named_parameters();
  auto ps = small.named_parameters();
  std::map<std::string, Tensor> full_params;
  for (auto& [n, v] : pf) full_params[n] = v.value();
  for (auto& [n, v] : ps) EXPECT_EQ(full_params.at(n), v.value()) << n;
}

TEST(MsNet, ScaleTwoVariantNeverBuildsScaleOne) {
  NetConfig cfg = micro_config(Variant::scale2);
  MsNet net(cfg, 6);
  ForwardResult r = net.forward(random_inputs(cfg, 1, 15), Mode::eval);
  EXPECT_EQ(r.bundle.count(), 8);
  EXPECT_FALSE(r.bundle.has(1, 1));
  for (auto& [name, p] : net.named_parameters()) EXPECT_NE(name.rfind("scale1.", 0), 0u) << name;
  EXPECT_EQ(MsNet::output_head(Variant::scale2), (std::pair<int, int>{2, 1}));
  EXPECT_EQ(MsNet::output_head(Variant::full), (std::pair<int, int>{1, 1}));
}

TEST(MsNet, ParameterCountsIncreaseWithScales) {
  NetConfig cfg;
  MsNet s1 = build_variant(cfg, Variant::scale1, 1);
  MsNet s2 = build_variant(cfg, Variant::scale2, 1);
  MsNet full = build_variant(cfg, Variant::full, 1);
  EXPECT_LT(s1.parameter_count(), s2.parameter_count());
  EXPECT_LT(s2.parameter_count(), full.parameter_count());
}

TEST(MsNet, CbrVariantMatchesFusionParameters) {
  NetConfig cfg;
  MsNet full(cfg, 1);
  cfg.fusion = FusionKind::cbr;
  MsNet cbr(cfg, 1);
  const double a = static_cast<double>(full.fusion_parameter_count());
  const double b = static_cast<double>(cbr.fusion_parameter_count());
  EXPECT_LT(std::abs(a - b) / a, 0.05);
  const double ta = static_cast<double>(full.parameter_count());
  const double tb = static_cast<double>(cbr.parameter_count());
  EXPECT_LT(std::abs(ta - tb) / ta, 0.05);
  NetConfig micro = micro_config();
  micro.fusion = FusionKind::cbr;
  ForwardResult r = MsNet(micro, 1).forward(random_inputs(micro, 1, 1), Mode::eval);
  EXPECT_EQ(r.bundle.count(), 12);
}

TEST(MsNet, InputSizesAreChecked) {
  NetConfig cfg = micro_config();
  MsNet net(cfg, 7);
  NetInputs in = random_inputs(cfg, 1, 17);
  in.rgb[1] = Tensor({1, 3, 30, 30});
  EXPECT_THROW((void)net.forward(in, Mode::eval), ContractError);
  NetConfig bad = micro_config();
  bad.input_size = 60;
  EXPECT_THROW(MsNet(bad, 1), ConfigError);
  EXPECT_THROW(parse_variant("scale4"), ConfigError);
}

TEST(MsNet, DeterministicForward) {
  NetConfig cfg = micro_config();
  MsNet a(cfg, 8), b(cfg, 8);
  NetInputs in = random_inputs(cfg, 1, 19);
  EXPECT_EQ(a.forward(in, Mode::eval).bundle.at(1, 1).value(),
            b.forward(in, Mode::eval).bundle.at(1, 1).value());
}
