#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <limits>

#include "seffsal/metrics.hpp"
#include "seffsal/trainer.hpp"
#include "support/fixtures.hpp"

using namespace seffsal;
using namespace seffsal::testing;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TrainConfig quick_config() {
  TrainConfig c;
  c.batch_size = 2;
  c.epochs = 2;
  c.lr0 = 1e-3;
  c.checkpoint_every = 0;
  c.seed = 3;
  return c;
}

std::map<std::string, Tensor> snapshot(MsNet& net) {
  std::map<std::string, Tensor> out;
  for (auto& [n, v] : net.named_parameters()) out[n] = v.value();
  return out;
}

double batch_loss(const MsNet& net, const Batch& b) {
  NoGradGuard guard;
  return total_loss(net.forward(b.inputs, Mode::train).bundle, b.gt).total.value()[0];
}

}  // namespace

TEST(Schedule, StepDecay) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(lr_schedule(0, c), 5e-5);
  EXPECT_DOUBLE_EQ(lr_schedule(39, c), 5e-5);
  EXPECT_DOUBLE_EQ(lr_schedule(40, c), 1e-5);
  EXPECT_DOUBLE_EQ(lr_schedule(80, c), 2e-6);
  EXPECT_DOUBLE_EQ(lr_schedule(99, c), 2e-6);
}

TEST(TrainConfig, DefaultsAndValidation) {
  TrainConfig c;
  EXPECT_EQ(c.batch_size, 10);
  EXPECT_EQ(c.epochs, 100);
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.loss.pooling_kernels = {3, 4};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  SynthSet set = synth_generate(1, 4, {64, 64});
  MsNet net(micro_config(), 1);
  auto before = snapshot(net);
  TrainConfig c = quick_config();
  c.lr0 = 0.0;
  TrainResult r = train(net, set.samples, c);
  EXPECT_EQ(r.iterations, 4);
  auto after = snapshot(net);
  for (auto& [n, t] : before) EXPECT_EQ(after.at(n), t) << n;
}

TEST(Train, SingleSmallStepReducesLoss) {
  SynthSet set = synth_generate(2, 2, {64, 64});
  Batch b = collate(set.samples, {0, 1}, Variant::full, 64);
  for (double lr : {1e-6, 1e-7}) {
    MsNet net(micro_config(), 4);
    const double before = batch_loss(net, b);
    Adam adam(net.named_parameters());
    backward(total_loss(net.forward(b.inputs, Mode::train).bundle, b.gt).total);
    adam.step(lr);
    EXPECT_LT(batch_loss(net, b), before) << "lr " << lr;
  }
}

TEST(Train, SameSeedGivesIdenticalLogs) {
  SynthSet set = synth_generate(3, 4, {64, 64});
  auto run = [&] {
    MsNet net(micro_config(), 5);
    TrainConfig c = quick_config();
    c.flip = true;
    return train(net, set.samples, c);
  };
  TrainResult a = run(), b = run();
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].total, b.log[i].total);
    EXPECT_EQ(a.log[i].heads, b.log[i].heads);
  }
  EXPECT_EQ(a.head_names.size(), 12u);
  EXPECT_EQ(a.head_names.front(), "S11");
}

TEST(Train, WritesCheckpointsAndLossCsv) {
  auto dir = scratch_dir("train_outputs");
  SynthSet set = synth_generate(4, 2, {64, 64});
  MsNet net(micro_config(Variant::scale1), 6);
  TrainConfig c = quick_config();
  c.epochs = 3;
  c.checkpoint_every = 1;
  TrainOptions o;
  o.run_dir = dir;
  TrainResult r = train(net, set.samples, c, o);
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "final.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "epoch_0001.ckpt"));
  std::ifstream in(dir / "loss.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,iter,total,S31,S32,S33,S34,lr");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 3);
  EXPECT_EQ(r.epochs_run, 3);
}

TEST(Train, MaxIterationsStopsEarly) {
  SynthSet set = synth_generate(4, 4, {64, 64});
  MsNet net(micro_config(Variant::scale1), 6);
  TrainConfig c = quick_config();
  c.batch_size = 1;
  c.epochs = 10;
  c.max_iterations = 3;
  EXPECT_EQ(train(net, set.samples, c).iterations, 3);
}

TEST(Train, NonFiniteLossNamesHead) {
  SynthSet set = synth_generate(4, 2, {64, 64});
  MsNet net(micro_config(Variant::scale1), 6);
  net.head(3, 2).bias().mutable_value().fill(std::numeric_limits<double>::quiet_NaN());
  try {
    (void)train(net, set.samples, quick_config());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("S32"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  auto dir = scratch_dir("ckpt_rt");
  SynthSet set = synth_generate(5, 2, {64, 64});
  MsNet net(micro_config(), 7);
  TrainConfig c = quick_config();
  c.epochs = 1;
  (void)train(net, set.samples, c);
  Adam adam(net.named_parameters());
  save_checkpoint(capture(net, &adam, 1, 1, "echo"), dir / "a.ckpt");
  Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(loaded.version, kCheckpointVersion);
  EXPECT_EQ(loaded.config_echo, "echo");
  MsNet other(micro_config(), 99);
  restore(other, loaded);
  NetInputs in = random_inputs(micro_config(), 1, 3);
  ForwardResult a = net.forward(in, Mode::eval), b = other.forward(in, Mode::eval);
  for (auto [i, j] : a.bundle.entries()) {
    EXPECT_EQ(a.bundle.at(i, j).value(), b.bundle.at(i, j).value()) << i << j;
  }
  MsNet via = load_network(dir / "a.ckpt", micro_config());
  EXPECT_EQ(via.forward(in, Mode::eval).bundle.at(1, 1).value(), a.bundle.at(1, 1).value());
}

TEST(Checkpoint, VariantMismatchIsRejected) {
  auto dir = scratch_dir("ckpt_mismatch");
  MsNet small(micro_config(Variant::scale1), 1);
  save_checkpoint(capture(small, nullptr, 0, 0), dir / "s.ckpt");
  MsNet full(micro_config(), 1);
  EXPECT_THROW(restore(full, load_checkpoint(dir / "s.ckpt")), CheckpointError);
  EXPECT_THROW(load_network(dir / "s.ckpt", micro_config()), CheckpointError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
}

TEST(Infer, DeterministicPngReadableByEval) {
  auto dir = scratch_dir("infer");
  SynthSet set = synth_generate(6, 1, {72, 64});
  write_dataset(set, dir / "data");
  MsNet net(micro_config(), 8);
  const auto e = scan_dataset(dir / "data").front();
  infer(net, e.rgb, e.depth, dir / "p1" / (e.id + ".png"));
  infer(net, e.rgb, e.depth, dir / "p2" / (e.id + ".png"));
  EXPECT_EQ(slurp(dir / "p1" / (e.id + ".png")), slurp(dir / "p2" / (e.id + ".png")));
  Tensor p = read_gray(dir / "p1" / (e.id + ".png"));
  EXPECT_EQ(p.spatial(), (Size2{72, 64}));
  metrics::MetricReport r = metrics::evaluate_dataset(dir / "p1", dir / "data" / "GT");
  EXPECT_EQ(r.images.size(), 1u);
}
