#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "seffsal/data_io.hpp"
#include "seffsal/losses.hpp"

namespace seffsal {

struct TrainConfig {
  int batch_size = 10;
  double lr0 = 5e-5;
  double decay_factor = 5.0;
  int decay_every = 40;
  int epochs = 100;
  /// Stop after this many optimizer steps; 0 runs every epoch.
  int max_iterations = 0;
  /// Checkpoint period in epochs; 0 writes only the final checkpoint.
  int checkpoint_every = 10;
  std::uint64_t seed = 0;
  /// Random horizontal flip per batch.
  bool flip = false;
  ApiWeights loss{};

  void validate() const;
};

/// lr0 / decay_factor^floor(epoch / decay_every).
double lr_schedule(int epoch, const TrainConfig& cfg);

/// Adam without weight decay.
class Adam {
 public:
  struct Slot {
    Tensor m;
    Tensor v;
  };

  explicit Adam(std::vector<std::pair<std::string, Var>> params, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  /// One update from the gradients currently held by the parameters.
  void step(double lr);
  void zero_grad();

  [[nodiscard]] long long steps() const { return t_; }
  [[nodiscard]] const std::vector<std::pair<std::string, Var>>& params() const { return params_; }
  [[nodiscard]] std::map<std::string, Slot> state() const;
  void load_state(long long steps, const std::map<std::string, Slot>& state);

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_;
  long long t_ = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Raised for unreadable checkpoints and for checkpoints built for another architecture.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  NetConfig net{};
  int epoch = 0;
  long long iteration = 0;
  /// Resolved run configuration text, kept for provenance.
  std::string config_echo;
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> buffers;
  long long optimizer_steps = 0;
  std::map<std::string, Adam::Slot> optimizer;
};

Checkpoint capture(MsNet& net, const Adam* optimizer, int epoch, long long iteration,
                   const std::string& config_echo = {});

/// Binary container: "SEFFCKPT", u32 version, u64 header length, JSON header, then the
/// raw doubles (byte order recorded in the header) of every tensor listed there.
void save_checkpoint(const Checkpoint& ckpt, const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path);

/// Copies parameters and buffers into `net` (and optimizer state when given). Throws
/// CheckpointError when the checkpoint was written for a different architecture.
void restore(MsNet& net, const Checkpoint& ckpt, Adam* optimizer = nullptr);

/// Builds the network recorded in the checkpoint, after checking it against `expected`.
MsNet load_network(const fs::path& path, const NetConfig& expected);

struct TrainLogRow {
  int epoch = 0;
  long long iteration = 0;
  double total = 0.0;
  /// One value per saliency map in bundle order (S11..S34 of the active scales).
  std::vector<double> heads;
  double lr = 0.0;
};

struct TrainOptions {
  /// When set, receives loss.csv and checkpoints/.
  fs::path run_dir;
  std::string config_echo;
  std::function<void(const TrainLogRow&)> on_step;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::vector<std::string> head_names;
  int epochs_run = 0;
  long long iterations = 0;
  std::vector<fs::path> checkpoints;
};

/// Adam on the summed head losses with the step schedule. Batches follow a seeded
/// per-epoch shuffle. A non-finite head loss aborts with NumericError naming the head.
TrainResult train(MsNet& net, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

void write_loss_csv(const TrainResult& result, const fs::path& path);

/// Output-head map of `net` for one RGB/depth pair, resized to the RGB size. [1,1,H,W].
Tensor predict(const MsNet& net, const Tensor& rgb, const Tensor& depth);

/// Reads the pair, predicts, and writes an 8-bit PNG to `out_path`.
void infer(const MsNet& net, const fs::path& rgb_path, const fs::path& depth_path,
           const fs::path& out_path);

/// Keeps freed activation buffers in the heap instead of returning them to the kernel.
/// Large tensors otherwise cost a fresh round of page faults on every step. Process-wide;
/// a no-op outside glibc.
void retain_freed_memory();

}  // namespace seffsal
