#pragma once

#include <cstdint>

#include "seffsal/module.hpp"

namespace seffsal {

/// Number of saliency guidance channels injected into every fusion site.
inline constexpr int kGuidanceChannels = 4;

/// Two-input fusion site: combines f1 and f2 of shape [N,C,H,W] under an optional
/// [N,4,H,W] saliency guidance.
class FusionBlock : public Module {
 public:
  [[nodiscard]] virtual Var fuse(const Var& f1, const Var& f2, const Var& guidance,
                                 Mode mode) const = 0;
  [[nodiscard]] virtual int channels() const = 0;
};

struct SeffOptions {
  int channels = 0;
  int reduction = 4;
};

/// C -> C/r -> C bottleneck of 1×1 convolutions with normalization after the first.
class ChannelBottleneck : public Module {
 public:
  ChannelBottleneck() = default;
  ChannelBottleneck(int channels, int reduction, std::uint64_t seed);

  [[nodiscard]] Var forward(const Var& x, Mode mode) const;
  void visit(const std::string& prefix, const ParamVisitor& params,
             const BufferVisitor& buffers) override;

  Conv2d& squeeze() { return squeeze_; }
  BatchNorm2d& norm() { return norm_; }
  Conv2d& expand() { return expand_; }

 private:
  Conv2d squeeze_;
  BatchNorm2d norm_;
  Conv2d expand_;
};

/// Intermediate tensors of one fusion pass.
struct SeffTrace {
  Var refined1;     // F1'
  Var refined2;     // F2'
  Var gate_logits;  // LCC(F1'+F2') + GCC(F1'+F2')
  Var gate;         // W
  Var output;       // W ⊙ F1' + (1 - W) ⊙ F2'
};

/// Saliency enhanced feature fusion.
///
/// Each input is concatenated with the guidance maps and refined by two 3×3
/// conv-norm-ReLU blocks. The refined pair is summed and fed to a local (per-position)
/// and a global (pooled) channel-context bottleneck; the sigmoid of their sum gates a
/// convex combination of the refined features.
class SeffBlock : public FusionBlock {
 public:
  SeffBlock(const SeffOptions& opts, std::uint64_t seed);

  [[nodiscard]] Var fuse(const Var& f1, const Var& f2, const Var& guidance,
                         Mode mode) const override;
  [[nodiscard]] SeffTrace fuse_traced(const Var& f1, const Var& f2, const Var& guidance,
                                      Mode mode) const;
  [[nodiscard]] int channels() const override { return opts_.channels; }

  /// Per-position channel attention logits, [N,C,H,W].
  [[nodiscard]] Var lcc(const Var& u, Mode mode) const;
  /// Pooled channel attention logits, [N,C,1,1].
  [[nodiscard]] Var gcc(const Var& u, Mode mode) const;
  [[nodiscard]] Var refine_first(const Var& f1, const Var& guidance, Mode mode) const;
  [[nodiscard]] Var refine_second(const Var& f2, const Var& guidance, Mode mode) const;

  void visit(const std::string& prefix, const ParamVisitor& params,
             const BufferVisitor& buffers) override;

  ConvBnRelu& refine(int path, int layer);
  ChannelBottleneck& local_context() { return lcc_; }
  ChannelBottleneck& global_context() { return gcc_; }

 private:
  void check_inputs(const Var& f1, const Var& f2, const Var& guidance) const;

  SeffOptions opts_;
  ConvBnRelu refine1a_, refine1b_;
  ConvBnRelu refine2a_, refine2b_;
  ChannelBottleneck lcc_;
  ChannelBottleneck gcc_;
};

}  // namespace seffsal
