#pragma once

#include <array>
#include <cstdint>

#include "seffsal/backbone.hpp"

namespace seffsal {

/// Compact pyramid refinement stage:
///   x = CBR1x1(in -> out)
///   y = ReLU(BN(dw3x3_d1(x) + dw3x3_d2(x) + dw3x3_d4(x)))
///   out = ReLU(x + BN(conv1x1(y)))
class DecoderStage : public Module {
 public:
  DecoderStage(int in_channels, int out_channels, std::uint64_t seed);

  [[nodiscard]] Var forward(const Var& x, Mode mode) const;
  void visit(const std::string& prefix, const ParamVisitor& params,
             const BufferVisitor& buffers) override;

  [[nodiscard]] int in_channels() const { return in_; }
  [[nodiscard]] int out_channels() const { return out_; }

 private:
  int in_;
  int out_;
  ConvBnRelu entry_;
  std::array<Conv2d, 3> dilated_;
  BatchNorm2d dilated_norm_;
  Conv2d merge_;
  BatchNorm2d merge_norm_;
};

/// Dilation rates of the three parallel depthwise branches.
inline constexpr std::array<int, 3> kDecoderDilations{1, 2, 4};

/// Top-down decoder for one scale. Stage 4 consumes the fused layer-4 feature; stages
/// 3..1 consume the upsampled previous decoder output plus a 1×1 projection of the
/// encoder skip feature.
class CprDecoder : public Module {
 public:
  CprDecoder(const std::array<int, 4>& encoder_channels,
             const std::array<int, 4>& decoder_channels, std::uint64_t seed);

  /// Returns decoder features for layers 1..4 (index 0..3), each at the matching
  /// `skips` layer's spatial size.
  [[nodiscard]] std::array<Var, 4> decode(const FeaturePyramid& skips, const Var& fused_top,
                                          Mode mode) const;

  [[nodiscard]] const std::array<int, 4>& decoder_channels() const { return decoder_channels_; }
  void visit(const std::string& prefix, const ParamVisitor& params,
             const BufferVisitor& buffers) override;

 private:
  std::array<int, 4> encoder_channels_;
  std::array<int, 4> decoder_channels_;
  std::vector<DecoderStage> stages_;  // index j-1
  std::vector<Conv2d> projections_;   // layers 1..3
};

}  // namespace seffsal
