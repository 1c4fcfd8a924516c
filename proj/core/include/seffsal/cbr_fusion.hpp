#pragma once

#include "seffsal/seff.hpp"

namespace seffsal {

/// Ablation stand-in for SeffBlock: conv-norm-ReLU blocks over concat(f1, f2) with no
/// saliency guidance and no gating. The hidden width is chosen so the parameter count
/// matches a SeffBlock of the same width as closely as the width granularity allows.
class CbrFusion : public FusionBlock {
 public:
  CbrFusion(int channels, int hidden, std::uint64_t seed);

  /// Parameter-matched construction against a SeffBlock with `reduction`.
  static CbrFusion matched(int channels, int reduction, std::uint64_t seed);
  /// Hidden width whose parameter count is closest to `target`.
  static int hidden_width_for(int channels, std::size_t target);
  static std::size_t parameter_count_for(int channels, int hidden);

  /// `guidance` is ignored.
  [[nodiscard]] Var fuse(const Var& f1, const Var& f2, const Var& guidance,
                         Mode mode) const override;
  [[nodiscard]] int channels() const override { return channels_; }
  [[nodiscard]] int hidden() const { return hidden_; }

  void visit(const std::string& prefix, const ParamVisitor& params,
             const BufferVisitor& buffers) override;

 private:
  int channels_;
  int hidden_;
  ConvBnRelu first_;
  ConvBnRelu second_;
};

}  // namespace seffsal
