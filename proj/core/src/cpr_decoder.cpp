#include "seffsal/cpr_decoder.hpp"

#include <string>

namespace seffsal {

DecoderStage::DecoderStage(int in_channels, int out_channels, std::uint64_t seed)
    : in_(in_channels),
      out_(out_channels),
      entry_({.in = in_channels, .out = out_channels, .kernel = 1}, derive_seed(seed, "entry")),
      dilated_{
          Conv2d({.in = out_channels, .out = out_channels, .kernel = 3,
                  .dilation = kDecoderDilations[0], .depthwise = true, .bias = false},
                 derive_seed(seed, "dw.0")),
          Conv2d({.in = out_channels, .out = out_channels, .kernel = 3,
                  .dilation = kDecoderDilations[1], .depthwise = true, .bias = false},
                 derive_seed(seed, "dw.1")),
          Conv2d({.in = out_channels, .out = out_channels, .kernel = 3,
                  .dilation = kDecoderDilations[2], .depthwise = true, .bias = false},
                 derive_seed(seed, "dw.2"))},
      dilated_norm_(out_channels),
      merge_({.in = out_channels, .out = out_channels, .kernel = 1, .bias = false},
             derive_seed(seed, "merge")),
      merge_norm_(out_channels) {}

Var DecoderStage::forward(const Var& x, Mode mode) const {
  const Var entry = entry_.forward(x, mode);
  Var pyramid = dilated_[0].forward(entry);
  for (std::size_t b = 1; b < dilated_.size(); ++b) {
    pyramid = ops::add(pyramid, dilated_[b].forward(entry));
  }
  pyramid = ops::relu(dilated_norm_.forward(pyramid, mode));
  const Var merged = merge_norm_.forward(merge_.forward(pyramid), mode);
  return ops::relu(ops::add(entry, merged));
}

void DecoderStage::visit(const std::string& prefix, const ParamVisitor& params,
                         const BufferVisitor& buffers) {
  entry_.visit(prefix + "entry.", params, buffers);
  for (std::size_t b = 0; b < dilated_.size(); ++b) {
    dilated_[b].visit(prefix + "dw." + std::to_string(b) + ".", params, buffers);
  }
  dilated_norm_.visit(prefix + "dw_bn.", params, buffers);
  merge_.visit(prefix + "merge.", params, buffers);
  merge_norm_.visit(prefix + "merge_bn.", params, buffers);
}

CprDecoder::CprDecoder(const std::array<int, 4>& encoder_channels,
                       const std::array<int, 4>& decoder_channels, std::uint64_t seed)
    : encoder_channels_(encoder_channels), decoder_channels_(decoder_channels) {
  for (int d : decoder_channels) {
    if (d <= 0) throw ConfigError("decoder_channels must be positive");
  }
  stages_.reserve(4);
  for (int j = 0; j < 4; ++j) {
    const int in = j == 3 ? encoder_channels[3] : decoder_channels[j + 1];
    stages_.emplace_back(in, decoder_channels[j],
                         derive_seed(seed, "stage" + std::to_string(j + 1)));
  }
  projections_.reserve(3);
  for (int j = 0; j < 3; ++j) {
    projections_.emplace_back(
        ConvOptions{.in = encoder_channels[j], .out = decoder_channels[j + 1], .kernel = 1},
        derive_seed(seed, "skip" + std::to_string(j + 1)));
  }
}

std::array<Var, 4> CprDecoder::decode(const FeaturePyramid& skips, const Var& fused_top,
                                      Mode mode) const {
  if (fused_top.shape().h != skips.layers[3].shape().h ||
      fused_top.shape().w != skips.layers[3].shape().w) {
    throw ContractError("decoder top feature " + fused_top.shape().str() +
                        " does not match encoder layer 4 " + skips.layers[3].shape().str());
  }
  std::array<Var, 4> out;
  out[3] = stages_[3].forward(fused_top, mode);
  for (int j = 2; j >= 0; --j) {
    const Var& skip = skips.layers[j];
    const Var up = ops::resize_bilinear(out[j + 1], skip.value().spatial());
    const Var projected = projections_[j].forward(skip);
    if (up.shape() != projected.shape()) {
      throw std::logic_error("decoder resolution invariant violated at layer " +
                             std::to_string(j + 1) + ": " + up.shape().str() + " vs " +
                             projected.shape().str());
    }
    out[j] = stages_[j].forward(ops::add(up, projected), mode);
  }
  return out;
}

void CprDecoder::visit(const std::string& prefix, const ParamVisitor& params,
                       const BufferVisitor& buffers) {
  for (int j = 0; j < 4; ++j) {
    stages_[j].visit(prefix + "stage" + std::to_string(j + 1) + ".", params, buffers);
  }
  for (int j = 0; j < 3; ++j) {
    projections_[j].visit(prefix + "skip" + std::to_string(j + 1) + ".", params, buffers);
  }
}

}  // namespace seffsal
