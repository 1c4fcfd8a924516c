#include "seffsal/backbone.hpp"

#include <string>

namespace seffsal {

void BackboneConfig::validate() const {
  for (int j = 0; j < 4; ++j) {
    if (stage_channels[j] <= 0) {
      throw ConfigError("stage_channels must be positive, got " +
                        std::to_string(stage_channels[j]) + " at stage " + std::to_string(j + 1));
    }
    if (j > 0 && stage_channels[j] < stage_channels[j - 1]) {
      throw ConfigError("stage_channels must be non-decreasing, stage " + std::to_string(j + 1) +
                        " has " + std::to_string(stage_channels[j]) + " < " +
                        std::to_string(stage_channels[j - 1]));
    }
  }
  if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be at least 1");
}

std::array<Size2, 4> pyramid_sizes(Size2 input) {
  std::array<Size2, 4> out{};
  Size2 s{halve(halve(input.h)), halve(halve(input.w))};
  for (int j = 0; j < 4; ++j) {
    out[j] = s;
    s = {halve(s.h), halve(s.w)};
  }
  return out;
}

Backbone::Backbone(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& ch = config_.stage_channels;
  auto block_seed = [&](int stage, int block) {
    return derive_seed(seed, "stage" + std::to_string(stage + 1) + "." + std::to_string(block));
  };
  // Stem: two stride-2 convolutions bring the input to stride 4.
  stages_[0].emplace_back(ConvOptions{.in = 3, .out = ch[0], .kernel = 3, .stride = 2, .pad = 1},
                          derive_seed(seed, "stem"));
  stages_[0].emplace_back(
      ConvOptions{.in = ch[0], .out = ch[0], .kernel = 3, .stride = 2, .pad = 1}, block_seed(0, 0));
  for (int b = 1; b < config_.blocks_per_stage; ++b) {
    stages_[0].emplace_back(ConvOptions{.in = ch[0], .out = ch[0], .kernel = 3}, block_seed(0, b));
  }
  for (int j = 1; j < 4; ++j) {
    stages_[j].emplace_back(
        ConvOptions{.in = ch[j - 1], .out = ch[j], .kernel = 3, .stride = 2, .pad = 1},
        block_seed(j, 0));
    for (int b = 1; b < config_.blocks_per_stage; ++b) {
      stages_[j].emplace_back(ConvOptions{.in = ch[j], .out = ch[j], .kernel = 3},
                              block_seed(j, b));
    }
  }
}

FeaturePyramid Backbone::extract(const Var& image, Mode mode, int scale,
                                 Modality modality) const {
  const auto& s = image.shape();
  if (s.c != 3) throw ContractError("backbone expects 3 input channels, got " + s.str());
  if (s.h < kMinInputSize || s.w < kMinInputSize) {
    throw ContractError("backbone input " + s.str() + " smaller than " +
                        std::to_string(kMinInputSize) + " pixels");
  }
  FeaturePyramid out;
  out.source_scale = scale;
  out.modality = modality;
  Var x = image;
  for (int j = 0; j < 4; ++j) {
    for (const auto& block : stages_[j]) x = block.forward(x, mode);
    out.layers[j] = x;
  }
  return out;
}

void Backbone::visit(const std::string& prefix, const ParamVisitor& params,
                     const BufferVisitor& buffers) {
  for (int j = 0; j < 4; ++j) {
    for (std::size_t b = 0; b < stages_[j].size(); ++b) {
      stages_[j][b].visit(prefix + "stage" + std::to_string(j + 1) + "." + std::to_string(b) + ".",
                          params, buffers);
    }
  }
}

Backbone build_backbone(const BackboneConfig& config, std::uint64_t seed) {
  return Backbone(config, seed);
}

FeaturePyramid extract_features(const Backbone& backbone, const Var& image, Mode mode) {
  return backbone.extract(image, mode);
}

}  // namespace seffsal
