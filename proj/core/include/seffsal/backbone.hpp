#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "seffsal/module.hpp"

namespace seffsal {

enum class Modality { rgb, depth };

/// Raised for structurally invalid network configurations.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BackboneConfig {
  std::array<int, 4> stage_channels{16, 32, 64, 128};
  int blocks_per_stage = 1;

  /// Throws ConfigError on non-positive or decreasing widths.
  void validate() const;
};

/// Four encoder layers of one modality at one input scale, at strides 4/8/16/32.
struct FeaturePyramid {
  std::array<Var, 4> layers;
  int source_scale = 0;
  Modality modality = Modality::rgb;
};

/// Smallest accepted input side; layer 4 is then 1×1.
inline constexpr int kMinInputSize = 16;

/// One stride-2 step of a 3×3, pad-1 convolution: floor((n - 1) / 2) + 1.
constexpr int halve(int n) { return (n - 1) / 2 + 1; }

/// Spatial size of each pyramid layer for an input of `input` pixels.
std::array<Size2, 4> pyramid_sizes(Size2 input);

/// Plain conv-norm-ReLU encoder: a stride-4 stem (two stride-2 convolutions) followed by
/// three stride-2 stages. Stands in for a pretrained backbone behind the same interface.
class Backbone : public Module {
 public:
  Backbone(const BackboneConfig& config, std::uint64_t seed);

  /// `image` is [N,3,H,W]; depth maps are replicated to three channels by the caller.
  [[nodiscard]] FeaturePyramid extract(const Var& image, Mode mode, int scale = 0,
                                       Modality modality = Modality::rgb) const;

  [[nodiscard]] const BackboneConfig& config() const { return config_; }
  void visit(const std::string& prefix, const ParamVisitor& params,
             const BufferVisitor& buffers) override;

 private:
  BackboneConfig config_;
  std::array<std::vector<ConvBnRelu>, 4> stages_;
};

Backbone build_backbone(const BackboneConfig& config, std::uint64_t seed);
FeaturePyramid extract_features(const Backbone& backbone, const Var& image, Mode mode);

}  // namespace seffsal
