#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seffsal/backbone.hpp"
#include "seffsal/cpr_decoder.hpp"
#include "seffsal/seff.hpp"

namespace seffsal {

/// Which input scales a network processes. Scale 3 (the coarsest) is always present
/// because it seeds the guidance of the finer scales.
enum class Variant { scale1, scale2, full };

enum class FusionKind { seff, cbr };

std::vector<int> active_scales(Variant v);
std::string to_string(Variant v);
std::string to_string(FusionKind f);
Variant parse_variant(const std::string& text);
FusionKind parse_fusion(const std::string& text);

struct NetConfig {
  BackboneConfig backbone{};
  std::array<int, 4> decoder_channels{16, 32, 32, 64};
  int seff_reduction = 4;
  /// Side of the scale-1 input; scales 2 and 3 use 1/2 and 1/4 of it.
  int input_size = 352;
  Variant variant = Variant::full;
  FusionKind fusion = FusionKind::seff;

  void validate() const;
  [[nodiscard]] Size2 input_size_for(int scale) const;
  [[nodiscard]] bool is_active(int scale) const;
};

/// The per-scale, per-layer sigmoid saliency maps S_ij.
struct SaliencyBundle {
  std::array<std::array<Var, 4>, 3> maps;  // [scale-1][layer-1]

  [[nodiscard]] bool has(int scale, int layer) const;
  [[nodiscard]] const Var& at(int scale, int layer) const;
  void set(int scale, int layer, Var map);
  [[nodiscard]] int count() const;
  [[nodiscard]] std::vector<std::pair<int, int>> entries() const;  // (scale, layer)
};

struct GuidanceMap {
  enum class Provenance { zeros, scale3, scale2_3 };
  Var tensor;  // [N,4,h,w]
  Provenance provenance = Provenance::zeros;
};

/// Raised when a consumer reads saliency maps that the wiring has not produced yet.
class SequencingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Guidance for fusion sites of `for_scale`: zeros for scale 3, the resized scale-3 maps
/// for scale 2, and a 1×1 projection of the resized scale-2 and scale-3 maps for scale 1.
GuidanceMap build_guidance(const SaliencyBundle& parts, int for_scale, Size2 target, int batch,
                           const Conv2d* projector);

/// F_i4^fusion = Φ(F_i4^R, F_i4^D, g).
Var fuse_rgbd(const FusionBlock& block, const Var& rgb, const Var& depth,
              const GuidanceMap& guidance, Mode mode);

/// F_ij^CSF = Φ(fine, resize(coarse), g) for scales 1 and 2 only.
Var fuse_cross_scale(const FusionBlock& block, int scale, const Var& fine, const Var& coarse,
                     const GuidanceMap& guidance, Mode mode);

/// σ(Conv_1(feature, 1)).
Var predict_head(const Var& feature, const Conv2d& head);

struct TraceEvent {
  std::string op;
  std::vector<std::string> reads;
  std::vector<std::string> writes;
};

struct ForwardResult {
  SaliencyBundle bundle;
  std::vector<TraceEvent> trace;
  /// Named intermediate features (F_ij^R, F_ij^CPR, F_ij^CSF, F_i4^fusion, guidance).
  std::map<std::string, Var> features;
};

/// Per-scale network inputs; entries for inactive scales stay empty.
struct NetInputs {
  std::array<Tensor, 3> rgb;    // [N,3,h,w] per scale
  std::array<Tensor, 3> depth;  // [N,1,h,w] per scale
};

class MsNet : public Module {
 public:
  MsNet(const NetConfig& config, std::uint64_t seed);
  ~MsNet() override;
  MsNet(MsNet&&) noexcept;
  MsNet& operator=(MsNet&&) noexcept;

  /// Runs scales 3 → 2 → 1 (those active) and returns every saliency map.
  [[nodiscard]] ForwardResult forward(const NetInputs& inputs, Mode mode) const;

  /// Finest active layer-1 map: S_11, S_21 or S_31 depending on the variant.
  [[nodiscard]] static std::pair<int, int> output_head(Variant v);

  [[nodiscard]] const NetConfig& config() const { return config_; }
  void visit(const std::string& prefix, const ParamVisitor& params,
             const BufferVisitor& buffers) override;

  /// Fusion block at an RGB-D site (layer 0) or cross-scale site (layers 1..4).
  [[nodiscard]] FusionBlock* fusion_site(int scale, int layer);
  [[nodiscard]] Conv2d& head(int scale, int layer);
  [[nodiscard]] Backbone& backbone(int scale, Modality modality);
  [[nodiscard]] std::size_t fusion_parameter_count();

 private:
  struct ScaleBranch;
  NetConfig config_;
  std::array<std::unique_ptr<ScaleBranch>, 3> branches_;
};

/// Constructs only the submodules `variant` needs.
MsNet build_variant(NetConfig config, Variant variant, std::uint64_t seed);

}  // namespace seffsal
