#include "seffsal/msnet.hpp"

#include "seffsal/cbr_fusion.hpp"

namespace seffsal {

namespace {

std::string idx(int scale, int layer) { return std::to_string(scale) + std::to_string(layer); }
std::string sal(int scale, int layer) { return "S" + idx(scale, layer); }

}  // namespace

std::vector<int> active_scales(Variant v) {
  switch (v) {
    case Variant::scale1:
      return {3};
    case Variant::scale2:
      return {2, 3};
    case Variant::full:
      return {1, 2, 3};
  }
  return {};
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::scale1:
      return "scale1";
    case Variant::scale2:
      return "scale2";
    case Variant::full:
      return "full";
  }
  return "?";
}

std::string to_string(FusionKind f) { return f == FusionKind::seff ? "seff" : "cbr"; }

Variant parse_variant(const std::string& text) {
  if (text == "scale1") return Variant::scale1;
  if (text == "scale2") return Variant::scale2;
  if (text == "full") return Variant::full;
  throw ConfigError("unknown variant '" + text + "' (expected full, scale2 or scale1)");
}

FusionKind parse_fusion(const std::string& text) {
  if (text == "seff") return FusionKind::seff;
  if (text == "cbr") return FusionKind::cbr;
  throw ConfigError("unknown fusion '" + text + "' (expected seff or cbr)");
}

void NetConfig::validate() const {
  backbone.validate();
  if (seff_reduction <= 0) throw ConfigError("seff_reduction must be positive");
  for (int d : decoder_channels) {
    if (d <= 0) throw ConfigError("decoder_channels must be positive");
    if (fusion == FusionKind::seff && d % seff_reduction != 0) {
      throw ConfigError("seff_reduction " + std::to_string(seff_reduction) +
                        " must divide every decoder_channels entry, got " + std::to_string(d));
    }
  }
  if (fusion == FusionKind::seff && backbone.stage_channels[3] % seff_reduction != 0) {
    throw ConfigError("seff_reduction must divide the last stage_channels entry");
  }
  if (input_size < 4 * kMinInputSize || input_size % 4 != 0) {
    throw ConfigError("input_size must be a multiple of 4 and at least " +
                      std::to_string(4 * kMinInputSize) + ", got " + std::to_string(input_size));
  }
}

Size2 NetConfig::input_size_for(int scale) const {
  const int side = input_size >> (scale - 1);
  return {side, side};
}

bool NetConfig::is_active(int scale) const {
  for (int s : active_scales(variant)) {
    if (s == scale) return true;
  }
  return false;
}

bool SaliencyBundle::has(int scale, int layer) const {
  return maps[scale - 1][layer - 1].defined();
}

const Var& SaliencyBundle::at(int scale, int layer) const {
  if (scale < 1 || scale > 3 || layer < 1 || layer > 4 || !has(scale, layer)) {
    throw SequencingError("saliency map " + sal(scale, layer) + " has not been produced");
  }
  return maps[scale - 1][layer - 1];
}

void SaliencyBundle::set(int scale, int layer, Var map) {
  maps[scale - 1][layer - 1] = std::move(map);
}

int SaliencyBundle::count() const { return static_cast<int>(entries().size()); }

std::vector<std::pair<int, int>> SaliencyBundle::entries() const {
  std::vector<std::pair<int, int>> out;
  for (int i = 1; i <= 3; ++i) {
    for (int j = 1; j <= 4; ++j) {
      if (has(i, j)) out.emplace_back(i, j);
    }
  }
  return out;
}

GuidanceMap build_guidance(const SaliencyBundle& parts, int for_scale, Size2 target, int batch,
                           const Conv2d* projector) {
  GuidanceMap g;
  if (for_scale == 3) {
    g.tensor = Var(Tensor({batch, kGuidanceChannels, target.h, target.w}, 0.0));
    g.provenance = GuidanceMap::Provenance::zeros;
    return g;
  }
  if (for_scale != 1 && for_scale != 2) {
    throw ContractError("guidance requested for invalid scale " + std::to_string(for_scale));
  }
  std::vector<Var> maps;
  const int first = for_scale == 2 ? 3 : 2;
  for (int i = first; i <= 3; ++i) {
    for (int j = 1; j <= 4; ++j) {
      if (!parts.has(i, j)) {
        throw SequencingError("guidance for scale " + std::to_string(for_scale) + " needs " +
                              sal(i, j) + ", which has not been produced");
      }
      maps.push_back(ops::resize_bilinear(parts.at(i, j), target));
    }
  }
  const Var stacked = ops::concat_channels(maps);
  if (for_scale == 2) {
    g.tensor = stacked;
    g.provenance = GuidanceMap::Provenance::scale3;
    return g;
  }
  if (projector == nullptr) {
    throw ContractError("scale-1 guidance requires an 8->4 projector");
  }
  g.tensor = projector->forward(stacked);
  g.provenance = GuidanceMap::Provenance::scale2_3;
  return g;
}

Var fuse_rgbd(const FusionBlock& block, const Var& rgb, const Var& depth,
              const GuidanceMap& guidance, Mode mode) {
  return block.fuse(rgb, depth, guidance.tensor, mode);
}

Var fuse_cross_scale(const FusionBlock& block, int scale, const Var& fine, const Var& coarse,
                     const GuidanceMap& guidance, Mode mode) {
  if (scale != 1 && scale != 2) {
    throw ContractError("cross-scale fusion is only carried out on scales 1 and 2, got scale " +
                        std::to_string(scale));
  }
  const Var up = ops::resize_bilinear(coarse, fine.value().spatial());
  return block.fuse(fine, up, guidance.tensor, mode);
}

Var predict_head(const Var& feature, const Conv2d& head) {
  if (head.options().out != 1 || head.options().kernel != 1) {
    throw ContractError("saliency head must be a 1x1 convolution with one output channel");
  }
  return ops::sigmoid(head.forward(feature));
}

struct MsNet::ScaleBranch {
  Backbone rgb;
  Backbone depth;
  std::unique_ptr<FusionBlock> rgbd;
  std::optional<Conv2d> rgbd_projector;
  CprDecoder decoder;
  std::vector<std::unique_ptr<FusionBlock>> cross;  // layers 1..4, scales 1 and 2
  std::vector<Conv2d> cross_projectors;             // scale 1 with SEFF
  std::vector<Conv2d> heads;

  ScaleBranch(const NetConfig& cfg, int scale, std::uint64_t seed)
      : rgb(cfg.backbone, derive_seed(seed, prefix(scale) + "rgb")),
        depth(cfg.backbone, derive_seed(seed, prefix(scale) + "depth")),
        decoder(cfg.backbone.stage_channels, cfg.decoder_channels,
                derive_seed(seed, prefix(scale) + "decoder")) {
    const std::string p = prefix(scale);
    rgbd = make_fusion(cfg, cfg.backbone.stage_channels[3], derive_seed(seed, p + "rgbd"));
    const bool seff = cfg.fusion == FusionKind::seff;
    if (scale == 1 && seff) rgbd_projector.emplace(projector_opts(), derive_seed(seed, p + "rgbd_guidance"));
    if (scale != 3) {
      for (int j = 0; j < 4; ++j) {
        cross.push_back(make_fusion(cfg, cfg.decoder_channels[j],
                                    derive_seed(seed, p + "cross" + std::to_string(j + 1))));
        if (scale == 1 && seff) {
          cross_projectors.emplace_back(
              projector_opts(),
              derive_seed(seed, p + "cross" + std::to_string(j + 1) + "_guidance"));
        }
      }
    }
    for (int j = 0; j < 4; ++j) {
      heads.emplace_back(ConvOptions{.in = cfg.decoder_channels[j], .out = 1, .kernel = 1},
                         derive_seed(seed, p + "head" + std::to_string(j + 1)));
    }
  }

  static std::string prefix(int scale) { return "scale" + std::to_string(scale) + "."; }

  static ConvOptions projector_opts() {
    return {.in = 2 * kGuidanceChannels, .out = kGuidanceChannels, .kernel = 1};
  }

  static std::unique_ptr<FusionBlock> make_fusion(const NetConfig& cfg, int channels,
                                                  std::uint64_t seed) {
    if (cfg.fusion == FusionKind::seff) {
      return std::make_unique<SeffBlock>(
          SeffOptions{.channels = channels, .reduction = cfg.seff_reduction}, seed);
    }
    return std::make_unique<CbrFusion>(CbrFusion::matched(channels, cfg.seff_reduction, seed));
  }

  void visit(const std::string& p, const ParamVisitor& params, const BufferVisitor& buffers) {
    rgb.visit(p + "rgb.", params, buffers);
    depth.visit(p + "depth.", params, buffers);
    rgbd->visit(p + "rgbd.", params, buffers);
    if (rgbd_projector) rgbd_projector->visit(p + "rgbd_guidance.", params, buffers);
    decoder.visit(p + "decoder.", params, buffers);
    for (std::size_t j = 0; j < cross.size(); ++j) {
      cross[j]->visit(p + "cross" + std::to_string(j + 1) + ".", params, buffers);
    }
    for (std::size_t j = 0; j < cross_projectors.size(); ++j) {
      cross_projectors[j].visit(p + "cross" + std::to_string(j + 1) + "_guidance.", params,
                                buffers);
    }
    for (std::size_t j = 0; j < heads.size(); ++j) {
      heads[j].visit(p + "head" + std::to_string(j + 1) + ".", params, buffers);
    }
  }
};

MsNet::MsNet(const NetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  for (int scale : active_scales(config_.variant)) {
    branches_[scale - 1] = std::make_unique<ScaleBranch>(config_, scale, seed);
  }
}

MsNet::~MsNet() = default;
MsNet::MsNet(MsNet&&) noexcept = default;
MsNet& MsNet::operator=(MsNet&&) noexcept = default;

std::pair<int, int> MsNet::output_head(Variant v) { return {active_scales(v).front(), 1}; }

ForwardResult MsNet::forward(const NetInputs& inputs, Mode mode) const {
  ForwardResult result;
  auto& trace = result.trace;
  auto& features = result.features;
  const bool seff = config_.fusion == FusionKind::seff;

  int batch = -1;
  for (int scale : active_scales(config_.variant)) {
    const Tensor& rgb = inputs.rgb[scale - 1];
    const Tensor& depth = inputs.depth[scale - 1];
    const Size2 want = config_.input_size_for(scale);
    if (rgb.shape().c != 3 || rgb.spatial() != want) {
      throw ContractError("scale " + std::to_string(scale) + " RGB input " + rgb.shape().str() +
                          " must be [N,3," + std::to_string(want.h) + "," +
                          std::to_string(want.w) + "]");
    }
    if (depth.shape().c != 1 || depth.spatial() != want || depth.shape().n != rgb.shape().n) {
      throw ContractError("scale " + std::to_string(scale) + " depth input " +
                          depth.shape().str() + " must be [N,1," + std::to_string(want.h) + "," +
                          std::to_string(want.w) + "]");
    }
    if (batch >= 0 && rgb.shape().n != batch) {
      throw ContractError("scale inputs disagree on batch size");
    }
    batch = rgb.shape().n;
  }

  std::array<std::array<Var, 4>, 3> cpr;
  std::array<std::array<Var, 4>, 3> csf;

  for (int scale = 3; scale >= 1; --scale) {
    const ScaleBranch* br = branches_[scale - 1].get();
    if (br == nullptr) continue;
    const std::string si = std::to_string(scale);

    const Var rgb_in(inputs.rgb[scale - 1]);
    const Var depth_in(repeat_channels(inputs.depth[scale - 1], 3));
    const FeaturePyramid rgb = br->rgb.extract(rgb_in, mode, scale, Modality::rgb);
    const FeaturePyramid dep = br->depth.extract(depth_in, mode, scale, Modality::depth);
    TraceEvent enc{"encode", {"I" + si + ".rgb", "I" + si + ".depth"}, {}};
    for (int j = 1; j <= 4; ++j) {
      features["F" + idx(scale, j) + "^R"] = rgb.layers[j - 1];
      features["F" + idx(scale, j) + "^D"] = dep.layers[j - 1];
      enc.writes.push_back("F" + idx(scale, j) + "^R");
      enc.writes.push_back("F" + idx(scale, j) + "^D");
    }
    trace.push_back(std::move(enc));

    auto guidance_reads = [&](int for_scale) {
      std::vector<std::string> r;
      if (!seff || for_scale == 3) return r;
      for (int i = for_scale == 2 ? 3 : 2; i <= 3; ++i) {
        for (int j = 1; j <= 4; ++j) r.push_back(sal(i, j));
      }
      return r;
    };
    auto guidance_for = [&](Size2 target, const Conv2d* projector) {
      if (!seff) return GuidanceMap{};
      return build_guidance(result.bundle, scale, target, batch, projector);
    };

    const Var& top_r = rgb.layers[3];
    const GuidanceMap g_top =
        guidance_for(top_r.value().spatial(),
                     br->rgbd_projector ? &*br->rgbd_projector : nullptr);
    if (g_top.tensor.defined()) features["G" + si + ".rgbd"] = g_top.tensor;
    const Var fused = fuse_rgbd(*br->rgbd, top_r, dep.layers[3], g_top, mode);
    features["F" + si + "4^fusion"] = fused;
    {
      TraceEvent ev{"fuse_rgbd", {"F" + idx(scale, 4) + "^R", "F" + idx(scale, 4) + "^D"},
                    {"F" + si + "4^fusion"}};
      for (auto& r : guidance_reads(scale)) ev.reads.push_back(r);
      trace.push_back(std::move(ev));
    }

    cpr[scale - 1] = br->decoder.decode(rgb, fused, mode);
    {
      TraceEvent ev{"decode", {"F" + si + "4^fusion"}, {}};
      for (int j = 1; j <= 3; ++j) ev.reads.push_back("F" + idx(scale, j) + "^R");
      for (int j = 1; j <= 4; ++j) {
        features["F" + idx(scale, j) + "^CPR"] = cpr[scale - 1][j - 1];
        ev.writes.push_back("F" + idx(scale, j) + "^CPR");
      }
      trace.push_back(std::move(ev));
    }

    std::array<Var, 4> head_inputs;
    for (int j = 1; j <= 4; ++j) {
      if (scale == 3) {
        head_inputs[j - 1] = cpr[2][j - 1];
        continue;
      }
      const Var& fine = cpr[scale - 1][j - 1];
      const Var& coarse = scale == 2 ? cpr[2][j - 1] : csf[1][j - 1];
      const std::string coarse_name = scale == 2 ? "F" + idx(3, j) + "^CPR" : "F" + idx(2, j) + "^CSF";
      const GuidanceMap g = guidance_for(
          fine.value().spatial(),
          br->cross_projectors.empty() ? nullptr : &br->cross_projectors[j - 1]);
      csf[scale - 1][j - 1] = fuse_cross_scale(*br->cross[j - 1], scale, fine, coarse, g, mode);
      head_inputs[j - 1] = csf[scale - 1][j - 1];
      features["F" + idx(scale, j) + "^CSF"] = csf[scale - 1][j - 1];
      TraceEvent ev{"fuse_cross_scale", {"F" + idx(scale, j) + "^CPR", coarse_name},
                    {"F" + idx(scale, j) + "^CSF"}};
      for (auto& r : guidance_reads(scale)) ev.reads.push_back(r);
      trace.push_back(std::move(ev));
    }
    for (int j = 1; j <= 4; ++j) {
      result.bundle.set(scale, j, predict_head(head_inputs[j - 1], br->heads[j - 1]));
      const std::string src = scale == 3 ? "F" + idx(scale, j) + "^CPR" : "F" + idx(scale, j) + "^CSF";
      trace.push_back({"predict_head", {src}, {sal(scale, j)}});
    }
  }
  return result;
}

void MsNet::visit(const std::string& prefix, const ParamVisitor& params,
                  const BufferVisitor& buffers) {
  for (int scale = 3; scale >= 1; --scale) {
    if (branches_[scale - 1]) {
      branches_[scale - 1]->visit(prefix + ScaleBranch::prefix(scale), params, buffers);
    }
  }
}

FusionBlock* MsNet::fusion_site(int scale, int layer) {
  auto* br = branches_.at(scale - 1).get();
  if (br == nullptr) return nullptr;
  if (layer == 0) return br->rgbd.get();
  if (br->cross.empty()) return nullptr;
  return br->cross.at(layer - 1).get();
}

Conv2d& MsNet::head(int scale, int layer) {
  auto* br = branches_.at(scale - 1).get();
  if (br == nullptr) throw ContractError("scale " + std::to_string(scale) + " is not active");
  return br->heads.at(layer - 1);
}

Backbone& MsNet::backbone(int scale, Modality modality) {
  auto* br = branches_.at(scale - 1).get();
  if (br == nullptr) throw ContractError("scale " + std::to_string(scale) + " is not active");
  return modality == Modality::rgb ? br->rgb : br->depth;
}

std::size_t MsNet::fusion_parameter_count() {
  std::size_t total = 0;
  for (auto& br : branches_) {
    if (!br) continue;
    total += br->rgbd->parameter_count();
    for (auto& c : br->cross) total += c->parameter_count();
  }
  return total;
}

MsNet build_variant(NetConfig config, Variant variant, std::uint64_t seed) {
  config.variant = variant;
  return MsNet(config, seed);
}

}  // namespace seffsal
