#pragma once

#include <filesystem>
#include <string>

#include "seffsal/msnet.hpp"
#include "support/gradcheck.hpp"

namespace seffsal::testing {

/// Widths [4,8,8,8], inputs 64/32/16.
inline NetConfig micro_config(Variant v = Variant::full) {
  NetConfig c;
  c.backbone.stage_channels = {4, 8, 8, 8};
  c.decoder_channels = {4, 4, 8, 8};
  c.input_size = 64;
  c.variant = v;
  return c;
}

/// Random RGB and depth inputs for every active scale of `cfg`.
inline NetInputs random_inputs(const NetConfig& cfg, int batch, std::uint64_t seed) {
  NetInputs in;
  for (int scale = 1; scale <= 3; ++scale) {
    if (!cfg.is_active(scale)) continue;
    const Size2 s = cfg.input_size_for(scale);
    in.rgb[scale - 1] = random_tensor({batch, 3, s.h, s.w}, seed + 2 * scale, 0.0, 1.0);
    in.depth[scale - 1] = random_tensor({batch, 1, s.h, s.w}, seed + 2 * scale + 1, 0.0, 1.0);
  }
  return in;
}

/// Fresh empty directory under the system temp directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("seffsal_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace seffsal::testing
