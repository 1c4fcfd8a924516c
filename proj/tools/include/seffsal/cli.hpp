#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "seffsal/config.hpp"
#include "seffsal/metrics.hpp"

namespace seffsal::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
/// Invalid configuration, usage errors and unusable inputs.
inline constexpr int kExitConfig = 2;

/// Entry point of the `seffsal` tool; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct AblationRow {
  std::string name;  // full, scale2, scale1, w/o-SEFF
  NetConfig net;
  std::size_t parameters = 0;
  std::size_t fusion_parameters = 0;
  bool evaluated = false;
  metrics::MetricReport report;
};

/// The four ablation networks derived from `base`: full, scale2, scale1 and full with
/// the parameter-matched CBR fusion.
std::vector<AblationRow> ablation_variants(const NetConfig& base);

/// Builds the variants, and when `train_each` is set trains each one on a synthetic
/// train split and evaluates it on a synthetic test split written under `out_dir`.
/// Writes `out_dir/ablation.csv`.
std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                      bool train_each, std::ostream& log);

}  // namespace seffsal::cli
