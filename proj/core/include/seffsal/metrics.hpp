#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seffsal/tensor.hpp"

namespace seffsal::metrics {

/// Row-major single-channel image with values in [0, 1].
struct GrayMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  GrayMap() = default;
  GrayMap(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}
  GrayMap(int h, int w, std::vector<double> v);

  [[nodiscard]] std::size_t size() const { return values.size(); }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] double at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  /// First plane of a [N,C,H,W] tensor.
  static GrayMap from_tensor(const Tensor& t, int n = 0);
};

inline constexpr int kThresholds = 256;
inline constexpr double kBetaSquared = 0.3;
inline constexpr double kAlpha = 0.5;

/// Raised for images whose ground truth has no foreground (F-measure undefined).
class EmptyGroundTruth : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double mae(const GrayMap& pred, const GrayMap& gt);

/// F_β at `precision`, `recall` with β² = 0.3; 0 when both are 0.
double f_beta(double precision, double recall);

struct ThresholdCurves {
  std::array<double, kThresholds> precision{};
  std::array<double, kThresholds> recall{};
  std::array<double, kThresholds> f_measure{};
  std::array<double, kThresholds> e_measure{};
};

/// Precision, recall, F and E for bin(pred) = pred >= t/255, t = 0..255.
ThresholdCurves threshold_curves(const GrayMap& pred, const GrayMap& gt);

/// max over thresholds of F_β; throws EmptyGroundTruth when gt has no foreground.
double f_measure_max(const GrayMap& pred, const GrayMap& gt);

/// Enhanced-alignment score of a binary prediction against a binary gt.
double e_measure_binary(const GrayMap& binary_pred, const GrayMap& gt);
double e_measure_max(const GrayMap& pred, const GrayMap& gt);

double s_object(const GrayMap& pred, const GrayMap& gt);
double s_region(const GrayMap& pred, const GrayMap& gt);
double s_measure(const GrayMap& pred, const GrayMap& gt);

struct ImageMetrics {
  std::string name;
  double mae = 0.0;
  /// Absent for empty-foreground ground truth.
  std::optional<double> f_max;
  std::optional<double> e_max;
  std::optional<double> s_measure;
};

ImageMetrics evaluate_image(const std::string& name, const GrayMap& pred, const GrayMap& gt);

struct MetricReport {
  double mae = 0.0;
  double f_max = 0.0;
  double e_max = 0.0;
  double s_measure = 0.0;
  /// Dataset-mean curves over images with non-empty gt.
  ThresholdCurves curves{};
  std::vector<ImageMetrics> images;
  int skipped_empty_gt = 0;
  std::vector<std::string> unmatched;
};

/// Averages per-image metrics; empty-gt images count toward MAE only.
MetricReport summarize(std::vector<ImageMetrics> images);

/// Evaluates 8-bit prediction PNGs in `pred_dir` against binary GT PNGs (>= 128 is
/// foreground) in `gt_dir`, matched by filename stem. Predictions whose size differs
/// from their GT are bilinearly resized first.
MetricReport evaluate_dataset(const std::filesystem::path& pred_dir,
                              const std::filesystem::path& gt_dir);

/// Per-image rows (name, mae, f_max, e_max, s_measure) followed by a "mean" row.
void write_csv(const MetricReport& report, const std::filesystem::path& path);

}  // namespace seffsal::metrics
