#include "seffsal/metrics.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "seffsal/data_io.hpp"
#include "seffsal/ops.hpp"

namespace seffsal::metrics {

namespace {

// Machine epsilon, used wherever the reference formulas add "eps".
constexpr double kEps = DBL_EPSILON;

void require_same(const GrayMap& a, const GrayMap& b, const char* op) {
  if (a.height != b.height || a.width != b.width) {
    throw ContractError(std::string(op) + ": shape mismatch " + std::to_string(a.height) + "x" +
                        std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                        std::to_string(b.width));
  }
  if (a.values.empty()) throw ContractError(std::string(op) + ": empty map");
}

// Largest t in [0, 255] with value >= t / 255, comparing exactly as the sweep does.
int threshold_bin(double value) {
  int q = static_cast<int>(std::floor(value * 255.0));
  q = std::clamp(q, 0, 255);
  while (q < 255 && value >= (q + 1) / 255.0) ++q;
  while (q > 0 && value < q / 255.0) --q;
  return q;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double object_score(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double x = mean_of(values);
  double sigma = 0.0;
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - x) * (v - x);
    sigma = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

double region_ssim(const GrayMap& pred, const GrayMap& gt, int y0, int y1, int x0, int x1) {
  const int count = (y1 - y0) * (x1 - x0);
  if (count <= 0) return 0.0;
  double mx = 0.0, my = 0.0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      mx += pred.at(y, x);
      my += gt.at(y, x);
    }
  }
  mx /= count;
  my /= count;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double dx = pred.at(y, x) - mx;
      const double dy = gt.at(y, x) - my;
      sxx += dx * dx;
      syy += dy * dy;
      sxy += dx * dy;
    }
  }
  const double denom = count - 1 + kEps;
  sxx /= denom;
  syy /= denom;
  sxy /= denom;
  const double alpha = 4.0 * mx * my * sxy;
  const double beta = (mx * mx + my * my) * (sxx + syy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  if (beta == 0.0) return 1.0;
  return 0.0;
}

// Enhanced-alignment score of a binarized prediction from its confusion counts. Each
// pixel class (pred, gt) has a single alignment value, so the per-pixel mean reduces to a
// count-weighted sum. Degenerate all-background / all-foreground ground truth follows the
// reference convention of scoring the overlap with that single class.
double e_from_counts(double tp, double fp, double fn, double tn) {
  const double n = tp + fp + fn + tn;
  const double pos = tp + fn;
  const double pred_pos = tp + fp;
  if (pos == 0.0) return (n - pred_pos) / n;
  if (pos == n) return pred_pos / n;
  const double mu_b = pred_pos / n;
  const double mu_g = pos / n;
  auto enhanced = [&](double b, double g) {
    const double fb = b - mu_b;
    const double fg = g - mu_g;
    const double xi = 2.0 * fb * fg / (fb * fb + fg * fg + kEps);
    return (xi + 1.0) * (xi + 1.0) / 4.0;
  };
  return (tp * enhanced(1, 1) + fp * enhanced(1, 0) + fn * enhanced(0, 1) +
          tn * enhanced(0, 0)) /
         n;
}

}  // namespace

GrayMap::GrayMap(int h, int w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {
  if (values.size() != static_cast<std::size_t>(h) * w) {
    throw ContractError("GrayMap value count does not match " + std::to_string(h) + "x" +
                        std::to_string(w));
  }
}

GrayMap GrayMap::from_tensor(const Tensor& t, int n) {
  const auto& s = t.shape();
  const double* p = t.plane(n, 0);
  return GrayMap(s.h, s.w, std::vector<double>(p, p + s.plane()));
}

double mae(const GrayMap& pred, const GrayMap& gt) {
  require_same(pred, gt, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred.values[i] - gt.values[i]);
  return s / static_cast<double>(pred.size());
}

double f_beta(double precision, double recall) {
  const double den = kBetaSquared * precision + recall;
  if (den == 0.0) return 0.0;
  return (1.0 + kBetaSquared) * precision * recall / den;
}

double e_measure_binary(const GrayMap& binary_pred, const GrayMap& gt) {
  require_same(binary_pred, gt, "e_measure");
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool b = binary_pred.values[i] >= 0.5;
    const bool g = gt.values[i] >= 0.5;
    if (b && g) ++tp;
    else if (b) ++fp;
    else if (g) ++fn;
    else ++tn;
  }
  return e_from_counts(tp, fp, fn, tn);
}

ThresholdCurves threshold_curves(const GrayMap& pred, const GrayMap& gt) {
  require_same(pred, gt, "threshold_curves");
  std::array<double, kThresholds> fg_hist{}, bg_hist{};
  double positives = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int q = threshold_bin(pred.values[i]);
    if (gt.values[i] >= 0.5) {
      fg_hist[q] += 1.0;
      positives += 1.0;
    } else {
      bg_hist[q] += 1.0;
    }
  }
  const double n = static_cast<double>(pred.size());
  ThresholdCurves c;
  double tp = 0.0, fp = 0.0;
  for (int t = kThresholds - 1; t >= 0; --t) {
    tp += fg_hist[t];
    fp += bg_hist[t];
    const double precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    const double recall = positives > 0.0 ? tp / positives : 0.0;
    c.precision[t] = precision;
    c.recall[t] = recall;
    c.f_measure[t] = f_beta(precision, recall);

    c.e_measure[t] = e_from_counts(tp, fp, positives - tp, n - tp - fp - (positives - tp));
  }
  return c;
}

double f_measure_max(const GrayMap& pred, const GrayMap& gt) {
  require_same(pred, gt, "f_measure_max");
  if (std::none_of(gt.values.begin(), gt.values.end(), [](double v) { return v >= 0.5; })) {
    throw EmptyGroundTruth("F-measure undefined for ground truth without foreground");
  }
  const auto c = threshold_curves(pred, gt);
  return *std::max_element(c.f_measure.begin(), c.f_measure.end());
}

double e_measure_max(const GrayMap& pred, const GrayMap& gt) {
  const auto c = threshold_curves(pred, gt);
  return *std::max_element(c.e_measure.begin(), c.e_measure.end());
}

double s_object(const GrayMap& pred, const GrayMap& gt) {
  require_same(pred, gt, "s_object");
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.values[i] >= 0.5) fg.push_back(pred.values[i]);
    else bg.push_back(1.0 - pred.values[i]);
  }
  const double u = static_cast<double>(fg.size()) / static_cast<double>(gt.size());
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

double s_region(const GrayMap& pred, const GrayMap& gt) {
  require_same(pred, gt, "s_region");
  const int h = gt.height;
  const int w = gt.width;
  // Centroid in 1-based pixel coordinates, rounded half away from zero.
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double g = gt.at(y, x);
      total += g;
      sx += g * (x + 1);
      sy += g * (y + 1);
    }
  }
  int cx, cy;
  if (total == 0.0) {
    cx = static_cast<int>(std::round(w / 2.0));
    cy = static_cast<int>(std::round(h / 2.0));
  } else {
    cx = static_cast<int>(std::round(sx / total));
    cy = static_cast<int>(std::round(sy / total));
  }
  const double area = static_cast<double>(w) * h;
  const double w1 = static_cast<double>(cx) * cy / area;
  const double w2 = static_cast<double>(w - cx) * cy / area;
  const double w3 = static_cast<double>(cx) * (h - cy) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * region_ssim(pred, gt, 0, cy, 0, cx) + w2 * region_ssim(pred, gt, 0, cy, cx, w) +
         w3 * region_ssim(pred, gt, cy, h, 0, cx) + w4 * region_ssim(pred, gt, cy, h, cx, w);
}

double s_measure(const GrayMap& pred, const GrayMap& gt) {
  require_same(pred, gt, "s_measure");
  const double y = mean_of(gt.values);
  double q;
  if (y == 0.0) {
    q = 1.0 - mean_of(pred.values);
  } else if (y == 1.0) {
    q = mean_of(pred.values);
  } else {
    q = kAlpha * s_object(pred, gt) + (1.0 - kAlpha) * s_region(pred, gt);
  }
  return std::clamp(q, 0.0, 1.0);
}

ImageMetrics evaluate_image(const std::string& name, const GrayMap& pred, const GrayMap& gt) {
  ImageMetrics m;
  m.name = name;
  m.mae = mae(pred, gt);
  const bool has_fg =
      std::any_of(gt.values.begin(), gt.values.end(), [](double v) { return v >= 0.5; });
  if (has_fg) {
    const auto c = threshold_curves(pred, gt);
    m.f_max = *std::max_element(c.f_measure.begin(), c.f_measure.end());
    m.e_max = *std::max_element(c.e_measure.begin(), c.e_measure.end());
    m.s_measure = s_measure(pred, gt);
  }
  return m;
}

MetricReport summarize(std::vector<ImageMetrics> images) {
  MetricReport r;
  r.images = std::move(images);
  int counted = 0;
  for (const auto& m : r.images) {
    r.mae += m.mae;
    if (!m.f_max) {
      ++r.skipped_empty_gt;
      continue;
    }
    ++counted;
    r.f_max += *m.f_max;
    r.e_max += *m.e_max;
    r.s_measure += *m.s_measure;
  }
  if (!r.images.empty()) r.mae /= static_cast<double>(r.images.size());
  if (counted > 0) {
    r.f_max /= counted;
    r.e_max /= counted;
    r.s_measure /= counted;
  }
  return r;
}

MetricReport evaluate_dataset(const std::filesystem::path& pred_dir,
                              const std::filesystem::path& gt_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(pred_dir)) throw IoError("prediction directory not found: " + pred_dir.string());
  if (!fs::is_directory(gt_dir)) throw IoError("ground-truth directory not found: " + gt_dir.string());
  std::map<std::string, fs::path> preds = images_by_stem(pred_dir);
  std::map<std::string, fs::path> gts = images_by_stem(gt_dir);
  std::vector<ImageMetrics> rows;
  std::vector<std::string> unmatched;
  ThresholdCurves sum{};
  int curve_count = 0;
  for (const auto& [stem, gt_path] : gts) {
    auto it = preds.find(stem);
    if (it == preds.end()) {
      unmatched.push_back(gt_path.filename().string());
      continue;
    }
    Tensor gt_t = read_mask(gt_path);
    Tensor pred_t = read_gray(it->second);
    if (pred_t.spatial() != gt_t.spatial()) pred_t = ops::resize_bilinear(pred_t, gt_t.spatial());
    const GrayMap pred = GrayMap::from_tensor(pred_t);
    const GrayMap gt = GrayMap::from_tensor(gt_t);
    ImageMetrics m = evaluate_image(stem, pred, gt);
    if (m.f_max) {
      const auto c = threshold_curves(pred, gt);
      for (int t = 0; t < kThresholds; ++t) {
        sum.precision[t] += c.precision[t];
        sum.recall[t] += c.recall[t];
        sum.f_measure[t] += c.f_measure[t];
        sum.e_measure[t] += c.e_measure[t];
      }
      ++curve_count;
    }
    rows.push_back(std::move(m));
  }
  for (const auto& [stem, p] : preds) {
    if (!gts.contains(stem)) unmatched.push_back(p.filename().string());
  }
  for (const auto& u : unmatched) std::cerr << "warning: skipping unmatched file " << u << "\n";
  MetricReport r = summarize(std::move(rows));
  if (curve_count > 0) {
    for (int t = 0; t < kThresholds; ++t) {
      r.curves.precision[t] = sum.precision[t] / curve_count;
      r.curves.recall[t] = sum.recall[t] / curve_count;
      r.curves.f_measure[t] = sum.f_measure[t] / curve_count;
      r.curves.e_measure[t] = sum.e_measure[t] / curve_count;
    }
  }
  r.unmatched = std::move(unmatched);
  return r;
}

void write_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "name,mae,f_max,e_max,s_measure\n";
  auto opt = [](const std::optional<double>& v) {
    std::ostringstream s;
    s << std::setprecision(17);
    if (v) s << *v;
    return s.str();
  };
  for (const auto& m : report.images) {
    out << m.name << ',' << m.mae << ',' << opt(m.f_max) << ',' << opt(m.e_max) << ','
        << opt(m.s_measure) << '\n';
  }
  out << "mean," << report.mae << ',' << report.f_max << ',' << report.e_max << ','
      << report.s_measure << '\n';
}

}  // namespace seffsal::metrics
