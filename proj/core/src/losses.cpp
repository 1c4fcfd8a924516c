#include "seffsal/losses.hpp"

#include <algorithm>
#include <cmath>

namespace seffsal {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

void check_mask(const Tensor& gt, const char* what) {
  require(gt.shape().c == 1, std::string(what) + " must have one channel, got " + gt.shape().str());
  for (double v : gt.values()) {
    require(v >= 0.0 && v <= 1.0, std::string(what) + " values must lie in [0, 1]");
  }
}

// Same-size box mean of one line with replicated borders.
void box_mean_line(const double* src, std::size_t stride, int len, int radius, double* dst,
                   std::vector<double>& prefix) {
  prefix.assign(static_cast<std::size_t>(len) + 2 * radius + 1, 0.0);
  for (int i = -radius; i < len + radius; ++i) {
    const int c = std::clamp(i, 0, len - 1);
    prefix[i + radius + 1] = prefix[i + radius] + src[c * stride];
  }
  const double inv = 1.0 / (2 * radius + 1);
  for (int i = 0; i < len; ++i) {
    dst[i] = (prefix[i + 2 * radius + 1] - prefix[i]) * inv;
  }
}

struct AreaTaps {
  std::vector<std::vector<std::pair<int, double>>> taps;
};

AreaTaps area_axis(int in, int out) {
  AreaTaps a;
  a.taps.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double lo = o * scale;
    const double hi = (o + 1) * scale;
    const int first = static_cast<int>(std::floor(lo));
    const int last = std::min(in - 1, static_cast<int>(std::ceil(hi)) - 1);
    for (int i = first; i <= last; ++i) {
      const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (overlap > 0.0) a.taps[o].emplace_back(i, overlap / scale);
    }
  }
  return a;
}

}  // namespace

void ApiWeights::validate() const {
  if (lambda_bce < 0 || lambda_iou < 0 || lambda_l1 < 0) {
    throw ContractError("loss weights must be non-negative");
  }
  if (omega_mu <= 0) throw ContractError("omega_mu must be positive");
  for (int k : pooling_kernels) {
    if (k <= 0 || k % 2 == 0) {
      throw ContractError("pooling kernels must be positive and odd, got " + std::to_string(k));
    }
  }
}

Tensor adaptive_weight(const Tensor& gt, std::span<const int> kernels, double mu) {
  check_mask(gt, "ground truth");
  const auto& s = gt.shape();
  Tensor omega(s, 1.0);
  Tensor tmp(s);
  Tensor pooled(s);
  std::vector<double> prefix;
  std::vector<double> line(std::max(s.h, s.w));
  for (int k : kernels) {
    require(k > 0 && k % 2 == 1, "pooling kernel must be positive and odd");
    const int r = k / 2;
    for (int n = 0; n < s.n; ++n) {
      const double* g = gt.plane(n, 0);
      double* t = tmp.plane(n, 0);
      double* p = pooled.plane(n, 0);
      for (int y = 0; y < s.h; ++y) {
        box_mean_line(g + static_cast<std::size_t>(y) * s.w, 1, s.w, r, line.data(), prefix);
        std::copy_n(line.data(), s.w, t + static_cast<std::size_t>(y) * s.w);
      }
      for (int x = 0; x < s.w; ++x) {
        box_mean_line(t + x, static_cast<std::size_t>(s.w), s.h, r, line.data(), prefix);
        for (int y = 0; y < s.h; ++y) p[static_cast<std::size_t>(y) * s.w + x] = line[y];
      }
      double* o = omega.plane(n, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] += mu * std::abs(p[i] - g[i]);
    }
  }
  return omega;
}

ApiTerms api_terms(const Tensor& pred, const Tensor& gt, const Tensor& omega) {
  require(pred.shape() == gt.shape() && gt.shape() == omega.shape(),
          "loss operands differ in shape: pred " + pred.shape().str() + ", gt " +
              gt.shape().str() + ", omega " + omega.shape().str());
  const auto& s = pred.shape();
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  ApiTerms out;
  for (int n = 0; n < s.n; ++n) {
    const double* p = pred.plane(n, 0);
    const double* g = gt.plane(n, 0);
    const double* w = omega.plane(n, 0);
    double wsum = 0, bce = 0, inter = 0, uni = 0, l1 = 0;
    for (std::size_t i = 0; i < per; ++i) {
      const double pc = std::clamp(p[i], kLossEps, 1.0 - kLossEps);
      wsum += w[i];
      bce += -w[i] * (g[i] * std::log(pc) + (1.0 - g[i]) * std::log(1.0 - pc));
      inter += w[i] * p[i] * g[i];
      uni += w[i] * (p[i] + g[i] - p[i] * g[i]);
      l1 += w[i] * std::abs(p[i] - g[i]);
    }
    out.bce += bce / wsum;
    out.iou += 1.0 - inter / (uni + kLossEps);
    out.l1 += l1 / wsum;
  }
  out.bce /= s.n;
  out.iou /= s.n;
  out.l1 /= s.n;
  return out;
}

double a_bce(const Tensor& pred, const Tensor& gt, const Tensor& omega) {
  return api_terms(pred, gt, omega).bce;
}
double a_iou(const Tensor& pred, const Tensor& gt, const Tensor& omega) {
  return api_terms(pred, gt, omega).iou;
}
double a_l1(const Tensor& pred, const Tensor& gt, const Tensor& omega) {
  return api_terms(pred, gt, omega).l1;
}

double combine_api(const ApiTerms& terms, const ApiWeights& weights) {
  return weights.lambda_bce * terms.bce + weights.lambda_iou * terms.iou +
         weights.lambda_l1 * terms.l1;
}

ApiLoss api_loss(const Var& pred, const Tensor& gt, const ApiWeights& weights) {
  check_mask(gt, "ground truth");
  const Tensor omega = adaptive_weight(gt, weights.pooling_kernels, weights.omega_mu);
  ApiLoss out;
  out.terms = api_terms(pred.value(), gt, omega);
  const double value = combine_api(out.terms, weights);
  out.value = Var::make(
      Tensor({1, 1, 1, 1}, value), {pred}, [pred, gt, omega, weights](const Tensor& gout) {
        const auto& s = pred.shape();
        const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
        auto& gp = pred.grad_buffer();
        const double batch_scale = gout[0] / s.n;
        for (int n = 0; n < s.n; ++n) {
          const double* p = pred.value().plane(n, 0);
          const double* g = gt.plane(n, 0);
          const double* w = omega.plane(n, 0);
          double wsum = 0, inter = 0, uni = 0;
          for (std::size_t i = 0; i < per; ++i) {
            wsum += w[i];
            inter += w[i] * p[i] * g[i];
            uni += w[i] * (p[i] + g[i] - p[i] * g[i]);
          }
          const double den = uni + kLossEps;
          double* d = gp.plane(n, 0);
          for (std::size_t i = 0; i < per; ++i) {
            double dbce = 0.0;
            if (p[i] > kLossEps && p[i] < 1.0 - kLossEps) {
              dbce = w[i] * (-g[i] / p[i] + (1.0 - g[i]) / (1.0 - p[i])) / wsum;
            }
            const double diou = -(w[i] * g[i] * den - inter * w[i] * (1.0 - g[i])) / (den * den);
            const double diff = p[i] - g[i];
            const double dl1 = diff > 0 ? w[i] / wsum : (diff < 0 ? -w[i] / wsum : 0.0);
            d[i] += batch_scale * (weights.lambda_bce * dbce + weights.lambda_iou * diou +
                                   weights.lambda_l1 * dl1);
          }
        }
      });
  return out;
}

Tensor resize_area(const Tensor& x, Size2 size) {
  const auto& s = x.shape();
  require(size.h > 0 && size.w > 0, "resize_area to empty size");
  if (s.h == size.h && s.w == size.w) return x;
  const AreaTaps ay = area_axis(s.h, size.h);
  const AreaTaps ax = area_axis(s.w, size.w);
  Tensor out({s.n, s.c, size.h, size.w});
  std::vector<double> rows(static_cast<std::size_t>(size.h) * s.w);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = x.plane(n, c);
      std::fill(rows.begin(), rows.end(), 0.0);
      for (int oy = 0; oy < size.h; ++oy) {
        double* r = rows.data() + static_cast<std::size_t>(oy) * s.w;
        for (auto [iy, wy] : ay.taps[oy]) {
          const double* line = src + static_cast<std::size_t>(iy) * s.w;
          for (int x0 = 0; x0 < s.w; ++x0) r[x0] += wy * line[x0];
        }
      }
      double* dst = out.plane(n, c);
      for (int oy = 0; oy < size.h; ++oy) {
        const double* r = rows.data() + static_cast<std::size_t>(oy) * s.w;
        for (int ox = 0; ox < size.w; ++ox) {
          double acc = 0.0;
          for (auto [ix, wx] : ax.taps[ox]) acc += wx * r[ix];
          dst[static_cast<std::size_t>(oy) * size.w + ox] = acc;
        }
      }
    }
  }
  return out;
}

Tensor resize_mask(const Tensor& gt, Size2 size) {
  Tensor out = resize_area(gt, size);
  for (auto& v : out.values()) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

LossBreakdown total_loss(const SaliencyBundle& bundle, const Tensor& gt,
                         const ApiWeights& weights) {
  check_mask(gt, "ground truth");
  LossBreakdown out;
  std::vector<Var> terms;
  for (auto [i, j] : bundle.entries()) {
    const Var& map = bundle.at(i, j);
    if (map.shape().n != gt.shape().n) {
      throw ContractError("bundle batch " + std::to_string(map.shape().n) +
                          " does not match ground-truth batch " + std::to_string(gt.shape().n));
    }
    const Tensor target = resize_mask(gt, map.value().spatial());
    ApiLoss l = api_loss(map, target, weights);
    out.heads.push_back({i, j, l.value.value()[0], l.terms});
    terms.push_back(std::move(l.value));
  }
  if (terms.empty()) throw ContractError("total_loss of an empty bundle");
  out.total = ops::add_scalars(terms);
  return out;
}

}  // namespace seffsal
