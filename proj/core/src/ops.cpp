#include "seffsal/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

namespace seffsal::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

constexpr double kSigmoidFloor = 0x1p-53;
constexpr double kSigmoidCeil = 1.0 - 0x1p-53;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

struct ConvGeom {
  int n, cin, h, w;
  int cout, k;
  int ho, wo;
};

void im2col(const double* src, const ConvGeom& g, const ConvSpec& s, double* cols) {
  const std::size_t plane_out = static_cast<std::size_t>(g.ho) * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    const double* sp = src + static_cast<std::size_t>(c) * g.h * g.w;
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw) {
        double* row = cols + ((static_cast<std::size_t>(c) * g.k + kh) * g.k + kw) * plane_out;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * s.stride - s.pad + kh * s.dilation;
          double* dst = row + static_cast<std::size_t>(oh) * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill_n(dst, g.wo, 0.0);
            continue;
          }
          const double* line = sp + static_cast<std::size_t>(ih) * g.w;
          for (int ow = 0; ow < g.wo; ++ow) {
            const int iw = ow * s.stride - s.pad + kw * s.dilation;
            dst[ow] = (iw >= 0 && iw < g.w) ? line[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, const ConvSpec& s, double* dst) {
  const std::size_t plane_out = static_cast<std::size_t>(g.ho) * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    double* dp = dst + static_cast<std::size_t>(c) * g.h * g.w;
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw) {
        const double* row =
            cols + ((static_cast<std::size_t>(c) * g.k + kh) * g.k + kw) * plane_out;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * s.stride - s.pad + kh * s.dilation;
          if (ih < 0 || ih >= g.h) continue;
          const double* srow = row + static_cast<std::size_t>(oh) * g.wo;
          double* line = dp + static_cast<std::size_t>(ih) * g.w;
          for (int ow = 0; ow < g.wo; ++ow) {
            const int iw = ow * s.stride - s.pad + kw * s.dilation;
            if (iw >= 0 && iw < g.w) line[iw] += srow[ow];
          }
        }
      }
    }
  }
}

Var conv_dense(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec,
               const ConvGeom& g) {
  const int kdim = g.cin * g.k * g.k;
  const int p = g.ho * g.wo;
  const bool pointwise = g.k == 1 && spec.stride == 1 && spec.pad == 0;
  Tensor out({g.n, g.cout, g.ho, g.wo});
  MapConstMat wmat(weight.value().data(), g.cout, kdim);
  Buffer cols(pointwise ? 0 : static_cast<std::size_t>(kdim) * p);
  for (int n = 0; n < g.n; ++n) {
    const double* src = x.value().plane(n, 0);
    if (!pointwise) {
      im2col(src, g, spec, cols.data());
      src = cols.data();
    }
    MapConstMat xm(src, kdim, p);
    MapMat ym(out.plane(n, 0), g.cout, p);
    ym.noalias() = wmat * xm;
    if (bias.defined()) {
      const double* b = bias.value().data();
      for (int co = 0; co < g.cout; ++co) ym.row(co).array() += b[co];
    }
  }

  return Var::make(std::move(out), {x, weight, bias.defined() ? bias : Var()},
                   [x, weight, bias, spec, g, kdim, p, pointwise](const Tensor& gout) {
                     Buffer cols(pointwise ? 0 : static_cast<std::size_t>(kdim) * p);
                     Buffer dcols(static_cast<std::size_t>(kdim) * p);
                     MapConstMat wmat(weight.value().data(), g.cout, kdim);
                     const bool need_x = x.requires_grad();
                     const bool need_w = weight.requires_grad();
                     double* gx = need_x ? x.grad_buffer().data() : nullptr;
                     for (int n = 0; n < g.n; ++n) {
                       MapConstMat gy(gout.plane(n, 0), g.cout, p);
                       if (need_w) {
                         const double* src = x.value().plane(n, 0);
                         if (!pointwise) {
                           im2col(src, g, spec, cols.data());
                           src = cols.data();
                         }
                         MapConstMat xm(src, kdim, p);
                         MapMat gw(weight.grad_buffer().data(), g.cout, kdim);
                         gw.noalias() += gy * xm.transpose();
                       }
                       if (need_x) {
                         double* gxn = gx + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
                         if (pointwise) {
                           MapMat gxm(gxn, kdim, p);
                           gxm.noalias() += wmat.transpose() * gy;
                         } else {
                           MapMat dc(dcols.data(), kdim, p);
                           dc.noalias() = wmat.transpose() * gy;
                           col2im_add(dcols.data(), g, spec, gxn);
                         }
                       }
                       if (bias.defined() && bias.requires_grad()) {
                         double* gb = bias.grad_buffer().data();
                         for (int co = 0; co < g.cout; ++co) gb[co] += gy.row(co).sum();
                       }
                     }
                   });
}

Var conv_depthwise(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec,
                   const ConvGeom& g) {
  Tensor out({g.n, g.cout, g.ho, g.wo});
  const double* wt = weight.value().data();
  const int kk = g.k * g.k;
  for (int n = 0; n < g.n; ++n) {
    for (int c = 0; c < g.cin; ++c) {
      const double* src = x.value().plane(n, c);
      double* dst = out.plane(n, c);
      const double b = bias.defined() ? bias.value()[c] : 0.0;
      std::fill_n(dst, static_cast<std::size_t>(g.ho) * g.wo, b);
      for (int kh = 0; kh < g.k; ++kh) {
        for (int kw = 0; kw < g.k; ++kw) {
          const double wv = wt[c * kk + kh * g.k + kw];
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * spec.stride - spec.pad + kh * spec.dilation;
            if (ih < 0 || ih >= g.h) continue;
            const double* line = src + static_cast<std::size_t>(ih) * g.w;
            double* orow = dst + static_cast<std::size_t>(oh) * g.wo;
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow * spec.stride - spec.pad + kw * spec.dilation;
              if (iw >= 0 && iw < g.w) orow[ow] += wv * line[iw];
            }
          }
        }
      }
    }
  }
  return Var::make(
      std::move(out), {x, weight, bias.defined() ? bias : Var()},
      [x, weight, bias, spec, g, kk](const Tensor& gout) {
        const bool need_x = x.requires_grad();
        const bool need_w = weight.requires_grad();
        const double* wt = weight.value().data();
        double* gw = need_w ? weight.grad_buffer().data() : nullptr;
        double* gx = need_x ? x.grad_buffer().data() : nullptr;
        for (int n = 0; n < g.n; ++n) {
          for (int c = 0; c < g.cin; ++c) {
            const double* src = x.value().plane(n, c);
            const double* gy = gout.plane(n, c);
            double* gxp = need_x ? gx + x.value().index(n, c, 0, 0) : nullptr;
            for (int kh = 0; kh < g.k; ++kh) {
              for (int kw = 0; kw < g.k; ++kw) {
                const double wv = wt[c * kk + kh * g.k + kw];
                double acc = 0.0;
                for (int oh = 0; oh < g.ho; ++oh) {
                  const int ih = oh * spec.stride - spec.pad + kh * spec.dilation;
                  if (ih < 0 || ih >= g.h) continue;
                  const double* line = src + static_cast<std::size_t>(ih) * g.w;
                  const double* grow = gy + static_cast<std::size_t>(oh) * g.wo;
                  double* gline = need_x ? gxp + static_cast<std::size_t>(ih) * g.w : nullptr;
                  for (int ow = 0; ow < g.wo; ++ow) {
                    const int iw = ow * spec.stride - spec.pad + kw * spec.dilation;
                    if (iw < 0 || iw >= g.w) continue;
                    acc += grow[ow] * line[iw];
                    if (gline) gline[iw] += wv * grow[ow];
                  }
                }
                if (gw) gw[c * kk + kh * g.k + kw] += acc;
              }
            }
            if (bias.defined() && bias.requires_grad()) {
              double s = 0.0;
              for (std::size_t i = 0; i < static_cast<std::size_t>(g.ho) * g.wo; ++i) s += gy[i];
              bias.grad_buffer()[c] += s;
            }
          }
        }
      });
}

struct AxisMap {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;
};

AxisMap bilinear_axis(int in, int out) {
  AxisMap m;
  m.lo.resize(out);
  m.hi.resize(out);
  m.frac.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    m.lo[o] = i0;
    m.hi[o] = i0 < in - 1 ? i0 + 1 : i0;
    m.frac[o] = src - i0;
  }
  return m;
}

}  // namespace

int conv_out_size(int in, int k, const ConvSpec& spec) {
  return (in + 2 * spec.pad - spec.dilation * (k - 1) - 1) / spec.stride + 1;
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  require(ws.h == ws.w, "conv2d expects a square kernel, got " + ws.str());
  require(spec.stride >= 1 && spec.dilation >= 1 && spec.pad >= 0, "conv2d invalid spec");
  ConvGeom g{xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, 0, 0};
  g.ho = conv_out_size(xs.h, ws.h, spec);
  g.wo = conv_out_size(xs.w, ws.w, spec);
  require(g.ho > 0 && g.wo > 0,
          "conv2d input " + xs.str() + " too small for kernel " + ws.str());
  if (bias.defined()) {
    require(bias.value().numel() == static_cast<std::size_t>(ws.n),
            "conv2d bias size mismatch " + bias.shape().str());
  }
  if (spec.groups == 1) {
    require(ws.c == xs.c, "conv2d channel mismatch: input " + xs.str() + " weight " + ws.str());
    return conv_dense(x, weight, bias, spec, g);
  }
  require(spec.groups == xs.c && ws.n == xs.c && ws.c == 1,
          "conv2d supports only dense or depthwise grouping; input " + xs.str() + " weight " +
              ws.str());
  return conv_depthwise(x, weight, bias, spec, g);
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, RunningStats& stats,
               bool training, double momentum, double eps) {
  const auto& s = x.shape();
  require(gamma.value().numel() == static_cast<std::size_t>(s.c) &&
              beta.value().numel() == static_cast<std::size_t>(s.c),
          "batch_norm parameter size mismatch for input " + s.str());
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  std::vector<double> mean(s.c), inv_std(s.c);
  if (training) {
    for (int c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const double m = acc / count;
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      const double var = sq / count;
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      stats.mean[c] = (1.0 - momentum) * stats.mean[c] + momentum * m;
      stats.var[c] = (1.0 - momentum) * stats.var[c] + momentum * unbiased;
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      mean[c] = stats.mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.var[c] + eps);
    }
  }
  Tensor xhat(s);
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double* xh = xhat.plane(n, c);
      double* o = out.plane(n, c);
      const double gm = gamma.value()[c];
      const double bt = beta.value()[c];
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mean[c]) * inv_std[c];
        o[i] = gm * xh[i] + bt;
      }
    }
  }
  return Var::make(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std, training, s, plane,
       count](const Tensor& gout) {
        std::vector<double> sum_dy(s.c, 0.0), sum_dy_xhat(s.c, 0.0);
        for (int n = 0; n < s.n; ++n) {
          for (int c = 0; c < s.c; ++c) {
            const double* gy = gout.plane(n, c);
            const double* xh = xhat.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy[c] += gy[i];
              sum_dy_xhat[c] += gy[i] * xh[i];
            }
          }
        }
        if (gamma.requires_grad()) {
          auto& gg = gamma.grad_buffer();
          for (int c = 0; c < s.c; ++c) gg[c] += sum_dy_xhat[c];
        }
        if (beta.requires_grad()) {
          auto& gb = beta.grad_buffer();
          for (int c = 0; c < s.c; ++c) gb[c] += sum_dy[c];
        }
        if (!x.requires_grad()) return;
        auto& gx = x.grad_buffer();
        for (int n = 0; n < s.n; ++n) {
          for (int c = 0; c < s.c; ++c) {
            const double scale = gamma.value()[c] * inv_std[c];
            const double* gy = gout.plane(n, c);
            const double* xh = xhat.plane(n, c);
            double* dx = gx.plane(n, c);
            if (training) {
              const double mdy = sum_dy[c] / count;
              const double mdyx = sum_dy_xhat[c] / count;
              for (std::size_t i = 0; i < plane; ++i) {
                dx[i] += scale * (gy[i] - mdy - xh[i] * mdyx);
              }
            } else {
              for (std::size_t i = 0; i < plane; ++i) dx[i] += scale * gy[i];
            }
          }
        }
      });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return Var::make(std::move(out), {x}, [x](const Tensor& gout) {
    auto& gx = x.grad_buffer();
    const auto& xv = x.value();
    for (std::size_t i = 0; i < gx.numel(); ++i) {
      if (xv[i] > 0.0) gx[i] += gout[i];
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = xv[i];
    double y;
    if (v >= 0.0) {
      y = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y = e / (1.0 + e);
    }
    out[i] = std::clamp(y, kSigmoidFloor, kSigmoidCeil);
  }
  Tensor y = out;
  return Var::make(std::move(out), {x}, [x, y = std::move(y)](const Tensor& gout) {
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gout[i] * y[i] * (1.0 - y[i]);
  });
}

Var add(const Var& a, const Var& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as == bs) {
    Tensor out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return Var::make(std::move(out), {a, b}, [a, b](const Tensor& gout) {
      a.accumulate(gout);
      b.accumulate(gout);
    });
  }
  require(bs.n == as.n && bs.c == as.c && bs.h == 1 && bs.w == 1,
          "add shape mismatch " + as.str() + " + " + bs.str());
  Tensor out = a.value();
  for (int n = 0; n < as.n; ++n) {
    for (int c = 0; c < as.c; ++c) {
      const double v = b.value().at(n, c, 0, 0);
      double* p = out.plane(n, c);
      for (std::size_t i = 0; i < as.plane(); ++i) p[i] += v;
    }
  }
  return Var::make(std::move(out), {a, b}, [a, b, as](const Tensor& gout) {
    a.accumulate(gout);
    if (!b.requires_grad()) return;
    auto& gb = b.grad_buffer();
    for (int n = 0; n < as.n; ++n) {
      for (int c = 0; c < as.c; ++c) {
        const double* p = gout.plane(n, c);
        double s = 0.0;
        for (std::size_t i = 0; i < as.plane(); ++i) s += p[i];
        gb.at(n, c, 0, 0) += s;
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "sub shape mismatch " + a.shape().str() + " - " +
                                      b.shape().str());
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return Var::make(std::move(out), {a, b}, [a, b](const Tensor& gout) {
    a.accumulate(gout);
    if (!b.requires_grad()) return;
    auto& gb = b.grad_buffer();
    for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= gout[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "mul shape mismatch " + a.shape().str() + " * " +
                                      b.shape().str());
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return Var::make(std::move(out), {a, b}, [a, b](const Tensor& gout) {
    if (a.requires_grad()) {
      auto& ga = a.grad_buffer();
      const auto& bv = b.value();
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gout[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      const auto& av = a.value();
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += gout[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  return Var::make(std::move(out), {a}, [a, factor](const Tensor& gout) {
    auto& ga = a.grad_buffer();
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gout[i] * factor;
  });
}

Var concat_channels(std::span<const Var> parts) {
  require(!parts.empty(), "concat_channels of zero tensors");
  Shape s = parts.front().shape();
  s.c = 0;
  for (const auto& p : parts) {
    const auto& ps = p.shape();
    require(ps.n == s.n && ps.h == s.h && ps.w == s.w,
            "concat_channels extent mismatch " + ps.str() + " vs " +
                parts.front().shape().str());
    s.c += ps.c;
  }
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    int offset = 0;
    for (const auto& p : parts) {
      const auto& ps = p.shape();
      std::copy_n(p.value().plane(n, 0), static_cast<std::size_t>(ps.c) * ps.plane(),
                  out.plane(n, offset));
      offset += ps.c;
    }
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return Var::make(std::move(out), owned, [owned, s](const Tensor& gout) {
    int offset = 0;
    for (const auto& p : owned) {
      const auto& ps = p.shape();
      if (p.requires_grad()) {
        auto& gp = p.grad_buffer();
        for (int n = 0; n < s.n; ++n) {
          const double* src = gout.plane(n, offset);
          double* dst = gp.plane(n, 0);
          for (std::size_t i = 0; i < static_cast<std::size_t>(ps.c) * ps.plane(); ++i) {
            dst[i] += src[i];
          }
        }
      }
      offset += ps.c;
    }
  });
}

Tensor resize_bilinear(const Tensor& x, Size2 size) {
  const auto& s = x.shape();
  require(size.h > 0 && size.w > 0, "resize_bilinear to empty size");
  if (s.h == size.h && s.w == size.w) return x;
  const AxisMap ay = bilinear_axis(s.h, size.h);
  const AxisMap ax = bilinear_axis(s.w, size.w);
  Tensor out({s.n, s.c, size.h, size.w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* src = x.plane(n, c);
      double* dst = out.plane(n, c);
      for (int oy = 0; oy < size.h; ++oy) {
        const double* r0 = src + static_cast<std::size_t>(ay.lo[oy]) * s.w;
        const double* r1 = src + static_cast<std::size_t>(ay.hi[oy]) * s.w;
        const double fy = ay.frac[oy];
        for (int ox = 0; ox < size.w; ++ox) {
          const double fx = ax.frac[ox];
          const double top = r0[ax.lo[ox]] + fx * (r0[ax.hi[ox]] - r0[ax.lo[ox]]);
          const double bot = r1[ax.lo[ox]] + fx * (r1[ax.hi[ox]] - r1[ax.lo[ox]]);
          dst[static_cast<std::size_t>(oy) * size.w + ox] = top + fy * (bot - top);
        }
      }
    }
  }
  return out;
}

Var resize_bilinear(const Var& x, Size2 size) {
  const auto s = x.shape();
  if (s.h == size.h && s.w == size.w) return x;
  Tensor out = resize_bilinear(x.value(), size);
  return Var::make(std::move(out), {x}, [x, s, size](const Tensor& gout) {
    const AxisMap ay = bilinear_axis(s.h, size.h);
    const AxisMap ax = bilinear_axis(s.w, size.w);
    auto& gx = x.grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double* g = gout.plane(n, c);
        double* dst = gx.plane(n, c);
        for (int oy = 0; oy < size.h; ++oy) {
          double* r0 = dst + static_cast<std::size_t>(ay.lo[oy]) * s.w;
          double* r1 = dst + static_cast<std::size_t>(ay.hi[oy]) * s.w;
          const double fy = ay.frac[oy];
          for (int ox = 0; ox < size.w; ++ox) {
            const double fx = ax.frac[ox];
            const double v = g[static_cast<std::size_t>(oy) * size.w + ox];
            r0[ax.lo[ox]] += (1.0 - fy) * (1.0 - fx) * v;
            r0[ax.hi[ox]] += (1.0 - fy) * fx * v;
            r1[ax.lo[ox]] += fy * (1.0 - fx) * v;
            r1[ax.hi[ox]] += fy * fx * v;
          }
        }
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  const auto s = x.shape();
  Tensor out({s.n, s.c, 1, 1});
  std::vector<double> buf(s.plane());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      std::copy_n(p, buf.size(), buf.begin());
      std::sort(buf.begin(), buf.end());
      double acc = 0.0;
      for (double v : buf) acc += v;
      out.at(n, c, 0, 0) = acc / static_cast<double>(s.plane());
    }
  }
  return Var::make(std::move(out), {x}, [x, s](const Tensor& gout) {
    auto& gx = x.grad_buffer();
    const double inv = 1.0 / static_cast<double>(s.plane());
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double v = gout.at(n, c, 0, 0) * inv;
        double* p = gx.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) p[i] += v;
      }
    }
  });
}

Var sum(const Var& x) {
  Tensor out({1, 1, 1, 1}, x.value().sum());
  return Var::make(std::move(out), {x}, [x](const Tensor& gout) {
    auto& gx = x.grad_buffer();
    for (auto& v : gx.values()) v += gout[0];
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require(x.shape() == weights.shape(), "weighted_sum shape mismatch " + x.shape().str() +
                                            " vs " + weights.shape().str());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.numel(); ++i) acc += x.value()[i] * weights[i];
  return Var::make(Tensor({1, 1, 1, 1}, acc), {x}, [x, weights](const Tensor& gout) {
    auto& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gout[0] * weights[i];
  });
}

Var add_scalars(std::span<const Var> terms) {
  require(!terms.empty(), "add_scalars of zero terms");
  double acc = 0.0;
  for (const auto& t : terms) {
    require(t.value().numel() == 1, "add_scalars expects scalars, got " + t.shape().str());
    acc += t.value()[0];
  }
  std::vector<Var> owned(terms.begin(), terms.end());
  return Var::make(Tensor({1, 1, 1, 1}, acc), owned, [owned](const Tensor& gout) {
    for (const auto& t : owned) t.accumulate(gout);
  });
}

}  // namespace seffsal::ops
