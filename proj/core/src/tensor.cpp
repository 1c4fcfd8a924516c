#include "seffsal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace seffsal {

std::string Shape::str() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ContractError("negative tensor extent " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(values.begin(), values.end()) {
  if (data_.size() != shape.numel()) {
    throw ContractError("tensor value count " + std::to_string(data_.size()) +
                        " does not match shape " + shape.str());
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::min() const {
  if (data_.empty()) throw ContractError("min of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
  if (data_.empty()) throw ContractError("max of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

Tensor Tensor::slice_batch(int begin, int end) const {
  if (begin < 0 || end > shape_.n || begin >= end) {
    throw ContractError("batch slice [" + std::to_string(begin) + "," + std::to_string(end) +
                        ") out of range for " + shape_.str());
  }
  Shape s = shape_;
  s.n = end - begin;
  const std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.plane();
  Tensor out(s);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * per),
            data_.begin() + static_cast<std::ptrdiff_t>(end * per), out.data_.begin());
  return out;
}

Tensor stack_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("stack_batch of zero tensors");
  Shape s = parts.front().shape();
  s.n = 0;
  for (const auto& p : parts) {
    const auto& ps = p.shape();
    if (ps.c != s.c || ps.h != s.h || ps.w != s.w) {
      throw ContractError("stack_batch extent mismatch " + ps.str() + " vs " +
                          parts.front().shape().str());
    }
    s.n += ps.n;
  }
  Tensor out(s);
  double* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p.values().begin(), p.values().end(), dst);
  return out;
}

Tensor repeat_channels(const Tensor& t, int channels) {
  const auto& s = t.shape();
  if (s.c != 1) throw ContractError("repeat_channels expects 1 channel, got " + s.str());
  Tensor out({s.n, channels, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < channels; ++c) {
      std::copy_n(t.plane(n, 0), s.plane(), out.plane(n, c));
    }
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ContractError("max_abs_diff shape mismatch " + a.shape().str() + " vs " +
                        b.shape().str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace seffsal
