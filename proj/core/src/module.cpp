#include "seffsal/module.hpp"

#include <cmath>

namespace seffsal {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

std::size_t Module::parameter_count() {
  std::size_t total = 0;
  visit("", [&](const std::string&, Var& p) { total += p.value().numel(); },
        [](const std::string&, Tensor&) {});
  return total;
}

std::vector<std::pair<std::string, Var>> Module::named_parameters(const std::string& prefix) {
  std::vector<std::pair<std::string, Var>> out;
  visit(prefix, [&](const std::string& name, Var& p) { out.emplace_back(name, p); },
        [](const std::string&, Tensor&) {});
  return out;
}

void Module::zero_grad() {
  visit("", [](const std::string&, Var& p) { p.zero_grad(); },
        [](const std::string&, Tensor&) {});
}

Conv2d::Conv2d(const ConvOptions& opts, std::uint64_t seed) : opts_(opts) {
  if (opts.in <= 0 || opts.out <= 0 || opts.kernel <= 0) {
    throw ContractError("Conv2d requires positive channel counts and kernel");
  }
  if (opts.depthwise && opts.in != opts.out) {
    throw ContractError("depthwise Conv2d requires in == out");
  }
  spec_.stride = opts.stride;
  spec_.dilation = opts.dilation;
  spec_.pad = opts.pad >= 0 ? opts.pad : opts.dilation * (opts.kernel - 1) / 2;
  spec_.groups = opts.depthwise ? opts.in : 1;

  const int in_per_group = opts.depthwise ? 1 : opts.in;
  Tensor w({opts.out, in_per_group, opts.kernel, opts.kernel});
  const double fan_in = static_cast<double>(in_per_group) * opts.kernel * opts.kernel;
  const double bound = std::sqrt(6.0 / fan_in);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w.values()) v = dist(rng);
  weight_ = Var(std::move(w), true);
  if (opts.bias) bias_ = Var(Tensor({1, opts.out, 1, 1}, 0.0), true);
}

Var Conv2d::forward(const Var& x) const { return ops::conv2d(x, weight_, bias_, spec_); }

void Conv2d::visit(const std::string& prefix, const ParamVisitor& params, const BufferVisitor&) {
  params(prefix + "weight", weight_);
  if (bias_.defined()) params(prefix + "bias", bias_);
}

BatchNorm2d::BatchNorm2d(int channels)
    : gamma_(Tensor({1, channels, 1, 1}, 1.0), true),
      beta_(Tensor({1, channels, 1, 1}, 0.0), true),
      stats_{Tensor({1, channels, 1, 1}, 0.0), Tensor({1, channels, 1, 1}, 1.0)} {}

Var BatchNorm2d::forward(const Var& x, Mode mode) const {
  return ops::batch_norm(x, gamma_, beta_, stats_, mode == Mode::train);
}

void BatchNorm2d::visit(const std::string& prefix, const ParamVisitor& params,
                        const BufferVisitor& buffers) {
  params(prefix + "gamma", gamma_);
  params(prefix + "beta", beta_);
  buffers(prefix + "running_mean", stats_.mean);
  buffers(prefix + "running_var", stats_.var);
}

namespace {
ConvOptions without_bias(ConvOptions opts) {
  opts.bias = false;  // the normalization's shift subsumes it
  return opts;
}
}  // namespace

ConvBnRelu::ConvBnRelu(const ConvOptions& opts, std::uint64_t seed)
    : conv_(without_bias(opts), seed), norm_(opts.out) {}

Var ConvBnRelu::forward(const Var& x, Mode mode) const {
  return ops::relu(norm_.forward(conv_.forward(x), mode));
}

void ConvBnRelu::visit(const std::string& prefix, const ParamVisitor& params,
                       const BufferVisitor& buffers) {
  conv_.visit(prefix + "conv.", params, buffers);
  norm_.visit(prefix + "bn.", params, buffers);
}

}  // namespace seffsal
