#include "seffsal/seff.hpp"

#include <array>
#include <string>

namespace seffsal {

ChannelBottleneck::ChannelBottleneck(int channels, int reduction, std::uint64_t seed)
    : squeeze_({.in = channels, .out = channels / reduction, .kernel = 1, .bias = false},
               derive_seed(seed, "squeeze")),
      norm_(channels / reduction),
      expand_({.in = channels / reduction, .out = channels, .kernel = 1},
              derive_seed(seed, "expand")) {}

Var ChannelBottleneck::forward(const Var& x, Mode mode) const {
  return expand_.forward(ops::relu(norm_.forward(squeeze_.forward(x), mode)));
}

void ChannelBottleneck::visit(const std::string& prefix, const ParamVisitor& params,
                              const BufferVisitor& buffers) {
  squeeze_.visit(prefix + "squeeze.", params, buffers);
  norm_.visit(prefix + "bn.", params, buffers);
  expand_.visit(prefix + "expand.", params, buffers);
}

namespace {

SeffOptions validated(const SeffOptions& opts) {
  if (opts.channels <= 0 || opts.reduction <= 0) {
    throw ContractError("SeffBlock requires positive channels and reduction");
  }
  if (opts.channels % opts.reduction != 0) {
    throw ContractError("SeffBlock reduction " + std::to_string(opts.reduction) +
                        " does not divide channels " + std::to_string(opts.channels));
  }
  return opts;
}

ConvOptions refine_opts(int in, int out) { return {.in = in, .out = out, .kernel = 3}; }

}  // namespace

SeffBlock::SeffBlock(const SeffOptions& opts, std::uint64_t seed)
    : opts_(validated(opts)),
      refine1a_(refine_opts(opts.channels + kGuidanceChannels, opts.channels),
                derive_seed(seed, "refine1.0")),
      refine1b_(refine_opts(opts.channels, opts.channels), derive_seed(seed, "refine1.1")),
      refine2a_(refine_opts(opts.channels + kGuidanceChannels, opts.channels),
                derive_seed(seed, "refine2.0")),
      refine2b_(refine_opts(opts.channels, opts.channels), derive_seed(seed, "refine2.1")),
      lcc_(opts.channels, opts.reduction, derive_seed(seed, "lcc")),
      gcc_(opts.channels, opts.reduction, derive_seed(seed, "gcc")) {}

void SeffBlock::check_inputs(const Var& f1, const Var& f2, const Var& guidance) const {
  const auto& a = f1.shape();
  const auto& b = f2.shape();
  const auto& g = guidance.shape();
  if (a != b) {
    throw ContractError("SEFF inputs differ in shape: " + a.str() + " vs " + b.str());
  }
  if (a.c != opts_.channels) {
    throw ContractError("SEFF expects " + std::to_string(opts_.channels) +
                        " channels, got " + a.str());
  }
  if (g.n != a.n || g.c != kGuidanceChannels || g.h != a.h || g.w != a.w) {
    throw ContractError("SEFF guidance " + g.str() + " does not match features " + a.str());
  }
  if (!f1.value().all_finite() || !f2.value().all_finite() || !guidance.value().all_finite()) {
    throw NumericError("SEFF received a non-finite input");
  }
}

Var SeffBlock::refine_first(const Var& f1, const Var& guidance, Mode mode) const {
  const std::array<Var, 2> parts{f1, guidance};
  return refine1b_.forward(refine1a_.forward(ops::concat_channels(parts), mode), mode);
}

Var SeffBlock::refine_second(const Var& f2, const Var& guidance, Mode mode) const {
  const std::array<Var, 2> parts{f2, guidance};
  return refine2b_.forward(refine2a_.forward(ops::concat_channels(parts), mode), mode);
}

Var SeffBlock::lcc(const Var& u, Mode mode) const {
  if (u.shape().c != opts_.channels) {
    throw ContractError("LCC expects " + std::to_string(opts_.channels) + " channels, got " +
                        u.shape().str());
  }
  return lcc_.forward(u, mode);
}

Var SeffBlock::gcc(const Var& u, Mode mode) const {
  if (u.shape().c != opts_.channels) {
    throw ContractError("GCC expects " + std::to_string(opts_.channels) + " channels, got " +
                        u.shape().str());
  }
  return gcc_.forward(ops::global_avg_pool(u), mode);
}

SeffTrace SeffBlock::fuse_traced(const Var& f1, const Var& f2, const Var& guidance,
                                 Mode mode) const {
  check_inputs(f1, f2, guidance);
  SeffTrace t;
  t.refined1 = refine_first(f1, guidance, mode);
  t.refined2 = refine_second(f2, guidance, mode);
  const Var summed = ops::add(t.refined1, t.refined2);
  t.gate_logits = ops::add(lcc(summed, mode), gcc(summed, mode));
  t.gate = ops::sigmoid(t.gate_logits);
  // W ⊙ F1' + (1 - W) ⊙ F2' written as F2' + W ⊙ (F1' - F2').
  t.output = ops::add(t.refined2, ops::mul(t.gate, ops::sub(t.refined1, t.refined2)));
  return t;
}

Var SeffBlock::fuse(const Var& f1, const Var& f2, const Var& guidance, Mode mode) const {
  return fuse_traced(f1, f2, guidance, mode).output;
}

ConvBnRelu& SeffBlock::refine(int path, int layer) {
  if (path == 1) return layer == 0 ? refine1a_ : refine1b_;
  if (path == 2) return layer == 0 ? refine2a_ : refine2b_;
  throw ContractError("SEFF refine path must be 1 or 2");
}

void SeffBlock::visit(const std::string& prefix, const ParamVisitor& params,
                      const BufferVisitor& buffers) {
  refine1a_.visit(prefix + "refine1.0.", params, buffers);
  refine1b_.visit(prefix + "refine1.1.", params, buffers);
  refine2a_.visit(prefix + "refine2.0.", params, buffers);
  refine2b_.visit(prefix + "refine2.1.", params, buffers);
  lcc_.visit(prefix + "lcc.", params, buffers);
  gcc_.visit(prefix + "gcc.", params, buffers);
}

}  // namespace seffsal
