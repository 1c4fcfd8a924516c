#include "seffsal/cbr_fusion.hpp"

#include <array>
#include <cmath>

namespace seffsal {

CbrFusion::CbrFusion(int channels, int hidden, std::uint64_t seed)
    : channels_(channels),
      hidden_(hidden),
      first_({.in = 2 * channels, .out = hidden, .kernel = 3}, derive_seed(seed, "cbr.0")),
      second_({.in = hidden, .out = channels, .kernel = 3}, derive_seed(seed, "cbr.1")) {}

std::size_t CbrFusion::parameter_count_for(int channels, int hidden) {
  // conv 2C->M (3x3, no bias) + norm(M), conv M->C (3x3, no bias) + norm(C)
  const auto c = static_cast<std::size_t>(channels);
  const auto m = static_cast<std::size_t>(hidden);
  return 2 * c * m * 9 + 2 * m + m * c * 9 + 2 * c;
}

int CbrFusion::hidden_width_for(int channels, std::size_t target) {
  const double per_hidden = 27.0 * channels + 2.0;
  const double base = 2.0 * channels;
  int best = std::max(1, static_cast<int>(std::lround((static_cast<double>(target) - base) /
                                                      per_hidden)));
  auto distance = [&](int m) {
    return std::abs(static_cast<double>(parameter_count_for(channels, m)) -
                    static_cast<double>(target));
  };
  for (int m : {best - 1, best + 1}) {
    if (m >= 1 && distance(m) < distance(best)) best = m;
  }
  return best;
}

CbrFusion CbrFusion::matched(int channels, int reduction, std::uint64_t seed) {
  SeffBlock reference({.channels = channels, .reduction = reduction}, 0);
  return CbrFusion(channels, hidden_width_for(channels, reference.parameter_count()), seed);
}

Var CbrFusion::fuse(const Var& f1, const Var& f2, const Var&, Mode mode) const {
  if (f1.shape() != f2.shape() || f1.shape().c != channels_) {
    throw ContractError("CBR fusion input mismatch: " + f1.shape().str() + " vs " +
                        f2.shape().str());
  }
  const std::array<Var, 2> parts{f1, f2};
  return second_.forward(first_.forward(ops::concat_channels(parts), mode), mode);
}

void CbrFusion::visit(const std::string& prefix, const ParamVisitor& params,
                      const BufferVisitor& buffers) {
  first_.visit(prefix + "cbr.0.", params, buffers);
  second_.visit(prefix + "cbr.1.", params, buffers);
}

}  // namespace seffsal
