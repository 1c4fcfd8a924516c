#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "seffsal/ops.hpp"

namespace seffsal {

enum class Mode { train, eval };

/// Stable 64-bit seed for a named submodule: identical (seed, name) pairs always give the
/// same stream, so shared sub-architectures initialise identically across variants.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

using ParamVisitor = std::function<void(const std::string& name, Var& param)>;
using BufferVisitor = std::function<void(const std::string& name, Tensor& buffer)>;

/// Modules own their parameter storage; copies would silently alias it, so only moves
/// are allowed.
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  Module(Module&&) = default;
  Module& operator=(Module&&) = default;
  virtual ~Module() = default;

  /// Visits learnable parameters and non-learnable state (normalization statistics)
  /// under `prefix` in a fixed order.
  virtual void visit(const std::string& prefix, const ParamVisitor& params,
                     const BufferVisitor& buffers) = 0;

  [[nodiscard]] std::size_t parameter_count();
  [[nodiscard]] std::vector<std::pair<std::string, Var>> named_parameters(
      const std::string& prefix = "");
  void zero_grad();
};

struct ConvOptions {
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  /// -1 selects "same" padding for stride 1: dilation * (kernel - 1) / 2.
  int pad = -1;
  int dilation = 1;
  bool depthwise = false;
  bool bias = true;
};

class Conv2d : public Module {
 public:
  Conv2d() = default;
  /// Kaiming-uniform weights (ReLU gain), zero bias.
  Conv2d(const ConvOptions& opts, std::uint64_t seed);

  [[nodiscard]] Var forward(const Var& x) const;
  void visit(const std::string& prefix, const ParamVisitor& params,
             const BufferVisitor& buffers) override;

  Var& weight() { return weight_; }
  Var& bias() { return bias_; }
  [[nodiscard]] const ConvOptions& options() const { return opts_; }

 private:
  ConvOptions opts_{};
  ops::ConvSpec spec_{};
  Var weight_;
  Var bias_;
};

class BatchNorm2d : public Module {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  /// Training mode updates the running statistics.
  [[nodiscard]] Var forward(const Var& x, Mode mode) const;
  void visit(const std::string& prefix, const ParamVisitor& params,
             const BufferVisitor& buffers) override;

  Var& gamma() { return gamma_; }
  Var& beta() { return beta_; }

 private:
  Var gamma_;
  Var beta_;
  mutable ops::RunningStats stats_;
};

/// Convolution, batch normalization, ReLU.
class ConvBnRelu : public Module {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(const ConvOptions& opts, std::uint64_t seed);

  [[nodiscard]] Var forward(const Var& x, Mode mode) const;
  void visit(const std::string& prefix, const ParamVisitor& params,
             const BufferVisitor& buffers) override;

  Conv2d& conv() { return conv_; }
  BatchNorm2d& norm() { return norm_; }

 private:
  Conv2d conv_;
  BatchNorm2d norm_;
};

}  // namespace seffsal
