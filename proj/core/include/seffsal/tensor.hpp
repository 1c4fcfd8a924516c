#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seffsal {

/// Raised when a caller breaks an operation's shape or value contract.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a non-finite value reaches an operation that requires finite input.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NCHW extent of a dense tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

struct Size2 {
  int h = 0;
  int w = 0;
  friend bool operator==(const Size2&, const Size2&) = default;
};

/// Cache-line aligned storage. Vectorized kernels peel by address, so a fixed alignment
/// keeps floating-point results independent of where the heap places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Dense double-precision [N, C, H, W] array, row-major with W fastest.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t numel() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }
  [[nodiscard]] Size2 spatial() const { return {shape_.h, shape_.w}; }

  [[nodiscard]] double* data() { return data_.data(); }
  [[nodiscard]] const double* data() const { return data_.data(); }
  [[nodiscard]] std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  [[nodiscard]] double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  /// Pointer to the H×W plane of (n, c).
  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  [[nodiscard]] const double* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  void fill(double v);
  [[nodiscard]] bool all_finite() const;
  [[nodiscard]] double sum() const;
  [[nodiscard]] double min() const;
  [[nodiscard]] double max() const;

  /// Copy of batch entries [begin, end).
  [[nodiscard]] Tensor slice_batch(int begin, int end) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{};
  Buffer data_;
};

/// Concatenates tensors along the batch axis; all other extents must agree.
Tensor stack_batch(std::span<const Tensor> parts);

/// Repeats a single-channel tensor into `channels` identical channels.
Tensor repeat_channels(const Tensor& t, int channels);

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace seffsal
