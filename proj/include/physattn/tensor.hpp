#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace physattn {

using Shape = std::vector<std::size_t>;

namespace detail {
// Allocator whose value-less construct() leaves doubles uninitialized, so
// buffers that are about to be overwritten skip the zero fill. Storage is
// 64-byte aligned: vectorized reductions split their work by address
// alignment, and a fixed alignment keeps results identical across runs.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  static constexpr std::align_val_t kAlignment{64};
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t n) { ::operator delete(p, n * sizeof(T), kAlignment); }
  template <typename U>
  void construct(U* p) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};
}  // namespace detail

using Buffer = std::vector<double, detail::DefaultInitAllocator<double>>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Every extent is positive; a scalar has
/// rank 0 and one element.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Tensor whose contents are unspecified until written.
  static Tensor uninitialized(Shape shape);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);
  /// Builds a 2-D tensor from nested rows; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  /// Extent of axis `axis`; negative values count from the back.
  std::size_t dim(int axis) const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const double* raw() const { return data_.data(); }
  double* raw() { return data_.data(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // 2-D accessors; no bounds checks beyond the debug assertion.
  double operator()(std::size_t r, std::size_t c) const;
  double& operator()(std::size_t r, std::size_t c);

  std::size_t rows() const;
  std::size_t cols() const;

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  Buffer data_;
};

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace physattn
