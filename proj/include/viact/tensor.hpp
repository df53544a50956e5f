#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "viact/error.hpp"

namespace viact {

enum class DType { f32, f64 };

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);
const char* dtype_name(DType dtype);

/// Default dtype for newly created tensors. float32 for training, float64 for
/// gradient checks.
DType default_dtype();
void set_default_dtype(DType dtype);

/// Restores the previous default dtype on scope exit.
class DTypeScope {
 public:
  explicit DTypeScope(DType dtype) : previous_(default_dtype()) { set_default_dtype(dtype); }
  ~DTypeScope() { set_default_dtype(previous_); }
  DTypeScope(const DTypeScope&) = delete;
  DTypeScope& operator=(const DTypeScope&) = delete;

 private:
  DType previous_;
};

bool grad_enabled();

/// Disables graph recording for its lifetime. Forward values are unaffected.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Bytes held by tensor storage (values and gradients), process-wide.
struct MemoryStats {
  int64_t current_bytes = 0;
  int64_t peak_bytes = 0;
};
MemoryStats memory_stats();
void reset_peak_memory();

namespace detail {
void track_alloc(int64_t bytes);
void track_free(int64_t bytes);

template <typename T>
struct TrackingAllocator {
  using value_type = T;
  TrackingAllocator() = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    track_alloc(static_cast<int64_t>(n * sizeof(T)));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    track_free(static_cast<int64_t>(n * sizeof(T)));
    std::allocator<T>{}.deallocate(p, n);
  }
  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, TrackingAllocator<T>>;

/// Flat value buffer of one dtype.
struct Storage {
  DType dtype = DType::f32;
  Buffer<float> f32;
  Buffer<double> f64;

  Storage(DType dt, int64_t n);
  int64_t size() const { return dtype == DType::f32 ? static_cast<int64_t>(f32.size()) : static_cast<int64_t>(f64.size()); }

  template <typename T>
  std::span<T> span();
  template <typename T>
  std::span<const T> span() const;
};

template <>
inline std::span<float> Storage::span<float>() { return f32; }
template <>
inline std::span<double> Storage::span<double>() { return f64; }
template <>
inline std::span<const float> Storage::span<float>() const { return f32; }
template <>
inline std::span<const double> Storage::span<double>() const { return f64; }

struct TensorImpl;

/// One recorded operation. `backward` reads the output gradient and
/// accumulates into the gradients of `inputs`.
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const Storage& grad_out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::shared_ptr<Storage> data;
  std::shared_ptr<Storage> grad;
  bool requires_grad = false;
  bool retain_grad = false;
  std::shared_ptr<Node> node;

  Storage& grad_storage();
};

/// Calls `fn.template operator()<T>()` with T matching `dtype`.
template <typename F>
decltype(auto) dispatch(DType dtype, F&& fn) {
  if (dtype == DType::f32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

}  // namespace detail

/// Dense row-major tensor handle with reverse-mode gradient recording.
///
/// Copies share the underlying node; values are not mutated by operations.
/// Leaves created with `requires_grad` accumulate gradients on `backward()`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor zeros(const Shape& shape, DType dtype, bool requires_grad);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(std::span<const double> values, const Shape& shape, bool requires_grad = false);
  static Tensor from(std::span<const float> values, const Shape& shape, bool requires_grad = false);
  static Tensor from(std::initializer_list<double> values, const Shape& shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t numel() const;
  DType dtype() const;

  template <typename T>
  std::span<const T> values() const {
    check_dtype<T>();
    return impl_->data->span<T>();
  }
  /// Mutable access to values. Only valid on leaves (parameters, inputs);
  /// mutating a tensor already captured in a graph corrupts its gradients.
  template <typename T>
  std::span<T> mutable_values() {
    check_dtype<T>();
    return impl_->data->span<T>();
  }

  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;
  /// Keeps this non-leaf tensor's gradient after `backward()`.
  Tensor& retain_grad();

  /// Gradient accumulated by `backward()`; undefined Tensor if none.
  Tensor grad() const;
  void zero_grad();

  /// Backpropagates from this scalar. Interior gradient buffers and graph
  /// nodes are released afterwards; leaf gradients accumulate.
  void backward() const;
  /// Backpropagates with an explicit output gradient of this tensor's shape.
  void backward(const Tensor& grad_output) const;

  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

 private:
  template <typename T>
  void check_dtype() const {
    constexpr DType want = std::is_same_v<T, float> ? DType::f32 : DType::f64;
    if (dtype() != want) throw DimensionError(std::string("dtype mismatch: tensor is ") + dtype_name(dtype()));
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

}  // namespace viact
