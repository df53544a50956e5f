#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "viact/tensor.hpp"

namespace viact::detail {

using ImplPtr = std::shared_ptr<TensorImpl>;

/// Uninitialized-by-contract (zero-filled) output tensor of the given dtype.
Tensor empty_like_shape(const Shape& shape, DType dtype);

bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

/// Attaches a graph node to `out` when gradient recording is active and any
/// input requires gradients.
void record(Tensor& out, const char* op, std::vector<Tensor> inputs,
            std::function<void(const Storage& grad_out)> backward);

/// Gradient buffer of `impl`, zero-allocated on first use.
template <typename T>
std::span<T> grad_span(const ImplPtr& impl) {
  return impl->grad_storage().span<T>();
}

inline void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw DimensionError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
  }
}

}  // namespace viact::detail
