#include <algorithm>
#include <numeric>

#include "autograd.hpp"
#include "viact/ops.hpp"

namespace viact {

using detail::dispatch;
using detail::grad_span;
using detail::ImplPtr;
using detail::Storage;

namespace {

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return axis;
}

// Visits (out_offset, in_offset) pairs for a permutation, output in order.
template <typename F>
void for_each_permuted(const Shape& in_shape, const std::vector<int>& order, F&& fn) {
  const size_t r = in_shape.size();
  std::vector<int64_t> in_strides(r, 1);
  for (size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<int64_t> step(r);
  for (size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[static_cast<size_t>(order[i])];
    step[i] = in_strides[static_cast<size_t>(order[i])];
  }
  const int64_t total = shape_numel(in_shape);
  if (total == 0) return;
  std::vector<int64_t> counter(r, 0);
  int64_t in_off = 0;
  for (int64_t out_off = 0; out_off < total; ++out_off) {
    fn(out_off, in_off);
    for (size_t d = r; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        in_off += step[d];
        break;
      }
      in_off -= step[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
}

}  // namespace

Tensor reshape(const Tensor& a, const Shape& shape) {
  Shape target = shape;
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < target.size(); ++i) {
    if (target[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= target[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || a.numel() % known != 0) {
      throw DimensionError("reshape: cannot infer extent for " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    target[static_cast<size_t>(infer)] = a.numel() / known;
  }
  if (shape_numel(target) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = target;
  impl->data = a.impl()->data;
  Tensor out = Tensor::wrap(std::move(impl));
  ImplPtr ai = a.impl();
  detail::record(out, "reshape", {a}, [ai](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      auto go = g.span<T>();
      auto ga = grad_span<T>(ai);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
  });
  return out;
}

Tensor permute(const Tensor& a, const std::vector<int>& order) {
  const int r = a.rank();
  std::vector<int> ord = order;
  if (static_cast<int>(ord.size()) != r) throw DimensionError("permute: order rank mismatch for " + shape_str(a.shape()));
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int& o : ord) {
    o = normalize_axis(o, r, "permute");
    if (seen[static_cast<size_t>(o)]) throw DimensionError("permute: repeated axis");
    seen[static_cast<size_t>(o)] = true;
  }
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = a.shape()[static_cast<size_t>(ord[static_cast<size_t>(i)])];
  Tensor out = detail::empty_like_shape(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    auto o = out.mutable_values<T>();
    for_each_permuted(a.shape(), ord, [&](int64_t oo, int64_t io) { o[oo] = x[io]; });
  });
  ImplPtr ai = a.impl();
  Shape in_shape = a.shape();
  detail::record(out, "permute", {a}, [ai, in_shape, ord](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      auto go = g.span<T>();
      auto ga = grad_span<T>(ai);
      for_each_permuted(in_shape, ord, [&](int64_t oo, int64_t io) { ga[io] += go[oo]; });
    });
  });
  return out;
}

Tensor transpose(const Tensor& a, int axis0, int axis1) {
  std::vector<int> order(static_cast<size_t>(a.rank()));
  std::iota(order.begin(), order.end(), 0);
  axis0 = normalize_axis(axis0, a.rank(), "transpose");
  axis1 = normalize_axis(axis1, a.rank(), "transpose");
  std::swap(order[static_cast<size_t>(axis0)], order[static_cast<size_t>(axis1)]);
  return permute(a, order);
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Tensor& first = parts.front();
  axis = normalize_axis(axis, first.rank(), "concat");
  Shape out_shape = first.shape();
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const auto& p : parts) {
    detail::check_same_dtype(first, p, "concat");
    bool ok = p.rank() == first.rank();
    for (int d = 0; ok && d < first.rank(); ++d) {
      if (d != axis && p.shape()[static_cast<size_t>(d)] != first.shape()[static_cast<size_t>(d)]) ok = false;
    }
    if (!ok) throw DimensionError("concat: " + shape_str(first.shape()) + " vs " + shape_str(p.shape()));
    out_shape[static_cast<size_t>(axis)] += p.shape()[static_cast<size_t>(axis)];
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
  const int64_t out_row = out_shape[static_cast<size_t>(axis)] * inner;

  std::vector<int64_t> chunk(parts.size()), offset(parts.size());
  int64_t off = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    chunk[i] = parts[i].shape()[static_cast<size_t>(axis)] * inner;
    offset[i] = off;
    off += chunk[i];
  }
  Tensor out = detail::empty_like_shape(out_shape, first.dtype());
  dispatch(first.dtype(), [&]<typename T>() {
    auto o = out.mutable_values<T>();
    for (size_t i = 0; i < parts.size(); ++i) {
      auto x = parts[i].values<T>();
      for (int64_t r = 0; r < outer; ++r)
        std::copy_n(x.data() + r * chunk[i], chunk[i], o.data() + r * out_row + offset[i]);
    }
  });
  std::vector<ImplPtr> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  detail::record(out, "concat", std::vector<Tensor>(parts.begin(), parts.end()),
                 [impls, chunk, offset, outer, out_row](const Storage& g) {
                   dispatch(g.dtype, [&]<typename T>() {
                     auto go = g.span<T>();
                     for (size_t i = 0; i < impls.size(); ++i) {
                       if (!impls[i]->requires_grad) continue;
                       auto gi = grad_span<T>(impls[i]);
                       for (int64_t r = 0; r < outer; ++r)
                         for (int64_t k = 0; k < chunk[i]; ++k) gi[r * chunk[i] + k] += go[r * out_row + offset[i] + k];
                     }
                   });
                 });
  return out;
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t length) {
  axis = normalize_axis(axis, a.rank(), "slice");
  const int64_t extent = a.shape()[static_cast<size_t>(axis)];
  if (start < 0 || length < 0 || start + length > extent) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  std::vector<int64_t> index(static_cast<size_t>(length));
  std::iota(index.begin(), index.end(), start);
  return index_select(a, axis, index);
}

Tensor index_select(const Tensor& a, int axis, std::span<const int64_t> index) {
  axis = normalize_axis(axis, a.rank(), "index_select");
  const Shape& s = a.shape();
  const int64_t extent = s[static_cast<size_t>(axis)];
  for (auto i : index) {
    if (i < 0 || i >= extent) {
      throw DimensionError("index_select: index " + std::to_string(i) + " out of range for " + shape_str(s));
    }
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = static_cast<int64_t>(index.size());
  const int64_t nidx = static_cast<int64_t>(index.size());
  Tensor out = detail::empty_like_shape(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    auto o = out.mutable_values<T>();
    for (int64_t r = 0; r < outer; ++r)
      for (int64_t j = 0; j < nidx; ++j)
        std::copy_n(x.data() + (r * extent + index[static_cast<size_t>(j)]) * inner, inner,
                    o.data() + (r * nidx + j) * inner);
  });
  ImplPtr ai = a.impl();
  std::vector<int64_t> idx(index.begin(), index.end());
  detail::record(out, "index_select", {a}, [ai, idx, outer, extent, inner](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      auto go = g.span<T>();
      auto ga = grad_span<T>(ai);
      const int64_t nidx = static_cast<int64_t>(idx.size());
      for (int64_t r = 0; r < outer; ++r)
        for (int64_t j = 0; j < nidx; ++j) {
          T* dst = ga.data() + (r * extent + idx[static_cast<size_t>(j)]) * inner;
          const T* src = go.data() + (r * nidx + j) * inner;
          for (int64_t k = 0; k < inner; ++k) dst[k] += src[k];
        }
    });
  });
  return out;
}

Tensor gather_rows(const Tensor& a, std::span<const int64_t> index, int64_t rows) {
  if (a.rank() != 3) throw DimensionError("gather_rows: expected [B, M, C], got " + shape_str(a.shape()));
  const int64_t b = a.dim(0), m = a.dim(1), c = a.dim(2);
  if (static_cast<int64_t>(index.size()) != b * rows) {
    throw DimensionError("gather_rows: index count " + std::to_string(index.size()) + " != " +
                         std::to_string(b) + " x " + std::to_string(rows));
  }
  for (auto i : index) {
    if (i < 0 || i >= m) throw DimensionError("gather_rows: row " + std::to_string(i) + " out of range " + std::to_string(m));
  }
  Tensor out = detail::empty_like_shape({b, rows, c}, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    auto o = out.mutable_values<T>();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t r = 0; r < rows; ++r)
        std::copy_n(x.data() + (bi * m + index[static_cast<size_t>(bi * rows + r)]) * c, c,
                    o.data() + (bi * rows + r) * c);
  });
  ImplPtr ai = a.impl();
  std::vector<int64_t> idx(index.begin(), index.end());
  detail::record(out, "gather_rows", {a}, [ai, idx, b, m, c, rows](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      auto go = g.span<T>();
      auto ga = grad_span<T>(ai);
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t r = 0; r < rows; ++r) {
          T* dst = ga.data() + (bi * m + idx[static_cast<size_t>(bi * rows + r)]) * c;
          const T* src = go.data() + (bi * rows + r) * c;
          for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
        }
    });
  });
  return out;
}

Tensor broadcast_leading(const Tensor& a, const Shape& leading) {
  const int64_t reps = shape_numel(leading);
  Shape out_shape = leading;
  out_shape.insert(out_shape.end(), a.shape().begin(), a.shape().end());
  const int64_t n = a.numel();
  Tensor out = detail::empty_like_shape(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    auto o = out.mutable_values<T>();
    for (int64_t r = 0; r < reps; ++r) std::copy_n(x.data(), n, o.data() + r * n);
  });
  ImplPtr ai = a.impl();
  detail::record(out, "broadcast_leading", {a}, [ai, reps, n](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      auto go = g.span<T>();
      auto ga = grad_span<T>(ai);
      for (int64_t r = 0; r < reps; ++r)
        for (int64_t i = 0; i < n; ++i) ga[i] += go[r * n + i];
    });
  });
  return out;
}

}  // namespace viact
