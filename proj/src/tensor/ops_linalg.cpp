#include <algorithm>
#include <cmath>
#include <limits>

#include "autograd.hpp"
#include "blas.hpp"
#include "viact/ops.hpp"

namespace viact {

using detail::dispatch;
using detail::grad_span;
using detail::ImplPtr;
using detail::Storage;

namespace {

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError(std::string(op) + ": axis out of range");
  return axis;
}

struct AxisSplit {
  int64_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<size_t>(i)];
  r.length = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto mismatch = [&]() {
    return DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb) +
                          (transpose_b ? " (b transposed)" : ""));
  };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();
  detail::check_same_dtype(a, b, "matmul");
  const int64_t m = sa[sa.size() - 2];
  const int64_t p = sa.back();
  const int64_t pb = transpose_b ? sb.back() : sb[sb.size() - 2];
  const int64_t n = transpose_b ? sb[sb.size() - 2] : sb.back();
  if (p != pb) throw mismatch();

  Shape batch_a(sa.begin(), sa.end() - 2);
  Shape batch_b(sb.begin(), sb.end() - 2);
  Shape batch;
  if (batch_b.empty()) {
    batch = batch_a;
  } else if (batch_a.empty()) {
    batch = batch_b;
  } else if (batch_a == batch_b) {
    batch = batch_a;
  } else {
    throw mismatch();
  }
  const int64_t nbatch = shape_numel(batch);
  const bool a_batched = !batch_a.empty();
  const bool b_batched = !batch_b.empty();

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = detail::empty_like_shape(out_shape, a.dtype());

  // Rows of a batched `a` against a shared matrix collapse into one product.
  const bool fold_rows = !b_batched;
  const int64_t rows = fold_rows ? nbatch * m : m;
  const int64_t loops = fold_rows ? 1 : nbatch;
  const int64_t a_stride = a_batched ? m * p : 0;
  const int64_t b_stride = b_batched ? p * n : 0;

  dispatch(a.dtype(), [&]<typename T>() {
    const T* x = a.values<T>().data();
    const T* y = b.values<T>().data();
    T* o = out.mutable_values<T>().data();
    for (int64_t i = 0; i < loops; ++i) {
      detail::gemm(false, transpose_b, static_cast<int>(rows), static_cast<int>(n), static_cast<int>(p), T(1),
                   x + i * a_stride, y + i * b_stride, T(0), o + i * rows * n);
    }
  });

  ImplPtr ai = a.impl(), bi = b.impl();
  detail::record(out, "matmul", {a, b}, [=](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      const T* go = g.span<T>().data();
      const T* x = ai->data->span<T>().data();
      const T* y = bi->data->span<T>().data();
      if (ai->requires_grad) {
        T* ga = grad_span<T>(ai).data();
        for (int64_t i = 0; i < loops; ++i) {
          // dA = dC * B^T  (or dC * B when b is stored transposed)
          detail::gemm(false, !transpose_b, static_cast<int>(rows), static_cast<int>(p), static_cast<int>(n), T(1),
                       go + i * rows * n, y + i * b_stride, T(1), ga + i * a_stride);
        }
      }
      if (bi->requires_grad) {
        T* gb = grad_span<T>(bi).data();
        for (int64_t i = 0; i < loops; ++i) {
          if (transpose_b) {
            // dB[n,p] = dC^T * A
            detail::gemm(true, false, static_cast<int>(n), static_cast<int>(p), static_cast<int>(rows), T(1),
                         go + i * rows * n, x + i * a_stride, T(1), gb + i * b_stride);
          } else {
            // dB[p,n] = A^T * dC
            detail::gemm(true, false, static_cast<int>(p), static_cast<int>(n), static_cast<int>(rows), T(1),
                         x + i * a_stride, go + i * rows * n, T(1), gb + i * b_stride);
          }
        }
      }
    });
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weight.dim(1) || x.rank() < 1 ||
      x.shape().back() != weight.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                         ", bias " + shape_str(bias.shape()));
  }
  if (x.rank() == 1) {
    Tensor row = reshape(x, {1, x.dim(0)});
    return reshape(add(matmul(row, weight), bias), {weight.dim(1)});
  }
  return add(matmul(x, weight), bias);
}

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  axis = normalize_axis(axis, a.rank(), "sum");
  const AxisSplit sp = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[static_cast<size_t>(axis)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
  }
  Tensor out = detail::empty_like_shape(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    auto o = out.mutable_values<T>();
    for (int64_t i = 0; i < sp.outer; ++i)
      for (int64_t l = 0; l < sp.length; ++l)
        for (int64_t k = 0; k < sp.inner; ++k) o[i * sp.inner + k] += x[(i * sp.length + l) * sp.inner + k];
  });
  ImplPtr ai = a.impl();
  detail::record(out, "sum", {a}, [ai, sp](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      auto go = g.span<T>();
      auto ga = grad_span<T>(ai);
      for (int64_t i = 0; i < sp.outer; ++i)
        for (int64_t l = 0; l < sp.length; ++l)
          for (int64_t k = 0; k < sp.inner; ++k) ga[(i * sp.length + l) * sp.inner + k] += go[i * sp.inner + k];
    });
  });
  return out;
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  const int64_t len = a.dim(axis);
  if (len == 0) throw DimensionError("mean over empty axis");
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(len));
}

Tensor sum_all(const Tensor& a) {
  Tensor out = detail::empty_like_shape(Shape{}, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    double acc = 0.0;
    for (T v : a.values<T>()) acc += v;
    out.mutable_values<T>()[0] = static_cast<T>(acc);
  });
  ImplPtr ai = a.impl();
  detail::record(out, "sum_all", {a}, [ai](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      T go = g.span<T>()[0];
      for (T& v : grad_span<T>(ai)) v += go;
    });
  });
  return out;
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean_all of empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor out = detail::empty_like_shape(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.values<T>();
    auto o = out.mutable_values<T>();
    for (int64_t i = 0; i < sp.outer; ++i) {
      for (int64_t k = 0; k < sp.inner; ++k) {
        const int64_t base = i * sp.length * sp.inner + k;
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t l = 0; l < sp.length; ++l) mx = std::max(mx, in[base + l * sp.inner]);
        T total = 0;
        for (int64_t l = 0; l < sp.length; ++l) {
          T e = std::exp(in[base + l * sp.inner] - mx);
          o[base + l * sp.inner] = e;
          total += e;
        }
        const T inv = T(1) / total;
        for (int64_t l = 0; l < sp.length; ++l) o[base + l * sp.inner] *= inv;
      }
    }
  });
  ImplPtr xi = x.impl();
  auto yd = out.impl()->data;
  detail::record(out, "softmax", {x}, [xi, yd, sp](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      auto go = g.span<T>();
      auto y = yd->span<T>();
      auto gx = grad_span<T>(xi);
      for (int64_t i = 0; i < sp.outer; ++i) {
        for (int64_t k = 0; k < sp.inner; ++k) {
          const int64_t base = i * sp.length * sp.inner + k;
          T dot = 0;
          for (int64_t l = 0; l < sp.length; ++l) dot += go[base + l * sp.inner] * y[base + l * sp.inner];
          for (int64_t l = 0; l < sp.length; ++l) {
            const int64_t idx = base + l * sp.inner;
            gx[idx] += y[idx] * (go[idx] - dot);
          }
        }
      }
    });
  });
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.shape().back() ||
      bias.dim(0) != x.shape().back()) {
    throw DimensionError("layernorm: input " + shape_str(x.shape()) + ", gain " + shape_str(gain.shape()) +
                         ", bias " + shape_str(bias.shape()));
  }
  detail::check_same_dtype(x, gain, "layernorm");
  detail::check_same_dtype(x, bias, "layernorm");
  const int64_t c = x.shape().back();
  const int64_t rows = c == 0 ? 0 : x.numel() / c;
  Tensor out = detail::empty_like_shape(x.shape(), x.dtype());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  auto mu = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.values<T>();
    auto gn = gain.values<T>();
    auto bs = bias.values<T>();
    auto o = out.mutable_values<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = in.data() + r * c;
      double m = 0.0;
      for (int64_t i = 0; i < c; ++i) m += row[i];
      m /= static_cast<double>(c);
      double var = 0.0;
      for (int64_t i = 0; i < c; ++i) var += (row[i] - m) * (row[i] - m);
      var /= static_cast<double>(c);
      const double rs = 1.0 / std::sqrt(var + eps);
      (*mu)[static_cast<size_t>(r)] = m;
      (*rstd)[static_cast<size_t>(r)] = rs;
      T* orow = o.data() + r * c;
      for (int64_t i = 0; i < c; ++i) orow[i] = static_cast<T>((row[i] - m) * rs) * gn[i] + bs[i];
    }
  });
  ImplPtr xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  detail::record(out, "layernorm", {x, gain, bias}, [=](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      auto go = g.span<T>();
      auto in = xi->data->span<T>();
      auto gn = gi->data->span<T>();
      std::vector<double> xhat(static_cast<size_t>(c));
      std::vector<double> dxhat(static_cast<size_t>(c));
      for (int64_t r = 0; r < rows; ++r) {
        const double m = (*mu)[static_cast<size_t>(r)];
        const double rs = (*rstd)[static_cast<size_t>(r)];
        const T* grow = go.data() + r * c;
        const T* row = in.data() + r * c;
        double mean_d = 0.0, mean_dx = 0.0;
        for (int64_t i = 0; i < c; ++i) {
          xhat[i] = (row[i] - m) * rs;
          dxhat[i] = static_cast<double>(grow[i]) * gn[i];
          mean_d += dxhat[i];
          mean_dx += dxhat[i] * xhat[i];
        }
        mean_d /= static_cast<double>(c);
        mean_dx /= static_cast<double>(c);
        if (xi->requires_grad) {
          T* gx = grad_span<T>(xi).data() + r * c;
          for (int64_t i = 0; i < c; ++i) gx[i] += static_cast<T>(rs * (dxhat[i] - mean_d - xhat[i] * mean_dx));
        }
        if (gi->requires_grad) {
          auto gg = grad_span<T>(gi);
          for (int64_t i = 0; i < c; ++i) gg[i] += static_cast<T>(grow[i] * xhat[i]);
        }
        if (bi->requires_grad) {
          auto gb = grad_span<T>(bi);
          for (int64_t i = 0; i < c; ++i) gb[i] += grow[i];
        }
      }
    });
  });
  return out;
}

}  // namespace viact
