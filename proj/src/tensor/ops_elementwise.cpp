#include <algorithm>
#include <cmath>
#include <numbers>

#include "autograd.hpp"
#include "viact/ops.hpp"

namespace viact {

using detail::dispatch;
using detail::grad_span;
using detail::ImplPtr;
using detail::Storage;

namespace {

// Returns the number of times `b` repeats over `a`; throws unless b.shape is a
// suffix of a.shape.
int64_t suffix_repeats(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!ok) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(sb) + " is not a suffix of " + shape_str(sa));
  }
  detail::check_same_dtype(a, b, op);
  int64_t inner = std::max<int64_t>(b.numel(), 1);
  return a.numel() / inner;
}

enum class Binary { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  const int64_t outer = suffix_repeats(a, b, name);
  const int64_t inner = b.numel();
  Tensor out = detail::empty_like_shape(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    auto y = b.values<T>();
    auto o = out.mutable_values<T>();
    for (int64_t r = 0; r < outer; ++r) {
      const T* xr = x.data() + r * inner;
      T* orow = o.data() + r * inner;
      switch (kind) {
        case Binary::add:
          for (int64_t i = 0; i < inner; ++i) orow[i] = xr[i] + y[i];
          break;
        case Binary::sub:
          for (int64_t i = 0; i < inner; ++i) orow[i] = xr[i] - y[i];
          break;
        case Binary::mul:
          for (int64_t i = 0; i < inner; ++i) orow[i] = xr[i] * y[i];
          break;
      }
    }
  });
  ImplPtr ai = a.impl(), bi = b.impl();
  detail::record(out, name, {a, b}, [ai, bi, kind, outer, inner](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      auto go = g.span<T>();
      if (ai->requires_grad) {
        auto ga = grad_span<T>(ai);
        if (kind == Binary::mul) {
          auto y = bi->data->span<T>();
          for (int64_t r = 0; r < outer; ++r)
            for (int64_t i = 0; i < inner; ++i) ga[r * inner + i] += go[r * inner + i] * y[i];
        } else {
          for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
      }
      if (bi->requires_grad) {
        auto gb = grad_span<T>(bi);
        auto x = ai->data->span<T>();
        for (int64_t r = 0; r < outer; ++r) {
          for (int64_t i = 0; i < inner; ++i) {
            T v = go[r * inner + i];
            if (kind == Binary::sub) v = -v;
            if (kind == Binary::mul) v *= x[r * inner + i];
            gb[i] += v;
          }
        }
      }
    });
  });
  return out;
}

// Unary map with derivative expressed from input x and output y.
template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, Bwd dfdx) {
  Tensor out = detail::empty_like_shape(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    auto y = out.mutable_values<T>();
    for (size_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(fwd(static_cast<double>(x[i])));
  });
  ImplPtr ai = a.impl();
  auto yd = out.impl()->data;
  detail::record(out, name, {a}, [ai, yd, dfdx](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      auto go = g.span<T>();
      auto x = ai->data->span<T>();
      auto y = yd->span<T>();
      auto ga = grad_span<T>(ai);
      for (size_t i = 0; i < go.size(); ++i)
        ga[i] += go[i] * static_cast<T>(dfdx(static_cast<double>(x[i]), static_cast<double>(y[i])));
    });
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::mul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      x, "gelu", [&](double v) { return v * 0.5 * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt_2pi](double v, double) {
        double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw DimensionError("bce_with_logits: logits " + shape_str(logits.shape()) + " vs targets " +
                         shape_str(targets.shape()));
  }
  detail::check_same_dtype(logits, targets, "bce_with_logits");
  const int64_t n = logits.numel();
  if (n == 0) throw DimensionError("bce_with_logits: empty input");
  Tensor out = detail::empty_like_shape(Shape{}, logits.dtype());
  dispatch(logits.dtype(), [&]<typename T>() {
    auto z = logits.values<T>();
    auto y = targets.values<T>();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double zi = z[i];
      acc += std::max(zi, 0.0) - zi * y[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    out.mutable_values<T>()[0] = static_cast<T>(acc / static_cast<double>(n));
  });
  ImplPtr zi = logits.impl(), yi = targets.impl();
  detail::record(out, "bce_with_logits", {logits}, [zi, yi, n](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      T go = g.span<T>()[0];
      auto z = zi->data->span<T>();
      auto y = yi->data->span<T>();
      auto gz = grad_span<T>(zi);
      for (int64_t i = 0; i < n; ++i) {
        double zv = z[i];
        double s = zv >= 0 ? 1.0 / (1.0 + std::exp(-zv)) : std::exp(zv) / (1.0 + std::exp(zv));
        gz[i] += go * static_cast<T>((s - y[i]) / static_cast<double>(n));
      }
    });
  });
  return out;
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  detail::check_same_dtype(prediction, target, "mse");
  const int64_t n = prediction.numel();
  if (n == 0) throw DimensionError("mse: empty input");
  Tensor out = detail::empty_like_shape(Shape{}, prediction.dtype());
  dispatch(prediction.dtype(), [&]<typename T>() {
    auto p = prediction.values<T>();
    auto t = target.values<T>();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
      acc += d * d;
    }
    out.mutable_values<T>()[0] = static_cast<T>(acc / static_cast<double>(n));
  });
  ImplPtr pi = prediction.impl(), ti = target.impl();
  detail::record(out, "mse", {prediction, target}, [pi, ti, n](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      T go = g.span<T>()[0];
      auto p = pi->data->span<T>();
      auto t = ti->data->span<T>();
      const T c = go * static_cast<T>(2.0 / static_cast<double>(n));
      if (pi->requires_grad) {
        auto gp = grad_span<T>(pi);
        for (int64_t i = 0; i < n; ++i) gp[i] += c * (p[i] - t[i]);
      }
      if (ti->requires_grad) {
        auto gt = grad_span<T>(ti);
        for (int64_t i = 0; i < n; ++i) gt[i] -= c * (p[i] - t[i]);
      }
    });
  });
  return out;
}

}  // namespace viact
