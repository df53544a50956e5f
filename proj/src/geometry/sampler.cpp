#include <algorithm>
#include <cmath>

#include "../tensor/autograd.hpp"
#include "viact/geometry.hpp"

namespace viact {

using detail::dispatch;
using detail::grad_span;
using detail::ImplPtr;
using detail::Storage;

namespace {

// Four-neighbour interpolation stencil for one sample, border clamped.
template <typename T>
struct Tap {
  int64_t y0, x0, y1, x1;
  T wx, wy;
  bool dx_live, dy_live;
};

template <typename T>
Tap<T> make_tap(T px, T py, int64_t h, int64_t w) {
  const T xmax = static_cast<T>(w - 1);
  const T ymax = static_cast<T>(h - 1);
  const T x = std::clamp(px, T(0), xmax);
  const T y = std::clamp(py, T(0), ymax);
  Tap<T> t;
  t.x0 = static_cast<int64_t>(std::floor(x));
  t.y0 = static_cast<int64_t>(std::floor(y));
  t.x1 = std::min<int64_t>(t.x0 + 1, w - 1);
  t.y1 = std::min<int64_t>(t.y0 + 1, h - 1);
  t.wx = x - static_cast<T>(t.x0);
  t.wy = y - static_cast<T>(t.y0);
  t.dx_live = px >= T(0) && px <= xmax;
  t.dy_live = py >= T(0) && py <= ymax;
  return t;
}

template <typename T>
T tap_value(const Tap<T>& t, const T* f, int64_t w) {
  const T top = (T(1) - t.wx) * f[t.y0 * w + t.x0] + t.wx * f[t.y0 * w + t.x1];
  const T bot = (T(1) - t.wx) * f[t.y1 * w + t.x0] + t.wx * f[t.y1 * w + t.x1];
  return (T(1) - t.wy) * top + t.wy * bot;
}

template <typename T>
void tap_backward(const Tap<T>& t, const T* f, int64_t w, T g, T* gf, T* gx, T* gy) {
  if (gf) {
    gf[t.y0 * w + t.x0] += g * (T(1) - t.wx) * (T(1) - t.wy);
    gf[t.y0 * w + t.x1] += g * t.wx * (T(1) - t.wy);
    gf[t.y1 * w + t.x0] += g * (T(1) - t.wx) * t.wy;
    gf[t.y1 * w + t.x1] += g * t.wx * t.wy;
  }
  if (gx && t.dx_live) {
    *gx += g * ((T(1) - t.wy) * (f[t.y0 * w + t.x1] - f[t.y0 * w + t.x0]) +
                t.wy * (f[t.y1 * w + t.x1] - f[t.y1 * w + t.x0]));
  }
  if (gy && t.dy_live) {
    *gy += g * ((T(1) - t.wx) * (f[t.y1 * w + t.x0] - f[t.y0 * w + t.x0]) +
                t.wx * (f[t.y1 * w + t.x1] - f[t.y0 * w + t.x1]));
  }
}

struct FrameLayout {
  int64_t frames, height, width;
  int64_t per_frame;  // coordinate pairs (or points) per frame
};

FrameLayout layout_for(const Tensor& frames, const Tensor& coords, const char* op) {
  auto bad = [&]() {
    return DimensionError(std::string(op) + ": frames " + shape_str(frames.shape()) + " with coords " +
                          shape_str(coords.shape()));
  };
  if (coords.rank() < 1 || coords.shape().back() != 2) throw bad();
  detail::check_same_dtype(frames, coords, op);
  FrameLayout l{};
  if (frames.rank() == 2) {
    l.frames = 1;
    l.height = frames.dim(0);
    l.width = frames.dim(1);
    l.per_frame = coords.numel() / 2;
  } else if (frames.rank() == 3) {
    if (coords.rank() < 2 || coords.dim(0) != frames.dim(0)) throw bad();
    l.frames = frames.dim(0);
    l.height = frames.dim(1);
    l.width = frames.dim(2);
    l.per_frame = l.frames == 0 ? 0 : coords.numel() / 2 / l.frames;
  } else {
    throw bad();
  }
  if (l.height < 1 || l.width < 1) throw bad();
  return l;
}

}  // namespace

Tensor bilinear_sample(const Tensor& frames, const Tensor& coords) {
  const FrameLayout l = layout_for(frames, coords, "bilinear_sample");
  Shape out_shape(coords.shape().begin(), coords.shape().end() - 1);
  Tensor out = detail::empty_like_shape(out_shape, frames.dtype());
  dispatch(frames.dtype(), [&]<typename T>() {
    const T* f = frames.values<T>().data();
    const T* c = coords.values<T>().data();
    T* o = out.mutable_values<T>().data();
    for (int64_t fr = 0; fr < l.frames; ++fr) {
      const T* frame = f + fr * l.height * l.width;
      for (int64_t i = 0; i < l.per_frame; ++i) {
        const int64_t k = fr * l.per_frame + i;
        o[k] = tap_value(make_tap(c[2 * k], c[2 * k + 1], l.height, l.width), frame, l.width);
      }
    }
  });
  ImplPtr fi = frames.impl(), ci = coords.impl();
  detail::record(out, "bilinear_sample", {frames, coords}, [fi, ci, l](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      const T* go = g.span<T>().data();
      const T* f = fi->data->span<T>().data();
      const T* c = ci->data->span<T>().data();
      T* gf = fi->requires_grad ? grad_span<T>(fi).data() : nullptr;
      T* gc = ci->requires_grad ? grad_span<T>(ci).data() : nullptr;
      for (int64_t fr = 0; fr < l.frames; ++fr) {
        const int64_t off = fr * l.height * l.width;
        for (int64_t i = 0; i < l.per_frame; ++i) {
          const int64_t k = fr * l.per_frame + i;
          auto tap = make_tap(c[2 * k], c[2 * k + 1], l.height, l.width);
          tap_backward(tap, f + off, l.width, go[k], gf ? gf + off : nullptr, gc ? gc + 2 * k : nullptr,
                       gc ? gc + 2 * k + 1 : nullptr);
        }
      }
    });
  });
  return out;
}

Tensor sample_patches(const Tensor& frames, const Tensor& points, int j) {
  if (j < 1) throw GeometryError("patch size must be >= 1");
  const FrameLayout l = layout_for(frames, points, "sample_patches");
  if ((frames.rank() == 2 && points.rank() != 2) || (frames.rank() == 3 && points.rank() != 3)) {
    throw DimensionError("sample_patches: frames " + shape_str(frames.shape()) + " with points " +
                         shape_str(points.shape()));
  }
  const int64_t jj = static_cast<int64_t>(j) * j;
  Shape out_shape(points.shape().begin(), points.shape().end() - 1);
  out_shape.push_back(jj);
  const double half = (j - 1) / 2.0;
  Tensor out = detail::empty_like_shape(out_shape, frames.dtype());
  dispatch(frames.dtype(), [&]<typename T>() {
    const T* f = frames.values<T>().data();
    const T* p = points.values<T>().data();
    T* o = out.mutable_values<T>().data();
    for (int64_t fr = 0; fr < l.frames; ++fr) {
      const T* frame = f + fr * l.height * l.width;
      for (int64_t i = 0; i < l.per_frame; ++i) {
        const int64_t k = fr * l.per_frame + i;
        T* dst = o + k * jj;
        for (int v = 0; v < j; ++v)
          for (int u = 0; u < j; ++u) {
            const T px = p[2 * k] + static_cast<T>(u - half);
            const T py = p[2 * k + 1] + static_cast<T>(v - half);
            dst[v * j + u] = tap_value(make_tap(px, py, l.height, l.width), frame, l.width);
          }
      }
    }
  });
  ImplPtr fi = frames.impl(), pi = points.impl();
  detail::record(out, "sample_patches", {frames, points}, [fi, pi, l, j, jj, half](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      const T* go = g.span<T>().data();
      const T* f = fi->data->span<T>().data();
      const T* p = pi->data->span<T>().data();
      T* gf = fi->requires_grad ? grad_span<T>(fi).data() : nullptr;
      T* gp = pi->requires_grad ? grad_span<T>(pi).data() : nullptr;
      for (int64_t fr = 0; fr < l.frames; ++fr) {
        const int64_t off = fr * l.height * l.width;
        for (int64_t i = 0; i < l.per_frame; ++i) {
          const int64_t k = fr * l.per_frame + i;
          for (int v = 0; v < j; ++v)
            for (int u = 0; u < j; ++u) {
              const T px = p[2 * k] + static_cast<T>(u - half);
              const T py = p[2 * k + 1] + static_cast<T>(v - half);
              auto tap = make_tap(px, py, l.height, l.width);
              tap_backward(tap, f + off, l.width, go[k * jj + v * j + u], gf ? gf + off : nullptr,
                           gp ? gp + 2 * k : nullptr, gp ? gp + 2 * k + 1 : nullptr);
            }
        }
      }
    });
  });
  return out;
}

Patch extract_patch(const Tensor& frame, Point center, int j) {
  if (frame.rank() != 2) throw DimensionError("extract_patch: expected [H, W] frame, got " + shape_str(frame.shape()));
  NoGradGuard ng;
  Tensor pts = Tensor::from({center.x, center.y}, {1, 2}).to(frame.dtype());
  Patch patch;
  patch.size = j;
  patch.values = sample_patches(frame, pts, j).to_vector();
  return patch;
}

}  // namespace viact
