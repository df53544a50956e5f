#include "viact/tokenizer.hpp"

#include <cmath>
#include <vector>

#include "../tensor/autograd.hpp"

namespace viact {

using detail::dispatch;
using detail::grad_span;
using detail::ImplPtr;
using detail::Storage;

std::string to_string(PositionEmbedding variant) {
  switch (variant) {
    case PositionEmbedding::point_linear:
      return "point_linear";
    case PositionEmbedding::point_sincos:
      return "point_sincos";
    case PositionEmbedding::apex_relative_linear:
      return "apex_relative_linear";
    case PositionEmbedding::apex_relative_sincos:
      return "apex_relative_sincos";
  }
  return "unknown";
}

PositionEmbedding parse_position_embedding(const std::string& name) {
  for (auto v : {PositionEmbedding::point_linear, PositionEmbedding::point_sincos,
                 PositionEmbedding::apex_relative_linear, PositionEmbedding::apex_relative_sincos}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("invalid positional embedding variant: " + name);
}

bool is_apex_relative(PositionEmbedding v) {
  return v == PositionEmbedding::apex_relative_linear || v == PositionEmbedding::apex_relative_sincos;
}

bool is_sincos(PositionEmbedding v) {
  return v == PositionEmbedding::point_sincos || v == PositionEmbedding::apex_relative_sincos;
}

void EmbedderConfig::validate() const {
  if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
  if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
  if (is_sincos(variant) && embed_dim % 2 != 0) {
    throw ConfigError("sin/cos positional embedding needs an even embed_dim, got " + std::to_string(embed_dim));
  }
  if (is_apex_relative(variant) && apex_index < 0) throw ConfigError("apex_index must be >= 0");
}

Tensor sincos_embedding(const Tensor& coords, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("sincos_embedding: dim must be even and >= 2");
  if (coords.rank() < 1 || coords.shape().back() != 2) {
    throw DimensionError("sincos_embedding: expected [..., 2], got " + shape_str(coords.shape()));
  }
  const int half = dim / 2;
  std::vector<double> freq(static_cast<size_t>(half));
  for (int i = 0; i < half; ++i) freq[static_cast<size_t>(i)] = std::pow(10000.0, -static_cast<double>(i) / half);
  const int64_t n = coords.numel() / 2;
  Shape out_shape(coords.shape().begin(), coords.shape().end() - 1);
  out_shape.push_back(dim);
  Tensor out = detail::empty_like_shape(out_shape, coords.dtype());
  dispatch(coords.dtype(), [&]<typename T>() {
    auto c = coords.values<T>();
    auto o = out.mutable_values<T>();
    for (int64_t p = 0; p < n; ++p) {
      const double x = c[2 * p], y = c[2 * p + 1];
      T* row = o.data() + p * dim;
      for (int i = 0; i < half; ++i) {
        const double w = freq[static_cast<size_t>(i)];
        row[i] = static_cast<T>(0.5 * (std::sin(x * w) + std::sin(y * w)));
        row[half + i] = static_cast<T>(0.5 * (std::cos(x * w) + std::cos(y * w)));
      }
    }
  });
  ImplPtr ci = coords.impl();
  detail::record(out, "sincos_embedding", {coords}, [ci, freq, n, dim, half](const Storage& g) {
    dispatch(g.dtype, [&]<typename T>() {
      auto go = g.span<T>();
      auto c = ci->data->span<T>();
      auto gc = grad_span<T>(ci);
      for (int64_t p = 0; p < n; ++p) {
        const double x = c[2 * p], y = c[2 * p + 1];
        const T* grow = go.data() + p * dim;
        double dx = 0.0, dy = 0.0;
        for (int i = 0; i < half; ++i) {
          const double w = freq[static_cast<size_t>(i)];
          dx += 0.5 * w * (grow[i] * std::cos(x * w) - grow[half + i] * std::sin(x * w));
          dy += 0.5 * w * (grow[i] * std::cos(y * w) - grow[half + i] * std::sin(y * w));
        }
        gc[2 * p] += static_cast<T>(dx);
        gc[2 * p + 1] += static_cast<T>(dy);
      }
    });
  });
  return out;
}

PatchEmbedder::PatchEmbedder(int patch_size, int embed_dim, Rng& rng)
    : proj(static_cast<int64_t>(patch_size) * patch_size, embed_dim, rng) {}

PositionEmbedder::PositionEmbedder(const EmbedderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  if (!is_sincos(cfg_.variant)) proj_ = Linear(2, cfg_.embed_dim, rng);
}

Tensor PositionEmbedder::operator()(const Tensor& points) const {
  if (points.rank() < 2 || points.shape().back() != 2) {
    throw DimensionError("position embedding expects [..., N, 2], got " + shape_str(points.shape()));
  }
  Tensor coords = points;
  if (is_apex_relative(cfg_.variant)) {
    const int64_t n = points.dim(-2);
    if (cfg_.apex_index >= n) {
      throw ConfigError("apex_index " + std::to_string(cfg_.apex_index) + " out of range for " + std::to_string(n) +
                        " points");
    }
    std::vector<int64_t> apex(static_cast<size_t>(n), cfg_.apex_index);
    coords = sub(points, index_select(points, -2, apex));
  }
  if (is_sincos(cfg_.variant)) return sincos_embedding(coords, cfg_.embed_dim);
  return proj_(coords);
}

void PositionEmbedder::collect(ParameterList& out, const std::string& prefix) const {
  if (!is_sincos(cfg_.variant)) proj_.collect(out, prefix + ".proj");
}

AnatomicalTokenizer::AnatomicalTokenizer(const EmbedderConfig& cfg, Rng& rng)
    : cfg_(cfg), patch_(cfg.patch_size, cfg.embed_dim, rng), position_(cfg, rng) {}

TokenBatch AnatomicalTokenizer::tokenize(const Tensor& frames, const Tensor& points) const {
  Tensor patches = sample_patches(frames, points, cfg_.patch_size);
  return {add(patch_(patches), position_(points)), points};
}

TokenBatch AnatomicalTokenizer::tokenize_frame(const Tensor& frame, const PointSet& points) const {
  if (frame.rank() != 2) throw DimensionError("tokenize_frame expects [H, W], got " + shape_str(frame.shape()));
  return tokenize(frame, points_tensor(points).to(frame.dtype()));
}

TokenBatch AnatomicalTokenizer::tokenize_grid(const Tensor& frames) const {
  const bool batched = frames.rank() == 3;
  if (!batched && frames.rank() != 2) throw DimensionError("tokenize_grid: bad frames " + shape_str(frames.shape()));
  const FrameExtent extent{static_cast<int>(frames.dim(-2)), static_cast<int>(frames.dim(-1))};
  Tensor pts = points_tensor(grid_points(extent, cfg_.patch_size)).to(frames.dtype());
  if (batched) pts = broadcast_leading(pts, {frames.dim(0)});
  return tokenize(frames, pts);
}

void AnatomicalTokenizer::collect(ParameterList& out, const std::string& prefix) const {
  patch_.collect(out, prefix + ".patch_embed");
  position_.collect(out, prefix + ".pos_embed");
}

PointSet grid_points(FrameExtent extent, int j) {
  if (j < 1 || extent.height % j != 0 || extent.width % j != 0) {
    throw ConfigError("grid tokenizer: frame " + std::to_string(extent.height) + "x" + std::to_string(extent.width) +
                      " not divisible by patch size " + std::to_string(j));
  }
  const double half = (j - 1) / 2.0;
  PointSet s;
  for (int r = 0; r < extent.height / j; ++r)
    for (int c = 0; c < extent.width / j; ++c) s.points.push_back({c * j + half, r * j + half});
  return s;
}

}  // namespace viact
