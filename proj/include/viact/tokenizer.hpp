#pragma once

#include <string>

#include "viact/geometry.hpp"
#include "viact/nn.hpp"

namespace viact {

/// Positional embedding of token coordinates.
enum class PositionEmbedding {
  point_linear,          ///< learned 2 -> k projection of (x, y)
  point_sincos,          ///< fixed sin/cos ladder of x and of y, averaged
  apex_relative_linear,  ///< point_linear of (P - P_apex)
  apex_relative_sincos,  ///< point_sincos of (P - P_apex)
};

std::string to_string(PositionEmbedding variant);
/// Accepts the names produced by `to_string`; throws ConfigError otherwise.
PositionEmbedding parse_position_embedding(const std::string& name);
bool is_apex_relative(PositionEmbedding variant);
bool is_sincos(PositionEmbedding variant);

struct EmbedderConfig {
  PositionEmbedding variant = PositionEmbedding::point_linear;
  int patch_size = 16;
  int embed_dim = 192;
  /// Apex point of the set; the middle of a 21-point endocardial contour.
  int apex_index = 10;

  void validate() const;
};

/// Fixed sinusoidal embedding of coords [..., 2] -> [..., dim], the average of
/// the x and y embeddings. Frequencies 10000^(-i / (dim/2)), sines then
/// cosines. Differentiable in the coordinates.
Tensor sincos_embedding(const Tensor& coords, int dim);

/// Tokens for one batch of frames. `tokens` is [..., N, k]; `points` keeps the
/// source coordinates [..., N, 2] for positional use downstream.
struct TokenBatch {
  Tensor tokens;
  Tensor points;

  int64_t count() const { return tokens.dim(-2); }
  int64_t embed_dim() const { return tokens.dim(-1); }
};

/// Flattened patches [..., j*j] -> [..., k] with weights shared everywhere.
struct PatchEmbedder {
  Linear proj;

  PatchEmbedder() = default;
  PatchEmbedder(int patch_size, int embed_dim, Rng& rng);
  Tensor operator()(const Tensor& patches) const { return proj(patches); }
  void collect(ParameterList& out, const std::string& prefix) const { proj.collect(out, prefix + ".proj"); }
};

/// Point coordinates [..., N, 2] -> [..., N, k] per the configured variant.
class PositionEmbedder {
 public:
  PositionEmbedder() = default;
  PositionEmbedder(const EmbedderConfig& cfg, Rng& rng);

  Tensor operator()(const Tensor& points) const;
  void collect(ParameterList& out, const std::string& prefix) const;
  const Linear& projection() const { return proj_; }
  Linear& projection() { return proj_; }

 private:
  EmbedderConfig cfg_;
  Linear proj_;  // unused for sin/cos variants
};

/// Patch embedding plus positional embedding of the sampled points.
class AnatomicalTokenizer {
 public:
  AnatomicalTokenizer() = default;
  AnatomicalTokenizer(const EmbedderConfig& cfg, Rng& rng);

  /// frames [F, H, W] with points [F, N, 2] -> tokens [F, N, k]; a single
  /// [H, W] frame with [N, 2] points gives [N, k].
  TokenBatch tokenize(const Tensor& frames, const Tensor& points) const;
  TokenBatch tokenize_frame(const Tensor& frame, const PointSet& points) const;
  /// Non-overlapping j x j grid over the whole frame (the grid baseline).
  TokenBatch tokenize_grid(const Tensor& frames) const;

  const EmbedderConfig& config() const { return cfg_; }
  void collect(ParameterList& out, const std::string& prefix) const;
  PatchEmbedder& patch_embedder() { return patch_; }
  PositionEmbedder& position_embedder() { return position_; }

 private:
  EmbedderConfig cfg_;
  PatchEmbedder patch_;
  PositionEmbedder position_;
};

/// Centers of the non-overlapping j x j cells, row-major; throws ConfigError
/// unless j divides both extents.
PointSet grid_points(FrameExtent extent, int j);

}  // namespace viact
