#pragma once

#include <optional>
#include <string>
#include <vector>

#include "viact/checkpoint.hpp"
#include "viact/nn.hpp"
#include "viact/tokenizer.hpp"

namespace viact {

/// Backbone dimensions. Defaults are the "tiny" scale: k = 192, 3 heads,
/// 12 encoder blocks, 1 temporal block, MLP 768, j = 16, T = 18.
struct ModelConfig {
  int embed_dim = 192;
  int heads = 3;
  int encoder_blocks = 12;
  int temporal_blocks = 1;
  int mlp_hidden = 768;
  int patch_size = 16;
  int frames = 18;
  double dropout = 0.0;
  PositionEmbedding position = PositionEmbedding::point_linear;
  int apex_index = 10;

  void validate() const;
  EmbedderConfig embedder() const { return {position, patch_size, embed_dim, apex_index}; }
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// Inverted dropout; inactive when `rate` is 0 or `rng` is null.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  Tensor operator()(const Tensor& x) const;
};

/// Pre-norm block: x + MHSA(LN(x)), then + MLP(LN(.)) with GELU.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(int dim, int heads, int mlp_hidden, Rng& rng);

  /// x is [S, M, k] (or [M, k]). When `attention` is given it receives the
  /// softmax weights [S, heads, M, M].
  Tensor operator()(const Tensor& x, Tensor* attention = nullptr, const Dropout& dropout = {}) const;

  void collect(ParameterList& out, const std::string& prefix) const;
  int heads() const { return heads_; }

  LayerNorm norm1;
  Linear qkv;
  Linear proj;
  LayerNorm norm2;
  Linear fc1;
  Linear fc2;

 private:
  int heads_ = 1;
};

/// Stack of blocks followed by a final LayerNorm.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(int blocks, int dim, int heads, int mlp_hidden, Rng& rng);

  /// `last_attention` receives the final block's attention weights.
  Tensor operator()(const Tensor& x, Tensor* last_attention = nullptr, const Dropout& dropout = {}) const;
  void collect(ParameterList& out, const std::string& prefix) const;

  std::vector<TransformerBlock> blocks;
  LayerNorm norm;
};

/// Per-frame encoder: anatomical tokens with a shared class token prepended.
class FrameEncoder {
 public:
  FrameEncoder() = default;
  FrameEncoder(const ModelConfig& cfg, Rng& rng);

  struct Output {
    Tensor class_encoding;  ///< [F, k]
    Tensor attention;       ///< final block [F, heads, N+1, N+1], if requested
    int64_t sequence_length = 0;
  };

  Output encode(const TokenBatch& tokens, bool want_attention = false, const Dropout& dropout = {}) const;
  /// frames [F, H, W] with points [F, N, 2].
  Output operator()(const Tensor& frames, const Tensor& points, bool want_attention = false,
                    const Dropout& dropout = {}) const;

  void collect(ParameterList& out, const std::string& prefix) const;

  AnatomicalTokenizer tokenizer;
  Tensor class_token;  ///< theta, [k]
  TransformerEncoder encoder;
};

/// Space-time factorized classifier: frame encoder, temporal transformer over
/// frame class encodings with a learnable positional table and class token,
/// then a single-logit linear head.
class ViactModel {
 public:
  ViactModel() = default;
  ViactModel(const ModelConfig& cfg, Rng& rng);

  struct Output {
    Tensor logits;           ///< [B]
    Tensor clip_encoding;    ///< omega-hat, [B, k]
    Tensor frame_encodings;  ///< theta-hat, [B, T, k]
    Tensor frame_attention;  ///< [B*T, heads, N+1, N+1] if requested
    int64_t frame_sequence_length = 0;
    int64_t temporal_sequence_length = 0;
  };

  /// frames [B, T, H, W] with points [B, T, N, 2].
  Output forward(const Tensor& frames, const Tensor& points, bool want_attention = false,
                 const Dropout& dropout = {}) const;
  /// theta-hat [B, T, k] -> omega-hat [B, k].
  Tensor encode_clip(const Tensor& frame_encodings, int64_t* sequence_length = nullptr,
                     const Dropout& dropout = {}) const;
  Tensor classify(const Tensor& clip_encoding) const;

  ParameterList parameters() const;
  const ModelConfig& config() const { return cfg_; }

  Checkpoint to_checkpoint() const;
  static ViactModel from_checkpoint(const Checkpoint& ck);

  FrameEncoder frame_encoder;
  Tensor temporal_token;  ///< omega, [k]
  Tensor temporal_pos;    ///< [T, k]
  std::vector<TransformerBlock> temporal_blocks;
  LayerNorm temporal_norm;
  Linear head;

 private:
  ModelConfig cfg_;
};

/// Closed-form parameter count of `ViactModel` for a config.
int64_t expected_parameter_count(const ModelConfig& cfg);

/// Analytic FLOPs of one transformer block over `tokens` tokens, counting a
/// multiply-add as 2. `attention` is Q K^T plus A V; `projections` is the
/// fused qkv and output projections.
struct BlockFlops {
  double attention = 0.0;
  double projections = 0.0;
  double mlp = 0.0;

  double total() const { return attention + projections + mlp; }
};

BlockFlops block_flops(int64_t tokens, int64_t dim, int64_t mlp_hidden);

/// Class-token attention over the N points from [F, heads, N+1, N+1]
/// weights for one head, min-max normalized per frame -> [F][N]. A single
/// point normalizes to 1.
std::vector<std::vector<double>> class_token_attention(const Tensor& attention, int head, bool normalize = true);

}  // namespace viact
