#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "viact/model.hpp"

namespace viact {

/// Partition of token indices 0..N-1 into visible and masked sets, each in
/// ascending order.
struct MaskPlan {
  double ratio = 0.0;
  int64_t count = 0;
  std::vector<int64_t> visible;
  std::vector<int64_t> masked;
  uint64_t seed = 0;
};

/// round(ratio * N) indices masked, chosen uniformly without replacement.
/// Throws ConfigError when either set would be empty.
MaskPlan make_mask(int64_t n, double ratio, uint64_t seed);

/// Seed for the mask of one frame at one step, independent of visit order.
uint64_t mask_seed(uint64_t base, uint64_t epoch, uint64_t sample, uint64_t frame = 0);

struct MaeConfig {
  ModelConfig encoder;  ///< frame-encoder dims; temporal fields are unused
  int decoder_blocks = 4;
  int decoder_dim = 96;
  int decoder_heads = 3;
  int decoder_mlp = 384;
  double mask_ratio = 0.75;

  void validate() const;
  std::string to_json() const;
  static MaeConfig from_json(const std::string& text);
};

/// Frame-level masked autoencoder over point-patch tokens. The encoder has no
/// class token; decoder inputs get a separate linear embedding of every
/// original point location.
class MaskedAutoencoder {
 public:
  MaskedAutoencoder() = default;
  MaskedAutoencoder(const MaeConfig& cfg, Rng& rng);

  struct Output {
    Tensor recon;    ///< [F, masked, j*j]
    Tensor targets;  ///< [F, masked, j*j], sampled without gradient
    Tensor decoded;  ///< [F, N, j*j], reconstruction at every slot
    int64_t encoder_tokens = 0;
    int64_t decoder_tokens = 0;
  };

  /// frames [F, H, W], points [F, N, 2], one plan per frame.
  Output forward(const Tensor& frames, const Tensor& points, std::span<const MaskPlan> plans,
                 const Dropout& dropout = {}) const;

  ParameterList parameters() const;
  const MaeConfig& config() const { return cfg_; }

  Checkpoint to_checkpoint() const;
  static MaskedAutoencoder from_checkpoint(const Checkpoint& ck);

  AnatomicalTokenizer tokenizer;
  TransformerEncoder encoder;
  Linear decoder_embed;
  Tensor mask_token;  ///< [decoder_dim]
  Linear decoder_pos;
  std::vector<TransformerBlock> decoder_blocks;
  LayerNorm decoder_norm;
  Linear recon_head;

 private:
  MaeConfig cfg_;
};

/// Mean squared error over every masked-patch pixel.
Tensor mae_loss(const Tensor& recon, const Tensor& targets);

/// Classifier whose tokenizer and frame encoder blocks are copied from `mae`;
/// the class tokens, temporal transformer and head are freshly initialized.
/// Throws ConfigError when the encoder dimensions differ.
ViactModel transfer_to_classifier(const MaskedAutoencoder& mae, const ModelConfig& cfg, Rng& rng);

}  // namespace viact
