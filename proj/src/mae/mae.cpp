#include "viact/mae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace viact {

using nlohmann::json;

MaskPlan make_mask(int64_t n, double ratio, uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must be in (0, 1), got " + std::to_string(ratio));
  const int64_t masked = std::llround(ratio * static_cast<double>(n));
  if (masked < 1 || masked >= n) {
    throw ConfigError("mask ratio " + std::to_string(ratio) + " on " + std::to_string(n) + " tokens leaves " +
                      std::to_string(n - masked) + " visible and " + std::to_string(masked) + " masked");
  }
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first `masked` entries are the masked set.
  for (int64_t i = 0; i < masked; ++i) {
    std::uniform_int_distribution<int64_t> pick(i, n - 1);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(pick(rng))]);
  }
  MaskPlan plan;
  plan.ratio = ratio;
  plan.count = n;
  plan.seed = seed;
  plan.masked.assign(order.begin(), order.begin() + masked);
  plan.visible.assign(order.begin() + masked, order.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t mask_seed(uint64_t base, uint64_t epoch, uint64_t sample, uint64_t frame) {
  return splitmix(splitmix(splitmix(splitmix(base) ^ epoch) ^ sample) ^ frame);
}

void MaeConfig::validate() const {
  encoder.validate();
  if (decoder_blocks < 1 || decoder_dim < 1 || decoder_heads < 1 || decoder_mlp < 1) {
    throw ConfigError("mae config: decoder sizes must be >= 1");
  }
  if (decoder_dim % decoder_heads != 0) throw ConfigError("mae config: decoder_dim not divisible by decoder_heads");
  if (decoder_dim > encoder.embed_dim) throw ConfigError("mae config: decoder_dim exceeds the encoder embed_dim");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mae config: mask_ratio must be in (0, 1)");
}

std::string MaeConfig::to_json() const {
  json j{{"encoder", json::parse(encoder.to_json())},
         {"decoder_blocks", decoder_blocks},
         {"decoder_dim", decoder_dim},
         {"decoder_heads", decoder_heads},
         {"decoder_mlp", decoder_mlp},
         {"mask_ratio", mask_ratio}};
  return j.dump();
}

MaeConfig MaeConfig::from_json(const std::string& text) {
  MaeConfig c;
  try {
    json j = json::parse(text);
    if (j.contains("encoder")) c.encoder = ModelConfig::from_json(j.at("encoder").dump());
    c.decoder_blocks = j.value("decoder_blocks", c.decoder_blocks);
    c.decoder_dim = j.value("decoder_dim", c.decoder_dim);
    c.decoder_heads = j.value("decoder_heads", c.decoder_heads);
    c.decoder_mlp = j.value("decoder_mlp", c.decoder_mlp);
    c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mae config: ") + e.what());
  }
  c.validate();
  return c;
}

MaskedAutoencoder::MaskedAutoencoder(const MaeConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto& e = cfg_.encoder;
  tokenizer = AnatomicalTokenizer(e.embedder(), rng);
  encoder = TransformerEncoder(e.encoder_blocks, e.embed_dim, e.heads, e.mlp_hidden, rng);
  decoder_embed = Linear(e.embed_dim, cfg_.decoder_dim, rng);
  mask_token = trunc_normal({cfg_.decoder_dim}, 0.02, rng);
  decoder_pos = Linear(2, cfg_.decoder_dim, rng);
  for (int i = 0; i < cfg_.decoder_blocks; ++i) {
    decoder_blocks.emplace_back(cfg_.decoder_dim, cfg_.decoder_heads, cfg_.decoder_mlp, rng);
  }
  decoder_norm = LayerNorm(cfg_.decoder_dim);
  recon_head = Linear(cfg_.decoder_dim, static_cast<int64_t>(e.patch_size) * e.patch_size, rng);
}

MaskedAutoencoder::Output MaskedAutoencoder::forward(const Tensor& frames, const Tensor& points,
                                                     std::span<const MaskPlan> plans, const Dropout& dropout) const {
  if (frames.rank() != 3 || points.rank() != 3 || points.dim(0) != frames.dim(0) || points.dim(2) != 2) {
    throw DimensionError("mae forward expects frames [F, H, W] and points [F, N, 2], got " +
                         shape_str(frames.shape()) + " and " + shape_str(points.shape()));
  }
  const int64_t f = frames.dim(0), n = points.dim(1);
  if (static_cast<int64_t>(plans.size()) != f) throw DimensionError("mae forward: one mask plan per frame required");
  const int64_t v = static_cast<int64_t>(plans[0].visible.size());
  const int64_t mk = n - v;
  std::vector<int64_t> vis_idx, mask_idx, restore;
  vis_idx.reserve(static_cast<size_t>(f * v));
  mask_idx.reserve(static_cast<size_t>(f * mk));
  restore.resize(static_cast<size_t>(f * n));
  for (int64_t i = 0; i < f; ++i) {
    const auto& p = plans[static_cast<size_t>(i)];
    if (p.count != n || static_cast<int64_t>(p.visible.size()) != v || static_cast<int64_t>(p.masked.size()) != mk) {
      throw DimensionError("mae forward: mask plan " + std::to_string(i) + " does not match " + std::to_string(n) +
                           " tokens with " + std::to_string(v) + " visible");
    }
    std::vector<char> seen(static_cast<size_t>(n), 0);
    auto place = [&](int64_t idx, int64_t slot) {
      if (idx < 0 || idx >= n || seen[static_cast<size_t>(idx)]) {
        throw ConfigError("mae forward: mask plan " + std::to_string(i) + " is not a partition");
      }
      seen[static_cast<size_t>(idx)] = 1;
      restore[static_cast<size_t>(i * n + idx)] = slot;
    };
    for (int64_t s = 0; s < v; ++s) place(p.visible[static_cast<size_t>(s)], s);
    for (int64_t s = 0; s < mk; ++s) place(p.masked[static_cast<size_t>(s)], v + s);
    vis_idx.insert(vis_idx.end(), p.visible.begin(), p.visible.end());
    mask_idx.insert(mask_idx.end(), p.masked.begin(), p.masked.end());
  }

  Output out;
  Tensor vis_points = gather_rows(points, vis_idx, v);
  Tensor encoded = encoder(tokenizer.tokenize(frames, vis_points).tokens, nullptr, dropout);
  out.encoder_tokens = encoded.dim(1);

  const Tensor parts[] = {decoder_embed(encoded), broadcast_leading(mask_token, {f, mk})};
  Tensor x = gather_rows(concat(parts, 1), restore, n);
  x = add(x, decoder_pos(points));
  out.decoder_tokens = x.dim(1);
  for (const auto& block : decoder_blocks) x = block(x, nullptr, dropout);
  out.decoded = recon_head(decoder_norm(x));
  out.recon = gather_rows(out.decoded, mask_idx, mk);
  {
    NoGradGuard ng;
    out.targets = sample_patches(frames.detach(), gather_rows(points.detach(), mask_idx, mk), cfg_.encoder.patch_size);
  }
  return out;
}

ParameterList MaskedAutoencoder::parameters() const {
  ParameterList out;
  tokenizer.collect(out, "tokenizer");
  encoder.collect(out, "encoder");
  decoder_embed.collect(out, "decoder.embed");
  out.push_back({"decoder.mask_token", mask_token, false});
  decoder_pos.collect(out, "decoder.pos_embed");
  for (size_t i = 0; i < decoder_blocks.size(); ++i) decoder_blocks[i].collect(out, "decoder.block" + std::to_string(i));
  decoder_norm.collect(out, "decoder.norm");
  recon_head.collect(out, "decoder.recon");
  return out;
}

Checkpoint MaskedAutoencoder::to_checkpoint() const {
  Checkpoint ck;
  ck.kind = CheckpointKind::pretrain;
  ck.metadata = cfg_.to_json();
  for (auto& p : parameters()) ck.tensors.push_back({p.name, p.value});
  return ck;
}

MaskedAutoencoder MaskedAutoencoder::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != CheckpointKind::pretrain) throw ConfigError("checkpoint is not a pre-training graph");
  Rng rng(0);
  MaskedAutoencoder mae(MaeConfig::from_json(ck.metadata), rng);
  std::vector<std::pair<std::string, Tensor>> values;
  for (auto& t : ck.tensors) values.emplace_back(t.name, t.value);
  auto params = mae.parameters();
  load_parameters(params, values);
  return mae;
}

Tensor mae_loss(const Tensor& recon, const Tensor& targets) { return mse(recon, targets); }

ViactModel transfer_to_classifier(const MaskedAutoencoder& mae, const ModelConfig& cfg, Rng& rng) {
  const auto& e = mae.config().encoder;
  if (e.embed_dim != cfg.embed_dim || e.heads != cfg.heads || e.encoder_blocks != cfg.encoder_blocks ||
      e.mlp_hidden != cfg.mlp_hidden || e.patch_size != cfg.patch_size || e.position != cfg.position) {
    throw ConfigError("pre-trained encoder " + e.to_json() + " does not match classifier " + cfg.to_json());
  }
  ViactModel model(cfg, rng);
  std::vector<std::pair<std::string, Tensor>> values;
  for (auto& p : mae.parameters()) {
    if (p.name.starts_with("tokenizer.") || p.name.starts_with("encoder.")) values.emplace_back(p.name, p.value);
  }
  ParameterList shared;
  for (auto& p : model.parameters()) {
    if (p.name.starts_with("tokenizer.") || p.name.starts_with("encoder.")) shared.push_back(p);
  }
  load_parameters(shared, values);
  return model;
}

}  // namespace viact
