#include "viact/model.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace viact {

using nlohmann::json;

void ModelConfig::validate() const {
  if (embed_dim < 1 || heads < 1 || encoder_blocks < 1 || temporal_blocks < 1 || mlp_hidden < 1 || patch_size < 1 ||
      frames < 1) {
    throw ConfigError("model config: all sizes and counts must be >= 1");
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("model config: embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model config: dropout must be in [0, 1)");
  embedder().validate();
}

std::string ModelConfig::to_json() const {
  json j{{"embed_dim", embed_dim},   {"heads", heads},           {"encoder_blocks", encoder_blocks},
         {"temporal_blocks", temporal_blocks}, {"mlp_hidden", mlp_hidden}, {"patch_size", patch_size},
         {"frames", frames},         {"dropout", dropout},       {"position", to_string(position)},
         {"apex_index", apex_index}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  json j;
  try {
    j = json::parse(text);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.heads = j.value("heads", c.heads);
    c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
    c.temporal_blocks = j.value("temporal_blocks", c.temporal_blocks);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.frames = j.value("frames", c.frames);
    c.dropout = j.value("dropout", c.dropout);
    c.apex_index = j.value("apex_index", c.apex_index);
    if (j.contains("position")) c.position = parse_position_embedding(j.at("position").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

Tensor Dropout::operator()(const Tensor& x) const {
  if (rate <= 0.0 || rng == nullptr) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Tensor mask = Tensor::zeros(x.shape(), x.dtype(), false);
  detail::dispatch(x.dtype(), [&]<typename T>() {
    for (auto& m : mask.mutable_values<T>()) m = keep(*rng) ? static_cast<T>(s) : T(0);
  });
  return mul(x, mask);
}

TransformerBlock::TransformerBlock(int dim, int heads, int mlp_hidden, Rng& rng)
    : norm1(dim),
      qkv(dim, 3 * static_cast<int64_t>(dim), rng),
      proj(dim, dim, rng),
      norm2(dim),
      fc1(dim, mlp_hidden, rng),
      fc2(mlp_hidden, dim, rng),
      heads_(heads) {
  if (dim % heads != 0) throw ConfigError("transformer block: dim not divisible by heads");
}

Tensor TransformerBlock::operator()(const Tensor& input, Tensor* attention, const Dropout& dropout) const {
  const bool single = input.rank() == 2;
  if (!single && input.rank() != 3) {
    throw DimensionError("transformer block expects [S, M, k], got " + shape_str(input.shape()));
  }
  Tensor x = single ? reshape(input, {1, input.dim(0), input.dim(1)}) : input;
  const int64_t s = x.dim(0), m = x.dim(1), k = x.dim(2), h = heads_, d = k / h;

  Tensor packed = permute(reshape(qkv(norm1(x)), {s, m, 3, h, d}), {2, 0, 3, 1, 4});
  Tensor q = reshape(slice(packed, 0, 0, 1), {s, h, m, d});
  Tensor kk = reshape(slice(packed, 0, 1, 1), {s, h, m, d});
  Tensor v = reshape(slice(packed, 0, 2, 1), {s, h, m, d});
  Tensor weights = softmax(scale(matmul(q, kk, true), 1.0 / std::sqrt(static_cast<double>(d))), -1);
  if (attention) *attention = weights;
  Tensor ctx = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {s, m, k});
  x = add(x, dropout(proj(ctx)));
  x = add(x, dropout(fc2(gelu(fc1(norm2(x))))));
  return single ? reshape(x, {m, k}) : x;
}

void TransformerBlock::collect(ParameterList& out, const std::string& prefix) const {
  norm1.collect(out, prefix + ".norm1");
  qkv.collect(out, prefix + ".mhsa.qkv");
  proj.collect(out, prefix + ".mhsa.proj");
  norm2.collect(out, prefix + ".norm2");
  fc1.collect(out, prefix + ".mlp.fc1");
  fc2.collect(out, prefix + ".mlp.fc2");
}

TransformerEncoder::TransformerEncoder(int blocks_, int dim, int heads, int mlp_hidden, Rng& rng) : norm(dim) {
  for (int i = 0; i < blocks_; ++i) blocks.emplace_back(dim, heads, mlp_hidden, rng);
}

Tensor TransformerEncoder::operator()(const Tensor& x, Tensor* last_attention, const Dropout& dropout) const {
  Tensor h = x;
  for (size_t i = 0; i < blocks.size(); ++i) {
    h = blocks[i](h, i + 1 == blocks.size() ? last_attention : nullptr, dropout);
  }
  return norm(h);
}

void TransformerEncoder::collect(ParameterList& out, const std::string& prefix) const {
  for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".block" + std::to_string(i));
  norm.collect(out, prefix + ".norm");
}

FrameEncoder::FrameEncoder(const ModelConfig& cfg, Rng& rng)
    : tokenizer(cfg.embedder(), rng),
      class_token(trunc_normal({cfg.embed_dim}, 0.02, rng)),
      encoder(cfg.encoder_blocks, cfg.embed_dim, cfg.heads, cfg.mlp_hidden, rng) {}

FrameEncoder::Output FrameEncoder::encode(const TokenBatch& tokens, bool want_attention, const Dropout& dropout) const {
  if (tokens.tokens.rank() != 3) {
    throw DimensionError("frame encoder expects tokens [F, N, k], got " + shape_str(tokens.tokens.shape()));
  }
  if (tokens.count() < 1) throw DimensionError("frame encoder: empty token batch");
  const int64_t f = tokens.tokens.dim(0), k = tokens.embed_dim();
  const Tensor parts[] = {broadcast_leading(reshape(class_token, {1, k}), {f}), tokens.tokens};
  Tensor seq = concat(parts, 1);
  Output out;
  out.sequence_length = seq.dim(1);
  Tensor encoded = encoder(seq, want_attention ? &out.attention : nullptr, dropout);
  out.class_encoding = reshape(slice(encoded, 1, 0, 1), {f, k});
  return out;
}

FrameEncoder::Output FrameEncoder::operator()(const Tensor& frames, const Tensor& points, bool want_attention,
                                              const Dropout& dropout) const {
  return encode(tokenizer.tokenize(frames, points), want_attention, dropout);
}

void FrameEncoder::collect(ParameterList& out, const std::string& prefix) const {
  tokenizer.collect(out, prefix + "tokenizer");
  out.push_back({prefix + "frame_token", class_token, false});
  encoder.collect(out, prefix + "encoder");
}

ViactModel::ViactModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  frame_encoder = FrameEncoder(cfg_, rng);
  temporal_token = trunc_normal({cfg_.embed_dim}, 0.02, rng);
  temporal_pos = trunc_normal({cfg_.frames, cfg_.embed_dim}, 0.02, rng);
  for (int i = 0; i < cfg_.temporal_blocks; ++i) temporal_blocks.emplace_back(cfg_.embed_dim, cfg_.heads, cfg_.mlp_hidden, rng);
  temporal_norm = LayerNorm(cfg_.embed_dim);
  head = Linear(cfg_.embed_dim, 1, rng);
}

Tensor ViactModel::encode_clip(const Tensor& frame_encodings, int64_t* sequence_length, const Dropout& dropout) const {
  if (frame_encodings.rank() != 3 || frame_encodings.dim(1) != cfg_.frames || frame_encodings.dim(2) != cfg_.embed_dim) {
    throw DimensionError("encode_clip expects [B, " + std::to_string(cfg_.frames) + ", " +
                         std::to_string(cfg_.embed_dim) + "], got " + shape_str(frame_encodings.shape()));
  }
  const int64_t b = frame_encodings.dim(0), k = cfg_.embed_dim;
  const Tensor parts[] = {broadcast_leading(reshape(temporal_token, {1, k}), {b}), add(frame_encodings, temporal_pos)};
  Tensor seq = concat(parts, 1);
  if (sequence_length) *sequence_length = seq.dim(1);
  for (const auto& block : temporal_blocks) seq = block(seq, nullptr, dropout);
  return reshape(slice(temporal_norm(seq), 1, 0, 1), {b, k});
}

Tensor ViactModel::classify(const Tensor& clip_encoding) const {
  return reshape(head(clip_encoding), {clip_encoding.dim(0)});
}

ViactModel::Output ViactModel::forward(const Tensor& frames, const Tensor& points, bool want_attention,
                                       const Dropout& dropout) const {
  if (frames.rank() != 4 || points.rank() != 4 || points.dim(0) != frames.dim(0) || points.dim(1) != frames.dim(1)) {
    throw DimensionError("forward expects frames [B, T, H, W] and points [B, T, N, 2], got " +
                         shape_str(frames.shape()) + " and " + shape_str(points.shape()));
  }
  const int64_t b = frames.dim(0), t = frames.dim(1);
  Output out;
  auto enc = frame_encoder(reshape(frames, {b * t, frames.dim(2), frames.dim(3)}),
                           reshape(points, {b * t, points.dim(2), 2}), want_attention, dropout);
  out.frame_sequence_length = enc.sequence_length;
  out.frame_attention = enc.attention;
  out.frame_encodings = reshape(enc.class_encoding, {b, t, cfg_.embed_dim});
  out.clip_encoding = encode_clip(out.frame_encodings, &out.temporal_sequence_length, dropout);
  out.logits = classify(out.clip_encoding);
  return out;
}

ParameterList ViactModel::parameters() const {
  ParameterList out;
  frame_encoder.collect(out, "");
  out.push_back({"temporal_token", temporal_token, false});
  out.push_back({"temporal_pos", temporal_pos, false});
  for (size_t i = 0; i < temporal_blocks.size(); ++i) temporal_blocks[i].collect(out, "temporal.block" + std::to_string(i));
  temporal_norm.collect(out, "temporal.norm");
  head.collect(out, "head");
  return out;
}

Checkpoint ViactModel::to_checkpoint() const {
  Checkpoint ck;
  ck.kind = CheckpointKind::classifier;
  ck.metadata = cfg_.to_json();
  for (auto& p : parameters()) ck.tensors.push_back({p.name, p.value});
  return ck;
}

ViactModel ViactModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != CheckpointKind::classifier) throw ConfigError("checkpoint is not a classifier graph");
  Rng rng(0);
  ViactModel model(ModelConfig::from_json(ck.metadata), rng);
  std::vector<std::pair<std::string, Tensor>> values;
  for (auto& t : ck.tensors) values.emplace_back(t.name, t.value);
  auto params = model.parameters();
  load_parameters(params, values);
  return model;
}

int64_t expected_parameter_count(const ModelConfig& cfg) {
  const int64_t k = cfg.embed_dim, m = cfg.mlp_hidden, j2 = static_cast<int64_t>(cfg.patch_size) * cfg.patch_size;
  const int64_t block = 2 * (2 * k) + (k * 3 * k + 3 * k) + (k * k + k) + (k * m + m) + (m * k + k);
  const int64_t tokenizer = (j2 * k + k) + (is_sincos(cfg.position) ? 0 : 2 * k + k);
  return tokenizer + k + cfg.encoder_blocks * block + 2 * k + k + cfg.frames * k + cfg.temporal_blocks * block + 2 * k +
         (k + 1);
}

BlockFlops block_flops(int64_t tokens, int64_t dim, int64_t mlp_hidden) {
  const double m = static_cast<double>(tokens), k = static_cast<double>(dim), h = static_cast<double>(mlp_hidden);
  BlockFlops f;
  f.attention = 2.0 * (2.0 * m * m * k);
  f.projections = 2.0 * m * k * (3.0 * k) + 2.0 * m * k * k;
  f.mlp = 2.0 * (2.0 * m * k * h);
  return f;
}

std::vector<std::vector<double>> class_token_attention(const Tensor& attention, int head, bool normalize) {
  if (attention.rank() != 4 || attention.dim(2) != attention.dim(3) || attention.dim(2) < 2) {
    throw DimensionError("class_token_attention expects [F, heads, N+1, N+1], got " + shape_str(attention.shape()));
  }
  if (head < 0 || head >= attention.dim(1)) throw ConfigError("attention head index out of range");
  const int64_t f = attention.dim(0), h = attention.dim(1), m = attention.dim(2);
  const auto v = attention.to_vector();
  std::vector<std::vector<double>> out(static_cast<size_t>(f));
  for (int64_t i = 0; i < f; ++i) {
    const size_t row = static_cast<size_t>(((i * h + head) * m) * m);
    std::vector<double> scores(v.begin() + static_cast<std::ptrdiff_t>(row + 1),
                               v.begin() + static_cast<std::ptrdiff_t>(row + m));
    if (normalize) {
      const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
      const double a = *lo, span = *hi - *lo;
      for (auto& s : scores) s = span > 0.0 ? (s - a) / span : 1.0;
    }
    out[static_cast<size_t>(i)] = std::move(scores);
  }
  return out;
}

}  // namespace viact
