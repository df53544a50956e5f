#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "viact/render.hpp"
#include "viact/train.hpp"

namespace viact {

namespace {

// Stream ids that keep shuffling and dropout draws apart from mask seeds.
constexpr uint64_t kShuffleStream = 0xfffffffffffffff1ULL;
constexpr uint64_t kDropoutStream = 0xfffffffffffffff2ULL;

void check_compatible(const std::vector<Clip>& clips, const Clip& first) {
  for (const auto& c : clips) {
    if (c.height != first.height || c.width != first.width || c.num_frames != first.num_frames ||
        c.num_points != first.num_points) {
      throw DimensionError("clip " + c.patient_id + " differs in shape from clip " + first.patient_id);
    }
  }
}

std::vector<size_t> shuffled(size_t n, uint64_t seed, uint64_t epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(mask_seed(seed, epoch, kShuffleStream));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::pair<std::string, Tensor>> snapshot(const ParameterList& params) {
  NoGradGuard guard;
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : params) out.emplace_back(p.name, p.value.detach().clone());
  return out;
}

// Pastes j x j patch values at the rounded sampling-grid pixels of `center`.
void paste_patch(Image& img, int x0, Point center, int j, std::span<const double> values) {
  const auto grid = make_sampling_grid(center, j);
  for (size_t k = 0; k < grid.size(); ++k) {
    const double v = std::clamp(values[k], 0.0, 1.0);
    const auto g = static_cast<uint8_t>(std::lround(v * 255.0));
    const int x = static_cast<int>(std::lround(grid[k].x)), y = static_cast<int>(std::lround(grid[k].y));
    if (x >= 0 && x < img.width / 3) img.set(x0 + x, y, {g, g, g});
  }
}

// Rows of [frame | visible patches | visible + reconstructed patches].
void export_reconstruction(const MaskedAutoencoder& mae, const FrameBatch& batch, std::span<const MaskPlan> plans,
                           const std::filesystem::path& path) {
  NoGradGuard guard;
  const auto out = mae.forward(batch.frames, batch.points, plans);
  const int j = mae.config().encoder.patch_size;
  const auto patches = sample_patches(batch.frames, batch.points, j).to_vector();
  const auto decoded = out.decoded.to_vector();
  const auto frames = batch.frames.to(DType::f32);
  const auto pixels = frames.values<float>();
  const auto pts = batch.points.to_vector();
  const int f = static_cast<int>(batch.frames.dim(0)), h = static_cast<int>(batch.frames.dim(1)),
            w = static_cast<int>(batch.frames.dim(2));
  const auto n = static_cast<size_t>(batch.points.dim(1));
  const size_t jj = static_cast<size_t>(j) * j;
  Image canvas(3 * w, f * h, {0, 0, 0});
  for (int i = 0; i < f; ++i) {
    Image row(3 * w, h, {0, 0, 0});
    blit(row, gray_image(pixels.subspan(static_cast<size_t>(i) * h * w, static_cast<size_t>(h) * w), h, w), 0, 0);
    auto point = [&](size_t p) {
      const size_t o = (static_cast<size_t>(i) * n + p) * 2;
      return Point{pts[o], pts[o + 1]};
    };
    auto slot = [&](const std::vector<double>& buf, size_t p) {
      return std::span<const double>(buf).subspan((static_cast<size_t>(i) * n + p) * jj, jj);
    };
    for (int64_t p : plans[static_cast<size_t>(i)].visible) {
      paste_patch(row, w, point(static_cast<size_t>(p)), j, slot(patches, static_cast<size_t>(p)));
      paste_patch(row, 2 * w, point(static_cast<size_t>(p)), j, slot(patches, static_cast<size_t>(p)));
    }
    for (int64_t p : plans[static_cast<size_t>(i)].masked) {
      paste_patch(row, 2 * w, point(static_cast<size_t>(p)), j, slot(decoded, static_cast<size_t>(p)));
    }
    blit(canvas, row, 0, i * h);
  }
  write_png(path, canvas);
}

}  // namespace

std::string to_string(TokenizerKind kind) {
  return kind == TokenizerKind::grid ? "grid" : "anatomical";
}

TokenizerKind parse_tokenizer(const std::string& name) {
  if (name == "anatomical") return TokenizerKind::anatomical;
  if (name == "grid") return TokenizerKind::grid;
  throw ConfigError("unknown tokenizer: " + name + " (expected anatomical or grid)");
}

ClipBatch make_clip_batch(const std::vector<Clip>& clips, std::span<const size_t> indices) {
  if (indices.empty()) throw ConfigError("empty clip batch");
  const Clip& first = clips.at(indices[0]);
  std::vector<float> frames, points;
  std::vector<double> labels;
  frames.reserve(indices.size() * first.frames.size());
  points.reserve(indices.size() * first.points.size());
  for (size_t i : indices) {
    const Clip& c = clips.at(i);
    if (c.height != first.height || c.width != first.width || c.num_frames != first.num_frames ||
        c.num_points != first.num_points) {
      throw DimensionError("clip " + c.patient_id + " differs in shape from clip " + first.patient_id);
    }
    frames.insert(frames.end(), c.frames.begin(), c.frames.end());
    points.insert(points.end(), c.points.begin(), c.points.end());
    labels.push_back(c.label);
  }
  const auto b = static_cast<int64_t>(indices.size());
  return {Tensor::from(std::span<const float>(frames), {b, first.num_frames, first.height, first.width}),
          Tensor::from(std::span<const float>(points), {b, first.num_frames, first.num_points, 2}),
          Tensor::from(std::span<const double>(labels), {b})};
}

FrameBatch make_frame_batch(const std::vector<Clip>& clips, std::span<const FrameRef> refs, TokenizerKind kind,
                            int patch_size) {
  if (refs.empty()) throw ConfigError("empty frame batch");
  const Clip& first = clips.at(refs[0].clip);
  const size_t plane = static_cast<size_t>(first.height) * first.width;
  std::vector<float> frames, points;
  frames.reserve(refs.size() * plane);
  std::vector<float> grid;
  if (kind == TokenizerKind::grid) {
    for (const auto& p : grid_points({static_cast<int>(first.height), static_cast<int>(first.width)}, patch_size).points) {
      grid.push_back(static_cast<float>(p.x));
      grid.push_back(static_cast<float>(p.y));
    }
  }
  for (const auto& r : refs) {
    const Clip& c = clips.at(r.clip);
    if (c.height != first.height || c.width != first.width || c.num_points != first.num_points) {
      throw DimensionError("clip " + c.patient_id + " differs in shape from clip " + first.patient_id);
    }
    if (r.frame >= c.num_frames) throw DimensionError("frame index out of range for clip " + c.patient_id);
    frames.insert(frames.end(), c.frames.begin() + static_cast<long>(r.frame * plane),
                  c.frames.begin() + static_cast<long>((r.frame + 1) * plane));
    if (kind == TokenizerKind::grid) {
      points.insert(points.end(), grid.begin(), grid.end());
    } else {
      const size_t stride = static_cast<size_t>(c.num_points) * 2;
      points.insert(points.end(), c.points.begin() + static_cast<long>(r.frame * stride),
                    c.points.begin() + static_cast<long>((r.frame + 1) * stride));
    }
  }
  const auto b = static_cast<int64_t>(refs.size());
  const int64_t n = static_cast<int64_t>(points.size()) / (2 * b);
  return {Tensor::from(std::span<const float>(frames), {b, first.height, first.width}),
          Tensor::from(std::span<const float>(points), {b, n, 2})};
}

PretrainResult pretrain(const std::vector<Clip>& clips, const PretrainOptions& options) {
  options.mae.validate();
  options.optim.validate();
  if (clips.empty()) throw ConfigError("pretrain: no training clips");
  check_compatible(clips, clips.front());
  const int j = options.mae.encoder.patch_size;
  const uint64_t seed = options.seed;

  Rng init(seed);
  PretrainResult result{MaskedAutoencoder(options.mae, init), {}, {}, 0, 0};
  MaskedAutoencoder& mae = result.model;
  AdamW optim(mae.parameters(), options.optim);
  Rng dropout_rng(mask_seed(seed, 0, kDropoutStream));
  const Dropout dropout{options.mae.encoder.dropout, &dropout_rng};

  std::vector<FrameRef> pool;
  for (uint32_t c = 0; c < clips.size(); ++c)
    for (uint32_t t = 0; t < clips[c].num_frames; ++t) pool.push_back({c, t});
  const int64_t tokens = options.tokenizer == TokenizerKind::grid
                             ? static_cast<int64_t>(grid_points({static_cast<int>(clips[0].height),
                                                                 static_cast<int>(clips[0].width)},
                                                                j)
                                                        .size())
                             : static_cast<int64_t>(clips[0].num_points);
  const int64_t per_epoch = options.frames_per_epoch > 0
                                ? std::min<int64_t>(options.frames_per_epoch, static_cast<int64_t>(pool.size()))
                                : static_cast<int64_t>(pool.size());
  const int64_t batch = options.optim.batch_size;
  const int64_t steps = (per_epoch + batch - 1) / batch;

  auto plans_for = [&](std::span<const FrameRef> refs, uint64_t epoch) {
    std::vector<MaskPlan> plans;
    for (const auto& r : refs) plans.push_back(make_mask(tokens, options.mae.mask_ratio, mask_seed(seed, epoch, r.clip, r.frame)));
    return plans;
  };

  std::vector<FrameRef> preview;
  for (uint32_t c = 0; c < std::min<size_t>(clips.size(), 4); ++c) preview.push_back({c, clips[c].num_frames / 2});
  if (options.recon_every > 0 && !options.out_dir.empty()) std::filesystem::create_directories(options.out_dir / "recon");

  const int epochs = options.optim.total_epochs;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto order = shuffled(pool.size(), seed, static_cast<uint64_t>(epoch));
    double loss_sum = 0.0;
    for (int64_t step = 0; step < steps; ++step) {
      std::vector<FrameRef> refs;
      for (int64_t i = step * batch; i < std::min(per_epoch, (step + 1) * batch); ++i) {
        refs.push_back(pool[order[static_cast<size_t>(i)]]);
      }
      const FrameBatch fb = make_frame_batch(clips, refs, options.tokenizer, j);
      const auto plans = plans_for(refs, static_cast<uint64_t>(epoch));
      const double lr = lr_at(epoch, step, steps, options.optim);
      optim.zero_grad();
      const auto out = mae.forward(fb.frames, fb.points, plans, dropout);
      result.encoder_tokens = out.encoder_tokens;
      result.decoder_tokens = out.decoder_tokens;
      Tensor loss = mae_loss(out.recon, out.targets);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite pre-training loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step));
      }
      loss.backward();
      optim.step(lr);
      result.step_losses.push_back(value);
      loss_sum += value * static_cast<double>(refs.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.split = "train";
    rec.loss = loss_sum / static_cast<double>(per_epoch);
    rec.lr = lr_at(epoch, options.optim);
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    if (options.recon_every > 0 && !options.out_dir.empty() &&
        ((epoch + 1) % options.recon_every == 0 || epoch + 1 == epochs)) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.png", epoch);
      const FrameBatch fb = make_frame_batch(clips, preview, options.tokenizer, j);
      export_reconstruction(mae, fb, plans_for(preview, static_cast<uint64_t>(epoch)), options.out_dir / "recon" / name);
    }
  }
  return result;
}

Evaluation evaluate(const ViactModel& model, const std::vector<Clip>& clips, int batch_size) {
  if (clips.empty()) throw ConfigError("evaluate: no clips");
  if (batch_size < 1) throw ConfigError("evaluate: batch size must be >= 1");
  NoGradGuard guard;
  Evaluation ev;
  std::vector<int> predictions;
  double loss_sum = 0.0;
  for (size_t start = 0; start < clips.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t i = start; i < std::min(clips.size(), start + static_cast<size_t>(batch_size)); ++i) idx.push_back(i);
    const ClipBatch b = make_clip_batch(clips, idx);
    const auto out = model.forward(b.frames, b.points);
    loss_sum += bce_with_logits(out.logits, b.labels.to(out.logits.dtype())).item() * static_cast<double>(idx.size());
    const auto logits = out.logits.to_vector();
    for (size_t k = 0; k < idx.size(); ++k) {
      ev.probabilities.push_back(1.0 / (1.0 + std::exp(-logits[k])));
      predictions.push_back(logits[k] > 0.0 ? 1 : 0);
      ev.labels.push_back(clips[idx[k]].label);
    }
  }
  ev.loss = loss_sum / static_cast<double>(clips.size());
  if (!std::isfinite(ev.loss)) throw NumericError("non-finite evaluation loss");
  ev.metrics = compute_metrics(predictions, ev.labels);
  return ev;
}

FinetuneResult finetune(const std::vector<Clip>& train, const std::vector<Clip>& val, const std::vector<Clip>& test,
                        const FinetuneOptions& options) {
  options.model.validate();
  options.optim.validate();
  if (train.empty() || val.empty()) throw ConfigError("finetune: train and val splits must be non-empty");
  if (options.patience < 1) throw ConfigError("finetune: patience must be >= 1");
  check_compatible(train, train.front());
  check_compatible(val, train.front());
  if (!test.empty()) check_compatible(test, train.front());
  const uint64_t seed = options.seed;

  Rng init(seed);
  FinetuneResult result;
  result.model = options.pretrained ? transfer_to_classifier(*options.pretrained, options.model, init)
                                    : ViactModel(options.model, init);
  ViactModel& model = result.model;
  ParameterList params = model.parameters();
  AdamW optim(params, options.optim);
  Rng dropout_rng(mask_seed(seed, 0, kDropoutStream));
  const Dropout dropout{options.model.dropout, &dropout_rng};
  EarlyStopping stopper(options.patience);
  auto best = snapshot(params);

  const auto batch = static_cast<size_t>(options.optim.batch_size);
  const int64_t steps = static_cast<int64_t>((train.size() + batch - 1) / batch);
  for (int epoch = 0; epoch < options.optim.total_epochs; ++epoch) {
    const auto order = shuffled(train.size(), seed, static_cast<uint64_t>(epoch));
    double loss_sum = 0.0;
    std::vector<int> predictions, labels;
    for (int64_t step = 0; step < steps; ++step) {
      const size_t lo = static_cast<size_t>(step) * batch, hi = std::min(train.size(), lo + batch);
      const std::vector<size_t> idx(order.begin() + static_cast<long>(lo), order.begin() + static_cast<long>(hi));
      const ClipBatch b = make_clip_batch(train, idx);
      const double lr = lr_at(epoch, step, steps, options.optim);
      optim.zero_grad();
      const auto out = model.forward(b.frames, b.points, false, dropout);
      Tensor loss = bce_with_logits(out.logits, b.labels.to(out.logits.dtype()));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite fine-tuning loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step));
      }
      loss.backward();
      optim.step(lr);
      loss_sum += value * static_cast<double>(idx.size());
      const auto logits = out.logits.to_vector();
      for (size_t k = 0; k < idx.size(); ++k) {
        predictions.push_back(logits[k] > 0.0 ? 1 : 0);
        labels.push_back(train[idx[k]].label);
      }
    }
    const double lr = lr_at(epoch, options.optim);
    const Metrics tm = compute_metrics(predictions, labels);
    EpochRecord tr{epoch, "train", loss_sum / static_cast<double>(train.size()), tm.accuracy, tm.weighted_f1, lr};
    result.history.push_back(tr);
    if (options.on_epoch) options.on_epoch(tr);

    const Evaluation ev = evaluate(model, val, options.eval_batch);
    EpochRecord vr{epoch, "val", ev.loss, ev.metrics.accuracy, ev.metrics.weighted_f1, lr};
    result.history.push_back(vr);
    if (options.on_epoch) options.on_epoch(vr);

    if (stopper.observe(epoch, ev.loss)) best = snapshot(params);
    if (stopper.should_stop()) {
      result.stopped_early = true;
      break;
    }
  }
  load_parameters(params, best);
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  if (!test.empty()) {
    result.test = evaluate(model, test, options.eval_batch);
    EpochRecord te{result.best_epoch, "test", result.test.loss, result.test.metrics.accuracy,
                   result.test.metrics.weighted_f1, lr_at(result.best_epoch, options.optim)};
    result.history.push_back(te);
    if (options.on_epoch) options.on_epoch(te);
  }
  return result;
}

}  // namespace viact
