#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viact/data.hpp"
#include "viact/mae.hpp"
#include "viact/model.hpp"

namespace viact {

enum class Schedule { warmup_cosine, constant };
std::string to_string(Schedule schedule);
Schedule parse_schedule(const std::string& name);

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double base_lr = 1.5e-4;
  int batch_size = 256;
  int warmup_epochs = 200;
  int total_epochs = 2000;
  Schedule schedule = Schedule::warmup_cosine;
  /// Linear warmup per optimizer step instead of per epoch.
  bool per_step_warmup = false;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;

  /// base_lr * batch_size / 256.
  double effective_lr() const { return base_lr * batch_size / 256.0; }
  void validate() const;

  static OptimConfig pretrain_defaults();  ///< 1.5e-4, batch 2700, warmup 200 + cosine to 2000
  static OptimConfig finetune_defaults();  ///< 1e-3, batch 35, constant
};

/// Learning rate for a whole epoch. Warmup: eff * (epoch + 1) / warmup; then
/// eff * 0.5 * (1 + cos(pi * (epoch - warmup) / (total - warmup))).
/// Throws ConfigError unless 0 <= epoch < total_epochs.
double lr_at(int64_t epoch, const OptimConfig& cfg);
/// Per-step variant; identical to `lr_at(epoch)` unless `per_step_warmup`.
double lr_at(int64_t epoch, int64_t step, int64_t steps_per_epoch, const OptimConfig& cfg);

/// AdamW with bias correction and decoupled weight decay on parameters whose
/// `decay` flag is set. Moments are kept in double precision.
class AdamW {
 public:
  AdamW(ParameterList params, const OptimConfig& cfg);

  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  void zero_grad();
  /// Applies one update from the accumulated gradients. Throws NumericError
  /// naming the first parameter with a non-finite gradient; no parameter is
  /// modified in that case. Returns the global gradient norm before clipping.
  double step(double lr);

  int64_t steps() const { return t_; }
  void set_steps(int64_t t) { t_ = t; }
  Moments& moments(size_t index) { return state_.at(index); }
  const ParameterList& parameters() const { return params_; }
  std::vector<std::string> decayed() const;
  std::vector<std::string> exempt() const;

 private:
  ParameterList params_;
  OptimConfig cfg_;
  std::vector<Moments> state_;
  int64_t t_ = 0;
};

struct Metrics {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  int64_t count = 0;
};

/// Binary accuracy and support-weighted F1. A class with no support has
/// weight zero; an F1 with a zero denominator is 0. Throws ConfigError on
/// empty or mismatched input, or labels outside {0, 1}.
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels);

/// Validation-loss early stopping.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience = 8) : patience_(patience) {}
  /// Records one epoch; returns true when `val_loss` is a new best.
  bool observe(int epoch, double val_loss);
  bool should_stop() const { return bad_epochs_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  int patience() const { return patience_; }

 private:
  int patience_;
  int best_epoch_ = -1;
  double best_loss_ = 0.0;
  int bad_epochs_ = 0;
};

/// One JSON-lines metrics record.
struct EpochRecord {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  std::optional<double> accuracy;
  std::optional<double> weighted_f1;
  double lr = 0.0;

  std::string to_json() const;
};

/// Appends records to a JSON-lines file.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path);
  void write(const EpochRecord& record);

 private:
  std::filesystem::path path_;
};

struct ClipBatch {
  Tensor frames;  ///< [B, T, H, W]
  Tensor points;  ///< [B, T, N, 2]
  Tensor labels;  ///< [B]
};
ClipBatch make_clip_batch(const std::vector<Clip>& clips, std::span<const size_t> indices);

enum class TokenizerKind { anatomical, grid };
std::string to_string(TokenizerKind kind);
TokenizerKind parse_tokenizer(const std::string& name);

/// (clip, frame) address of one pre-training sample.
struct FrameRef {
  uint32_t clip = 0;
  uint32_t frame = 0;
};

struct FrameBatch {
  Tensor frames;  ///< [B, H, W]
  Tensor points;  ///< [B, N, 2]: tracked points, or cell centres for the grid
};
FrameBatch make_frame_batch(const std::vector<Clip>& clips, std::span<const FrameRef> refs, TokenizerKind kind,
                            int patch_size);

struct PretrainOptions {
  MaeConfig mae;
  OptimConfig optim = OptimConfig::pretrain_defaults();
  TokenizerKind tokenizer = TokenizerKind::anatomical;
  uint64_t seed = 0;
  /// Frames drawn per epoch from the shuffled pool; 0 uses every frame.
  int64_t frames_per_epoch = 0;
  /// Output directory for recon/ images; empty disables export.
  std::filesystem::path out_dir;
  /// Export a reconstruction grid every this many epochs (and after the
  /// last); 0 disables.
  int recon_every = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct PretrainResult {
  MaskedAutoencoder model;
  std::vector<EpochRecord> history;
  std::vector<double> step_losses;
  int64_t encoder_tokens = 0;  ///< visible tokens per frame
  int64_t decoder_tokens = 0;
};

/// Frame-level masked-autoencoder pre-training for `optim.total_epochs`
/// epochs. Throws NumericError naming the epoch and step on a non-finite loss.
PretrainResult pretrain(const std::vector<Clip>& clips, const PretrainOptions& options);

struct Evaluation {
  double loss = 0.0;
  Metrics metrics;
  std::vector<double> probabilities;
  std::vector<int> labels;
};
/// Mean BCE and metrics at threshold 0.5, without gradients.
Evaluation evaluate(const ViactModel& model, const std::vector<Clip>& clips, int batch_size = 16);

struct FinetuneOptions {
  ModelConfig model;
  OptimConfig optim = OptimConfig::finetune_defaults();
  int patience = 8;
  uint64_t seed = 0;
  /// Source of the tokenizer and frame-encoder weights; random init if null.
  const MaskedAutoencoder* pretrained = nullptr;
  int eval_batch = 16;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FinetuneResult {
  ViactModel model;  ///< weights of the best validation epoch
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  Evaluation test;
};

/// Clip-level BCE training for up to `optim.total_epochs` epochs with early
/// stopping on validation loss; the returned model is the best epoch's.
FinetuneResult finetune(const std::vector<Clip>& train, const std::vector<Clip>& val, const std::vector<Clip>& test,
                        const FinetuneOptions& options);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation; 0 for a single value
  int64_t count = 0;
};
Summary summarize(std::span<const double> values);

}  // namespace viact
