#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "viact/train.hpp"

namespace viact {

std::string to_string(Schedule schedule) {
  return schedule == Schedule::constant ? "constant" : "warmup_cosine";
}

Schedule parse_schedule(const std::string& name) {
  if (name == "warmup_cosine") return Schedule::warmup_cosine;
  if (name == "constant") return Schedule::constant;
  throw ConfigError("unknown schedule: " + name + " (expected warmup_cosine or constant)");
}

void OptimConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
  if (schedule == Schedule::warmup_cosine && (warmup_epochs < 0 || warmup_epochs >= total_epochs)) {
    throw ConfigError("warmup_epochs must lie in [0, total_epochs)");
  }
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
}

OptimConfig OptimConfig::pretrain_defaults() {
  OptimConfig c;
  c.base_lr = 1.5e-4;
  c.batch_size = 2700;
  return c;
}

OptimConfig OptimConfig::finetune_defaults() {
  OptimConfig c;
  c.base_lr = 1e-3;
  c.batch_size = 35;
  c.schedule = Schedule::constant;
  c.warmup_epochs = 0;
  c.total_epochs = 100;
  return c;
}

double lr_at(int64_t epoch, const OptimConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.total_epochs) {
    throw ConfigError("epoch " + std::to_string(epoch) + " out of range [0, " + std::to_string(cfg.total_epochs) + ")");
  }
  const double eff = cfg.effective_lr();
  if (cfg.schedule == Schedule::constant) return eff;
  if (epoch < cfg.warmup_epochs) return eff * static_cast<double>(epoch + 1) / cfg.warmup_epochs;
  const double progress =
      static_cast<double>(epoch - cfg.warmup_epochs) / static_cast<double>(cfg.total_epochs - cfg.warmup_epochs);
  return eff * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double lr_at(int64_t epoch, int64_t step, int64_t steps_per_epoch, const OptimConfig& cfg) {
  const double per_epoch = lr_at(epoch, cfg);
  if (!cfg.per_step_warmup || cfg.schedule == Schedule::constant || epoch >= cfg.warmup_epochs) return per_epoch;
  if (steps_per_epoch < 1 || step < 0 || step >= steps_per_epoch) throw ConfigError("step out of range");
  const double done = static_cast<double>(epoch * steps_per_epoch + step + 1);
  return cfg.effective_lr() * done / static_cast<double>(cfg.warmup_epochs * steps_per_epoch);
}

AdamW::AdamW(ParameterList params, const OptimConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) {
    const auto n = static_cast<size_t>(p.value.numel());
    state_.push_back({std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

double AdamW::step(double lr) {
  std::vector<std::vector<double>> grads(params_.size());
  double norm2 = 0.0;
  for (size_t i = 0; i < params_.size(); ++i) {
    const Tensor g = params_[i].value.grad();
    if (!g.defined()) {
      grads[i].assign(static_cast<size_t>(params_[i].value.numel()), 0.0);
      continue;
    }
    grads[i] = g.to_vector();
    for (double x : grads[i]) {
      if (!std::isfinite(x)) throw NumericError("non-finite gradient in parameter " + params_[i].name);
      norm2 += x * x;
    }
  }
  const double norm = std::sqrt(norm2);
  const double clip = cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;

  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& st = state_[i];
    const double decay = params_[i].decay ? lr * cfg_.weight_decay : 0.0;
    detail::dispatch(params_[i].value.dtype(), [&]<typename T>() {
      auto values = params_[i].value.mutable_values<T>();
      for (size_t k = 0; k < values.size(); ++k) {
        const double g = grads[i][k] * clip;
        st.m[k] = cfg_.beta1 * st.m[k] + (1.0 - cfg_.beta1) * g;
        st.v[k] = cfg_.beta2 * st.v[k] + (1.0 - cfg_.beta2) * g * g;
        const double update = (st.m[k] / c1) / (std::sqrt(st.v[k] / c2) + cfg_.eps);
        const double p = values[k];
        values[k] = static_cast<T>(p - decay * p - lr * update);
      }
    });
  }
  return norm;
}

std::vector<std::string> AdamW::decayed() const {
  std::vector<std::string> out;
  for (const auto& p : params_)
    if (p.decay) out.push_back(p.name);
  return out;
}

std::vector<std::string> AdamW::exempt() const {
  std::vector<std::string> out;
  for (const auto& p : params_)
    if (!p.decay) out.push_back(p.name);
  return out;
}

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw ConfigError("metrics: empty input");
  if (predictions.size() != labels.size()) throw ConfigError("metrics: predictions and labels differ in length");
  int64_t tp[2] = {0, 0}, fp[2] = {0, 0}, fn[2] = {0, 0}, support[2] = {0, 0}, correct = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if ((y != 0 && y != 1) || (p != 0 && p != 1)) throw ConfigError("metrics: labels must be 0 or 1");
    ++support[y];
    if (p == y) {
      ++correct;
      ++tp[y];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  Metrics m;
  m.count = static_cast<int64_t>(labels.size());
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.count);
  for (int c = 0; c < 2; ++c) {
    const int64_t denom = 2 * tp[c] + fp[c] + fn[c];
    const double f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    m.weighted_f1 += f1 * static_cast<double>(support[c]);
  }
  m.weighted_f1 /= static_cast<double>(m.count);
  return m;
}

bool EarlyStopping::observe(int epoch, double val_loss) {
  if (best_epoch_ < 0 || val_loss < best_loss_) {
    best_epoch_ = epoch;
    best_loss_ = val_loss;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["split"] = split;
  j["loss"] = loss;
  j["accuracy"] = accuracy ? nlohmann::ordered_json(*accuracy) : nlohmann::ordered_json(nullptr);
  j["weighted_f1"] = weighted_f1 ? nlohmann::ordered_json(*weighted_f1) : nlohmann::ordered_json(nullptr);
  j["lr"] = lr;
  return j.dump();
}

MetricsLog::MetricsLog(const std::filesystem::path& path) : path_(path) {
  std::ofstream os(path_, std::ios::trunc);
  if (!os) throw IngestionError("cannot open metrics log: " + path_.string());
}

void MetricsLog::write(const EpochRecord& record) {
  if (path_.empty()) return;
  std::ofstream os(path_, std::ios::app);
  os << record.to_json() << '\n';
}

Summary summarize(std::span<const double> values) {
  if (values.empty()) throw ConfigError("summarize: no values");
  Summary s;
  s.count = static_cast<int64_t>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.count - 1));
  }
  return s;
}

}  // namespace viact
