#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "viact/train.hpp"

using namespace viact;
namespace fs = std::filesystem;

namespace {

OptimConfig default_pretrain() {
  OptimConfig c = OptimConfig::pretrain_defaults();
  c.batch_size = 2700;
  return c;
}

// Closed-form AdamW update of one scalar, written independently of the
// optimizer.
struct ScalarAdamW {
  double p, m, v;
  int64_t t;
  void step(double g, double lr, double b1, double b2, double eps, double wd) {
    t += 1;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    p = p * (1 - lr * wd) - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

ModelConfig tiny_model() {
  ModelConfig c;
  c.embed_dim = 12;
  c.heads = 2;
  c.encoder_blocks = 1;
  c.temporal_blocks = 1;
  c.mlp_hidden = 16;
  c.patch_size = 4;
  c.frames = 18;
  return c;
}

std::vector<Clip> tiny_clips(int n, uint64_t seed) {
  SynthConfig sc;
  sc.size = 32;
  PreprocessConfig pc;
  pc.size = 32;
  std::vector<Clip> out;
  for (int i = 0; i < n; ++i) out.push_back(synth_generate(sc, i % 2, seed + static_cast<uint64_t>(i), "p", pc));
  return out;
}

}  // namespace

TEST_CASE("lr_at: warmup and cosine closed forms") {
  const OptimConfig c = default_pretrain();
  const double eff = 1.5e-4 * 2700.0 / 256.0;
  CHECK(c.effective_lr() == eff);
  CHECK(std::abs(eff - 1.5820e-3) < 1e-7);
  CHECK(std::abs(lr_at(0, c) - eff / 200.0) < 1e-12);
  CHECK(std::abs(lr_at(199, c) - eff) < 1e-12);
  CHECK(std::abs(lr_at(200, c) - eff) < 1e-12);
  CHECK(std::abs(lr_at(1100, c) - eff * 0.5 * (1 + std::cos(std::numbers::pi * 900.0 / 1800.0))) < 1e-12);
  CHECK(std::abs(lr_at(1100, c) - eff * 0.5) < 1e-12);
  CHECK(std::abs(lr_at(1999, c) - eff * 0.5 * (1 + std::cos(std::numbers::pi * 1799.0 / 1800.0))) < 1e-12);
  CHECK(lr_at(1999, c) / eff == doctest::Approx(0.25 * std::pow(std::numbers::pi / 1800.0, 2)).epsilon(1e-6));
  // Both formulas meet at the boundary.
  CHECK(std::abs(eff * 200.0 / 200.0 - eff * 0.5 * (1 + std::cos(0.0))) < 1e-18);
  CHECK_THROWS_AS(lr_at(-1, c), ConfigError);
  CHECK_THROWS_AS(lr_at(2000, c), ConfigError);
  for (int e = 1; e < 2000; ++e) {
    if (e <= 200) {
      REQUIRE(lr_at(e, c) >= lr_at(e - 1, c) - 1e-18);
    } else {
      REQUIRE(lr_at(e, c) <= lr_at(e - 1, c));
    }
  }
}

TEST_CASE("lr_at: constant schedule and per-step warmup") {
  OptimConfig f = OptimConfig::finetune_defaults();
  CHECK(f.base_lr == 1e-3);
  CHECK(f.batch_size == 35);
  for (int e : {0, 7, 99}) CHECK(lr_at(e, f) == f.effective_lr());

  OptimConfig c = default_pretrain();
  c.per_step_warmup = true;
  CHECK(std::abs(lr_at(0, 0, 33, c) - c.effective_lr() / (200.0 * 33)) < 1e-15);
  CHECK(std::abs(lr_at(199, 32, 33, c) - c.effective_lr()) < 1e-15);
  CHECK(lr_at(300, 5, 33, c) == lr_at(300, c));
  CHECK_THROWS_AS(lr_at(0, 33, 33, c), ConfigError);
  c.per_step_warmup = false;
  CHECK(lr_at(3, 17, 33, c) == lr_at(3, c));
}

TEST_CASE("AdamW: zero gradient and zero decay leave parameters unchanged") {
  DTypeScope scope(DType::f64);
  Parameter p{"w", Tensor::from({0.5, -1.25, 3.0}, {3}, true), true};
  OptimConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt({p}, cfg);
  sum_all(scale(p.value, 0.0)).backward();
  for (int i = 0; i < 5; ++i) opt.step(1e-2);
  CHECK(p.value.to_vector() == std::vector<double>{0.5, -1.25, 3.0});
}

TEST_CASE("AdamW: one step with unit gradient moves by lr") {
  DTypeScope scope(DType::f64);
  Parameter p{"w", Tensor::from({2.0}, {1}, true), false};
  OptimConfig cfg;
  AdamW opt({p}, cfg);
  sum_all(p.value).backward();
  opt.step(1e-3);
  CHECK(std::abs(p.value.item() - (2.0 - 1e-3 / (1.0 + 1e-8))) < 1e-15);
}

TEST_CASE("AdamW: matches a scalar reference over 100 random states") {
  DTypeScope scope(DType::f64);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-2.0, 2.0), pos(0.0, 3.0);
  std::uniform_int_distribution<int> steps(0, 500);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double p0 = u(rng), g = u(rng), m0 = u(rng) * 0.1, v0 = pos(rng) * 0.1, lr = 1e-3 * pos(rng);
    const int64_t t0 = steps(rng);
    const bool decay = trial % 2 == 0;
    Parameter p{"w", Tensor::from({p0}, {1}, true), decay};
    OptimConfig cfg;
    cfg.weight_decay = 0.05;
    AdamW opt({p}, cfg);
    opt.moments(0).m[0] = m0;
    opt.moments(0).v[0] = v0;
    opt.set_steps(t0);
    scale(sum_all(p.value), g).backward();
    opt.step(lr);

    ScalarAdamW ref{p0, m0, v0, t0};
    ref.step(g, lr, 0.9, 0.999, 1e-8, decay ? 0.05 : 0.0);
    worst = std::max(worst, std::abs(p.value.item() - ref.p));
    worst = std::max(worst, std::abs(opt.moments(0).m[0] - ref.m));
    worst = std::max(worst, std::abs(opt.moments(0).v[0] - ref.v));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("AdamW: non-finite gradient names the parameter and changes nothing") {
  DTypeScope scope(DType::f64);
  Parameter a{"encoder.block0.mlp.fc1.weight", Tensor::from({1.0, 2.0}, {2}, true), true};
  Parameter b{"head.bias", Tensor::from({3.0}, {1}, true), false};
  AdamW opt({a, b}, OptimConfig{});
  sum_all(a.value).backward();
  sum_all(scale(b.value, std::numeric_limits<double>::infinity())).backward();
  try {
    opt.step(1e-3);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("head.bias") != std::string::npos);
  }
  CHECK(a.value.to_vector() == std::vector<double>{1.0, 2.0});
  CHECK(opt.steps() == 0);
}

TEST_CASE("AdamW: decay set excludes norms, biases, tokens and position tables") {
  Rng rng(3);
  ViactModel model(tiny_model(), rng);
  AdamW opt(model.parameters(), OptimConfig{});
  for (const auto& name : opt.exempt()) {
    const bool ok = name.ends_with(".bias") || name.ends_with(".gain") || name.ends_with("_token") ||
                    name == "temporal_pos";
    CHECK_MESSAGE(ok, name);
  }
  for (const auto& name : opt.decayed()) CHECK_MESSAGE(name.ends_with(".weight"), name);
  const auto names = opt.exempt();
  const std::set<std::string> exempt(names.begin(), names.end());
  CHECK(exempt.count("frame_token") == 1);
  CHECK(exempt.count("temporal_token") == 1);
  CHECK(exempt.count("temporal_pos") == 1);
  CHECK(exempt.count("encoder.norm.gain") == 1);
  CHECK(opt.decayed().size() + opt.exempt().size() == model.parameters().size());
}

TEST_CASE("AdamW: gradient clipping scales the update") {
  DTypeScope scope(DType::f64);
  Parameter p{"w", Tensor::from({0.0, 0.0}, {2}, true), false};
  OptimConfig cfg;
  cfg.grad_clip = 1.0;
  AdamW opt({p}, cfg);
  sum_all(mul(p.value, Tensor::from({3.0, 4.0}, {2}))).backward();
  CHECK(opt.step(1e-3) == doctest::Approx(5.0));
  CHECK(opt.moments(0).m[0] == doctest::Approx(0.1 * 0.6));
  CHECK(opt.moments(0).m[1] == doctest::Approx(0.1 * 0.8));
}

TEST_CASE("metrics: hand-computed confusion matrices") {
  struct Case {
    std::vector<int> pred, label;
    double accuracy, f1;
  };
  const std::vector<Case> cases = {
      {{1, 0, 0, 0}, {1, 1, 0, 0}, 3.0 / 4, (2 * (4.0 / 5) + 2 * (2.0 / 3)) / 4},
      {{1, 1, 0, 0}, {1, 1, 0, 0}, 1.0, 1.0},
      {{0, 0, 1, 1}, {1, 1, 0, 0}, 0.0, 0.0},
      {{1, 1, 1, 1}, {1, 1, 1, 1}, 1.0, 1.0},
      {{0, 0, 0}, {1, 1, 1}, 0.0, 0.0},
      {{1, 1, 1, 0}, {1, 0, 0, 0}, 2.0 / 4, (1 * (2.0 / 4) + 3 * (2.0 / 4)) / 4},
      {{1, 0, 1, 0, 1}, {1, 1, 1, 0, 0}, 3.0 / 5, (3 * (4.0 / 6) + 2 * (2.0 / 4)) / 5},
      {{1, 1, 0}, {0, 0, 0}, 1.0 / 3, (0 * 0.0 + 3 * (2.0 / 4)) / 3},
      {{0, 1, 1, 1, 1, 0}, {0, 1, 1, 0, 1, 1}, 4.0 / 6, (2 * (2.0 / 4) + 4 * (6.0 / 8)) / 6},
      {{1}, {0}, 0.0, 0.0},
  };
  for (const auto& c : cases) {
    const Metrics m = compute_metrics(c.pred, c.label);
    CHECK(m.accuracy == doctest::Approx(c.accuracy).epsilon(1e-15));
    CHECK(m.weighted_f1 == doctest::Approx(c.f1).epsilon(1e-15));
    CHECK(m.count == static_cast<int64_t>(c.label.size()));
  }
  CHECK(compute_metrics(std::vector<int>{1, 0, 0, 0}, std::vector<int>{1, 1, 0, 0}).weighted_f1 ==
        doctest::Approx(0.7333333333).epsilon(1e-9));
  CHECK_THROWS_AS(compute_metrics(std::vector<int>{}, std::vector<int>{}), ConfigError);
  CHECK_THROWS_AS(compute_metrics(std::vector<int>{1}, std::vector<int>{1, 0}), ConfigError);
  CHECK_THROWS_AS(compute_metrics(std::vector<int>{2}, std::vector<int>{1}), ConfigError);
}

TEST_CASE("early stopping: patience counts non-improving epochs") {
  EarlyStopping es(3);
  const std::vector<double> losses = {1.0, 0.8, 0.9, 0.7, 0.75, 0.71, 0.7, 0.9};
  int stopped_at = -1;
  for (int e = 0; e < static_cast<int>(losses.size()); ++e) {
    es.observe(e, losses[static_cast<size_t>(e)]);
    if (es.should_stop()) {
      stopped_at = e;
      break;
    }
  }
  CHECK(stopped_at == 6);
  CHECK(es.best_epoch() == 3);
  CHECK(es.best_loss() == 0.7);
  CHECK(EarlyStopping().patience() == 8);
}

TEST_CASE("summary and metric records") {
  const std::vector<double> v = {0.8, 0.9, 1.0};
  const Summary s = summarize(v);
  CHECK(s.mean == doctest::Approx(0.9));
  CHECK(s.std == doctest::Approx(0.1));
  CHECK(summarize(std::vector<double>{0.5}).std == 0.0);
  CHECK_THROWS_AS(summarize(std::vector<double>{}), ConfigError);

  EpochRecord r{3, "val", 0.25, 0.5, std::nullopt, 1e-3};
  auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["epoch"] == 3);
  CHECK(j["split"] == "val");
  CHECK(j["loss"] == 0.25);
  CHECK(j["accuracy"] == 0.5);
  CHECK(j["weighted_f1"].is_null());
  CHECK(j["lr"] == 1e-3);
}

TEST_CASE("pretrain: smoke run, token counts, determinism, image export") {
  const auto clips = tiny_clips(4, 100);
  PretrainOptions o;
  o.mae.encoder = tiny_model();
  o.mae.decoder_blocks = 1;
  o.mae.decoder_dim = 8;
  o.mae.decoder_heads = 2;
  o.mae.decoder_mlp = 16;
  o.optim.batch_size = 16;
  o.optim.base_lr = 0.02;
  o.optim.total_epochs = 2;
  o.optim.warmup_epochs = 0;
  o.frames_per_epoch = 64;
  o.seed = 9;
  const auto dir = fs::temp_directory_path() / "viact_test_pretrain";
  fs::remove_all(dir);
  o.out_dir = dir;
  o.recon_every = 1;

  const auto a = pretrain(clips, o);
  REQUIRE(a.history.size() == 2);
  CHECK(a.history[1].loss < a.history[0].loss);
  CHECK(a.encoder_tokens == 21);
  CHECK(a.decoder_tokens == 84);
  CHECK(a.step_losses.size() == 8);
  CHECK(fs::file_size(dir / "recon" / "epoch_0000.png") > 0);
  CHECK(fs::file_size(dir / "recon" / "epoch_0001.png") > 0);

  o.out_dir.clear();
  const auto b = pretrain(clips, o);
  CHECK(a.step_losses == b.step_losses);

  o.tokenizer = TokenizerKind::grid;
  o.optim.total_epochs = 1;
  const auto g = pretrain(clips, o);
  CHECK(g.decoder_tokens == 64);
  CHECK(g.encoder_tokens == 16);
  fs::remove_all(dir);
}

TEST_CASE("pretrain: non-finite loss aborts with epoch and step") {
  auto clips = tiny_clips(2, 7);
  for (auto& v : clips[1].frames) v = std::numeric_limits<float>::quiet_NaN();
  PretrainOptions o;
  o.mae.encoder = tiny_model();
  o.mae.decoder_blocks = 1;
  o.mae.decoder_dim = 8;
  o.mae.decoder_heads = 2;
  o.mae.decoder_mlp = 16;
  o.optim.batch_size = 36;
  o.optim.total_epochs = 1;
  o.optim.warmup_epochs = 0;
  try {
    pretrain(clips, o);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 0 step 0") != std::string::npos);
  }
}

TEST_CASE("finetune: best-epoch restore, early stop, test metrics") {
  const auto train = tiny_clips(8, 200), val = tiny_clips(4, 300), test = tiny_clips(4, 400);
  FinetuneOptions o;
  o.model = tiny_model();
  o.optim.batch_size = 4;
  o.optim.base_lr = 0.05;
  o.optim.total_epochs = 6;
  o.patience = 2;
  o.seed = 5;
  const auto r = finetune(train, val, test, o);
  double min_val = std::numeric_limits<double>::infinity();
  int epochs = 0;
  for (const auto& h : r.history) {
    if (h.split == "val") {
      min_val = std::min(min_val, h.loss);
      ++epochs;
    }
  }
  CHECK(r.best_val_loss == min_val);
  CHECK(evaluate(r.model, val).loss == r.best_val_loss);
  CHECK(r.test.metrics.count == 4);
  CHECK(r.history.back().split == "test");
  CHECK((r.stopped_early || epochs == 6));
  if (r.stopped_early) CHECK(epochs == r.best_epoch + 1 + o.patience);

  const auto again = finetune(train, val, test, o);
  REQUIRE(again.history.size() == r.history.size());
  for (size_t i = 0; i < r.history.size(); ++i) CHECK(again.history[i].loss == r.history[i].loss);
}

TEST_CASE("finetune: starts from pretrained encoder weights") {
  const auto train = tiny_clips(4, 500);
  MaeConfig mc;
  mc.encoder = tiny_model();
  mc.decoder_blocks = 1;
  mc.decoder_dim = 8;
  mc.decoder_heads = 2;
  mc.decoder_mlp = 16;
  Rng rng(1);
  MaskedAutoencoder mae(mc, rng);
  FinetuneOptions o;
  o.model = tiny_model();
  o.optim.total_epochs = 1;
  o.optim.base_lr = 1e-9;
  o.pretrained = &mae;
  const auto r = finetune(train, train, {}, o);
  const auto p = r.model.parameters();
  for (const auto& q : p) {
    if (q.name == "encoder.block0.mlp.fc1.weight") {
      const auto a = q.value.to_vector(), b = mae.encoder.blocks[0].fc1.weight.to_vector();
      double diff = 0.0;
      for (size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
      CHECK(diff < 1e-6);
    }
  }
  CHECK(r.test.metrics.count == 0);
}
