// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <cstring>

#include "CLI11.hpp"
#include "cli.hpp"
#include "json.hpp"
#include "support/gradcheck.hpp"
#include "support/reference_sampler.hpp"
#include "viact/data.hpp"
#include "viact/geometry.hpp"
#include "viact/mae.hpp"
#include "viact/model.hpp"
#include "viact/train.hpp"

using namespace viact;
using viact::testing::gradcheck;
using viact::testing::project;
using viact::testing::random_tensor;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Log {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      failures_.push_back(what);
    }
  }
  void note(const std::string& s) { notes_.push_back(s); }
  Outcome outcome() const {
    std::string d;
    for (const auto& n : notes_) d += (d.empty() ? "" : "; ") + n;
    for (const auto& f : failures_) d += (d.empty() ? "" : "; ") + std::string("FAILED ") + f;
    return {pass_, d};
  }

 private:
  bool pass_ = true;
  std::vector<std::string> notes_, failures_;
};

std::string num(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out) {
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cerr << "viact " << args.back() << " failed: " << err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// Coordinates whose sampling grids stay away from the interpolant's kinks.
Tensor off_grid(const Shape& shape, std::mt19937_64& rng, int lo, int hi, double frac_hi = 0.85) {
  std::uniform_int_distribution<int> whole(lo, hi);
  std::uniform_real_distribution<double> frac(0.15, frac_hi);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = whole(rng) + frac(rng);
  return Tensor::from(std::span<const double>(v), shape, true);
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  DTypeScope f64(DType::f64);
  Log log;
  std::map<std::string, double> worst;
  auto record = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };

  constexpr int kSeeds = 10;
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({3, 4}, rng), c = random_tensor({2, 3, 4}, rng);
    Tensor d = random_tensor({2, 2, 4}, rng);
    Tensor m1 = random_tensor({4, 5}, rng), m2 = random_tensor({5, 3}, rng), m3 = random_tensor({3, 5}, rng);
    Tensor w = random_tensor({4, 6}, rng), bias = random_tensor({6}, rng);
    Tensor gain = random_tensor({4}, rng, 0.5, 1.5), shift = random_tensor({4}, rng);
    Tensor logits = random_tensor({7}, rng, -4, 4);
    Tensor targets = Tensor::from({1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0}, {7});
    Tensor p = random_tensor({3, 5}, rng), q = random_tensor({3, 5}, rng);
    Tensor parts[] = {a, d};
    const std::vector<int64_t> idx{2, 0, 2}, rows{1, 1, 0, 2, 0, 1};

    record("add", gradcheck([&] { return project(add(a, b)); }, {a, b}));
    record("sub", gradcheck([&] { return project(sub(a, c)); }, {a, c}));
    record("mul", gradcheck([&] { return project(mul(a, b)); }, {a, b}));
    record("scale", gradcheck([&] { return project(scale(a, -1.3)); }, {a}));
    record("add_scalar", gradcheck([&] { return project(add_scalar(a, 0.7)); }, {a}));
    record("matmul", gradcheck([&] { return project(matmul(m1, m2)); }, {m1, m2}));
    record("matmul_batched", gradcheck([&] { return project(matmul(a, w)); }, {a, w}));
    record("matmul_transposed", gradcheck([&] { return project(matmul(m1, m3, true)); }, {m1, m3}));
    record("linear", gradcheck([&] { return project(linear(a, w, bias)); }, {a, w, bias}));
    record("reshape", gradcheck([&] { return project(reshape(a, {6, -1})); }, {a}));
    record("permute", gradcheck([&] { return project(permute(a, {2, 0, 1})); }, {a}));
    record("transpose", gradcheck([&] { return project(transpose(a, 1, 2)); }, {a}));
    record("concat", gradcheck([&] { return project(concat(parts, 1)); }, {a, d}));
    record("slice", gradcheck([&] { return project(slice(a, 1, 1, 2)); }, {a}));
    record("index_select", gradcheck([&] { return project(index_select(a, 1, idx)); }, {a}));
    record("gather_rows", gradcheck([&] { return project(gather_rows(a, rows, 3)); }, {a}));
    record("broadcast_leading", gradcheck([&] { return project(broadcast_leading(b, {2, 3})); }, {b}));
    record("sum", gradcheck([&] { return project(sum(a, 2)); }, {a}));
    record("mean", gradcheck([&] { return project(mean(a, 0, true)); }, {a}));
    record("sum_all", gradcheck([&] { return sum_all(mul(a, c)); }, {a, c}));
    record("mean_all", gradcheck([&] { return mean_all(mul(a, a)); }, {a}));
    record("softmax", gradcheck([&] { return project(softmax(a, 2)); }, {a}));
    record("layernorm", gradcheck([&] { return project(layernorm(a, gain, shift, 1e-5)); }, {a, gain, shift}));
    record("gelu", gradcheck([&] { return project(gelu(a)); }, {a}));
    record("sigmoid", gradcheck([&] { return project(sigmoid(a)); }, {a}));
    record("bce_with_logits", gradcheck([&] { return bce_with_logits(logits, targets); }, {logits}));
    record("mse", gradcheck([&] { return mse(p, q); }, {p, q}));

    Tensor frames = random_tensor({2, 9, 11}, rng, 0, 1);
    Tensor coords = off_grid({2, 4, 2}, rng, 0, 7);
    record("bilinear_sample.image", gradcheck([&] { return project(bilinear_sample(frames, coords)); }, {frames}));
    record("bilinear_sample.points", gradcheck([&] { return project(bilinear_sample(frames, coords)); }, {coords}));
    Tensor centers = off_grid({2, 3, 2}, rng, 2, 6);
    record("sample_patches", gradcheck([&] { return project(sample_patches(frames, centers, 3)); }, {frames, centers}));
  }
  double prim = 0.0;
  std::string prim_name;
  for (const auto& [name, e] : worst) {
    log.check(e < 1e-4, name + " rel err " + num(e));
    if (e >= prim) {
      prim = e;
      prim_name = name;
    }
  }

  ModelConfig mc;
  mc.embed_dim = 8;
  mc.heads = 2;
  mc.encoder_blocks = 1;
  mc.temporal_blocks = 1;
  mc.mlp_hidden = 16;
  mc.patch_size = 2;
  mc.frames = 2;
  mc.apex_index = 1;
  double model_err = 0.0;
  for (auto variant : {PositionEmbedding::point_linear, PositionEmbedding::apex_relative_sincos}) {
    mc.position = variant;
    Rng rng(21);
    ViactModel model(mc, rng);
    std::mt19937_64 data(22);
    Tensor frames = random_tensor({2, 2, 8, 8}, data, 0, 1);
    Tensor points = off_grid({2, 2, 4, 2}, data, 1, 5, 0.35);
    Tensor labels = Tensor::from({1.0, 0.0}, {2});
    std::vector<Tensor> inputs{frames, points};
    for (auto& param : model.parameters()) inputs.push_back(param.value);
    model_err = std::max(
        model_err, gradcheck([&] { return bce_with_logits(model.forward(frames, points).logits, labels); }, inputs));
  }
  log.check(model_err < 1e-3, "tiny model end-to-end rel err " + num(model_err));
  const double elapsed = seconds_since(t0);
  log.check(elapsed < 60.0, "runtime " + num(elapsed) + " s");
  log.note(std::to_string(worst.size()) + " primitives x " + std::to_string(kSeeds) + " seeds, worst " + prim_name +
           " " + num(prim) + "; model " + num(model_err) + "; " + num(elapsed) + " s");
  return log.outcome();
}

Outcome sampler_oracle() {
  Log log;
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> u01(0, 1);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = 5 + static_cast<int>(rng() % 40), w = 5 + static_cast<int>(rng() % 40);
    std::vector<double> img(static_cast<size_t>(h * w));
    for (auto& v : img) v = u01(rng);
    std::vector<float> imgf(img.begin(), img.end());
    std::vector<double> rounded(imgf.begin(), imgf.end());
    Tensor frame = Tensor::from(std::span<const double>(rounded), {h, w}).to(DType::f32);
    const float x = static_cast<float>(-3.0 + u01(rng) * (w + 5)), y = static_cast<float>(-3.0 + u01(rng) * (h + 5));
    Tensor c = Tensor::from({static_cast<double>(x), static_cast<double>(y)}, {1, 2}).to(DType::f32);
    const double got = bilinear_sample(frame, c).to_vector()[0];
    worst = std::max(worst, std::abs(got - viact::testing::reference_bilinear(rounded, h, w, x, y)));
  }
  log.check(worst < 1e-6, "random pairs max abs diff " + num(worst));

  bool exact = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 6 + trial % 7, w = 7 + trial % 5;
    std::vector<double> img(static_cast<size_t>(h * w));
    for (auto& v : img) v = static_cast<float>(u01(rng));
    Tensor frame = Tensor::from(std::span<const double>(img), {h, w}).to(DType::f32);
    std::vector<double> pts;
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        pts.push_back(col);
        pts.push_back(r);
      }
    const auto got = bilinear_sample(frame, Tensor::from(std::span<const double>(pts), {h * w, 2}).to(DType::f32))
                         .to_vector();
    for (size_t i = 0; i < img.size(); ++i) exact = exact && got[i] == img[i];
  }
  log.check(exact, "integer-aligned grids not exact");
  log.note("1000 random pairs, max abs diff " + num(worst) + "; integer grids exact: " + (exact ? "yes" : "no"));
  return log.outcome();
}

Outcome structure() {
  Log log;
  PointSet contour;
  for (int i = 0; i < 21; ++i) {
    const double a = M_PI * i / 20.0;
    contour.points.push_back({112.0 + 60.0 * std::cos(a), 150.0 - 90.0 * std::sin(a)});
  }
  const size_t spread = spread_contour(contour, {224, 224}).size();
  log.check(spread == 84, "spread count " + std::to_string(spread));
  const size_t grid = grid_points({224, 224}, 16).size();
  log.check(grid == 196, "grid tokens " + std::to_string(grid));
  const auto plan = make_mask(84, 0.75, 7);
  log.check(plan.visible.size() == 21 && plan.masked.size() == 63, "visible " + std::to_string(plan.visible.size()));

  ModelConfig mc;
  mc.embed_dim = 12;
  mc.heads = 2;
  mc.encoder_blocks = 1;
  mc.mlp_hidden = 16;
  mc.patch_size = 16;
  mc.frames = 18;
  Rng rng(3);
  ViactModel model(mc, rng);
  SynthConfig sc;
  const Clip clip = synth_generate(sc, 1, 11, "p", PreprocessConfig{});
  log.check(clip.num_points == 84 && clip.num_frames == 18, "preprocessed clip shape");
  NoGradGuard ng;
  const std::vector<size_t> idx{0};
  const ClipBatch b = make_clip_batch({clip}, idx);
  const auto out = model.forward(b.frames, b.points);
  log.check(out.frame_sequence_length == 85, "frame sequence " + std::to_string(out.frame_sequence_length));
  log.check(out.temporal_sequence_length == 19, "temporal sequence " + std::to_string(out.temporal_sequence_length));

  MaeConfig mae_cfg;
  mae_cfg.encoder = mc;
  mae_cfg.decoder_blocks = 1;
  mae_cfg.decoder_dim = 8;
  mae_cfg.decoder_heads = 2;
  mae_cfg.decoder_mlp = 16;
  MaskedAutoencoder mae(mae_cfg, rng);
  const std::vector<FrameRef> refs{{0, 0}};
  const FrameBatch fb = make_frame_batch({clip}, refs, TokenizerKind::anatomical, 16);
  const auto mo = mae.forward(fb.frames, fb.points, std::vector<MaskPlan>{plan});
  log.check(mo.encoder_tokens == 21 && mo.decoder_tokens == 84,
            "mae tokens " + std::to_string(mo.encoder_tokens) + "/" + std::to_string(mo.decoder_tokens));
  log.note("spread " + std::to_string(spread) + ", tokens 84 vs " + std::to_string(grid) + ", visible " +
           std::to_string(mo.encoder_tokens) + ", sequences " + std::to_string(out.frame_sequence_length) + "/" +
           std::to_string(out.temporal_sequence_length));
  return log.outcome();
}

Outcome masked_only() {
  Log log;
  MaeConfig c;
  c.encoder.embed_dim = 12;
  c.encoder.heads = 2;
  c.encoder.encoder_blocks = 1;
  c.encoder.mlp_hidden = 16;
  c.encoder.patch_size = 4;
  c.decoder_blocks = 1;
  c.decoder_dim = 8;
  c.decoder_heads = 2;
  c.decoder_mlp = 16;
  Rng rng(5);
  MaskedAutoencoder mae(c, rng);
  std::mt19937_64 data(6);
  Tensor frames = random_tensor({3, 32, 32}, data, 0, 1, false).to(DType::f32);
  Tensor pts = random_tensor({3, 84, 2}, data, 3, 28, false).to(DType::f32);
  std::vector<MaskPlan> plans;
  for (int f = 0; f < 3; ++f) plans.push_back(make_mask(84, 0.75, mask_seed(9, 0, 0, static_cast<uint64_t>(f))));
  auto out = mae.forward(frames, pts, plans);
  out.decoded.retain_grad();
  mae_loss(out.recon, out.targets).backward();
  const Tensor g = out.decoded.grad();
  int64_t nonzero_visible = 0, zero_masked_slots = 0, checked = 0;
  for (int f = 0; f < 3; ++f) {
    for (auto i : plans[static_cast<size_t>(f)].visible)
      for (int k = 0; k < 16; ++k, ++checked) nonzero_visible += g.at({f, i, k}) != 0.0;
    for (auto i : plans[static_cast<size_t>(f)].masked) {
      double mass = 0.0;
      for (int k = 0; k < 16; ++k) mass += std::abs(g.at({f, i, k}));
      zero_masked_slots += mass == 0.0;
    }
  }
  log.check(nonzero_visible == 0, std::to_string(nonzero_visible) + " nonzero visible gradients");
  log.check(zero_masked_slots == 0, std::to_string(zero_masked_slots) + " masked slots without gradient");
  log.note(std::to_string(checked) + " visible reconstruction entries, all gradients exactly 0");
  return log.outcome();
}

Outcome permutation() {
  Log log;
  ModelConfig mc;
  mc.embed_dim = 24;
  mc.heads = 3;
  mc.encoder_blocks = 2;
  mc.mlp_hidden = 48;
  mc.patch_size = 4;
  mc.frames = 3;
  std::mt19937_64 data(77);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    mc.position = static_cast<PositionEmbedding>(trial % 4);
    mc.apex_index = 10;
    Rng rng(500 + trial);
    ViactModel model(mc, rng);
    Tensor frames = random_tensor({1, 3, 64, 64}, data, 0, 1, false).to(DType::f32);
    Tensor pts = random_tensor({1, 3, 84, 2}, data, 4, 60, false).to(DType::f32);
    std::vector<int64_t> perm(84);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), data);
    // The apex is addressed by index, so the permuted model looks it up at its new slot.
    ModelConfig moved = mc;
    moved.apex_index = static_cast<int>(std::find(perm.begin(), perm.end(), 10) - perm.begin());
    Rng same(500 + trial);
    ViactModel permuted_model(moved, same);
    NoGradGuard ng;
    const auto a = model.forward(frames, pts).frame_encodings.to_vector();
    const auto b = permuted_model.forward(frames, index_select(pts, 2, perm)).frame_encodings.to_vector();
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  log.check(worst < 1e-5, "max frame-encoding change " + num(worst));
  log.note("20 trials over the 4 position variants, max |delta theta-hat| " + num(worst));
  return log.outcome();
}

Outcome efficiency(const fs::path& work) {
  Log log;
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream out;
  const int code = run_cli({"--out-dir", (work / "bench").string(), "bench", "--batch", "32", "--repeats", "3"}, out);
  log.check(code == 0, "bench exit " + std::to_string(code));
  if (code != 0) return log.outcome();
  const json r = read_json(work / "bench" / "bench.json");
  const double time_ratio = r["ratios"]["fwd_bwd_seconds"], mem_ratio = r["ratios"]["peak_tensor_bytes"];
  const double flop_ratio = r["ratios"]["pretrain_block_flops"], attn_ratio = r["ratios"]["encoder_attention_flops"];
  log.check(r["model"]["embed_dim"] == 192 && r["model"]["encoder_blocks"] == 12 && r["model"]["patch_size"] == 16,
            "not at full model size");
  log.check(time_ratio < 0.5, "time ratio " + num(time_ratio));
  log.check(mem_ratio < 0.5, "memory ratio " + num(mem_ratio));
  const double elapsed = seconds_since(t0);
  log.check(elapsed < 300.0, "runtime " + num(elapsed) + " s");
  log.note("batch 32 at 224 px: time " + num(time_ratio) + "x, peak memory " + num(mem_ratio) +
           "x; analytic FLOPs " + num(flop_ratio) + "x (encoder attention " + num(attn_ratio) + "x); " +
           num(elapsed) + " s");
  return log.outcome();
}

Outcome learning(const fs::path& work, const fs::path& config) {
  Log log;
  const auto t0 = std::chrono::steady_clock::now();
  const std::string data = (work / "desk" / "data").string();
  std::ostringstream out;
  fs::remove_all(work / "desk");
  auto step = [&](std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", config.string(), "--data-root", data});
    const int code = run_cli(args, out);
    log.check(code == 0, args[5] + " exit " + std::to_string(code));
    return code == 0;
  };
  if (!step({"--out-dir", data, "synth"})) return log.outcome();
  const std::string pre = (work / "desk" / "pre").string();
  if (!step({"--out-dir", pre, "pretrain"})) return log.outcome();
  if (!step({"--out-dir", (work / "desk" / "ft_pre").string(), "finetune", "--checkpoint", pre + "/pretrain.ckpt"}))
    return log.outcome();
  const double pipeline_s = seconds_since(t0);
  if (!step({"--out-dir", (work / "desk" / "ft_scratch").string(), "finetune"})) return log.outcome();

  const json with = read_json(work / "desk" / "ft_pre" / "summary.json");
  const json without = read_json(work / "desk" / "ft_scratch" / "summary.json");
  const double first = with["runs"][0]["accuracy"];
  const int n = with["accuracy"]["n"];
  log.check(n >= 5 && without["accuracy"]["n"].get<int>() >= 5, "fewer than 5 seeds");
  log.check(first >= 0.90, "(a) accuracy " + num(first));
  log.check(pipeline_s < 1800.0, "(a) wall clock " + num(pipeline_s) + " s");
  const double acc_p = with["accuracy"]["mean"], acc_s = without["accuracy"]["mean"];
  const double f1_p = with["weighted_f1"]["mean"], f1_s = without["weighted_f1"]["mean"];
  const bool trend = acc_p > acc_s || (acc_p == acc_s && f1_p >= f1_s);
  log.check(trend, "(b) pretrained " + num(acc_p, 4) + " vs scratch " + num(acc_s, 4));
  log.note("(a) seed 0 pretrained test accuracy " + num(first, 4) + " after " + num(pipeline_s, 4) +
           " s including data, pre-training and all pretrained seeds; (b) accuracy over " + std::to_string(n) +
           " seeds: pretrained " + num(acc_p, 4) + " +- " + num(with["accuracy"]["std"].get<double>(), 3) +
           " vs scratch " + num(acc_s, 4) + " +- " + num(without["accuracy"]["std"].get<double>(), 3) +
           " (F1 " + num(f1_p, 4) + " vs " + num(f1_s, 4) + ")");
  return log.outcome();
}

Outcome schedule() {
  Log log;
  const OptimConfig c = OptimConfig::pretrain_defaults();
  const double eff = 1.5e-4 * 2700.0 / 256.0;
  log.check(std::abs(c.effective_lr() - eff) < 1e-18 && std::abs(eff - 1.5820e-3) < 5e-8,
            "effective lr " + num(c.effective_lr(), 10));
  const std::vector<std::pair<int, double>> expected = {
      {0, eff * 1.0 / 200.0},
      {199, eff},
      {200, eff},
      {1100, eff * 0.5 * (1.0 + std::cos(M_PI * 900.0 / 1800.0))},
      {1999, eff * 0.5 * (1.0 + std::cos(M_PI * 1799.0 / 1800.0))},
  };
  double worst = 0.0;
  for (const auto& [epoch, value] : expected) {
    const double got = lr_at(epoch, c);
    worst = std::max(worst, std::abs(got - value));
    log.check(std::abs(got - value) <= 1e-12, "epoch " + std::to_string(epoch) + " lr " + num(got, 12));
  }
  log.note("eff_lr " + num(c.effective_lr(), 8) + ", max deviation " + num(worst) + " at epochs 0/199/200/1100/1999");
  return log.outcome();
}

// Weighted F1 from a binary confusion matrix, written out per class.
double weighted_f1_oracle(int tp, int fp, int fn, int tn) {
  const int support1 = tp + fn, support0 = tn + fp;
  const double f1_pos = (2 * tp + fp + fn) == 0 ? 0.0 : 2.0 * tp / (2 * tp + fp + fn);
  const double f1_neg = (2 * tn + fn + fp) == 0 ? 0.0 : 2.0 * tn / (2 * tn + fn + fp);
  return (support1 * f1_pos + support0 * f1_neg) / (support0 + support1);
}

Outcome metrics_oracle() {
  Log log;
  struct Case {
    std::vector<int> pred, label;
    int tp, fp, fn, tn;
  };
  const std::vector<Case> cases = {
      {{1, 0, 1, 0}, {1, 1, 0, 0}, 1, 1, 1, 1},
      {{1, 1, 1, 0, 0}, {1, 1, 1, 0, 0}, 3, 0, 0, 2},
      {{0, 0, 0, 0}, {1, 1, 0, 0}, 0, 0, 2, 2},
      {{1, 1, 1}, {0, 0, 0}, 0, 3, 0, 0},
      {{0, 0}, {0, 0}, 0, 0, 0, 2},
      {{1, 0, 1, 1, 0, 0, 1}, {1, 0, 0, 1, 1, 0, 1}, 3, 1, 1, 2},
      {{1, 1, 0, 1, 0, 1}, {1, 0, 0, 0, 0, 1}, 2, 2, 0, 2},
      {{0, 1, 0, 0, 1}, {1, 1, 1, 0, 1}, 2, 0, 2, 1},
      {{1, 0, 0, 1, 1, 0, 1, 0}, {0, 1, 0, 1, 1, 0, 0, 1}, 2, 2, 2, 2},
      {{1}, {1}, 1, 0, 0, 0},
  };
  int exact = 0;
  for (size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    int tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t k = 0; k < c.pred.size(); ++k) {
      tp += c.pred[k] == 1 && c.label[k] == 1;
      fp += c.pred[k] == 1 && c.label[k] == 0;
      fn += c.pred[k] == 0 && c.label[k] == 1;
      tn += c.pred[k] == 0 && c.label[k] == 0;
    }
    log.check(tp == c.tp && fp == c.fp && fn == c.fn && tn == c.tn, "case " + std::to_string(i) + " matrix");
    const Metrics m = compute_metrics(c.pred, c.label);
    const double f1 = weighted_f1_oracle(c.tp, c.fp, c.fn, c.tn);
    const double acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.pred.size());
    const bool ok = std::abs(m.weighted_f1 - f1) <= 1e-15 && m.accuracy == acc;
    exact += ok;
    log.check(ok, "case " + std::to_string(i) + " f1 " + num(m.weighted_f1, 17) + " vs " + num(f1, 17));
  }
  log.note(std::to_string(exact) + "/10 confusion-matrix cases match");
  return log.outcome();
}

Outcome reproducibility(const fs::path& work) {
  Log log;
  const fs::path root = work / "repro";
  fs::remove_all(root);
  const std::vector<std::string> model = {"--embed-dim", "12", "--heads", "2", "--encoder-blocks", "1",
                                          "--mlp-hidden", "16", "--patch-size", "4"};
  std::ostringstream out;
  std::vector<std::string> compared;
  for (const char* run : {"a", "b"}) {
    const std::string dir = (root / run).string();
    auto cmd = [&](std::vector<std::string> args, const std::vector<std::string>& extra = {}) {
      args.insert(args.begin(), {"--seed", "5", "--data-root", dir + "/data"});
      args.insert(args.end(), extra.begin(), extra.end());
      return run_cli(args, out) == 0;
    };
    log.check(cmd({"--out-dir", dir + "/data", "synth", "--n-train", "12", "--n-val", "4", "--n-test", "4", "--size",
                   "32"}),
              "synth run " + std::string(run));
    std::vector<std::string> pre = {"--out-dir", dir + "/pre", "pretrain", "--decoder-blocks", "1", "--decoder-dim",
                                    "8", "--decoder-heads", "2", "--decoder-mlp", "16", "--epochs", "3",
                                    "--warmup-epochs", "1", "--batch-size", "16", "--base-lr", "0.02",
                                    "--recon-every", "0"};
    log.check(cmd(pre, model), "pretrain run " + std::string(run));
    std::vector<std::string> ft = {"--out-dir", dir + "/ft", "finetune", "--checkpoint", dir + "/pre/pretrain.ckpt",
                                   "--epochs", "3", "--batch-size", "4", "--repeats", "2"};
    log.check(cmd(ft), "finetune run " + std::string(run));
  }
  for (const std::string rel : {"data/manifest.jsonl", "data/clips/synth-00000.vclp", "pre/metrics.jsonl",
                                "pre/pretrain.ckpt", "ft/seed_5/metrics.jsonl", "ft/seed_6/metrics.jsonl",
                                "ft/seed_5/model.ckpt"}) {
    const std::string a = slurp(root / "a" / rel), b = slurp(root / "b" / rel);
    log.check(!a.empty() && a == b, rel + " differs between runs");
    compared.push_back(rel);
  }
  const std::string curve = slurp(root / "a" / "pre" / "metrics.jsonl");
  log.check(std::count(curve.begin(), curve.end(), '\n') == 3, "pre-training curve length");

  const Clip clip = read_clip(root / "a" / "data" / "clips" / "synth-00003.vclp");
  write_clip(root / "copy.vclp", clip);
  const Clip back = read_clip(root / "copy.vclp");
  log.check(back == clip, "VCLP values differ after round trip");
  log.check(slurp(root / "copy.vclp") == slurp(root / "a" / "data" / "clips" / "synth-00003.vclp"),
            "VCLP bytes differ after round trip");
  bool bits = back.frames.size() == clip.frames.size();
  for (size_t i = 0; bits && i < clip.frames.size(); ++i)
    bits = std::memcmp(&clip.frames[i], &back.frames[i], sizeof(float)) == 0;
  log.check(bits, "VCLP frame bits differ");
  log.note("synth, pretrain and finetune twice with seed 5: " + std::to_string(compared.size()) +
           " artifacts byte-identical; VCLP round trip bit-identical");
  return log.outcome();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string selected = "1,2,3,4,5,6,7,8,9,10";
  std::string work = "acceptance_work";
  std::string config = VIACT_SOURCE_DIR "/configs/desk.ini";
  app.add_option("--criteria", selected, "Comma list of criteria to run")->capture_default_str();
  app.add_option("--work-dir", work, "Scratch directory")->capture_default_str();
  app.add_option("--desk-config", config, "Config file for the learning run")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::set<int> wanted;
  {
    std::istringstream is(selected);
    std::string item;
    while (std::getline(is, item, ',')) wanted.insert(std::stoi(item));
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"sampler oracle equivalence", sampler_oracle},
      {"structural constants", structure},
      {"masked-only objective", masked_only},
      {"permutation invariance", permutation},
      {"efficiency", [&] { return efficiency(work); }},
      {"desk-scale learning", [&] { return learning(work, config); }},
      {"schedule exactness", schedule},
      {"metrics oracle", metrics_oracle},
      {"reproducibility", [&] { return reproducibility(work); }},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!wanted.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " (" << criteria[i].first << "): " << (o.pass ? "PASS" : "FAIL") << "  "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
