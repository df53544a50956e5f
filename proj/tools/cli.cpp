#include "cli.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "viact/checkpoint.hpp"
#include "viact/data.hpp"
#include "viact/mae.hpp"
#include "viact/model.hpp"
#include "viact/render.hpp"
#include "viact/train.hpp"

namespace viact::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct Globals {
  uint64_t seed = 0;
  std::string data_root = "data";
  std::string out_dir = "runs";
};

struct ModelFlags {
  ModelConfig cfg;
  std::string position = "point_linear";

  void add(CLI::App* app) {
    app->add_option("--embed-dim", cfg.embed_dim, "Token width k")->capture_default_str();
    app->add_option("--heads", cfg.heads, "Attention heads")->capture_default_str();
    app->add_option("--encoder-blocks", cfg.encoder_blocks, "Frame encoder blocks")->capture_default_str();
    app->add_option("--temporal-blocks", cfg.temporal_blocks, "Temporal blocks")->capture_default_str();
    app->add_option("--mlp-hidden", cfg.mlp_hidden, "MLP hidden width")->capture_default_str();
    app->add_option("--patch-size", cfg.patch_size, "Patch side j")->capture_default_str();
    app->add_option("--position", position, "point_linear|point_sincos|apex_relative_linear|apex_relative_sincos")
        ->capture_default_str();
    app->add_option("--dropout", cfg.dropout, "Dropout rate")->capture_default_str();
  }

  ModelConfig resolve(int frames) const {
    ModelConfig c = cfg;
    c.position = parse_position_embedding(position);
    c.frames = frames;
    c.validate();
    return c;
  }
};

struct DecoderFlags {
  MaeConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--decoder-blocks", cfg.decoder_blocks, "MAE decoder blocks")->capture_default_str();
    app->add_option("--decoder-dim", cfg.decoder_dim, "MAE decoder width")->capture_default_str();
    app->add_option("--decoder-heads", cfg.decoder_heads, "MAE decoder heads")->capture_default_str();
    app->add_option("--decoder-mlp", cfg.decoder_mlp, "MAE decoder MLP width")->capture_default_str();
  }

  MaeConfig resolve(const ModelConfig& encoder, double mask_ratio) const {
    MaeConfig c = cfg;
    c.encoder = encoder;
    c.mask_ratio = mask_ratio;
    c.validate();
    return c;
  }
};

struct OptimFlags {
  OptimConfig cfg;
  std::string schedule;

  OptimFlags(const OptimConfig& defaults) : cfg(defaults), schedule(to_string(defaults.schedule)) {}

  void add(CLI::App* app, const std::string& prefix = "") {
    const std::string p = "--" + prefix;
    app->add_option(p + "epochs", cfg.total_epochs, "Total epochs")->capture_default_str();
    app->add_option(p + "warmup-epochs", cfg.warmup_epochs, "Linear warmup epochs")->capture_default_str();
    app->add_option(p + "batch-size", cfg.batch_size, "Batch size")->capture_default_str();
    app->add_option(p + "base-lr", cfg.base_lr, "Base learning rate (scaled by batch/256)")->capture_default_str();
    app->add_option(p + "weight-decay", cfg.weight_decay, "Decoupled weight decay")->capture_default_str();
    app->add_option(p + "schedule", schedule, "warmup_cosine|constant")->capture_default_str();
    app->add_flag(p + "per-step-warmup", cfg.per_step_warmup, "Warm up per optimizer step");
    app->add_option(p + "grad-clip", cfg.grad_clip, "Global gradient-norm clip (0 = off)")->capture_default_str();
  }

  OptimConfig resolve() const {
    OptimConfig c = cfg;
    c.schedule = parse_schedule(schedule);
    c.validate();
    return c;
  }
};

json optim_json(const OptimConfig& c) {
  return json{{"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"weight_decay", c.weight_decay},
              {"base_lr", c.base_lr},
              {"batch_size", c.batch_size},
              {"effective_lr", c.effective_lr()},
              {"warmup_epochs", c.warmup_epochs},
              {"total_epochs", c.total_epochs},
              {"schedule", to_string(c.schedule)},
              {"per_step_warmup", c.per_step_warmup},
              {"grad_clip", c.grad_clip}};
}

json summary_json(const Summary& s) { return json{{"mean", s.mean}, {"std", s.std}, {"n", s.count}}; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IngestionError("cannot write " + path.string());
  os << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

uint64_t fnv1a(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

struct Dataset {
  std::vector<Clip> train, val, test;
};

Dataset load_dataset(const fs::path& root) {
  if (!fs::exists(root / "manifest.jsonl")) throw IngestionError("no manifest.jsonl under " + root.string());
  Dataset d{load_split(root, Split::train), load_split(root, Split::val), load_split(root, Split::test)};
  if (d.train.empty()) throw IngestionError("dataset " + root.string() + " has no training clips");
  return d;
}

MaskedAutoencoder load_pretrained(const fs::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.kind != CheckpointKind::pretrain) throw ConfigError(path.string() + " is not a pre-training checkpoint");
  return MaskedAutoencoder::from_checkpoint(ck);
}

ViactModel load_classifier(const fs::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.kind != CheckpointKind::classifier) throw ConfigError(path.string() + " is not a classifier checkpoint");
  return ViactModel::from_checkpoint(ck);
}

std::vector<double> parse_ratios(const std::string& spec) {
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    double lo = 0, hi = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream is(spec);
    if (!(is >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || !(step > 0) || hi < lo) {
      throw ConfigError("bad range '" + spec + "' (expected start:stop:step)");
    }
    for (int i = 0;; ++i) {
      const double v = lo + i * step;
      if (v > hi + 1e-9) break;
      out.push_back(std::round(v * 1e9) / 1e9);
    }
  } else {
    std::istringstream is(spec);
    std::string item;
    while (std::getline(is, item, ',')) {
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("bad mask ratio '" + item + "'");
      }
    }
  }
  if (out.empty()) throw ConfigError("no mask ratios in '" + spec + "'");
  return out;
}

std::vector<std::string> split_list(const std::string& spec) {
  std::vector<std::string> out;
  std::istringstream is(spec);
  std::string item;
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(item);
  if (out.empty()) throw ConfigError("empty list '" + spec + "'");
  return out;
}

class Session {
 public:
  Session(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(const std::vector<std::string>& args);

 private:
  void snapshot(const fs::path& dir) const { write_text(dir / "config.ini", app_->config_to_str(true, false)); }
  fs::path prepare(const std::string& dir) const {
    fs::create_directories(dir);
    return dir;
  }

  void cmd_synth();
  void cmd_pretrain();
  void cmd_finetune();
  void cmd_eval();
  void cmd_sweep();
  void cmd_bench();
  void cmd_attend();

  std::ostream& out_;
  std::ostream& err_;
  CLI::App* app_ = nullptr;
  Globals g_;

  struct {
    int n_train = 512, n_val = 128, n_test = 128;
    SynthConfig cfg;
    bool force = false;
  } synth_;
  struct {
    std::string tokenizer = "anatomical";
    double mask_ratio = 0.75;
    ModelFlags model;
    DecoderFlags decoder;
    OptimFlags optim{OptimConfig::pretrain_defaults()};
    int64_t frames_per_epoch = 0;
    int recon_every = 10;
  } pre_;
  struct {
    std::string checkpoint;
    ModelFlags model;
    OptimFlags optim{OptimConfig::finetune_defaults()};
    int patience = 8;
    int repeats = 1;
    int eval_batch = 16;
  } ft_;
  struct {
    std::string checkpoint;
    std::string split = "test";
    int batch = 16;
  } ev_;
  struct {
    std::string mask_ratios = "0.75";
    std::string positions = "point_linear";
    std::string pretraining = "anatomical";
    int repeats = 1;
    ModelFlags model;
    DecoderFlags decoder;
    OptimFlags pre_optim{OptimConfig::pretrain_defaults()};
    OptimFlags ft_optim{OptimConfig::finetune_defaults()};
    int64_t frames_per_epoch = 0;
    int patience = 8;
  } sw_;
  struct {
    std::string model = "both";
    int batch = 32;
    int repeats = 3;
    int size = 224;
    double mask_ratio = 0.75;
    ModelFlags model_flags;
    DecoderFlags decoder;
  } bench_;
  struct {
    std::string checkpoint;
    std::string clip;
    std::string split = "test";
    int index = 0;
    int head = 0;
    ModelFlags model;
  } att_;
};

int Session::run(const std::vector<std::string>& args) {
  CLI::App app{"Anatomically constrained video transformer: data, training and benchmarks"};
  app_ = &app;
  app.set_config("--config", "", "Flat key=value config file (section.key = value)");
  app.add_option("--seed", g_.seed, "Random seed")->capture_default_str();
  app.add_option("--data-root", g_.data_root, "Dataset directory")->capture_default_str();
  app.add_option("--out-dir", g_.out_dir, "Output directory")->capture_default_str();
  app.require_subcommand(1);
  app.fallthrough();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset into --out-dir");
  synth->add_option("--n-train", synth_.n_train)->capture_default_str();
  synth->add_option("--n-val", synth_.n_val)->capture_default_str();
  synth->add_option("--n-test", synth_.n_test)->capture_default_str();
  synth->add_option("--signal", synth_.cfg.signal, "Class signal strength")->capture_default_str();
  synth->add_option("--size", synth_.cfg.size, "Frame side in pixels")->capture_default_str();
  synth->add_option("--raw-frames", synth_.cfg.raw_frames, "Rendered frames per clip")->capture_default_str();
  synth->add_option("--ca-basal-ratio", synth_.cfg.ca_basal_ratio)->capture_default_str();
  synth->add_option("--point-noise", synth_.cfg.point_noise_px, "Point jitter (px at 224)")->capture_default_str();
  synth->add_flag("--force", synth_.force, "Overwrite a non-empty output directory");

  auto* pre = app.add_subcommand("pretrain", "Masked-autoencoder pre-training of the frame encoder");
  pre->add_option("--tokenizer", pre_.tokenizer, "anatomical|grid")->capture_default_str();
  pre->add_option("--mask-ratio", pre_.mask_ratio)->capture_default_str();
  pre->add_option("--frames-per-epoch", pre_.frames_per_epoch, "0 = all frames")->capture_default_str();
  pre->add_option("--recon-every", pre_.recon_every, "Reconstruction image period (0 = off)")->capture_default_str();
  pre_.model.add(pre);
  pre_.decoder.add(pre);
  pre_.optim.add(pre);

  auto* ft = app.add_subcommand("finetune", "Clip classification training with early stopping");
  ft->add_option("--checkpoint", ft_.checkpoint, "Pre-training checkpoint (omit for random init)");
  ft->add_option("--patience", ft_.patience)->capture_default_str();
  ft->add_option("--repeats", ft_.repeats, "Seeds seed..seed+repeats-1")->capture_default_str();
  ft->add_option("--eval-batch", ft_.eval_batch)->capture_default_str();
  ft_.model.add(ft);
  ft_.optim.add(ft);

  auto* ev = app.add_subcommand("eval", "Evaluate a classifier checkpoint on one split");
  ev->add_option("--checkpoint", ev_.checkpoint)->required();
  ev->add_option("--split", ev_.split)->capture_default_str();
  ev->add_option("--batch", ev_.batch)->capture_default_str();

  auto* sw = app.add_subcommand("sweep", "Pre-train and fine-tune over a grid of settings");
  sw->add_option("--mask-ratios", sw_.mask_ratios, "start:stop:step or comma list")->capture_default_str();
  sw->add_option("--pos-embeddings", sw_.positions, "Comma list of position variants")->capture_default_str();
  sw->add_option("--pretraining", sw_.pretraining, "Comma list of anatomical|grid|none")->capture_default_str();
  sw->add_option("--repeats", sw_.repeats)->capture_default_str();
  sw->add_option("--frames-per-epoch", sw_.frames_per_epoch)->capture_default_str();
  sw->add_option("--patience", sw_.patience)->capture_default_str();
  sw_.model.add(sw);
  sw_.decoder.add(sw);
  sw_.pre_optim.add(sw, "pretrain-");
  sw_.ft_optim.add(sw, "finetune-");

  auto* bench = app.add_subcommand("bench", "Token, FLOP, memory and time comparison of the two tokenizers");
  bench->add_option("--model", bench_.model, "anatomical|grid|both")->capture_default_str();
  bench->add_option("--batch", bench_.batch, "Frames per pass")->capture_default_str();
  bench->add_option("--repeats", bench_.repeats, "Timed passes (median reported)")->capture_default_str();
  bench->add_option("--size", bench_.size, "Frame side in pixels")->capture_default_str();
  bench->add_option("--mask-ratio", bench_.mask_ratio)->capture_default_str();
  bench_.model_flags.add(bench);
  bench_.decoder.add(bench);

  auto* att = app.add_subcommand("attend", "Render class-token attention over the points of one clip");
  att->add_option("--checkpoint", att_.checkpoint, "Classifier checkpoint (omit for random init)");
  att->add_option("--clip", att_.clip, "VCLP file (default: --split/--index from --data-root)");
  att->add_option("--split", att_.split)->capture_default_str();
  att->add_option("--index", att_.index)->capture_default_str();
  att->add_option("--head", att_.head)->capture_default_str();
  att_.model.add(att);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out_, err_);
  }

  try {
    if (synth->parsed()) cmd_synth();
    if (pre->parsed()) cmd_pretrain();
    if (ft->parsed()) cmd_finetune();
    if (ev->parsed()) cmd_eval();
    if (sw->parsed()) cmd_sweep();
    if (bench->parsed()) cmd_bench();
    if (att->parsed()) cmd_attend();
  } catch (const ConfigError& e) {
    err_ << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err_ << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

void Session::cmd_synth() {
  const fs::path root = app_->get_option("--out-dir")->count() ? g_.out_dir : g_.data_root;
  PreprocessConfig pc;
  pc.size = synth_.cfg.size;
  const auto m = synth_dataset(root, synth_.n_train, synth_.n_val, synth_.n_test, synth_.cfg, pc, g_.seed, synth_.force);
  snapshot(root);
  out_ << "wrote " << m.records.size() << " clips to " << root.string() << " (train "
       << m.in_split(Split::train).size() << ", val " << m.in_split(Split::val).size() << ", test "
       << m.in_split(Split::test).size() << ")\n";
}

void Session::cmd_pretrain() {
  const fs::path dir = prepare(g_.out_dir);
  const auto clips = load_split(g_.data_root, Split::train);
  if (clips.empty()) throw IngestionError("no training clips under " + g_.data_root);
  PretrainOptions o;
  o.mae = pre_.decoder.resolve(pre_.model.resolve(static_cast<int>(clips[0].num_frames)), pre_.mask_ratio);
  o.optim = pre_.optim.resolve();
  o.tokenizer = parse_tokenizer(pre_.tokenizer);
  o.seed = g_.seed;
  o.frames_per_epoch = pre_.frames_per_epoch;
  o.out_dir = dir;
  o.recon_every = pre_.recon_every;
  snapshot(dir);

  const int64_t tokens = o.tokenizer == TokenizerKind::grid
                             ? static_cast<int64_t>(grid_points({static_cast<int>(clips[0].height),
                                                                 static_cast<int>(clips[0].width)},
                                                                o.mae.encoder.patch_size)
                                                        .size())
                             : static_cast<int64_t>(clips[0].num_points);
  const MaskPlan probe = make_mask(tokens, o.mae.mask_ratio, 0);
  out_ << "tokenizer " << pre_.tokenizer << ": " << tokens << " tokens/frame, " << probe.visible.size()
       << " visible, " << probe.masked.size() << " masked\n";
  MetricsLog log(dir / "metrics.jsonl");
  o.on_epoch = [&](const EpochRecord& r) {
    log.write(r);
    out_ << "epoch " << r.epoch << " loss " << fmt(r.loss, 6) << " lr " << r.lr << "\n";
    out_.flush();
  };
  const auto result = pretrain(clips, o);
  save_checkpoint(dir / "pretrain.ckpt", result.model.to_checkpoint());
  write_json(dir / "summary.json",
             json{{"tokenizer", pre_.tokenizer},
                  {"tokens_per_frame", tokens},
                  {"encoder_tokens", result.encoder_tokens},
                  {"decoder_tokens", result.decoder_tokens},
                  {"frames", clips.size() * clips[0].num_frames},
                  {"epochs", result.history.size()},
                  {"final_loss", result.history.back().loss},
                  {"mae", json::parse(o.mae.to_json())},
                  {"optim", optim_json(o.optim)}});
}

void Session::cmd_finetune() {
  const fs::path dir = prepare(g_.out_dir);
  const Dataset d = load_dataset(g_.data_root);
  if (ft_.repeats < 1) throw ConfigError("--repeats must be >= 1");
  std::optional<MaskedAutoencoder> mae;
  ModelConfig mc = ft_.model.resolve(static_cast<int>(d.train[0].num_frames));
  if (!ft_.checkpoint.empty()) {
    mae = load_pretrained(ft_.checkpoint);
    const ModelConfig& enc = mae->config().encoder;
    mc.embed_dim = enc.embed_dim;
    mc.heads = enc.heads;
    mc.encoder_blocks = enc.encoder_blocks;
    mc.mlp_hidden = enc.mlp_hidden;
    mc.patch_size = enc.patch_size;
    mc.position = enc.position;
    mc.apex_index = enc.apex_index;
    mc.validate();
    out_ << "encoder dimensions taken from " << ft_.checkpoint << "\n";
  }
  snapshot(dir);

  std::vector<double> acc, f1;
  json runs = json::array();
  for (int r = 0; r < ft_.repeats; ++r) {
    const uint64_t seed = g_.seed + static_cast<uint64_t>(r);
    const fs::path run_dir = dir / ("seed_" + std::to_string(seed));
    fs::create_directories(run_dir);
    MetricsLog log(run_dir / "metrics.jsonl");
    FinetuneOptions o;
    o.model = mc;
    o.optim = ft_.optim.resolve();
    o.patience = ft_.patience;
    o.seed = seed;
    o.pretrained = mae ? &*mae : nullptr;
    o.eval_batch = ft_.eval_batch;
    o.on_epoch = [&](const EpochRecord& rec) {
      log.write(rec);
      out_ << "seed " << seed << " epoch " << rec.epoch << " " << rec.split << " loss " << fmt(rec.loss)
           << " acc " << fmt(rec.accuracy.value_or(0)) << "\n";
      out_.flush();
    };
    const auto res = finetune(d.train, d.val, d.test, o);
    save_checkpoint(run_dir / "model.ckpt", res.model.to_checkpoint());
    json jr{{"seed", seed},
            {"best_epoch", res.best_epoch},
            {"best_val_loss", res.best_val_loss},
            {"stopped_early", res.stopped_early},
            {"test_loss", res.test.loss},
            {"accuracy", res.test.metrics.accuracy},
            {"weighted_f1", res.test.metrics.weighted_f1}};
    write_json(run_dir / "result.json", jr);
    runs.push_back(jr);
    acc.push_back(res.test.metrics.accuracy);
    f1.push_back(res.test.metrics.weighted_f1);
  }
  const Summary sa = summarize(acc), sf = summarize(f1);
  write_json(dir / "summary.json", json{{"pretrained", ft_.checkpoint.empty() ? json(nullptr) : json(ft_.checkpoint)},
                                        {"model", json::parse(mc.to_json())},
                                        {"optim", optim_json(ft_.optim.resolve())},
                                        {"accuracy", summary_json(sa)},
                                        {"weighted_f1", summary_json(sf)},
                                        {"runs", runs}});
  out_ << "test accuracy " << fmt(sa.mean) << " +- " << fmt(sa.std) << ", weighted F1 " << fmt(sf.mean) << " +- "
       << fmt(sf.std) << " over " << sa.count << " seed(s)\n";
}

void Session::cmd_eval() {
  const fs::path dir = prepare(g_.out_dir);
  const ViactModel model = load_classifier(ev_.checkpoint);
  const Split split = parse_split(ev_.split);
  const auto clips = load_split(g_.data_root, split);
  const Evaluation e = evaluate(model, clips, ev_.batch);
  const json j{{"checkpoint", ev_.checkpoint},
               {"split", ev_.split},
               {"count", e.metrics.count},
               {"loss", e.loss},
               {"accuracy", e.metrics.accuracy},
               {"weighted_f1", e.metrics.weighted_f1}};
  snapshot(dir);
  write_json(dir / ("eval_" + ev_.split + ".json"), j);
  out_ << j.dump() << "\n";
}

void Session::cmd_sweep() {
  const fs::path dir = prepare(g_.out_dir);
  fs::create_directories(dir / "points");
  const Dataset d = load_dataset(g_.data_root);
  const int frames = static_cast<int>(d.train[0].num_frames);
  const auto ratios = parse_ratios(sw_.mask_ratios);
  const auto positions = split_list(sw_.positions);
  const auto pretrainings = split_list(sw_.pretraining);
  if (sw_.repeats < 1) throw ConfigError("--repeats must be >= 1");
  for (const auto& p : pretrainings) {
    if (p != "anatomical" && p != "grid" && p != "none") throw ConfigError("unknown pretraining '" + p + "'");
  }
  snapshot(dir);

  struct Point {
    std::string position, pretraining;
    std::optional<double> ratio;
  };
  std::vector<Point> grid;
  for (const auto& pos : positions)
    for (const auto& pt : pretrainings) {
      if (pt == "none") {
        grid.push_back({pos, pt, std::nullopt});
      } else {
        for (double r : ratios) grid.push_back({pos, pt, r});
      }
    }

  json rows = json::array();
  for (const auto& pt : grid) {
    ModelFlags mf = sw_.model;
    mf.position = pt.position;
    const ModelConfig mc = mf.resolve(frames);
    const OptimConfig pre_optim = sw_.pre_optim.resolve(), ft_optim = sw_.ft_optim.resolve();
    json key{{"position", pt.position},
             {"pretraining", pt.pretraining},
             {"mask_ratio", pt.ratio ? json(*pt.ratio) : json(nullptr)},
             {"model", json::parse(mc.to_json())},
             {"finetune_optim", optim_json(ft_optim)},
             {"patience", sw_.patience},
             {"repeats", sw_.repeats},
             {"seed", g_.seed},
             {"data_root", fs::absolute(g_.data_root).lexically_normal().string()}};
    if (pt.ratio) {
      key["mae"] = json::parse(sw_.decoder.resolve(mc, *pt.ratio).to_json());
      key["pretrain_optim"] = optim_json(pre_optim);
      key["frames_per_epoch"] = sw_.frames_per_epoch;
    }
    const std::string checksum = hex(fnv1a(key.dump()));
    const fs::path point_file = dir / "points" / (checksum + ".json");
    if (fs::exists(point_file)) {
      std::ifstream is(point_file);
      const json stored = json::parse(is, nullptr, false);
      if (!stored.is_discarded() && stored.value("checksum", "") == checksum) {
        out_ << "skip " << pt.position << " / " << pt.pretraining << " (" << checksum << ")\n";
        rows.push_back(stored["row"]);
        continue;
      }
    }

    std::optional<MaskedAutoencoder> mae;
    if (pt.ratio) {
      PretrainOptions po;
      po.mae = sw_.decoder.resolve(mc, *pt.ratio);
      po.optim = pre_optim;
      po.tokenizer = parse_tokenizer(pt.pretraining);
      po.seed = g_.seed;
      po.frames_per_epoch = sw_.frames_per_epoch;
      mae = pretrain(d.train, po).model;
    }
    std::vector<double> acc, f1;
    for (int r = 0; r < sw_.repeats; ++r) {
      FinetuneOptions fo;
      fo.model = mc;
      fo.optim = ft_optim;
      fo.patience = sw_.patience;
      fo.seed = g_.seed + static_cast<uint64_t>(r);
      fo.pretrained = mae ? &*mae : nullptr;
      const auto res = finetune(d.train, d.val, d.test, fo);
      acc.push_back(res.test.metrics.accuracy);
      f1.push_back(res.test.metrics.weighted_f1);
    }
    const Summary sa = summarize(acc), sf = summarize(f1);
    json row{{"variant", pt.position},
             {"pretraining", pt.pretraining},
             {"mask_ratio", pt.ratio ? json(*pt.ratio) : json(nullptr)},
             {"accuracy_mean", sa.mean},
             {"accuracy_std", sa.std},
             {"weighted_f1_mean", sf.mean},
             {"weighted_f1_std", sf.std},
             {"repeats", sa.count}};
    write_json(point_file, json{{"checksum", checksum}, {"key", key}, {"row", row}});
    out_ << pt.position << " / " << pt.pretraining
         << (pt.ratio ? " @ " + fmt(*pt.ratio, 2) : std::string()) << ": accuracy " << fmt(sa.mean) << " +- "
         << fmt(sa.std) << ", weighted F1 " << fmt(sf.mean) << " +- " << fmt(sf.std) << "\n";
    rows.push_back(row);
  }

  std::string jsonl, tsv = "variant\tpretraining\tmask_ratio\taccuracy\tweighted_f1\trepeats\n";
  for (const auto& row : rows) {
    jsonl += row.dump() + "\n";
    tsv += row["variant"].get<std::string>() + "\t" + row["pretraining"].get<std::string>() + "\t" +
           (row["mask_ratio"].is_null() ? std::string("-") : fmt(row["mask_ratio"].get<double>(), 2)) + "\t" +
           fmt(row["accuracy_mean"].get<double>()) + " +- " + fmt(row["accuracy_std"].get<double>()) + "\t" +
           fmt(row["weighted_f1_mean"].get<double>()) + " +- " + fmt(row["weighted_f1_std"].get<double>()) + "\t" +
           std::to_string(row["repeats"].get<int64_t>()) + "\n";
  }
  write_text(dir / "results.jsonl", jsonl);
  write_text(dir / "results.tsv", tsv);
}

void Session::cmd_bench() {
  const fs::path dir = prepare(g_.out_dir);
  if (bench_.batch < 1 || bench_.repeats < 1) throw ConfigError("--batch and --repeats must be >= 1");
  std::vector<TokenizerKind> kinds;
  if (bench_.model == "both") {
    kinds = {TokenizerKind::anatomical, TokenizerKind::grid};
  } else {
    kinds = {parse_tokenizer(bench_.model)};
  }
  const ModelConfig mc = bench_.model_flags.resolve(18);
  const MaeConfig mae_cfg = bench_.decoder.resolve(mc, bench_.mask_ratio);
  snapshot(dir);

  SynthConfig sc;
  sc.size = bench_.size;
  PreprocessConfig pc;
  pc.size = bench_.size;
  std::vector<Clip> clips;
  std::vector<FrameRef> refs;
  for (int i = 0; static_cast<int>(refs.size()) < bench_.batch; ++i) {
    clips.push_back(synth_generate(sc, i % 2, g_.seed + static_cast<uint64_t>(i), "bench", pc));
    for (uint32_t t = 0; t < clips.back().num_frames && static_cast<int>(refs.size()) < bench_.batch; ++t) {
      refs.push_back({static_cast<uint32_t>(clips.size() - 1), t});
    }
  }

  const int64_t k = mc.embed_dim, m = mc.mlp_hidden;
  json results = json::object();
  std::map<std::string, json> by_kind;
  for (TokenizerKind kind : kinds) {
    const FrameBatch fb = make_frame_batch(clips, refs, kind, mc.patch_size);
    const int64_t n = fb.points.dim(1);
    std::vector<MaskPlan> plans;
    for (size_t i = 0; i < refs.size(); ++i) plans.push_back(make_mask(n, mae_cfg.mask_ratio, mask_seed(g_.seed, 0, i)));
    const int64_t visible = static_cast<int64_t>(plans[0].visible.size());
    Rng rng(g_.seed);
    MaskedAutoencoder mae(mae_cfg, rng);
    const ParameterList params = mae.parameters();

    std::vector<double> seconds;
    int64_t peak = 0;
    for (int r = 0; r <= bench_.repeats; ++r) {
      for (auto p : params) p.value.zero_grad();
      const int64_t base = memory_stats().current_bytes;
      reset_peak_memory();
      const auto t0 = std::chrono::steady_clock::now();
      const auto out = mae.forward(fb.frames, fb.points, plans);
      mae_loss(out.recon, out.targets).backward();
      const auto t1 = std::chrono::steady_clock::now();
      peak = std::max(peak, memory_stats().peak_bytes - base);
      if (r > 0) seconds.push_back(std::chrono::duration<double>(t1 - t0).count());  // first pass is warmup
    }
    std::sort(seconds.begin(), seconds.end());
    const double median = seconds[seconds.size() / 2];

    const BlockFlops cls = block_flops(n + 1, k, m);
    const BlockFlops enc = block_flops(visible, k, m);
    const BlockFlops dec = block_flops(n, mae_cfg.decoder_dim, mae_cfg.decoder_mlp);
    const double per_frame_classifier_attention = mc.encoder_blocks * cls.attention;
    const double per_frame_pretrain = mc.encoder_blocks * enc.total() + mae_cfg.decoder_blocks * dec.total();
    json r{{"tokens_per_frame", n},
           {"visible_tokens", visible},
           {"sequence_length", n + 1},
           {"encoder_attention_flops_per_frame", per_frame_classifier_attention},
           {"pretrain_block_flops_per_frame", per_frame_pretrain},
           {"mae_parameters", count_parameters(params)},
           {"classifier_parameters", expected_parameter_count(mc)},
           {"peak_tensor_bytes", peak},
           {"fwd_bwd_seconds", median}};
    by_kind[to_string(kind)] = r;
    results[to_string(kind)] = r;
  }
  struct rusage usage {};
  getrusage(RUSAGE_SELF, &usage);
  json report{{"flop_model",
               "per block: attention 4*M^2*k (QK^T + AV), projections 8*M*k^2 (qkv + out), mlp 4*M*k*m; "
               "multiply-add = 2 FLOPs"},
              {"batch_frames", bench_.batch},
              {"frame_size", bench_.size},
              {"model", json::parse(mc.to_json())},
              {"mae", json::parse(mae_cfg.to_json())},
              {"results", results},
              {"process_peak_rss_kb", usage.ru_maxrss}};
  if (by_kind.count("anatomical") && by_kind.count("grid")) {
    const json& a = by_kind["anatomical"];
    const json& g = by_kind["grid"];
    auto ratio = [&](const char* key) { return a[key].get<double>() / g[key].get<double>(); };
    report["ratios"] = json{{"tokens_per_frame", ratio("tokens_per_frame")},
                            {"encoder_attention_flops", ratio("encoder_attention_flops_per_frame")},
                            {"pretrain_block_flops", ratio("pretrain_block_flops_per_frame")},
                            {"peak_tensor_bytes", ratio("peak_tensor_bytes")},
                            {"fwd_bwd_seconds", ratio("fwd_bwd_seconds")}};
  }
  write_json(dir / "bench.json", report);
  out_ << "# FLOPs per block: attention 4*M^2*k, projections 8*M*k^2, mlp 4*M*k*m (multiply-add = 2)\n";
  out_ << "tokenizer\ttokens\tvisible\tattn_flops/frame\tpretrain_flops/frame\tpeak_MB\tfwd+bwd_s\n";
  for (const auto& [name, r] : by_kind) {
    out_ << name << "\t" << r["tokens_per_frame"].get<int64_t>() << "\t" << r["visible_tokens"].get<int64_t>() << "\t"
         << r["encoder_attention_flops_per_frame"].get<double>() << "\t"
         << r["pretrain_block_flops_per_frame"].get<double>() << "\t"
         << fmt(r["peak_tensor_bytes"].get<double>() / 1048576.0, 1) << "\t" << fmt(r["fwd_bwd_seconds"].get<double>(), 3)
         << "\n";
  }
  if (report.contains("ratios")) out_ << "ratios (anatomical/grid): " << report["ratios"].dump() << "\n";
}

void Session::cmd_attend() {
  const fs::path dir = prepare(g_.out_dir);
  Clip clip;
  if (!att_.clip.empty()) {
    clip = read_clip(att_.clip);
  } else {
    const auto clips = load_split(g_.data_root, parse_split(att_.split));
    if (att_.index < 0 || att_.index >= static_cast<int>(clips.size())) throw ConfigError("--index out of range");
    clip = clips[static_cast<size_t>(att_.index)];
  }
  ViactModel model;
  if (!att_.checkpoint.empty()) {
    model = load_classifier(att_.checkpoint);
  } else {
    Rng rng(g_.seed);
    model = ViactModel(att_.model.resolve(static_cast<int>(clip.num_frames)), rng);
  }
  if (att_.head < 0 || att_.head >= model.config().heads) throw ConfigError("--head out of range");
  snapshot(dir);

  NoGradGuard guard;
  const std::vector<size_t> idx{0};
  const ClipBatch b = make_clip_batch({clip}, idx);
  const auto out = model.forward(b.frames, b.points, true);
  const auto raw = class_token_attention(out.frame_attention, att_.head, false);
  const auto norm = class_token_attention(out.frame_attention, att_.head, true);
  fs::create_directories(dir / "attention");
  std::string jsonl;
  const size_t plane = static_cast<size_t>(clip.height) * clip.width;
  for (uint32_t t = 0; t < clip.num_frames; ++t) {
    const auto& r = raw[t];
    const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
    jsonl += json{{"frame", t}, {"head", att_.head}, {"raw_range", *hi - *lo}, {"normalized", norm[t]}, {"raw", r}}
                 .dump() +
             "\n";
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%02u.png", t);
    write_png(dir / "attention" / name,
              render_attention(std::span<const float>(clip.frames).subspan(t * plane, plane),
                               static_cast<int>(clip.height), static_cast<int>(clip.width), clip.frame_points(t),
                               norm[t]));
  }
  write_text(dir / "attention" / "scores.jsonl", jsonl);
  out_ << "wrote " << clip.num_frames << " attention frames to " << (dir / "attention").string() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Session s(out, err);
  return s.run(args);
}

}  // namespace viact::cli
