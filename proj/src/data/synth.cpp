#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

#include "viact/data.hpp"

namespace viact {

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Heart {
  double cx, base_y, half_width, length, thickness;
};

PointSet ed_contour(const Heart& h, int n) {
  PointSet s;
  for (int i = 0; i < n; ++i) {
    const double phi = std::numbers::pi * i / (n - 1);
    s.points.push_back({h.cx - h.half_width * std::cos(phi), h.base_y - h.length * std::sin(phi)});
  }
  return s;
}

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

double distance_to_polyline(const std::vector<Point>& line, double x, double y) {
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i + 1 < line.size(); ++i) {
    const double ax = line[i].x, ay = line[i].y, bx = line[i + 1].x, by = line[i + 1].y;
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((x - ax) * dx + (y - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    best = std::min(best, std::hypot(x - (ax + t * dx), y - (ay + t * dy)));
  }
  return best;
}

// Spatially correlated unit-variance noise: 3x3 box blur of white noise.
std::vector<double> speckle(int size, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> white(static_cast<size_t>(size) * size);
  for (auto& v : white) v = n01(rng);
  std::vector<double> out(white.size());
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      double s = 0.0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = std::clamp(r + dr, 0, size - 1), cc = std::clamp(c + dc, 0, size - 1);
          s += white[static_cast<size_t>(rr) * size + cc];
        }
      out[static_cast<size_t>(r) * size + c] = s / 3.0;
    }
  return out;
}

}  // namespace

double displacement_weight(int index, int contour_points, double basal_ratio) {
  const double h = std::sin(std::numbers::pi * index / (contour_points - 1));
  return basal_ratio + (1.0 - basal_ratio) * h;
}

RawClip synth_raw(const SynthConfig& cfg, int label, uint64_t seed, const std::string& patient_id) {
  if (cfg.size < 16 || cfg.raw_frames < 1) throw ConfigError("synth: size must be >= 16 and raw_frames >= 1");
  if (label != 0 && label != 1) throw ConfigError("synth: label must be 0 or 1");
  constexpr int kPoints = 21;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const double s = cfg.size;

  Heart heart{s * (0.5 + uniform(-0.03, 0.03)), s * (0.80 + uniform(-0.03, 0.03)), s * 0.17 * uniform(0.9, 1.1),
              s * 0.50 * uniform(0.92, 1.08), s * 0.085};
  const double period = uniform(20.0, 28.0);
  const double amplitude = s * 0.075 * uniform(0.85, 1.15);
  const double basal_ratio = label == 1 ? 1.0 - cfg.signal * (1.0 - cfg.ca_basal_ratio) : 1.0;
  const double gain = uniform(0.9, 1.1);
  const double band_mean = 115.0 + (label == 1 ? 45.0 * cfg.signal : 0.0);
  const double sparkle_p = label == 1 ? 0.02 + 0.08 * cfg.signal : 0.02;
  const double noise_px = cfg.point_noise_px * s / 224.0;

  const PointSet ed = ed_contour(heart, kPoints);
  const Point centre{heart.cx, heart.base_y - 0.45 * heart.length};
  std::normal_distribution<double> jitter(0.0, 1.0);

  RawClip raw;
  raw.height = raw.width = static_cast<uint32_t>(cfg.size);
  raw.frame_time_ms = 33.33;
  raw.ed_index = 0;
  raw.label = static_cast<uint8_t>(label);
  raw.patient_id = patient_id;
  raw.frames.reserve(static_cast<size_t>(cfg.raw_frames) * cfg.size * cfg.size);

  for (int t = 0; t < cfg.raw_frames; ++t) {
    const double phase = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * t / period));
    std::vector<Point> contour;
    PointSet emitted;
    for (int i = 0; i < kPoints; ++i) {
      const Point& p = ed[static_cast<size_t>(i)];
      const double dx = centre.x - p.x, dy = centre.y - p.y, len = std::hypot(dx, dy);
      const double d = amplitude * phase * displacement_weight(i, kPoints, basal_ratio);
      contour.push_back({p.x + d * dx / len, p.y + d * dy / len});
      emitted.points.push_back({contour.back().x + noise_px * jitter(rng), contour.back().y + noise_px * jitter(rng)});
    }
    raw.contours.push_back(std::move(emitted));

    const auto noise = speckle(cfg.size, rng);
    const double base_line = std::max(contour.front().y, contour.back().y) + 0.02 * s;
    for (int r = 0; r < cfg.size; ++r) {
      for (int c = 0; c < cfg.size; ++c) {
        const double n = noise[static_cast<size_t>(r) * cfg.size + c];
        const double fx = c - 0.5 * s, fy = r + 0.05 * s;
        double v = 0.0;
        if (std::abs(std::atan2(fx, fy)) < 0.75 && std::hypot(fx, fy) < 1.02 * s) {
          v = 50.0 + 18.0 * n;
          if (inside_polygon(contour, c, r)) {
            v = 14.0 + 5.0 * n;
          } else if (r <= base_line && distance_to_polyline(contour, c, r) <= heart.thickness) {
            v = band_mean + 22.0 * n + (u01(rng) < sparkle_p ? 70.0 : 0.0);
          }
        }
        raw.frames.push_back(static_cast<float>(std::clamp(std::round(gain * v), 0.0, 255.0)));
      }
    }
  }
  return raw;
}

Clip synth_generate(const SynthConfig& cfg, int label, uint64_t seed, const std::string& patient_id,
                    const PreprocessConfig& pre) {
  return preprocess(synth_raw(cfg, label, seed, patient_id), pre);
}

double basal_apical_ratio(const Clip& clip, int contour_points) {
  auto disp = [&](uint32_t t, int i) {
    const float* a = clip.points.data() + static_cast<size_t>(i) * 2;
    const float* b = clip.points.data() + (static_cast<size_t>(t) * clip.num_points + i) * 2;
    return std::hypot(static_cast<double>(b[0]) - a[0], static_cast<double>(b[1]) - a[1]);
  };
  const int apex = contour_points / 2;
  uint32_t peak = 0;
  for (uint32_t t = 1; t < clip.num_frames; ++t) {
    if (disp(t, apex) > disp(peak, apex)) peak = t;
  }
  const double apical = disp(peak, apex);
  if (apical <= 0.0) return 1.0;
  return 0.5 * (disp(peak, 0) + disp(peak, contour_points - 1)) / apical;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) throw ConfigError("roc_auc: bad input sizes");
  double pairs = 0.0, wins = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  if (pairs == 0.0) throw ConfigError("roc_auc: both classes are required");
  return wins / pairs;
}

DatasetManifest synth_dataset(const std::filesystem::path& root, int n_train, int n_val, int n_test,
                              const SynthConfig& cfg, const PreprocessConfig& pre, uint64_t seed, bool force) {
  if (n_train < 1 || n_val < 1 || n_test < 1) throw ConfigError("synth: every split needs at least one clip");
  namespace fs = std::filesystem;
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw ConfigError("output directory " + root.string() + " is not empty (use --force)");
    fs::remove_all(root / "clips");
    fs::remove(root / "manifest.jsonl");
  }
  fs::create_directories(root / "clips");
  const int total = n_train + n_val + n_test;
  DatasetManifest manifest;
  for (int i = 0; i < total; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%05d", i);
    manifest.records.push_back({std::string("clips/") + id + ".vclp", i % 2, id, Split::train, std::nullopt});
  }
  const double n = total;
  manifest = split_dataset(manifest, {n_train / n, n_val / n, n_test / n}, seed);
  for (size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    write_clip(root / r.path, synth_generate(cfg, r.label, splitmix(seed ^ splitmix(i + 1)), r.patient_id, pre));
  }
  write_manifest(root / "manifest.jsonl", manifest);
  return manifest;
}

}  // namespace viact
