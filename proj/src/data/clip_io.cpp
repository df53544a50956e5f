#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "json.hpp"
#include "viact/data.hpp"
#include "viact/detail/binary_io.hpp"

namespace viact {

namespace {
constexpr char kMagic[5] = "VCLP";
}

void Clip::validate() const {
  if (height == 0 || width == 0 || num_frames == 0 || num_points == 0) {
    throw IngestionError("clip " + patient_id + ": empty dimension");
  }
  if (frames.size() != static_cast<size_t>(num_frames) * height * width) {
    throw IngestionError("clip " + patient_id + ": frame buffer size mismatch");
  }
  if (points.size() != static_cast<size_t>(num_frames) * num_points * 2) {
    throw IngestionError("clip " + patient_id + ": point buffer size mismatch");
  }
  if (label > 1) throw IngestionError("clip " + patient_id + ": label must be 0 or 1");
}

PointSet Clip::frame_points(uint32_t t) const {
  PointSet s;
  s.points.reserve(num_points);
  const float* p = points.data() + static_cast<size_t>(t) * num_points * 2;
  for (uint32_t i = 0; i < num_points; ++i) s.points.push_back({p[2 * i], p[2 * i + 1]});
  return s;
}

PointSequence Clip::sequence() const {
  PointSequence seq;
  seq.frame_time_ms = frame_time_ms;
  for (uint32_t t = 0; t < num_frames; ++t) seq.frames.push_back(frame_points(t));
  return seq;
}

void Clip::set_points(const PointSequence& seq) {
  seq.validate();
  num_frames = static_cast<uint32_t>(seq.num_frames());
  num_points = static_cast<uint32_t>(seq.num_points());
  points.clear();
  points.reserve(static_cast<size_t>(num_frames) * num_points * 2);
  for (const auto& f : seq.frames) {
    for (const auto& p : f.points) {
      points.push_back(static_cast<float>(p.x));
      points.push_back(static_cast<float>(p.y));
    }
  }
}

Tensor Clip::frames_tensor() const {
  return Tensor::from(std::span<const float>(frames), {num_frames, height, width}).to(DType::f32);
}

Tensor Clip::points_tensor() const {
  return Tensor::from(std::span<const float>(points), {num_frames, num_points, 2}).to(DType::f32);
}

void write_clip(const std::filesystem::path& path, const Clip& clip) {
  clip.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IngestionError("cannot open clip for writing: " + path.string());
  os.write(kMagic, 4);
  detail::write_le(os, kClipVersion);
  for (uint32_t v : {clip.height, clip.width, clip.num_frames, clip.num_points}) detail::write_le(os, v);
  detail::write_f32(os, clip.frame_time_ms);
  detail::write_le(os, clip.label);
  detail::write_string(os, clip.patient_id);
  for (float v : clip.frames) detail::write_f32(os, v);
  for (float v : clip.points) detail::write_f32(os, v);
  if (!os) throw IngestionError("failed writing clip: " + path.string());
}

Clip read_clip(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open clip: " + path.string());
  detail::expect_magic(is, kMagic, "clip " + path.string());
  const auto version = detail::read_le<uint32_t>(is);
  if (version != kClipVersion) throw IngestionError("unsupported clip version " + std::to_string(version));
  Clip c;
  c.height = detail::read_le<uint32_t>(is);
  c.width = detail::read_le<uint32_t>(is);
  c.num_frames = detail::read_le<uint32_t>(is);
  c.num_points = detail::read_le<uint32_t>(is);
  const uint64_t pixels = uint64_t{c.num_frames} * c.height * c.width;
  if (pixels > (uint64_t{1} << 32)) throw IngestionError("clip " + path.string() + ": implausible size");
  c.frame_time_ms = detail::read_f32(is);
  c.label = detail::read_le<uint8_t>(is);
  c.patient_id = detail::read_string(is, 4096);
  c.frames.resize(static_cast<size_t>(pixels));
  for (auto& v : c.frames) v = detail::read_f32(is);
  c.points.resize(static_cast<size_t>(c.num_frames) * c.num_points * 2);
  for (auto& v : c.points) v = detail::read_f32(is);
  c.validate();
  return c;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "unknown";
}

Split parse_split(const std::string& name) {
  for (auto s : {Split::train, Split::val, Split::test}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown split: " + name);
}

std::vector<const ManifestRecord*> DatasetManifest::in_split(Split split) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(&r);
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IngestionError("cannot open manifest for writing: " + path.string());
  for (const auto& r : manifest.records) {
    nlohmann::ordered_json j{{"path", r.path}, {"label", r.label}, {"patient_id", r.patient_id}, {"split", to_string(r.split)}};
    if (r.ed_index) j["ed_index"] = *r.ed_index;
    os << j.dump() << '\n';
  }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open manifest: " + path.string());
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.path = j.at("path").get<std::string>();
      r.label = j.at("label").get<int>();
      r.patient_id = j.at("patient_id").get<std::string>();
      r.split = parse_split(j.value("split", std::string("train")));
      if (j.contains("ed_index")) r.ed_index = j.at("ed_index").get<int>();
      if (r.label != 0 && r.label != 1) throw IngestionError("label must be 0 or 1");
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError("manifest line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw IngestionError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

DatasetManifest split_dataset(const DatasetManifest& manifest, const std::vector<double>& fractions, uint64_t seed) {
  if (fractions.empty()) throw ConfigError("split fractions are empty");
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (fractions.size() > 3) throw ConfigError("at most three splits (train/val/test)");

  // Patients in first-seen order, labeled by their first record.
  std::vector<std::string> patients;
  std::map<std::string, int> patient_label;
  for (const auto& r : manifest.records) {
    if (patient_label.emplace(r.patient_id, r.label).second) patients.push_back(r.patient_id);
  }
  const int64_t n = static_cast<int64_t>(patients.size());
  const size_t k = fractions.size();
  std::vector<int64_t> sizes(k, 0);
  int64_t assigned = 0;
  for (size_t s = 0; s + 1 < k; ++s) {
    sizes[s] = std::min(n - assigned, static_cast<int64_t>(std::ceil(fractions[s] * static_cast<double>(n) - 1e-9)));
    assigned += sizes[s];
  }
  sizes[k - 1] = n - assigned;

  std::map<int, std::vector<std::string>> by_label;
  for (const auto& p : patients) by_label[patient_label[p]].push_back(p);
  const int64_t nonempty = std::count_if(sizes.begin(), sizes.end(), [](int64_t s) { return s > 0; });
  for (const auto& [label, list] : by_label) {
    if (static_cast<int64_t>(list.size()) < nonempty) {
      throw ConfigError("too few patients with label " + std::to_string(label) + " (" + std::to_string(list.size()) +
                        ") to stratify over " + std::to_string(nonempty) + " splits");
    }
  }

  // alloc[s][c]: patients of label c assigned to split s.
  std::vector<int> labels;
  for (const auto& [label, list] : by_label) labels.push_back(label);
  const size_t nc = labels.size();
  std::vector<std::vector<int64_t>> alloc(k, std::vector<int64_t>(nc, 0));
  std::vector<int64_t> remaining(nc);
  for (size_t c = 0; c < nc; ++c) remaining[c] = static_cast<int64_t>(by_label[labels[c]].size());
  for (size_t s = 0; s + 1 < k; ++s) {
    std::vector<double> frac(nc);
    int64_t filled = 0;
    for (size_t c = 0; c < nc; ++c) {
      const double quota = static_cast<double>(by_label[labels[c]].size()) * static_cast<double>(sizes[s]) /
                           static_cast<double>(n);
      alloc[s][c] = std::min(remaining[c], static_cast<int64_t>(std::floor(quota + 1e-9)));
      frac[c] = quota - static_cast<double>(alloc[s][c]);
      filled += alloc[s][c];
    }
    std::vector<size_t> order(nc);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return frac[a] > frac[b]; });
    while (filled < sizes[s]) {
      bool placed = false;
      for (size_t c : order) {
        if (filled == sizes[s]) break;
        if (alloc[s][c] < remaining[c]) {
          ++alloc[s][c];
          ++filled;
          placed = true;
        }
      }
      if (!placed) throw ConfigError("cannot fill split " + std::to_string(s));
    }
    for (size_t c = 0; c < nc; ++c) remaining[c] -= alloc[s][c];
  }
  for (size_t c = 0; c < nc; ++c) alloc[k - 1][c] = remaining[c];

  std::map<std::string, Split> assignment;
  std::mt19937_64 rng(seed);
  for (size_t c = 0; c < nc; ++c) {
    auto list = by_label[labels[c]];
    std::shuffle(list.begin(), list.end(), rng);
    size_t pos = 0;
    for (size_t s = 0; s < k; ++s)
      for (int64_t i = 0; i < alloc[s][c]; ++i) assignment[list[pos++]] = static_cast<Split>(s);
  }
  DatasetManifest out = manifest;
  for (auto& r : out.records) r.split = assignment.at(r.patient_id);
  return out;
}

std::vector<Clip> load_split(const std::filesystem::path& root, Split split) {
  auto manifest = read_manifest(root / "manifest.jsonl");
  std::vector<Clip> clips;
  for (const auto* r : manifest.in_split(split)) {
    Clip c = read_clip(root / r->path);
    if (c.label != r->label) throw IngestionError("label mismatch between manifest and " + r->path);
    clips.push_back(std::move(c));
  }
  return clips;
}

}  // namespace viact
