#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "viact/geometry.hpp"
#include "viact/tensor.hpp"

namespace viact {

/// T frames with aligned per-frame points. Values are held as float32 so a
/// container round trip is exact.
struct Clip {
  uint32_t height = 0;
  uint32_t width = 0;
  uint32_t num_frames = 0;
  uint32_t num_points = 0;
  float frame_time_ms = 33.33f;
  uint8_t label = 0;
  std::string patient_id;
  std::vector<float> frames;  ///< T*H*W, row-major
  std::vector<float> points;  ///< T*N*2, (x, y)

  /// Throws IngestionError on inconsistent sizes or a non-binary label.
  void validate() const;
  PointSet frame_points(uint32_t t) const;
  PointSequence sequence() const;
  void set_points(const PointSequence& seq);
  Tensor frames_tensor() const;  ///< [T, H, W]
  Tensor points_tensor() const;  ///< [T, N, 2]

  bool operator==(const Clip&) const = default;
};

/// VCLP container: magic "VCLP", u32 version, u32 H, W, T, N, f32
/// frame_time_ms, u8 label, u32-length UTF-8 patient id, f32 frames
/// (T*H*W), f32 points (T*N*2); all little-endian.
inline constexpr uint32_t kClipVersion = 1;
void write_clip(const std::filesystem::path& path, const Clip& clip);
Clip read_clip(const std::filesystem::path& path);

enum class Split { train, val, test };
std::string to_string(Split split);
Split parse_split(const std::string& name);

struct ManifestRecord {
  std::string path;  ///< relative to the dataset root
  int label = 0;
  std::string patient_id;
  Split split = Split::train;
  std::optional<int> ed_index;  ///< required for ingested clips only
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> in_split(Split split) const;
};

/// One JSON object per line: {path, label, patient_id, split[, ed_index]}.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Patient-level split stratified by label. Split sizes are
/// ceil(f * n) for all but the last split, which takes the remainder; each
/// split's size is then shared across labels by largest remainder. Throws
/// ConfigError when fractions do not sum to 1 or a label has fewer patients
/// than there are non-empty splits.
DatasetManifest split_dataset(const DatasetManifest& manifest, const std::vector<double>& fractions, uint64_t seed);

/// Unprocessed clip: intensities on the 8-bit scale, 21-point contours.
struct RawClip {
  uint32_t height = 0;
  uint32_t width = 0;
  std::vector<float> frames;  ///< F*H*W
  std::vector<PointSet> contours;
  double frame_time_ms = 33.33;
  int ed_index = 0;
  uint8_t label = 0;
  std::string patient_id;

  uint32_t num_frames() const { return static_cast<uint32_t>(contours.size()); }
};

struct PreprocessConfig {
  int size = 224;
  double frame_time_ms = 33.33;
  int clip_frames = 18;
  int contour_points = 21;
  /// Ring spacing at 224 px; scaled with `size`.
  double spread_spacing_px = 6.0;
  int spread_rows = 3;

  double spacing() const { return spread_spacing_px * size / 224.0; }
};

/// Bilinear resize of one frame; output pixel (r, c) samples the source at
/// (r * in_h / out_h, c * in_w / out_w), so coordinates scale by out/in.
std::vector<float> resize_frame(const float* src, uint32_t in_h, uint32_t in_w, uint32_t out_h, uint32_t out_w);

/// Linear resampling onto a fixed frame-time grid starting at the ED frame,
/// resize to size x size, x/255 intensities, contour spreading.
/// Throws IngestionError when fewer than `clip_frames` frames result.
Clip preprocess(const RawClip& raw, const PreprocessConfig& cfg = {});

/// Synthetic deforming-myocardium generator.
struct SynthConfig {
  int size = 224;
  int raw_frames = 24;  ///< one cardiac cycle starting at ED
  double signal = 1.0;
  double ca_basal_ratio = 0.4;  ///< basal / apical displacement at signal 1
  double point_noise_px = 0.0;  ///< optional tracking jitter at 224 px
};

/// Per-point displacement weight: 1 at the apex, `basal_ratio` at the base.
double displacement_weight(int index, int contour_points, double basal_ratio);

RawClip synth_raw(const SynthConfig& cfg, int label, uint64_t seed, const std::string& patient_id);
Clip synth_generate(const SynthConfig& cfg, int label, uint64_t seed, const std::string& patient_id,
                    const PreprocessConfig& pre);

/// Ratio of mean basal to mean apical contour displacement between the first
/// frame and the frame of largest apical displacement, from ring 0 points.
double basal_apical_ratio(const Clip& clip, int contour_points = 21);

/// Area under the ROC curve of `scores` for positive labels (ties count
/// half).
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Generates a dataset directory: clips/*.vclp plus manifest.jsonl with a
/// patient-unique split of exactly the requested sizes. Throws ConfigError
/// when `root` is non-empty and `force` is false, or when a size is zero.
DatasetManifest synth_dataset(const std::filesystem::path& root, int n_train, int n_val, int n_test,
                              const SynthConfig& cfg, const PreprocessConfig& pre, uint64_t seed, bool force);

/// Clips of one split, loaded in manifest order.
std::vector<Clip> load_split(const std::filesystem::path& root, Split split);

}  // namespace viact
