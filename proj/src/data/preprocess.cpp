#include <algorithm>
#include <cmath>

#include "viact/data.hpp"

namespace viact {

std::vector<float> resize_frame(const float* src, uint32_t in_h, uint32_t in_w, uint32_t out_h, uint32_t out_w) {
  std::vector<float> out(static_cast<size_t>(out_h) * out_w);
  const double sy = static_cast<double>(in_h) / out_h, sx = static_cast<double>(in_w) / out_w;
  const int64_t h = in_h, w = in_w;
  for (uint32_t r = 0; r < out_h; ++r) {
    const double y = std::clamp(r * sy, 0.0, static_cast<double>(h - 1));
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(y), h - 1), y1 = std::min<int64_t>(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (uint32_t c = 0; c < out_w; ++c) {
      const double x = std::clamp(c * sx, 0.0, static_cast<double>(w - 1));
      const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(x), w - 1), x1 = std::min<int64_t>(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
      const double bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
      out[static_cast<size_t>(r) * out_w + c] = static_cast<float>(top * (1.0 - fy) + bot * fy);
    }
  }
  return out;
}

Clip preprocess(const RawClip& raw, const PreprocessConfig& cfg) {
  const uint32_t nf = raw.num_frames();
  const size_t plane = static_cast<size_t>(raw.height) * raw.width;
  if (nf == 0 || raw.frames.size() != nf * plane) throw IngestionError("raw clip " + raw.patient_id + ": size mismatch");
  if (!(raw.frame_time_ms > 0.0)) throw IngestionError("raw clip " + raw.patient_id + ": frame time must be positive");
  if (raw.ed_index < 0 || static_cast<uint32_t>(raw.ed_index) >= nf) {
    throw IngestionError("raw clip " + raw.patient_id + ": end-diastole index out of range");
  }
  for (const auto& c : raw.contours) {
    if (static_cast<int>(c.size()) != cfg.contour_points) {
      throw IngestionError("raw clip " + raw.patient_id + ": expected " + std::to_string(cfg.contour_points) +
                           " contour points per frame, got " + std::to_string(c.size()));
    }
  }

  // Sample positions on the raw frame index axis.
  const bool same_rate = std::abs(raw.frame_time_ms - cfg.frame_time_ms) < 1e-9;
  const double span = static_cast<double>(nf - 1 - raw.ed_index) * raw.frame_time_ms;
  const int available = static_cast<int>(std::floor(span / cfg.frame_time_ms + 1e-9)) + 1;
  if (available < cfg.clip_frames) {
    throw IngestionError("raw clip " + raw.patient_id + ": only " + std::to_string(available) + " frames at " +
                         std::to_string(cfg.frame_time_ms) + " ms from end diastole, need " +
                         std::to_string(cfg.clip_frames));
  }

  Clip clip;
  clip.height = clip.width = static_cast<uint32_t>(cfg.size);
  clip.num_frames = static_cast<uint32_t>(cfg.clip_frames);
  clip.frame_time_ms = static_cast<float>(cfg.frame_time_ms);
  clip.label = raw.label;
  clip.patient_id = raw.patient_id;
  clip.frames.reserve(static_cast<size_t>(cfg.clip_frames) * cfg.size * cfg.size);
  const double scale_x = static_cast<double>(cfg.size) / raw.width, scale_y = static_cast<double>(cfg.size) / raw.height;

  PointSequence seq;
  seq.frame_time_ms = cfg.frame_time_ms;
  std::vector<float> blended(plane);
  for (int k = 0; k < cfg.clip_frames; ++k) {
    size_t i0 = static_cast<size_t>(raw.ed_index + k);
    double w = 0.0;
    if (!same_rate) {
      const double u = raw.ed_index + k * cfg.frame_time_ms / raw.frame_time_ms;
      i0 = static_cast<size_t>(std::floor(u + 1e-9));
      w = std::max(0.0, u - static_cast<double>(i0));
      if (w < 1e-9) w = 0.0;
    }
    const size_t i1 = std::min<size_t>(i0 + 1, nf - 1);
    const float* a = raw.frames.data() + i0 * plane;
    const float* b = raw.frames.data() + i1 * plane;
    for (size_t p = 0; p < plane; ++p) {
      blended[p] = w == 0.0 ? a[p] : static_cast<float>((1.0 - w) * a[p] + w * b[p]);
    }
    auto resized = (raw.height == clip.height && raw.width == clip.width)
                       ? blended
                       : resize_frame(blended.data(), raw.height, raw.width, clip.height, clip.width);
    for (float v : resized) clip.frames.push_back(v / 255.0f);

    PointSet contour;
    for (int i = 0; i < cfg.contour_points; ++i) {
      const Point& pa = raw.contours[i0][static_cast<size_t>(i)];
      const Point& pb = raw.contours[i1][static_cast<size_t>(i)];
      const double x = (1.0 - w) * pa.x + w * pb.x, y = (1.0 - w) * pa.y + w * pb.y;
      contour.points.push_back({x * scale_x, y * scale_y});
    }
    seq.frames.push_back(spread_contour(contour, {cfg.size, cfg.size}, cfg.spacing(), cfg.spread_rows));
  }
  clip.set_points(seq);
  clip.validate();
  return clip;
}

}  // namespace viact
