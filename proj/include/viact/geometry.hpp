#pragma once

#include <span>
#include <vector>

#include "viact/tensor.hpp"

namespace viact {

/// Pixel-space coordinate: x is the column, y the row, pixel centers at
/// integers.
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct FrameExtent {
  int height = 0;
  int width = 0;
};

/// Points covering the myocardium in one frame. No ordering is assumed
/// downstream.
struct PointSet {
  std::vector<Point> points;

  size_t size() const { return points.size(); }
  const Point& operator[](size_t i) const { return points[i]; }
};

/// Per-frame point sets with a shared point count.
struct PointSequence {
  std::vector<PointSet> frames;
  double frame_time_ms = 0.0;

  size_t num_frames() const { return frames.size(); }
  size_t num_points() const { return frames.empty() ? 0 : frames.front().size(); }
  /// Throws GeometryError unless every frame has the same nonzero count of
  /// finite points.
  void validate() const;
};

/// j x j intensities sampled around one point, row-major.
struct Patch {
  int size = 0;
  std::vector<double> values;
};

/// Offsets the contour along per-point outward normals to cover the wall.
///
/// Output is the clamped contour followed by `rows` rings, ring r displaced
/// by `spacing_px * r`. Tangents are central differences (one-sided at the
/// ends); the normal is the tangent rotated to (t.y, -t.x), flipped for the
/// whole contour when it points toward the centroid on aggregate.
PointSet spread_contour(const PointSet& contour, FrameExtent extent, double spacing_px = 6.0, int rows = 3);

/// Per-point unit outward normals used by `spread_contour`.
std::vector<Point> contour_normals(const PointSet& contour);

/// j x j grid centered on `center`; entry v * j + u is
/// center + (u - (j-1)/2, v - (j-1)/2).
std::vector<Point> make_sampling_grid(Point center, int j);

/// Bilinear interpolation with border clamping. `frames` is [H, W] with
/// coords [..., 2], or [F, H, W] with coords [F, ..., 2]; result drops the
/// trailing coordinate axis. Differentiable in both frames and coords.
Tensor bilinear_sample(const Tensor& frames, const Tensor& coords);

/// Patches around points: frames [F, H, W] with points [F, N, 2] gives
/// [F, N, j*j] (or [H, W] with [N, 2] gives [N, j*j]). Equivalent to
/// `bilinear_sample` on `make_sampling_grid` coordinates.
Tensor sample_patches(const Tensor& frames, const Tensor& points, int j);

/// Non-differentiable single-patch convenience over a [H, W] frame.
Patch extract_patch(const Tensor& frame, Point center, int j);

/// [N, 2] tensor of (x, y) rows.
Tensor points_tensor(const PointSet& set);
/// [F, N, 2] tensor; all sets must share N.
Tensor points_tensor(std::span<const PointSet> sets);

}  // namespace viact
