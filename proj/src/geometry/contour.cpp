#include <algorithm>
#include <cmath>
#include <string>

#include "viact/geometry.hpp"

namespace viact {

void PointSequence::validate() const {
  if (frames.empty()) throw GeometryError("point sequence has no frames");
  const size_t n = frames.front().size();
  if (n == 0) throw GeometryError("point sets must contain at least one point");
  for (size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].size() != n) {
      throw GeometryError("frame " + std::to_string(t) + " has " + std::to_string(frames[t].size()) +
                          " points, expected " + std::to_string(n));
    }
    for (const auto& p : frames[t].points) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        throw GeometryError("non-finite point in frame " + std::to_string(t));
      }
    }
  }
}

std::vector<Point> contour_normals(const PointSet& contour) {
  const size_t n = contour.size();
  if (n < 3) throw GeometryError("contour needs at least 3 points, got " + std::to_string(n));
  for (size_t i = 0; i + 1 < n; ++i) {
    if (contour[i] == contour[i + 1]) {
      throw GeometryError("degenerate contour: points " + std::to_string(i) + " and " + std::to_string(i + 1) +
                          " coincide");
    }
  }
  Point centroid;
  for (const auto& p : contour.points) {
    centroid.x += p.x;
    centroid.y += p.y;
  }
  centroid.x /= static_cast<double>(n);
  centroid.y /= static_cast<double>(n);

  std::vector<Point> normals(n);
  double orientation = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Point& a = contour[i == 0 ? 0 : i - 1];
    const Point& b = contour[i + 1 == n ? n - 1 : i + 1];
    const double tx = b.x - a.x;
    const double ty = b.y - a.y;
    const double len = std::hypot(tx, ty);
    if (len == 0.0) throw GeometryError("degenerate contour: zero tangent at index " + std::to_string(i));
    normals[i] = {ty / len, -tx / len};
    orientation += normals[i].x * (contour[i].x - centroid.x) + normals[i].y * (contour[i].y - centroid.y);
  }
  if (orientation < 0.0) {
    for (auto& nrm : normals) nrm = {-nrm.x, -nrm.y};
  }
  return normals;
}

PointSet spread_contour(const PointSet& contour, FrameExtent extent, double spacing_px, int rows) {
  if (!(spacing_px > 0.0)) throw GeometryError("spacing must be positive");
  if (rows < 0) throw GeometryError("rows must be non-negative");
  if (extent.height < 1 || extent.width < 1) throw GeometryError("frame extent must be positive");
  const auto normals = contour_normals(contour);
  auto clamp = [&](Point p) {
    return Point{std::clamp(p.x, 0.0, static_cast<double>(extent.width - 1)),
                 std::clamp(p.y, 0.0, static_cast<double>(extent.height - 1))};
  };
  PointSet out;
  out.points.reserve(contour.size() * static_cast<size_t>(rows + 1));
  for (int r = 0; r <= rows; ++r) {
    const double d = spacing_px * r;
    for (size_t i = 0; i < contour.size(); ++i) {
      out.points.push_back(clamp({contour[i].x + normals[i].x * d, contour[i].y + normals[i].y * d}));
    }
  }
  return out;
}

std::vector<Point> make_sampling_grid(Point center, int j) {
  if (j < 1) throw GeometryError("patch size must be >= 1");
  const double half = (j - 1) / 2.0;
  std::vector<Point> grid;
  grid.reserve(static_cast<size_t>(j) * static_cast<size_t>(j));
  for (int v = 0; v < j; ++v)
    for (int u = 0; u < j; ++u) grid.push_back({center.x + u - half, center.y + v - half});
  return grid;
}

Tensor points_tensor(const PointSet& set) {
  std::vector<double> v;
  v.reserve(set.size() * 2);
  for (const auto& p : set.points) {
    v.push_back(p.x);
    v.push_back(p.y);
  }
  return Tensor::from(std::span<const double>(v), {static_cast<int64_t>(set.size()), 2});
}

Tensor points_tensor(std::span<const PointSet> sets) {
  if (sets.empty()) throw GeometryError("no point sets");
  const size_t n = sets.front().size();
  std::vector<double> v;
  v.reserve(sets.size() * n * 2);
  for (const auto& s : sets) {
    if (s.size() != n) throw GeometryError("point sets differ in size");
    for (const auto& p : s.points) {
      v.push_back(p.x);
      v.push_back(p.y);
    }
  }
  return Tensor::from(std::span<const double>(v), {static_cast<int64_t>(sets.size()), static_cast<int64_t>(n), 2});
}

}  // namespace viact
