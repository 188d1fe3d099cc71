// Copyright 2026 The bevintent Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Planar geometry shared by the whole pipeline: oriented boxes, convex
// clipping, cell-center rasterization and rigid transforms.

#ifndef BEVINTENT_GEOM_HPP_
#define BEVINTENT_GEOM_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace bevintent::geom
{

struct Vec2
{
  double x{0.0};
  double y{0.0};

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(const Vec2 &, const Vec2 &) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

struct Point3
{
  double x{0.0};
  double y{0.0};
  double z{0.0};
  friend bool operator==(const Point3 &, const Point3 &) = default;
};

/// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

/// BEV pose and footprint of a vehicle. `w` runs along the heading, `h`
/// across it; `phi` is counter-clockwise from +x.
struct OrientedBox2D
{
  double cx{0.0};
  double cy{0.0};
  double w{1.0};
  double h{1.0};
  double phi{0.0};

  Vec2 center() const { return {cx, cy}; }
  double area() const { return w * h; }
  bool valid() const;
  /// Corners in counter-clockwise order.
  std::array<Vec2, 4> corners() const;
  OrientedBox2D normalized() const;

  friend bool operator==(const OrientedBox2D &, const OrientedBox2D &) = default;
};

struct Polygon
{
  std::vector<Vec2> vertices;
  friend bool operator==(const Polygon &, const Polygon &) = default;
};

struct Polyline
{
  std::vector<Vec2> vertices;
  double width{0.2};
  friend bool operator==(const Polyline &, const Polyline &) = default;
};

/// Signed shoelace area; positive for counter-clockwise rings.
double signed_area(std::span<const Vec2> ring);

/// Returns a copy wound counter-clockwise.
Polygon normalized(Polygon poly);

/// At least three vertices, non-zero area and no crossing edges.
bool is_simple(const Polygon & poly);

/// Closed point-in-polygon test: points on an edge count as inside.
bool contains(const Polygon & poly, Vec2 p);

/// Whether the interiors or boundaries of two simple polygons meet.
bool polygons_intersect(const Polygon & a, const Polygon & b);

double distance_to_segment(Vec2 p, Vec2 a, Vec2 b);

/// Sutherland-Hodgman clip of `subject` against the convex CCW `clip`.
std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip);

/// Exact rotated intersection-over-union of two boxes.
double rotated_iou(const OrientedBox2D & a, const OrientedBox2D & b);

struct CellIndex
{
  int row{0};
  int col{0};
  friend auto operator<=>(const CellIndex &, const CellIndex &) = default;
};

/// Regular BEV grid. Rows advance along +x, columns along +y; `origin` is the
/// outer corner of cell (0, 0).
struct GridSpec
{
  Vec2 origin{};
  double resolution{0.2};
  int rows{1};
  int cols{1};

  bool valid() const { return resolution > 0.0 && rows > 0 && cols > 0; }
  Vec2 cell_center(int row, int col) const
  {
    return {origin.x + (row + 0.5) * resolution, origin.y + (col + 0.5) * resolution};
  }
  double x_max() const { return origin.x + rows * resolution; }
  double y_max() const { return origin.y + cols * resolution; }
};

/// Calls `fn(row, col)` for every cell whose center lies inside (or on) the
/// polygon, in row-major order without repeats.
template <typename Fn>
void for_each_polygon_cell(const Polygon & poly, const GridSpec & grid, Fn && fn);

/// Calls `fn(row, col)` for every cell whose center is within width/2 of the
/// polyline. Cells may repeat across segments.
template <typename Fn>
void for_each_polyline_cell(const Polyline & line, const GridSpec & grid, Fn && fn);

std::vector<CellIndex> rasterize_polygon(const Polygon & poly, const GridSpec & grid);
std::vector<CellIndex> rasterize_polyline(const Polyline & line, const GridSpec & grid);

/// SE(3) pose: rotation Rz(yaw) * Ry(pitch) * Rx(roll), then translation.
struct RigidPose
{
  double tx{0.0};
  double ty{0.0};
  double tz{0.0};
  double yaw{0.0};
  double pitch{0.0};
  double roll{0.0};

  friend bool operator==(const RigidPose &, const RigidPose &) = default;
};

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation_matrix(const RigidPose & pose);
RigidPose compose(const RigidPose & a, const RigidPose & b);
RigidPose inverse(const RigidPose & pose);

/// Re-expresses points given in the `from` frame in the `to` frame.
std::vector<Point3> transform_points(
  std::span<const Point3> points, const RigidPose & from, const RigidPose & to);

/// Planar counterpart of `transform_points` for BEV boxes (yaw only).
OrientedBox2D transform_box(const OrientedBox2D & box, const RigidPose & from, const RigidPose & to);
Vec2 transform_point2(Vec2 p, const RigidPose & from, const RigidPose & to);

// ---------------------------------------------------------------------------

namespace detail
{
inline int clamp_floor(double v, int lo, int hi)
{
  const double f = std::floor(v);
  if (f < lo) return lo;
  if (f > hi) return hi;
  return static_cast<int>(f);
}
}  // namespace detail

template <typename Fn>
void for_each_polygon_cell(const Polygon & poly, const GridSpec & grid, Fn && fn)
{
  const auto & v = poly.vertices;
  const std::size_t n = v.size();
  if (n < 3 || !grid.valid()) return;

  double xmin = v[0].x, xmax = v[0].x;
  for (const auto & p : v) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
  }
  const double res = grid.resolution;
  // Rows whose center x may lie within [xmin, xmax]; one row of slack on
  // each side absorbs rounding, the scan itself is exact.
  const int r0 = std::max(0, static_cast<int>(std::ceil((xmin - grid.origin.x) / res - 0.5)) - 1);
  const int r1 =
    std::min(grid.rows - 1, static_cast<int>(std::floor((xmax - grid.origin.x) / res - 0.5)) + 1);

  std::vector<double> crossings;
  std::vector<std::pair<double, double>> spans;
  for (int r = r0; r <= r1; ++r) {
    const double xc = grid.origin.x + (r + 0.5) * res;
    crossings.clear();
    spans.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 a = v[i];
      const Vec2 b = v[(i + 1) % n];
      if ((a.x <= xc && xc < b.x) || (b.x <= xc && xc < a.x)) {
        crossings.push_back(a.y + (xc - a.x) * (b.y - a.y) / (b.x - a.x));
      }
      // Boundary pieces that lie on the scan line are inside by convention.
      if (a.x == xc && b.x == xc) {
        spans.emplace_back(std::min(a.y, b.y), std::max(a.y, b.y));
      } else if (a.x == xc) {
        spans.emplace_back(a.y, a.y);
      }
    }
    std::sort(crossings.begin(), crossings.end());
    for (std::size_t i = 0; i + 1 < crossings.size(); i += 2) {
      spans.emplace_back(crossings[i], crossings[i + 1]);
    }
    if (spans.empty()) continue;
    std::sort(spans.begin(), spans.end());

    int last_col = -1;
    for (const auto & [ylo, yhi] : spans) {
      const auto center_y = [&](int c) { return grid.origin.y + (c + 0.5) * res; };
      int c0 = static_cast<int>(std::ceil((ylo - grid.origin.y) / res - 0.5));
      int c1 = static_cast<int>(std::floor((yhi - grid.origin.y) / res - 0.5));
      c0 = std::clamp(c0, -1, grid.cols);
      c1 = std::clamp(c1, -1, grid.cols);
      while (c0 > 0 && center_y(c0 - 1) >= ylo) --c0;
      while (c0 < grid.cols && center_y(c0) < ylo) ++c0;
      while (c1 < grid.cols - 1 && center_y(c1 + 1) <= yhi) ++c1;
      while (c1 >= 0 && center_y(c1) > yhi) --c1;
      c0 = std::max({c0, 0, last_col + 1});
      c1 = std::min(c1, grid.cols - 1);
      for (int c = c0; c <= c1; ++c) fn(r, c);
      last_col = std::max(last_col, c1);
    }
  }
}

template <typename Fn>
void for_each_polyline_cell(const Polyline & line, const GridSpec & grid, Fn && fn)
{
  if (line.vertices.empty() || !grid.valid()) return;
  const double half = 0.5 * line.width;
  const double res = grid.resolution;

  // Collapse duplicate consecutive vertices.
  std::vector<Vec2> pts;
  pts.reserve(line.vertices.size());
  for (const auto & p : line.vertices) {
    if (pts.empty() || !(pts.back() == p)) pts.push_back(p);
  }
  const std::size_t segs = pts.size() == 1 ? 1 : pts.size() - 1;
  for (std::size_t s = 0; s < segs; ++s) {
    const Vec2 a = pts[s];
    const Vec2 b = pts.size() == 1 ? pts[0] : pts[s + 1];
    const int r0 = detail::clamp_floor((std::min(a.x, b.x) - half - grid.origin.x) / res - 0.5, 0, grid.rows - 1);
    const int r1 = detail::clamp_floor((std::max(a.x, b.x) + half - grid.origin.x) / res + 0.5, 0, grid.rows - 1);
    const int c0 = detail::clamp_floor((std::min(a.y, b.y) - half - grid.origin.y) / res - 0.5, 0, grid.cols - 1);
    const int c1 = detail::clamp_floor((std::max(a.y, b.y) + half - grid.origin.y) / res + 0.5, 0, grid.cols - 1);
    if (std::max(a.x, b.x) + half < grid.origin.x || std::min(a.x, b.x) - half > grid.x_max()) continue;
    if (std::max(a.y, b.y) + half < grid.origin.y || std::min(a.y, b.y) - half > grid.y_max()) continue;
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (distance_to_segment(grid.cell_center(r, c), a, b) <= half) fn(r, c);
      }
    }
  }
}

}  // namespace bevintent::geom

#endif  // BEVINTENT_GEOM_HPP_
