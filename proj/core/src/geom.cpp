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

#include "bevintent/geom.hpp"

#include <Eigen/Geometry>

namespace bevintent::geom
{

namespace
{

constexpr double kPi = std::numbers::pi;

Eigen::Isometry3d to_isometry(const RigidPose & p)
{
  Eigen::Isometry3d iso = Eigen::Isometry3d::Identity();
  iso.linear() = (Eigen::AngleAxisd(p.yaw, Eigen::Vector3d::UnitZ()) *
                  Eigen::AngleAxisd(p.pitch, Eigen::Vector3d::UnitY()) *
                  Eigen::AngleAxisd(p.roll, Eigen::Vector3d::UnitX()))
                   .toRotationMatrix();
  iso.translation() = Eigen::Vector3d(p.tx, p.ty, p.tz);
  return iso;
}

RigidPose from_isometry(const Eigen::Isometry3d & iso)
{
  const Eigen::Matrix3d r = iso.linear();
  RigidPose p;
  p.tx = iso.translation().x();
  p.ty = iso.translation().y();
  p.tz = iso.translation().z();
  // ZYX Euler extraction.
  p.pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  p.yaw = std::atan2(r(1, 0), r(0, 0));
  p.roll = std::atan2(r(2, 1), r(2, 2));
  p.yaw = normalize_angle(p.yaw);
  p.roll = normalize_angle(p.roll);
  return p;
}

bool on_segment(Vec2 p, Vec2 a, Vec2 b)
{
  const Vec2 ab = b - a;
  const Vec2 ap = p - a;
  const double scale = std::max({std::abs(ab.x), std::abs(ab.y), 1.0});
  if (std::abs(cross(ab, ap)) > 1e-12 * scale * scale) return false;
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

int orientation(Vec2 a, Vec2 b, Vec2 c)
{
  const double v = cross(b - a, c - a);
  return (v > 0.0) - (v < 0.0);
}

bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2)
{
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(q1, p1, p2)) return true;
  if (o2 == 0 && on_segment(q2, p1, p2)) return true;
  if (o3 == 0 && on_segment(p1, q1, q2)) return true;
  if (o4 == 0 && on_segment(p2, q1, q2)) return true;
  return false;
}

}  // namespace

double normalize_angle(double a)
{
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

bool OrientedBox2D::valid() const
{
  return w > 0.0 && h > 0.0 && std::isfinite(cx) && std::isfinite(cy) && std::isfinite(phi);
}

std::array<Vec2, 4> OrientedBox2D::corners() const
{
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  const Vec2 ax{0.5 * w * c, 0.5 * w * s};
  const Vec2 ay{-0.5 * h * s, 0.5 * h * c};
  const Vec2 o{cx, cy};
  return {o - ax - ay, o + ax - ay, o + ax + ay, o - ax + ay};
}

OrientedBox2D OrientedBox2D::normalized() const
{
  OrientedBox2D b = *this;
  b.phi = normalize_angle(phi);
  return b;
}

double signed_area(std::span<const Vec2> ring)
{
  double acc = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) acc += cross(ring[i], ring[(i + 1) % n]);
  return 0.5 * acc;
}

Polygon normalized(Polygon poly)
{
  if (signed_area(poly.vertices) < 0.0) std::reverse(poly.vertices.begin(), poly.vertices.end());
  return poly;
}

bool is_simple(const Polygon & poly)
{
  const auto & v = poly.vertices;
  const std::size_t n = v.size();
  if (n < 3 || signed_area(v) == 0.0) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n])) return false;
    }
  }
  return true;
}

bool contains(const Polygon & poly, Vec2 p)
{
  const auto & v = poly.vertices;
  const std::size_t n = v.size();
  if (n < 3) return false;
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if (on_segment(p, v[j], v[i])) return true;
    if ((v[i].y > p.y) != (v[j].y > p.y)) {
      const double xi = v[j].x + (p.y - v[j].y) * (v[i].x - v[j].x) / (v[i].y - v[j].y);
      if (p.x < xi) inside = !inside;
    }
  }
  return inside;
}

bool polygons_intersect(const Polygon & a, const Polygon & b)
{
  const auto & va = a.vertices;
  const auto & vb = b.vertices;
  if (va.size() < 3 || vb.size() < 3) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    for (std::size_t j = 0; j < vb.size(); ++j) {
      if (segments_intersect(va[i], va[(i + 1) % va.size()], vb[j], vb[(j + 1) % vb.size()])) {
        return true;
      }
    }
  }
  return contains(a, vb[0]) || contains(b, va[0]);
}

double distance_to_segment(Vec2 p, Vec2 a, Vec2 b)
{
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return norm(p - a);
  const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
  return norm(p - (a + t * ab));
}

std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip)
{
  std::vector<Vec2> out(subject.begin(), subject.end());
  std::vector<Vec2> in;
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !out.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 b = clip[(e + 1) % m];
    const Vec2 edge = b - a;
    in.swap(out);
    out.clear();
    const std::size_t n = in.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 p = in[i];
      const Vec2 q = in[(i + 1) % n];
      const double sp = cross(edge, p - a);
      const double sq = cross(edge, q - a);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return out;
}

double rotated_iou(const OrientedBox2D & a, const OrientedBox2D & b)
{
  const double area_a = a.area();
  const double area_b = b.area();
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  // Cheap rejection on circumscribed circles.
  const double ra = 0.5 * std::hypot(a.w, a.h);
  const double rb = 0.5 * std::hypot(b.w, b.h);
  const double dx = a.cx - b.cx;
  const double dy = a.cy - b.cy;
  if (dx * dx + dy * dy >= (ra + rb) * (ra + rb)) return 0.0;

  // Clip in a canonical order so that iou(a, b) == iou(b, a) bit for bit.
  const auto key = [](const OrientedBox2D & x) {
    return std::array{x.cx, x.cy, x.w, x.h, x.phi};
  };
  const bool swap = key(b) < key(a);
  const auto ca = (swap ? b : a).corners();
  const auto cb = (swap ? a : b).corners();
  const auto poly = clip_convex(ca, cb);
  const double inter = poly.size() < 3 ? 0.0 : std::abs(signed_area(poly));
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<CellIndex> rasterize_polygon(const Polygon & poly, const GridSpec & grid)
{
  std::vector<CellIndex> cells;
  for_each_polygon_cell(poly, grid, [&](int r, int c) { cells.push_back({r, c}); });
  return cells;
}

std::vector<CellIndex> rasterize_polyline(const Polyline & line, const GridSpec & grid)
{
  std::vector<CellIndex> cells;
  for_each_polyline_cell(line, grid, [&](int r, int c) { cells.push_back({r, c}); });
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

Mat3 rotation_matrix(const RigidPose & pose)
{
  const Eigen::Matrix3d r = to_isometry(pose).linear();
  Mat3 m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = r(i, j);
  }
  return m;
}

RigidPose compose(const RigidPose & a, const RigidPose & b)
{
  return from_isometry(to_isometry(a) * to_isometry(b));
}

RigidPose inverse(const RigidPose & pose) { return from_isometry(to_isometry(pose).inverse()); }

std::vector<Point3> transform_points(
  std::span<const Point3> points, const RigidPose & from, const RigidPose & to)
{
  const Eigen::Isometry3d rel = to_isometry(to).inverse() * to_isometry(from);
  std::vector<Point3> out;
  out.reserve(points.size());
  for (const auto & p : points) {
    const Eigen::Vector3d q = rel * Eigen::Vector3d(p.x, p.y, p.z);
    out.push_back({q.x(), q.y(), q.z()});
  }
  return out;
}

Vec2 transform_point2(Vec2 p, const RigidPose & from, const RigidPose & to)
{
  // Planar: world = R(from.yaw) p + t_from, local = R(-to.yaw)(world - t_to).
  const double cf = std::cos(from.yaw), sf = std::sin(from.yaw);
  const double wx = cf * p.x - sf * p.y + from.tx;
  const double wy = sf * p.x + cf * p.y + from.ty;
  const double ct = std::cos(to.yaw), st = std::sin(to.yaw);
  const double dx = wx - to.tx, dy = wy - to.ty;
  return {ct * dx + st * dy, -st * dx + ct * dy};
}

OrientedBox2D transform_box(const OrientedBox2D & box, const RigidPose & from, const RigidPose & to)
{
  const Vec2 c = transform_point2(box.center(), from, to);
  return {c.x, c.y, box.w, box.h, normalize_angle(box.phi + from.yaw - to.yaw)};
}

}  // namespace bevintent::geom
