#include "ilad/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <limits>

namespace ilad {

const char* to_string(Category c) {
  switch (c) {
    case Category::bottle: return "bottle";
    case Category::mug: return "mug";
    case Category::can: return "can";
    case Category::remote: return "remote";
    case Category::camera: return "camera";
  }
  throw InvalidArgument("bad category");
}

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

Category category_from_string(const std::string& s) {
  if (s == "bottle") return Category::bottle;
  if (s == "mug") return Category::mug;
  if (s == "can") return Category::can;
  if (s == "remote") return Category::remote;
  if (s == "camera") return Category::camera;
  throw InvalidArgument("unknown category: " + s);
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw InvalidArgument("unknown split: " + s);
}

Polygon Polygon::transformed(const Transform2& tf) const {
  Polygon out = *this;
  for (auto& v : out.vertices) v = tf.apply(v);
  return out;
}

static double cross2(const Vec2& a, const Vec2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

double signed_area(const Polygon& poly) {
  const int n = poly.n();
  double twice = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec2& a = poly.vertices[i];
    const Vec2& b = poly.vertices[(i + 1) % n];
    twice += cross2(a, b);
  }
  return 0.5 * twice;
}

double perimeter(const Polygon& poly) {
  const int n = poly.n();
  double p = 0.0;
  for (int i = 0; i < n; ++i)
    p += (poly.vertices[(i + 1) % n] - poly.vertices[i]).norm();
  return p;
}

// Segment touch or crossing, endpoints included.
static bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& p3,
                               const Vec2& p4) {
  const double d1 = cross2(p4 - p3, p1 - p3);
  const double d2 = cross2(p4 - p3, p2 - p3);
  const double d3 = cross2(p2 - p1, p3 - p1);
  const double d4 = cross2(p2 - p1, p4 - p1);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  auto on_segment = [](const Vec2& a, const Vec2& b, const Vec2& q) {
    return q.x() >= std::min(a.x(), b.x()) - 1e-15 &&
           q.x() <= std::max(a.x(), b.x()) + 1e-15 &&
           q.y() >= std::min(a.y(), b.y()) - 1e-15 &&
           q.y() <= std::max(a.y(), b.y()) + 1e-15;
  };
  if (d1 == 0 && on_segment(p3, p4, p1)) return true;
  if (d2 == 0 && on_segment(p3, p4, p2)) return true;
  if (d3 == 0 && on_segment(p1, p2, p3)) return true;
  if (d4 == 0 && on_segment(p1, p2, p4)) return true;
  return false;
}

bool is_simple(const Polygon& poly) {
  const int n = poly.n();
  if (n < 3) return false;
  for (int i = 0; i < n; ++i)
    if ((poly.vertices[(i + 1) % n] - poly.vertices[i]).norm() < 1e-12)
      return false;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(poly.vertices[i], poly.vertices[(i + 1) % n],
                             poly.vertices[j], poly.vertices[(j + 1) % n]))
        return false;
    }
  }
  return true;
}

double bbox_diagonal(const Polygon& poly) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& v : poly.vertices) {
    xmin = std::min(xmin, v.x());
    xmax = std::max(xmax, v.x());
    ymin = std::min(ymin, v.y());
    ymax = std::max(ymax, v.y());
  }
  return std::hypot(xmax - xmin, ymax - ymin);
}

Vec2 area_centroid(const Polygon& poly) {
  const int n = poly.n();
  double twice = 0.0;
  Vec2 acc = Vec2::Zero();
  for (int i = 0; i < n; ++i) {
    const Vec2& a = poly.vertices[i];
    const Vec2& b = poly.vertices[(i + 1) % n];
    const double w = cross2(a, b);
    twice += w;
    acc += w * (a + b);
  }
  if (std::abs(twice) < 1e-15) throw InvalidGeometry("degenerate polygon area");
  return acc / (3.0 * twice);
}

double bounding_radius(const Polygon& poly) {
  const Vec2 c = area_centroid(poly);
  double r = 0.0;
  for (const auto& v : poly.vertices) r = std::max(r, (v - c).norm());
  return r;
}

bool contains(const Polygon& poly, const Vec2& p) {
  const int n = poly.n();
  bool inside = false;
  for (int i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = poly.vertices[i];
    const Vec2& b = poly.vertices[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x =
          a.x() + (p.y() - a.y()) / (b.y() - a.y()) * (b.x() - a.x());
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

Vec2 boundary_centroid(const Polygon& poly) {
  const int n = poly.n();
  double total = 0.0;
  Vec2 acc = Vec2::Zero();
  for (int i = 0; i < n; ++i) {
    const Vec2& a = poly.vertices[i];
    const Vec2& b = poly.vertices[(i + 1) % n];
    const double len = (b - a).norm();
    total += len;
    acc += len * 0.5 * (a + b);
  }
  if (total < 1e-15) throw InvalidGeometry("degenerate polygon perimeter");
  return acc / total;
}

Vec2 boundary_point(const Polygon& poly, double s) {
  const int n = poly.n();
  const double total = perimeter(poly);
  s = std::fmod(s, total);
  if (s < 0) s += total;
  for (int i = 0; i < n; ++i) {
    const Vec2& a = poly.vertices[i];
    const Vec2& b = poly.vertices[(i + 1) % n];
    const double len = (b - a).norm();
    if (s <= len || i == n - 1) return a + (b - a) * (s / len);
    s -= len;
  }
  return poly.vertices[0];
}

Vec2 boundary_normal_at(const Polygon& poly, double s) {
  const int n = poly.n();
  const double total = perimeter(poly);
  s = std::fmod(s, total);
  if (s < 0) s += total;
  for (int i = 0; i < n; ++i) {
    const Vec2& a = poly.vertices[i];
    const Vec2& b = poly.vertices[(i + 1) % n];
    const double len = (b - a).norm();
    if (s <= len || i == n - 1) {
      const Vec2 d = (b - a) / len;
      return {d.y(), -d.x()};
    }
    s -= len;
  }
  throw InvalidState("unreachable");
}

BoundaryHit nearest_boundary_point(const Polygon& poly, const Vec2& p) {
  const int n = poly.n();
  BoundaryHit best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const Vec2& a = poly.vertices[i];
    const Vec2& b = poly.vertices[(i + 1) % n];
    const Vec2 d = b - a;
    const double len2 = d.squaredNorm();
    double t = len2 > 0 ? (p - a).dot(d) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec2 q = a + t * d;
    const double d2 = (p - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best.point = q;
      best.edge = i;
      const double len = std::sqrt(len2);
      best.normal = Vec2(d.y(), -d.x()) / len;
    }
  }
  const double dist = std::sqrt(best_d2);
  const bool inside = contains(poly, p);
  best.signed_dist = inside ? -dist : dist;
  if (dist > 1e-9) {
    best.normal = (p - best.point) / dist * (inside ? -1.0 : 1.0);
  }
  return best;
}

// Boundary integral of (u . (p - c))^3, cubed skew along direction u.
static double boundary_skew(const Polygon& poly, const Vec2& c,
                            const Vec2& u) {
  const int n = poly.n();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec2 a = poly.vertices[i];
    const Vec2 d = poly.vertices[(i + 1) % n] - a;
    const double len = d.norm();
    const double al = u.dot(a - c);
    const double dl = u.dot(d);
    acc += len * (al * al * al + 1.5 * al * al * dl + al * dl * dl +
                  0.25 * dl * dl * dl);
  }
  return acc;
}

Transform2 canonical_transform(const Polygon& poly) {
  const int n = poly.n();
  const Vec2 c = boundary_centroid(poly);
  const double total = perimeter(poly);
  Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
  for (int i = 0; i < n; ++i) {
    const Vec2 a = poly.vertices[i];
    const Vec2 d = poly.vertices[(i + 1) % n] - a;
    const double len = d.norm();
    second += len * (a * a.transpose() +
                     0.5 * (a * d.transpose() + d * a.transpose()) +
                     d * d.transpose() / 3.0);
  }
  const Eigen::Matrix2d m = second - total * (c * c.transpose());
  const double a = m(0, 0), b = m(0, 1), cc = m(1, 1);
  const double half_gap = std::sqrt(0.25 * (a - cc) * (a - cc) + b * b);
  Vec2 axis(1.0, 0.0);
  bool have_axis = false;
  const double scale = std::abs(a) + std::abs(cc) + 1e-30;
  if (half_gap / scale > 1e-12) {
    const double lmax = 0.5 * (a + cc) + half_gap;
    const Vec2 v1(b, lmax - a);
    const Vec2 v2(lmax - cc, b);
    axis = (v1.norm() >= v2.norm() ? v1 : v2).normalized();
    have_axis = true;
  }
  if (have_axis) {
    // The eigenvector sign is arbitrary; resolve it from the shape itself so
    // the frame does not depend on the input pose. A point-symmetric shape
    // has zero skew both ways, and there either sign yields the same set.
    double radius = 0.0;
    for (const auto& v : poly.vertices)
      radius = std::max(radius, (v - c).norm());
    const double unit = total * radius * radius * radius + 1e-30;
    const double skew_x = boundary_skew(poly, c, axis) / unit;
    const double skew_y =
        boundary_skew(poly, c, Vec2(-axis.y(), axis.x())) / unit;
    const double tol = 1e-9;
    if (skew_x < -tol)
      axis = -axis;
    else if (std::abs(skew_x) <= tol && skew_y < -tol)
      axis = -axis;
    else if (std::abs(skew_x) <= tol && std::abs(skew_y) <= tol &&
             (axis.x() < -1e-12 ||
              (std::abs(axis.x()) <= 1e-12 && axis.y() < 0)))
      axis = -axis;
  }
  Transform2 tf;
  tf.theta = -std::atan2(axis.y(), axis.x());
  tf.t = -tf.rotate(c);
  return tf;
}

void validate_polygon(const Polygon& poly) {
  if (poly.n() < 6) throw InvalidGeometry("polygon has fewer than 6 vertices");
  if (!is_simple(poly)) throw InvalidGeometry("polygon is not simple");
  if (signed_area(poly) <= 0)
    throw InvalidGeometry("polygon is not counterclockwise");
  const double diag = bbox_diagonal(poly);
  if (diag < kMinBboxDiagonal || diag > kMaxBboxDiagonal)
    throw InvalidGeometry("bounding box diagonal outside [0.15, 0.6]");
}

}  // namespace ilad
