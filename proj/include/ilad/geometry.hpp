#pragma once

#include <vector>

#include "ilad/common.hpp"

namespace ilad {

// Planar rigid transform x -> R(theta) x + t.
struct Transform2 {
  double theta = 0.0;
  Vec2 t = Vec2::Zero();

  Vec2 apply(const Vec2& p) const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * p.x() - s * p.y() + t.x(), s * p.x() + c * p.y() + t.y()};
  }
  Vec2 rotate(const Vec2& p) const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * p.x() - s * p.y(), s * p.x() + c * p.y()};
  }
  Transform2 inverse() const {
    Transform2 inv;
    inv.theta = -theta;
    inv.t = -inv.rotate(t);
    return inv;
  }
  // this ∘ other (apply other first).
  Transform2 compose(const Transform2& other) const {
    Transform2 out;
    out.theta = theta + other.theta;
    out.t = apply(other.t);
    return out;
  }
};

enum class Category { bottle, mug, can, remote, camera };
enum class Split { train, test };

const char* to_string(Category c);
const char* to_string(Split s);
Category category_from_string(const std::string& s);
Split split_from_string(const std::string& s);
inline constexpr int kNumCategories = 5;

// Simple CCW polygon in its body frame; doubles as the boundary geometry of
// one object instance.
struct Polygon {
  std::vector<Vec2> vertices;
  Category category = Category::bottle;
  int instance_id = 0;
  Split split = Split::train;

  int n() const { return static_cast<int>(vertices.size()); }
  Polygon transformed(const Transform2& tf) const;
};

double signed_area(const Polygon& poly);
double perimeter(const Polygon& poly);
bool is_simple(const Polygon& poly);
double bbox_diagonal(const Polygon& poly);
Vec2 area_centroid(const Polygon& poly);
// Max vertex distance from the area centroid; scales orientation differences
// into length units.
double bounding_radius(const Polygon& poly);
bool contains(const Polygon& poly, const Vec2& p);

// First moment of the uniform boundary measure.
Vec2 boundary_centroid(const Polygon& poly);

// Point at arc length s (wrapped to [0, perimeter)) walking CCW from vertex 0.
Vec2 boundary_point(const Polygon& poly, double s);
// Outward unit normal of the edge containing arc length s.
Vec2 boundary_normal_at(const Polygon& poly, double s);

struct BoundaryHit {
  Vec2 point;         // nearest boundary point
  Vec2 normal;        // outward edge normal at the hit
  double signed_dist; // negative inside
  int edge = 0;
};

BoundaryHit nearest_boundary_point(const Polygon& poly, const Vec2& p);

// Canonical (pose-free) frame: boundary centroid at the origin, boundary
// principal axis along +x with a deterministic sign rule.
Transform2 canonical_transform(const Polygon& poly);

// Throws InvalidGeometry unless the polygon is a valid object instance:
// >= 6 vertices, simple, CCW, bbox diagonal in [0.15, 0.6].
void validate_polygon(const Polygon& poly);

inline constexpr double kMinBboxDiagonal = 0.15;
inline constexpr double kMaxBboxDiagonal = 0.6;

}  // namespace ilad
