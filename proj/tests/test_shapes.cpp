#include <doctest.h>

#include <algorithm>
#include <set>

#include "ilad/shapes.hpp"

using namespace ilad;

namespace {

Polygon unit_square() {
  Polygon p;
  p.vertices = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  return p;
}

// Midpoint-rule average over a dense uniform arc-length grid.
Vec2 dense_boundary_centroid(const Polygon& poly, int n = 200000) {
  const double total = perimeter(poly);
  Vec2 acc = Vec2::Zero();
  for (int i = 0; i < n; ++i)
    acc += boundary_point(poly, (i + 0.5) * total / n);
  return acc / n;
}

std::vector<Polygon> sample_objects() {
  std::vector<Polygon> all;
  for (int c = 0; c < kNumCategories; ++c) {
    auto v = generate_category_instances(static_cast<Category>(c), 4, 99);
    all.insert(all.end(), v.begin(), v.end());
  }
  return all;
}

}  // namespace

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  CHECK(wrap_angle(0.0) == doctest::Approx(0.0));
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(2 * kPi + 0.25) == doctest::Approx(0.25));
  CHECK(wrap_angle(-7.5 * kPi) == doctest::Approx(0.5 * kPi));
}

TEST_CASE("rng determinism and distribution sanity") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 1000; ++i) {
    const uint64_t x = a.next_u64();
    all_equal &= (x == b.next_u64());
    any_diff |= (x != c.next_u64());
  }
  CHECK(all_equal);
  CHECK(any_diff);

  Rng r(7);
  double mean = 0, var = 0;
  const int n = 100000;
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = r.normal();
    mean += xs[i];
  }
  mean /= n;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= n;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);

  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const int k = r.uniform_int(7);
    CHECK(k >= 0);
    CHECK(k < 7);
  }
}

TEST_CASE("fmt_double round-trips") {
  for (double v : {0.0, 1.0, -1.5, 0.1, 3.141592653589793, 1e-17, -2.5e300}) {
    CHECK(std::stod(fmt_double(v)) == v);
  }
}

TEST_CASE("signed area and orientation") {
  Polygon sq = unit_square();
  CHECK(signed_area(sq) == doctest::Approx(1.0));
  std::reverse(sq.vertices.begin(), sq.vertices.end());
  CHECK(signed_area(sq) == doctest::Approx(-1.0));
}

TEST_CASE("simplicity check rejects self-intersection") {
  Polygon bowtie;
  bowtie.vertices = {{0, 0}, {1, 1}, {1, 0}, {0, 1}};
  CHECK_FALSE(is_simple(bowtie));
  CHECK(is_simple(unit_square()));
}

TEST_CASE("containment and nearest boundary point on a square") {
  const Polygon sq = unit_square();
  CHECK(contains(sq, {0.5, 0.5}));
  CHECK_FALSE(contains(sq, {1.5, 0.5}));

  auto outside = nearest_boundary_point(sq, {0.5, -0.3});
  CHECK(outside.signed_dist == doctest::Approx(0.3));
  CHECK(outside.point.x() == doctest::Approx(0.5));
  CHECK(outside.point.y() == doctest::Approx(0.0));
  CHECK(outside.normal.y() == doctest::Approx(-1.0));

  auto inside = nearest_boundary_point(sq, {0.5, 0.1});
  CHECK(inside.signed_dist == doctest::Approx(-0.1));
  CHECK(inside.normal.y() == doctest::Approx(-1.0));
}

TEST_CASE("boundary centroid matches dense sampling oracle") {
  for (const auto& poly : sample_objects()) {
    const Vec2 analytic = boundary_centroid(poly);
    const Vec2 dense = dense_boundary_centroid(poly);
    CHECK((analytic - dense).norm() < 1e-5);
  }
}

TEST_CASE("canonical transform centers and aligns") {
  for (const auto& poly : sample_objects()) {
    const Polygon canon = poly.transformed(canonical_transform(poly));
    CHECK(boundary_centroid(canon).norm() < 1e-12);
  }

  auto bottles = generate_category_instances(Category::bottle, 1, 3);
  const Polygon canon =
      bottles[0].transformed(canonical_transform(bottles[0]));
  double sxx = 0, syy = 0;
  const int n = 20000;
  const double total = perimeter(canon);
  for (int i = 0; i < n; ++i) {
    const Vec2 q = boundary_point(canon, (i + 0.5) * total / n);
    sxx += q.x() * q.x();
    syy += q.y() * q.y();
  }
  CHECK(sxx >= syy);
}

TEST_CASE("canonical transform is pose invariant") {
  // Bottles are asymmetric along their principal axis, so the frame is
  // unique and vertices must match one-to-one.
  auto bottles = generate_category_instances(Category::bottle, 2, 11);
  Rng rng(5);
  for (const auto& poly : bottles) {
    const Polygon canon0 = poly.transformed(canonical_transform(poly));
    for (int trial = 0; trial < 4; ++trial) {
      Transform2 tf;
      tf.theta = rng.uniform(-kPi, kPi);
      tf.t = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      const Polygon moved = poly.transformed(tf);
      const Polygon canon1 = moved.transformed(canonical_transform(moved));
      for (int i = 0; i < canon0.n(); ++i)
        CHECK((canon0.vertices[i] - canon1.vertices[i]).norm() < 1e-9);
    }
  }

  // Point-symmetric shapes admit two equivalent frames; compare as sets.
  auto remotes = generate_category_instances(Category::remote, 2, 11);
  for (const auto& poly : remotes) {
    const Polygon canon0 = poly.transformed(canonical_transform(poly));
    for (int trial = 0; trial < 4; ++trial) {
      Transform2 tf;
      tf.theta = rng.uniform(-kPi, kPi);
      tf.t = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      const Polygon moved = poly.transformed(tf);
      const Polygon canon1 = moved.transformed(canonical_transform(moved));
      for (const auto& v0 : canon0.vertices) {
        double best = 1e9;
        for (const auto& v1 : canon1.vertices)
          best = std::min(best, (v0 - v1).norm());
        CHECK(best < 1e-9);
      }
    }
  }
}

TEST_CASE("generators are deterministic and valid") {
  for (int c = 0; c < kNumCategories; ++c) {
    const auto cat = static_cast<Category>(c);
    auto a = generate_category_instances(cat, 3, 7);
    auto b = generate_category_instances(cat, 3, 7);
    REQUIRE(a.size() == 3);
    for (size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].n() == b[i].n());
      for (int j = 0; j < a[i].n(); ++j) {
        CHECK(a[i].vertices[j].x() == b[i].vertices[j].x());
        CHECK(a[i].vertices[j].y() == b[i].vertices[j].y());
      }
      CHECK_NOTHROW(validate_polygon(a[i]));
      CHECK(a[i].category == cat);
      CHECK(a[i].instance_id == static_cast<int>(i));
    }
  }
  CHECK_THROWS_AS(generate_category_instances(Category::can, 0, 1),
                  InvalidArgument);
}

TEST_CASE("can instance passes validity checks") {
  auto cans = generate_category_instances(Category::can, 1, 0);
  CHECK(is_simple(cans[0]));
  CHECK(signed_area(cans[0]) > 0);
  CHECK(cans[0].n() >= 6);
}

TEST_CASE("forty mugs are pairwise distinct") {
  auto mugs = generate_category_instances(Category::mug, 40, 1);
  for (size_t i = 0; i < mugs.size(); ++i) {
    for (size_t j = i + 1; j < mugs.size(); ++j) {
      bool identical = mugs[i].n() == mugs[j].n();
      if (identical) {
        for (int k = 0; k < mugs[i].n(); ++k)
          if (mugs[i].vertices[k] != mugs[j].vertices[k]) {
            identical = false;
            break;
          }
      }
      CHECK_FALSE(identical);
    }
  }
}

TEST_CASE("point cloud stratification on the unit square") {
  auto cloud = sample_point_cloud(unit_square(), 4, 9);
  REQUIRE(cloud.n == 4);
  const Polygon canon =
      unit_square().transformed(canonical_transform(unit_square()));
  std::set<int> edges;
  for (const auto& p : cloud.points) {
    const auto hit = nearest_boundary_point(canon, p);
    CHECK(std::abs(hit.signed_dist) < 1e-9);
    edges.insert(hit.edge);
  }
  CHECK(edges.size() == 4);
}

TEST_CASE("point clouds lie on the boundary and center near origin") {
  for (const auto& poly : sample_objects()) {
    const auto cloud = sample_point_cloud(poly, 64, 123);
    const Polygon canon = poly.transformed(canonical_transform(poly));
    Vec2 mean = Vec2::Zero();
    for (const auto& p : cloud.points) {
      CHECK(std::abs(nearest_boundary_point(canon, p).signed_dist) < 1e-9);
      mean += p;
    }
    mean /= cloud.points.size();
    CHECK(mean.norm() < 0.1);
  }
}

TEST_CASE("point cloud determinism and errors") {
  auto objs = generate_category_instances(Category::camera, 1, 2);
  auto a = sample_point_cloud(objs[0], 64, 5);
  auto b = sample_point_cloud(objs[0], 64, 5);
  auto c = sample_point_cloud(objs[0], 64, 6);
  bool same = true, diff = false;
  for (int i = 0; i < 64; ++i) {
    same &= a.points[i] == b.points[i];
    diff |= a.points[i] != c.points[i];
  }
  CHECK(same);
  CHECK(diff);

  Polygon degenerate;
  degenerate.vertices = {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {2, 0}, {1, 0}};
  CHECK_THROWS_AS(sample_point_cloud(degenerate, 8, 0), InvalidGeometry);
  CHECK_THROWS_AS(sample_point_cloud(unit_square(), 0, 0), InvalidArgument);
}

TEST_CASE("train test split partitions deterministically") {
  auto mugs = generate_category_instances(Category::mug, 10, 4);
  auto [train, test] = train_test_split(mugs, 0.3, 5);
  CHECK(train.size() == 7);
  CHECK(test.size() == 3);
  std::set<int> train_ids, test_ids;
  for (const auto& p : train) {
    CHECK(p.split == Split::train);
    train_ids.insert(p.instance_id);
  }
  for (const auto& p : test) {
    CHECK(p.split == Split::test);
    test_ids.insert(p.instance_id);
  }
  std::vector<int> overlap;
  std::set_intersection(train_ids.begin(), train_ids.end(), test_ids.begin(),
                        test_ids.end(), std::back_inserter(overlap));
  CHECK(overlap.empty());
  CHECK(train_ids.size() + test_ids.size() == 10);

  auto [train2, test2] = train_test_split(mugs, 0.3, 5);
  REQUIRE(test2.size() == test.size());
  for (size_t i = 0; i < test.size(); ++i)
    CHECK(test[i].instance_id == test2[i].instance_id);

  auto cans = generate_category_instances(Category::can, 40, 4);
  auto [tr40, te40] = train_test_split(cans, 0.4, 1);
  CHECK(tr40.size() == 24);
  CHECK(te40.size() == 16);

  CHECK_THROWS_AS(train_test_split({}, 0.3, 1), InvalidArgument);
  CHECK_THROWS_AS(train_test_split(mugs, 0.0, 1), InvalidArgument);
  CHECK_THROWS_AS(train_test_split(mugs, 1.0, 1), InvalidArgument);
}

TEST_CASE("object set json round-trip") {
  const auto objects = generate_object_set(4, 0.25, 17);
  REQUIRE(objects.size() == 20);
  const std::string path = "test_objects.json";
  save_object_set(path, objects);
  const auto loaded = load_object_set(path);
  REQUIRE(loaded.size() == objects.size());
  for (size_t i = 0; i < objects.size(); ++i) {
    CHECK(loaded[i].category == objects[i].category);
    CHECK(loaded[i].instance_id == objects[i].instance_id);
    CHECK(loaded[i].split == objects[i].split);
    REQUIRE(loaded[i].n() == objects[i].n());
    for (int j = 0; j < objects[i].n(); ++j)
      CHECK(loaded[i].vertices[j] == objects[i].vertices[j]);
  }
  CHECK(filter_split(objects, Split::test).size() == 5);
  std::remove(path.c_str());
}
