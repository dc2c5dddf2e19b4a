#include "ilad/shapes.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace ilad {

namespace {

Polygon make_bottle(Rng& rng) {
  const double body_r = rng.uniform(0.05, 0.09);
  const double neck_r = rng.uniform(0.025, 0.045);
  const double h = rng.uniform(0.22, 0.38);
  const double shoulder = rng.uniform(0.55, 0.7) * h;
  const double neck_base = rng.uniform(0.75, 0.85) * h;
  Polygon p;
  p.vertices = {
      {-body_r, 0.0},      {body_r, 0.0}, {body_r, shoulder},
      {neck_r, neck_base}, {neck_r, h},   {-neck_r, h},
      {-neck_r, neck_base}, {-body_r, shoulder},
  };
  for (auto& v : p.vertices) v.y() -= 0.5 * h;
  return p;
}

Polygon make_mug(Rng& rng) {
  const double w = rng.uniform(0.12, 0.2);
  const double h = rng.uniform(0.12, 0.2);
  const double hh = rng.uniform(0.5, 0.8) * h;
  const double hw = rng.uniform(0.05, 0.08);
  const double t = rng.uniform(0.02, 0.03);
  const double xr = 0.5 * w;
  Polygon p;
  p.vertices = {
      {-xr, -0.5 * h},
      {xr, -0.5 * h},
      {xr, -0.5 * hh},
      {xr + hw, -0.5 * hh},
      {xr + hw, -0.5 * hh + t},
      {xr + t, -0.5 * hh + t},
      {xr + t, 0.5 * hh - t},
      {xr + hw, 0.5 * hh - t},
      {xr + hw, 0.5 * hh},
      {xr, 0.5 * hh},
      {xr, 0.5 * h},
      {-xr, 0.5 * h},
  };
  for (auto& v : p.vertices) v.x() -= 0.5 * hw;
  return p;
}

Polygon make_can(Rng& rng) {
  const double a = rng.uniform(0.06, 0.12);
  const double b = rng.uniform(std::max(a, 0.08), 0.16);
  const int k = 10 + rng.uniform_int(5);
  const double phase = rng.uniform(0.0, 2.0 * kPi / k);
  Polygon p;
  p.vertices.reserve(k);
  for (int i = 0; i < k; ++i) {
    const double ang = phase + 2.0 * kPi * i / k;
    p.vertices.emplace_back(a * std::cos(ang), b * std::sin(ang));
  }
  return p;
}

Polygon make_remote(Rng& rng) {
  const double w = rng.uniform(0.055, 0.085);
  const double l = rng.uniform(0.25, 0.42);
  const double c = rng.uniform(0.15, 0.3) * w;
  const double xr = 0.5 * w, yr = 0.5 * l;
  Polygon p;
  p.vertices = {
      {-xr + c, -yr}, {xr - c, -yr}, {xr, -yr + c}, {xr, yr - c},
      {xr - c, yr},   {-xr + c, yr}, {-xr, yr - c}, {-xr, -yr + c},
  };
  return p;
}

Polygon make_camera(Rng& rng) {
  const double w = rng.uniform(0.16, 0.24);
  const double h = rng.uniform(0.1, 0.16);
  const double lens = rng.uniform(0.03, 0.05);
  const double lw = rng.uniform(0.25, 0.4) * w;
  const double cx = rng.uniform(-0.15, 0.15) * w;
  const double s = 0.15 * lw;
  const double yt = 0.5 * h;
  Polygon p;
  p.vertices = {
      {-0.5 * w, -yt},
      {0.5 * w, -yt},
      {0.5 * w, yt},
      {cx + 0.5 * lw, yt},
      {cx + 0.5 * lw - s, yt + lens},
      {cx - 0.5 * lw + s, yt + lens},
      {cx - 0.5 * lw, yt},
      {-0.5 * w, yt},
  };
  return p;
}

Polygon make_instance(Category category, Rng& rng) {
  switch (category) {
    case Category::bottle: return make_bottle(rng);
    case Category::mug: return make_mug(rng);
    case Category::can: return make_can(rng);
    case Category::remote: return make_remote(rng);
    case Category::camera: return make_camera(rng);
  }
  throw InvalidArgument("bad category");
}

}  // namespace

std::vector<Polygon> generate_category_instances(Category category, int count,
                                                 uint64_t seed) {
  if (count < 1) throw InvalidArgument("count must be >= 1");
  std::vector<Polygon> out;
  out.reserve(count);
  const uint64_t cat_seed =
      Rng::mix(seed, static_cast<uint64_t>(category) + 1);
  for (int i = 0; i < count; ++i) {
    Rng rng(Rng::mix(cat_seed, static_cast<uint64_t>(i)));
    Polygon p = make_instance(category, rng);
    p.category = category;
    p.instance_id = i;
    p.split = Split::train;
    try {
      validate_polygon(p);
    } catch (const InvalidGeometry& e) {
      throw GenerationFailed(std::string("generated invalid polygon: ") +
                             e.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

PointCloud sample_point_cloud(const Polygon& poly, int n, uint64_t seed) {
  if (n < 1) throw InvalidArgument("point count must be >= 1");
  if (std::abs(signed_area(poly)) < 1e-9)
    throw InvalidGeometry("degenerate polygon area");
  const Polygon canon = poly.transformed(canonical_transform(poly));
  const double total = perimeter(canon);
  Rng rng(Rng::mix(seed, hash_string("point_cloud")));
  PointCloud cloud;
  cloud.n = n;
  cloud.points.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double s = (i + rng.uniform()) * total / n;
    cloud.points.push_back(boundary_point(canon, s));
  }
  return cloud;
}

std::pair<std::vector<Polygon>, std::vector<Polygon>> train_test_split(
    const std::vector<Polygon>& instances, double test_fraction,
    uint64_t seed) {
  if (instances.empty()) throw InvalidArgument("empty instance list");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw InvalidArgument("test_fraction must be in (0, 1)");
  const size_t count = instances.size();
  const size_t n_test =
      static_cast<size_t>(std::floor(count * test_fraction));
  std::vector<size_t> order(count);
  for (size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(Rng::mix(seed, hash_string("train_test_split")));
  for (size_t i = count - 1; i > 0; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(i + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<bool> is_test(count, false);
  for (size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
  std::vector<Polygon> train, test;
  for (size_t i = 0; i < count; ++i) {
    Polygon p = instances[i];
    p.split = is_test[i] ? Split::test : Split::train;
    (is_test[i] ? test : train).push_back(std::move(p));
  }
  return {std::move(train), std::move(test)};
}

std::vector<Polygon> generate_object_set(int per_category,
                                         double test_fraction, uint64_t seed) {
  std::vector<Polygon> all;
  for (int c = 0; c < kNumCategories; ++c) {
    const auto category = static_cast<Category>(c);
    auto instances = generate_category_instances(category, per_category, seed);
    auto [train, test] = train_test_split(
        instances, test_fraction, Rng::mix(seed, static_cast<uint64_t>(c)));
    for (auto& p : train) all.push_back(std::move(p));
    for (auto& p : test) all.push_back(std::move(p));
  }
  return all;
}

void save_object_set(const std::string& path,
                     const std::vector<Polygon>& objects) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : objects) {
    nlohmann::json verts = nlohmann::json::array();
    for (const auto& v : p.vertices) verts.push_back({v.x(), v.y()});
    arr.push_back({{"category", to_string(p.category)},
                   {"instance_id", p.instance_id},
                   {"split", to_string(p.split)},
                   {"vertices", std::move(verts)}});
  }
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open for writing: " + path);
  out << arr.dump(2) << "\n";
}

std::vector<Polygon> load_object_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open: " + path);
  nlohmann::json arr = nlohmann::json::parse(in);
  std::vector<Polygon> out;
  out.reserve(arr.size());
  for (const auto& rec : arr) {
    Polygon p;
    p.category = category_from_string(rec.at("category").get<std::string>());
    p.instance_id = rec.at("instance_id").get<int>();
    p.split = split_from_string(rec.at("split").get<std::string>());
    for (const auto& v : rec.at("vertices"))
      p.vertices.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
    validate_polygon(p);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Polygon> filter_split(const std::vector<Polygon>& objects,
                                  Split split) {
  std::vector<Polygon> out;
  for (const auto& p : objects)
    if (p.split == split) out.push_back(p);
  return out;
}

}  // namespace ilad
