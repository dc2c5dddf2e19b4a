#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ilad/geometry.hpp"

namespace ilad {

struct PointCloud {
  std::vector<Vec2> points;
  int n = 0;
};

std::vector<Polygon> generate_category_instances(Category category, int count,
                                                 uint64_t seed);

// Arc-length-stratified boundary samples in the canonical frame.
PointCloud sample_point_cloud(const Polygon& poly, int n, uint64_t seed);

std::pair<std::vector<Polygon>, std::vector<Polygon>> train_test_split(
    const std::vector<Polygon>& instances, double test_fraction,
    uint64_t seed);

// All five categories, `per_category` instances each, split stamped per
// category so both splits cover every category.
std::vector<Polygon> generate_object_set(int per_category,
                                         double test_fraction, uint64_t seed);

void save_object_set(const std::string& path,
                     const std::vector<Polygon>& objects);
std::vector<Polygon> load_object_set(const std::string& path);

std::vector<Polygon> filter_split(const std::vector<Polygon>& objects,
                                  Split split);

}  // namespace ilad
