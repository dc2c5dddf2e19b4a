#include <cstdio>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "ilad/planner.hpp"

using namespace ilad;

namespace {

Polygon make_square(double half) {
  Polygon p;
  p.vertices = {{-half, -half}, {half, -half}, {half, half}, {-half, half}};
  return p;
}

Vec2 fk_two_link(double j1, double j2, const Pose2& mount, double l1,
                 double l2) {
  const double a1 = mount.angle + j1;
  const double a2 = a1 + j2;
  return mount.pos + Vec2(l1 * std::cos(a1) + l2 * std::cos(a2),
                          l1 * std::sin(a1) + l2 * std::sin(a2));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("inverse kinematics matches the closed-form example") {
  const auto [j1, j2] = inverse_kinematics({1.0, 1.0}, {{0.0, 0.0}, 0.0}, 1.0, 1.0);
  CHECK(std::abs(j1) < 1e-12);
  CHECK(std::abs(j2 - 0.5 * kPi) < 1e-12);
}

TEST_CASE("inverse kinematics rejects targets outside the annulus") {
  CHECK_THROWS_AS(inverse_kinematics({2.5, 0.0}, {{0.0, 0.0}, 0.0}, 1.0, 1.0),
                  Unreachable);
  CHECK_THROWS_AS(
      inverse_kinematics({0.01, 0.0}, {{0.0, 0.0}, 0.0}, 0.12, 0.10),
      Unreachable);
  CHECK_THROWS_AS(inverse_kinematics({1.0, 0.0}, {{0.0, 0.0}, 0.0}, 0.0, 1.0),
                  InvalidArgument);
}

TEST_CASE("inverse kinematics round-trips through forward kinematics") {
  Rng rng(41);
  const double l1 = 0.12, l2 = 0.10;
  for (int i = 0; i < 1000; ++i) {
    const Pose2 mount{{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)},
                      rng.uniform(-kPi, kPi)};
    const double r = rng.uniform(std::abs(l1 - l2) + 1e-6, l1 + l2 - 1e-6);
    const double ang = rng.uniform(-kPi, kPi);
    const Vec2 tip = mount.pos + r * Vec2(std::cos(ang), std::sin(ang));
    const auto [j1, j2] = inverse_kinematics(tip, mount, l1, l2);
    CHECK((fk_two_link(j1, j2, mount, l1, l2) - tip).norm() < 1e-9);
  }
}

TEST_CASE("grasp synthesis on a square finds the antipodal optimum") {
  const Polygon square = make_square(0.1);

  // brute-force oracle: best normal dot over all feasible boundary pairs
  const int m = 160;
  const double total = perimeter(square);
  double best_dot = 1.0;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      const double si = (i + 0.5) * total / m;
      const double sj = (j + 0.5) * total / m;
      const double w = (boundary_point(square, sj) - boundary_point(square, si)).norm();
      if (w < kMinGraspWidth || w > kMaxGraspWidth) continue;
      best_dot = std::min(best_dot, boundary_normal_at(square, si)
                                        .dot(boundary_normal_at(square, sj)));
    }
  }
  CHECK(best_dot == -1.0);

  const auto targets = synthesize_grasps(square, 1, 7);
  REQUIRE(targets.size() == 1);
  CHECK(targets[0].normal1.dot(targets[0].normal2) <= best_dot + 1e-6);
  CHECK(targets[0].width >= kMinGraspWidth);
  CHECK(targets[0].width <= kMaxGraspWidth);
}

TEST_CASE("grasp synthesis fails on a needle below the width band") {
  Polygon needle;
  needle.vertices = {{-0.2, -0.005}, {0.2, -0.005}, {0.2, 0.005}, {-0.2, 0.005}};
  CHECK_THROWS_AS(synthesize_grasps(needle, 3, 11), NoGraspFound);
}

TEST_CASE("synthesized targets satisfy their invariants") {
  const auto cans = generate_category_instances(Category::can, 3, 55);
  const SimConfig sim;
  for (const Polygon& can : cans) {
    const Polygon posed = can.transformed({0.7, {-0.4, 0.2}});
    const auto targets = synthesize_grasps(posed, 4, 19, sim);
    REQUIRE(!targets.empty());
    CHECK(targets.size() <= 4);
    for (const GraspTarget& t : targets) {
      CHECK(t.normal1.dot(t.normal2) < -0.5);
      CHECK(t.width >= kMinGraspWidth);
      CHECK(t.width <= kMaxGraspWidth);
      const FkResult fk = forward_kinematics(t.jh, sim);
      CHECK((fk.tip1 - t.contact1).norm() <= 0.01);
      CHECK((fk.tip2 - t.contact2).norm() <= 0.01);
      for (int j = 3; j < 7; ++j) CHECK(std::abs(t.jh[j]) <= 0.5 * kPi);
    }
    for (std::size_t a = 0; a < targets.size(); ++a)
      for (std::size_t b = a + 1; b < targets.size(); ++b)
        CHECK((Vec2(targets[a].jh[0], targets[a].jh[1]) -
               Vec2(targets[b].jh[0], targets[b].jh[1]))
                  .norm() >= kGraspDiversity);
  }
}

TEST_CASE("grasp synthesis is deterministic in the seed") {
  const auto cans = generate_category_instances(Category::can, 1, 55);
  const Polygon posed = cans[0].transformed({-0.3, {0.1, 0.1}});
  const auto a = synthesize_grasps(posed, 4, 23);
  const auto b = synthesize_grasps(posed, 4, 23);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].jh == b[i].jh);
}

TEST_CASE("planning objective matches hand-computed values") {
  GraspTarget grasp;
  grasp.jh << 0.1, 0.2, 0.3, 0.0, 0.0, 0.0, 0.0;

  EnvState at_goal;
  at_goal.q = grasp.jh;
  at_goal.pose = {0.0, 0.0, 0.0};
  CHECK(planning_objective({at_goal}, grasp, 10.0, 0.2) == 0.0);

  EnvState start = at_goal;
  EnvState end = at_goal;
  end.q[0] += 0.2;
  end.pose.x += 0.1;
  start.pose.x = 0.0;
  const double c = planning_objective({start, end}, grasp, 10.0, 0.2);
  CHECK(std::abs(c - 0.14) < 1e-12);

  const double c2 = planning_objective({start, end}, grasp, 20.0, 0.2);
  CHECK(std::abs((c2 - c) - 10.0 * 0.01) < 1e-12);

  CHECK_THROWS_AS(planning_objective({}, grasp, 10.0, 0.2), InvalidArgument);
}

TEST_CASE("planning objective wraps the palm rotation difference") {
  GraspTarget grasp;
  grasp.jh << 0.0, 0.0, kPi - 0.05, 0.0, 0.0, 0.0, 0.0;
  EnvState s;
  s.q[2] = -kPi + 0.05;
  s.pose = {0.0, 0.0, 0.0};
  CHECK(std::abs(planning_objective({s}, grasp, 10.0, 0.2) - 0.01) < 1e-12);
}

TEST_CASE("palm-only objective measures palm-to-object distance") {
  GraspTarget grasp;
  grasp.palm_only = true;
  EnvState s;
  s.q[0] = 0.3;
  s.q[1] = 0.4;
  s.pose = {0.0, 0.0, 0.0};
  CHECK(std::abs(planning_objective({s}, grasp, 10.0, 0.2) - 0.25) < 1e-12);
}

TEST_CASE("cem converges on a quadratic surrogate") {
  const double target = 0.7;
  const auto cost = [&](const VecX& a) {
    return (a[0] - target) * (a[0] - target);
  };
  CemState st;
  st.mu = VecX::Zero(1);
  st.sigma = VecX::Constant(1, 1.0);
  Rng rng(3);
  double prev_best = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 5; ++it) {
    cem_core_iterate(cost, 200, 10, 1e-4, st, rng);
    CHECK(st.best_cost <= prev_best);
    prev_best = st.best_cost;
  }
  CHECK(std::abs(st.mu[0] - target) < 1e-2);
  CHECK(st.sigma[0] >= 1e-4);
}

TEST_CASE("degenerate elite set refits to the full-sample moments") {
  const auto cost_a = [](const VecX& a) { return a.squaredNorm(); };
  const auto cost_b = [](const VecX& a) { return (a.array() - 3.0).matrix().squaredNorm(); };
  CemState sa, sb;
  sa.mu = sb.mu = VecX::Zero(3);
  sa.sigma = sb.sigma = VecX::Constant(3, 0.5);
  Rng ra(9), rb(9);
  cem_core_iterate(cost_a, 50, 50, 1e-4, sa, ra);
  cem_core_iterate(cost_b, 50, 50, 1e-4, sb, rb);
  // identical samples, so the all-elite moments agree up to summation order
  CHECK((sa.mu - sb.mu).norm() < 1e-12);
  CHECK((sa.sigma - sb.sigma).norm() < 1e-12);
  CHECK(sa.best_cost != sb.best_cost);
}

TEST_CASE("cem sigma is floored") {
  const auto cost = [](const VecX& a) { return a[0]; };
  CemState st;
  st.mu = VecX::Zero(2);
  st.sigma = VecX::Constant(2, 1e-9);
  Rng rng(1);
  cem_core_iterate(cost, 20, 20, 1e-4, st, rng);
  CHECK(st.sigma.minCoeff() >= 1e-4);
}

TEST_CASE("cem rejects invalid elite counts") {
  const auto cost = [](const VecX&) { return 0.0; };
  CemState st;
  st.mu = VecX::Zero(1);
  st.sigma = VecX::Constant(1, 1.0);
  Rng rng(1);
  CHECK_THROWS_AS(cem_core_iterate(cost, 10, 11, 1e-4, st, rng),
                  InvalidArgument);
  CHECK_THROWS_AS(cem_core_iterate(cost, 10, 0, 1e-4, st, rng),
                  InvalidArgument);
}

TEST_CASE("cem_iterate checks the state dimension") {
  const auto cans = generate_category_instances(Category::can, 1, 55);
  Env env(cans[0]);
  env.reset(5);
  CemConfig cfg;
  CemState st;
  st.mu = VecX::Zero(7);
  st.sigma = VecX::Constant(7, 0.03);
  Rng rng(2);
  GraspTarget grasp;
  CHECK_THROWS_AS(
      cem_iterate(env, env.state(), env.state(), grasp, cfg, st, rng),
      InvalidArgument);
}

TEST_CASE("mpc terminates immediately when already at the target") {
  const auto cans = generate_category_instances(Category::can, 1, 55);
  Env env(cans[0]);
  env.reset(17);
  GraspTarget grasp;
  grasp.jh = env.state().q;
  const auto demo = mpc_execute(env, grasp, CemConfig{}, 17);
  REQUIRE(demo.has_value());
  CHECK(demo->pairs.empty());
  CHECK(demo->final_cost == 0.0);
}

TEST_CASE("mpc reports failure when the step budget is exhausted") {
  const auto cans = generate_category_instances(Category::can, 1, 55);
  Env env(cans[0]);
  env.reset(17);
  GraspTarget grasp;
  grasp.jh = env.state().q;
  grasp.jh[0] += 1.0;
  CemConfig cfg;
  cfg.max_mpc_steps = 1;
  CHECK(!mpc_execute(env, grasp, cfg, 17).has_value());
}

TEST_CASE("mpc produces an accepted demonstration on a can") {
  const auto cans = generate_category_instances(Category::can, 1, 55);
  Env env(cans[0]);
  env.reset(3);
  const ObjectPose start = env.state().pose;
  const auto targets = synthesize_grasps(env.world_polygon(), 4, 3);
  REQUIRE(!targets.empty());
  const CemConfig cfg;
  const auto demo = mpc_execute(env, targets[0], cfg, 3);
  REQUIRE(demo.has_value());
  CHECK(demo->final_cost < cfg.delta);
  CHECK(static_cast<int>(demo->pairs.size()) <= cfg.max_mpc_steps);
  const ObjectPose end = env.state().pose;
  CHECK(std::hypot(end.x - start.x, end.y - start.y) <
        std::sqrt(cfg.delta / cfg.lambda_obj));
}

TEST_CASE("rrt returns an empty plan when the hand starts at the target") {
  const auto cans = generate_category_instances(Category::can, 1, 55);
  Env env(cans[0]);
  env.reset(29);
  GraspTarget grasp;
  grasp.jh = env.state().q;
  const auto demo = rrt_plan(env, grasp, 100, 0.01, 0.5, 0.06, 29);
  REQUIRE(demo.has_value());
  CHECK(demo->pairs.empty());
}

TEST_CASE("fully goal-biased rrt extends in a straight line") {
  const auto cans = generate_category_instances(Category::can, 1, 55);
  Env env(cans[0]);
  env.reset(29);
  const Vec7 q0 = env.state().q;
  GraspTarget grasp;
  grasp.jh = q0;
  grasp.jh[0] += 0.3;
  const auto demo = rrt_plan(env, grasp, 1000, 0.01, 1.0, 0.06, 29);
  REQUIRE(demo.has_value());
  REQUIRE(!demo->pairs.empty());
  double prev_x = q0[0];
  for (const auto& [obs, act] : demo->pairs) {
    CHECK(obs.q[0] >= prev_x - 1e-12);
    prev_x = obs.q[0];
    CHECK(act[0] > 0.0);
    CHECK(std::abs(act[1]) < 1e-12);
    CHECK(act.norm() <= 0.01 + 1e-12);
  }
  Vec7 d = env.state().q - grasp.jh;
  d[2] = wrap_angle(d[2]);
  CHECK(d.norm() <= 0.06);
}

TEST_CASE("rrt fails when the node budget is too small") {
  const auto cans = generate_category_instances(Category::can, 1, 55);
  Env env(cans[0]);
  env.reset(29);
  GraspTarget grasp;
  grasp.jh = env.state().q;
  grasp.jh[0] += 1.0;
  CHECK(!rrt_plan(env, grasp, 5, 0.01, 0.5, 0.06, 29).has_value());
}

TEST_CASE("demo generation is deterministic and round-trips through jsonl") {
  const auto cans = generate_category_instances(Category::can, 1, 55);
  DemoGenConfig cfg;
  const auto set1 = generate_demo_set(cans, 2, cfg, 77);
  const auto set2 = generate_demo_set(cans, 2, cfg, 77);
  REQUIRE(!set1.demos.empty());
  REQUIRE(set1.demos.size() == set2.demos.size());

  const std::string p1 = "test_demos_a.jsonl";
  const std::string p2 = "test_demos_b.jsonl";
  save_demo_set(p1, set1.demos);
  save_demo_set(p2, set2.demos);
  CHECK(slurp(p1) == slurp(p2));

  const auto loaded = load_demo_set(p1);
  REQUIRE(loaded.size() == set1.demos.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    const auto& a = set1.demos[i];
    const auto& b = loaded[i];
    CHECK(a.object_id == b.object_id);
    CHECK(a.final_cost == b.final_cost);
    CHECK(a.grasp.jh == b.grasp.jh);
    CHECK(a.grasp.width == b.grasp.width);
    REQUIRE(a.pairs.size() == b.pairs.size());
    for (std::size_t j = 0; j < a.pairs.size(); ++j) {
      CHECK(a.pairs[j].first.flat() == b.pairs[j].first.flat());
      CHECK(a.pairs[j].second == b.pairs[j].second);
      REQUIRE(a.pairs[j].first.cloud.points.size() ==
              b.pairs[j].first.cloud.points.size());
      for (std::size_t c = 0; c < a.pairs[j].first.cloud.points.size(); ++c)
        CHECK(a.pairs[j].first.cloud.points[c] ==
              b.pairs[j].first.cloud.points[c]);
    }
  }
  std::remove(p1.c_str());
  std::remove(p2.c_str());

  REQUIRE(set1.report.size() == 1);
  CHECK(set1.report[0].object_id == 0);
  CHECK(set1.report[0].accepted >= 1);
  CHECK(set1.report[0].attempts >= set1.report[0].accepted);
  CHECK(set1.report[0].attempts <= 10);
  CHECK(set1.report[0].mean_cost < cfg.cem.delta);
}

TEST_CASE("palm-only generation marks every grasp as a sentinel") {
  const auto cans = generate_category_instances(Category::can, 1, 55);
  DemoGenConfig cfg;
  cfg.use_grasp_pose = false;
  const auto set = generate_demo_set(cans, 1, cfg, 13);
  REQUIRE(!set.demos.empty());
  for (const auto& d : set.demos) CHECK(d.grasp.palm_only);

  const std::string path = "test_demos_palm.jsonl";
  save_demo_set(path, set.demos);
  const auto loaded = load_demo_set(path);
  for (const auto& d : loaded) CHECK(d.grasp.palm_only);
  std::remove(path.c_str());
}

TEST_CASE("demo generation rejects invalid configurations") {
  const auto cans = generate_category_instances(Category::can, 1, 55);
  DemoGenConfig cfg;
  CHECK_THROWS_AS(generate_demo_set(cans, 0, cfg, 1), InvalidArgument);
  DemoGenConfig rrt_no_grasp;
  rrt_no_grasp.use_rrt = true;
  rrt_no_grasp.use_grasp_pose = false;
  CHECK_THROWS_AS(generate_demo_set(cans, 1, rrt_no_grasp, 1),
                  InvalidArgument);
}

TEST_CASE("demo report csv has the pinned columns") {
  std::vector<DemoReportRow> rows(2);
  rows[0] = {0, 5, 4, 0.031, 0.012};
  rows[1] = {1, 10, 8, 0.04, 0.02};
  const std::string path = "test_demo_report.csv";
  save_demo_report(path, rows);
  std::ifstream in(path);
  REQUIRE(in);
  std::string header, line0, line1;
  std::getline(in, header);
  std::getline(in, line0);
  std::getline(in, line1);
  CHECK(header == "object_id,attempts,accepted,mean_cost,mean_displacement");
  CHECK(line0 == "0,5,4,0.031,0.012");
  CHECK(line1 == "1,10,8,0.04,0.02");
  std::remove(path.c_str());
}
