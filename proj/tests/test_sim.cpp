#include <doctest.h>

#include <complex>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ilad/sim.hpp"

using namespace ilad;

namespace {

Polygon test_can(uint64_t seed = 0) {
  return generate_category_instances(Category::can, 1, seed)[0];
}

// Independent FK evaluation through complex arithmetic.
std::pair<Vec2, Vec2> fk_complex(const Vec7& q, const SimConfig& cfg) {
  using C = std::complex<double>;
  const C palm(q[0], q[1]);
  const C rot = std::polar(1.0, q[2]);
  auto tip = [&](double mount, double j1, double j2) {
    const C local = C(mount, 0.0) +
                    std::polar(cfg.link1, 0.5 * kPi + j1) +
                    std::polar(cfg.link2, 0.5 * kPi + j1 + j2);
    const C world = palm + rot * local;
    return Vec2(world.real(), world.imag());
  };
  return {tip(cfg.palm_half_width, q[3], q[4]),
          tip(-cfg.palm_half_width, q[5], q[6])};
}

std::pair<double, double> ik_2r(const Vec2& rel, double l1, double l2,
                                double elbow) {
  double c2 = (rel.squaredNorm() - l1 * l1 - l2 * l2) / (2 * l1 * l2);
  c2 = std::clamp(c2, -1.0, 1.0);
  const double j2 = elbow * std::acos(c2);
  const double j1 = std::atan2(rel.y(), rel.x()) -
                    std::atan2(l2 * std::sin(j2), l1 + l2 * std::cos(j2)) -
                    0.5 * kPi;
  return {j1, j2};
}

void drive_to(Env& env, const Vec7& target, int max_steps) {
  for (int i = 0; i < max_steps && !env.state().done; ++i) {
    Vec7 d = target - env.state().q;
    d[2] = wrap_angle(d[2]);
    if (d.cwiseAbs().maxCoeff() < 1e-7) return;
    env.step(d);
  }
}

}  // namespace

TEST_CASE("forward kinematics straight chain") {
  Vec7 q = Vec7::Zero();
  const auto fk = forward_kinematics(q);
  CHECK(fk.tip1.x() == doctest::Approx(0.08));
  CHECK(fk.tip1.y() == doctest::Approx(0.22));
  CHECK(fk.tip2.x() == doctest::Approx(-0.08));
  CHECK(fk.tip2.y() == doctest::Approx(0.22));

  q[2] = kPi;
  const auto flipped = forward_kinematics(q);
  CHECK(flipped.tip1.x() == doctest::Approx(-fk.tip1.x()));
  CHECK(flipped.tip1.y() == doctest::Approx(-fk.tip1.y()));
  CHECK(flipped.tip2.x() == doctest::Approx(-fk.tip2.x()));
  CHECK(flipped.tip2.y() == doctest::Approx(-fk.tip2.y()));
}

TEST_CASE("forward kinematics matches complex-chain oracle") {
  const SimConfig cfg;
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    Vec7 q;
    q << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-kPi, kPi),
        rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
        rng.uniform(-1.5, 1.5);
    const auto fk = forward_kinematics(q, cfg);
    const auto [t1, t2] = fk_complex(q, cfg);
    CHECK((fk.tip1 - t1).norm() < 1e-12);
    CHECK((fk.tip2 - t2).norm() < 1e-12);
  }
}

TEST_CASE("reset is deterministic and respects regions") {
  Env env(test_can());
  const auto& cfg = env.config();
  const EnvState a = env.reset(77);
  const Observation obs_a = env.observe();
  const EnvState b = env.reset(77);
  const Observation obs_b = env.observe();
  CHECK(a.q == b.q);
  CHECK(a.pose.x == b.pose.x);
  CHECK(a.pose.y == b.pose.y);
  CHECK(a.pose.theta == b.pose.theta);
  CHECK(a.target == b.target);
  for (int i = 0; i < obs_a.cloud.n; ++i)
    CHECK(obs_a.cloud.points[i] == obs_b.cloud.points[i]);

  const auto direct = sample_point_cloud(env.object(), cfg.n_cloud_points, 77);
  for (int i = 0; i < direct.n; ++i)
    CHECK(obs_a.cloud.points[i] == direct.points[i]);

  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const EnvState s = env.reset(seed);
    const Vec2 start(s.pose.x, s.pose.y);
    CHECK(std::abs(start.x() - cfg.start_center.x()) <= cfg.region_half);
    CHECK(std::abs(start.y() - cfg.start_center.y()) <= cfg.region_half);
    CHECK(std::abs(s.target.x() - cfg.goal_center.x()) <= cfg.region_half);
    CHECK(std::abs(s.target.y() - cfg.goal_center.y()) <= cfg.region_half);
    CHECK((s.target - start).norm() >= cfg.min_start_target_dist);
    CHECK_FALSE(s.grasped);
    CHECK(s.step_count == 0);
  }
}

TEST_CASE("zero action with no contact is a fixed point") {
  Env env(test_can());
  env.reset(3);
  const EnvState before = env.state();
  env.step(Vec7::Zero());
  const EnvState& after = env.state();
  CHECK(after.q == before.q);
  CHECK(after.pose.x == before.pose.x);
  CHECK(after.pose.y == before.pose.y);
  CHECK(after.pose.theta == before.pose.theta);
  CHECK(after.step_count == 1);
}

TEST_CASE("action clipping and bad actions") {
  Env env(test_can());
  env.reset(3);
  const Vec7 before = env.state().q;
  Vec7 big = Vec7::Constant(0.2);
  env.step(big);
  for (int i = 0; i < 2; ++i)
    CHECK(env.state().q[i] == doctest::Approx(before[i] + 0.05));

  Vec7 bad = Vec7::Zero();
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(env.step(bad), InvalidArgument);
}

TEST_CASE("penetration from the left pushes the object right") {
  const Polygon can = test_can();
  double half_w = 0.0;
  for (const auto& v : can.vertices) half_w = std::max(half_w, v.x());
  Env env(can);
  env.reset(5);
  EnvState s = env.state();
  s.pose = {0.3, 0.0, 0.0};
  s.q.setZero();
  s.q[0] = 0.3 - half_w + 0.005 - 0.08;
  s.q[1] = -0.22;
  env.set_state(s);
  const auto cs = env.contacts();
  REQUIRE(cs[0].signed_dist < 0);
  env.step(Vec7::Zero());
  CHECK(env.state().pose.x > 0.3);
  CHECK(std::abs(env.state().pose.x - 0.3) <= env.config().max_push + 1e-12);
}

TEST_CASE("push-out displacement is capped") {
  const Polygon can = test_can();
  Env env(can);
  env.reset(5);
  EnvState s = env.state();
  s.pose = {0.3, 0.0, 0.0};
  s.q.setZero();
  s.q[0] = 0.3 - 0.08;  // tip1 lands at object center, deep penetration
  s.q[1] = -0.22;
  env.set_state(s);
  REQUIRE(env.contacts()[0].signed_dist < -env.config().max_push);
  const Vec2 before(env.state().pose.x, env.state().pose.y);
  env.step(Vec7::Zero());
  const Vec2 after(env.state().pose.x, env.state().pose.y);
  CHECK((after - before).norm() == doctest::Approx(env.config().max_push));
}

TEST_CASE("grasp check opposition rule") {
  std::array<Contact, 2> cs;
  cs[0] = {true, {0, 0}, {1, 0}, 0.0};
  cs[1] = {false, {0, 0}, {-1, 0}, 0.5};
  CHECK_FALSE(grasp_check(cs));
  cs[1].touching = true;
  CHECK(grasp_check(cs));
  cs[1].normal = {0, 1};
  CHECK_FALSE(grasp_check(cs));
}

TEST_CASE("success predicate boundary") {
  Env env(test_can());
  env.reset(1);
  EnvState s = env.state();
  s.target = {0.5, 0.0};
  s.pose = {0.5 - 0.09, 0.0, 0.0};
  env.set_state(s);
  CHECK(env.is_success());
  s.pose.x = 0.5 - 0.11;
  env.set_state(s);
  CHECK_FALSE(env.is_success());
  s.pose.x = 0.5 - 0.1;
  env.set_state(s);
  CHECK(env.is_success());
}

TEST_CASE("reward arithmetic") {
  Env env(test_can());
  env.reset(1);
  EnvState s = env.state();

  s.grasped = true;
  s.just_engaged = false;
  s.pose = {s.target.x(), s.target.y(), 0.0};
  CHECK(env.reward(s, Vec7::Zero()) == doctest::Approx(10.0));

  s.grasped = false;
  s.pose = {0.2, 0.0, 0.0};
  s.target = {-0.4, 0.0};
  s.q.setZero();
  s.q[0] = 0.7;
  CHECK(env.reward(s, Vec7::Zero()) == doctest::Approx(-0.05));
}

TEST_CASE("random rollouts keep reward bounded and object slow") {
  Env env(test_can(2));
  Rng rng(9);
  for (int ep = 0; ep < 5; ++ep) {
    env.reset(100 + ep);
    Vec2 prev(env.state().pose.x, env.state().pose.y);
    bool prev_grasped = false;
    while (!env.state().done) {
      Vec7 dq;
      for (int i = 0; i < 7; ++i) dq[i] = rng.uniform(-0.05, 0.05);
      const auto res = env.step(dq);
      CHECK(res.reward >= env.config().reward_min);
      CHECK(res.reward <= env.config().reward_max);
      const Vec2 now(env.state().pose.x, env.state().pose.y);
      if (!prev_grasped && !env.state().grasped)
        CHECK((now - prev).norm() <= env.config().max_push + 1e-12);
      prev = now;
      prev_grasped = env.state().grasped;
      CHECK(std::abs(env.state().q[0]) <= env.config().workspace);
      CHECK(std::abs(env.state().q[1]) <= env.config().workspace);
    }
    CHECK_THROWS_AS(env.step(Vec7::Zero()), InvalidState);
  }
}

TEST_CASE("episodes are deterministic under replay") {
  Env a(test_can(1)), b(test_can(1));
  a.reset(42);
  b.reset(42);
  Rng rng(11);
  std::vector<Vec7> actions;
  for (int i = 0; i < 120; ++i) {
    Vec7 dq;
    for (int j = 0; j < 7; ++j) dq[j] = rng.uniform(-0.05, 0.05);
    actions.push_back(dq);
  }
  for (const auto& dq : actions)
    if (!a.state().done) a.step(dq);
  for (const auto& dq : actions)
    if (!b.state().done) b.step(dq);
  CHECK(a.state().q == b.state().q);
  CHECK(a.state().pose.x == b.state().pose.x);
  CHECK(a.state().pose.y == b.state().pose.y);
  CHECK(a.state().pose.theta == b.state().pose.theta);
  CHECK(a.state().step_count == b.state().step_count);
}

TEST_CASE("scripted pick and carry succeeds on a can") {
  const Polygon can = test_can();
  double half_w = 0.0;
  for (const auto& v : can.vertices) half_w = std::max(half_w, v.x());

  Env env(can);
  const SimConfig& cfg = env.config();
  env.reset(8);
  const EnvState s0 = env.state();
  const Vec2 center(s0.pose.x, s0.pose.y);
  const Vec2 home(s0.q[0], s0.q[1]);

  double phi = s0.pose.theta;
  Vec2 fwd(-std::sin(phi), std::cos(phi));
  if (fwd.dot(center - home) < 0) {
    phi = wrap_angle(phi + kPi);
    fwd = -fwd;
  }
  const double tip_fwd = 0.19;

  auto finger_angles = [&](double lateral) {
    const auto f1 = ik_2r(Vec2(lateral - cfg.palm_half_width, tip_fwd),
                          cfg.link1, cfg.link2, 1.0);
    const auto f2 = ik_2r(Vec2(-lateral + cfg.palm_half_width, tip_fwd),
                          cfg.link1, cfg.link2, -1.0);
    return std::array<double, 4>{f1.first, f1.second, f2.first, f2.second};
  };

  const auto open_f = finger_angles(half_w + 0.03);
  Vec7 pre;
  const Vec2 pre_palm = center - 0.5 * fwd;
  pre << pre_palm.x(), pre_palm.y(), phi, open_f[0], open_f[1], open_f[2],
      open_f[3];
  drive_to(env, pre, 120);
  REQUIRE_FALSE(env.state().grasped);

  Vec7 grasp_q = pre;
  const Vec2 grasp_palm = center - tip_fwd * fwd;
  grasp_q[0] = grasp_palm.x();
  grasp_q[1] = grasp_palm.y();
  drive_to(env, grasp_q, 30);

  const auto closed_f = finger_angles(half_w - 0.01);
  Vec7 squeeze = grasp_q;
  squeeze[3] = closed_f[0];
  squeeze[4] = closed_f[1];
  squeeze[5] = closed_f[2];
  squeeze[6] = closed_f[3];
  drive_to(env, squeeze, 20);
  REQUIRE(env.state().grasped);

  const EnvState grasped_state = env.state();
  const Transform2 rel = grasped_state.rel;

  Vec7 carry = env.state().q;
  const Vec2 obj_now(env.state().pose.x, env.state().pose.y);
  carry[0] += env.state().target.x() - obj_now.x();
  carry[1] += env.state().target.y() - obj_now.y();
  drive_to(env, carry, 60);

  CHECK(env.state().done);
  CHECK(env.is_success());

  const Transform2 palm{env.state().q[2],
                        {env.state().q[0], env.state().q[1]}};
  const Transform2 locked = palm.compose(rel);
  CHECK(std::abs(locked.t.x() - env.state().pose.x) < 1e-12);
  CHECK(std::abs(locked.t.y() - env.state().pose.y) < 1e-12);
  CHECK(std::abs(wrap_angle(locked.theta - env.state().pose.theta)) < 1e-12);
}

TEST_CASE("advance skips episode bookkeeping") {
  Env env(test_can());
  env.reset(4);
  const int before = env.state().step_count;
  env.advance(Vec7::Constant(0.05));
  CHECK(env.state().step_count == before);
  CHECK_FALSE(env.state().done);
}

TEST_CASE("trace records are valid json lines") {
  Env env(test_can());
  env.reset(6);
  const std::string path = "test_trace.jsonl";
  {
    TraceWriter tw(path);
    for (int i = 0; i < 3; ++i) {
      const auto res = env.step(Vec7::Constant(0.01));
      tw.append(env.state(), res.reward, res.done);
    }
  }
  std::ifstream in(path);
  std::string line;
  int count = 0;
  while (std::getline(in, line)) {
    const auto rec = nlohmann::json::parse(line);
    CHECK(rec.at("q").size() == 7);
    CHECK(rec.at("pose").size() == 3);
    CHECK(rec.contains("grasped"));
    CHECK(rec.contains("reward"));
    CHECK(rec.contains("done"));
    ++count;
  }
  CHECK(count == 3);
  std::remove(path.c_str());
}
