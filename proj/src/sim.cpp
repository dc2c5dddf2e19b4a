#include "ilad/sim.hpp"

#include <nlohmann/json.hpp>

namespace ilad {

Eigen::Matrix<double, 12, 1> Observation::flat() const {
  Eigen::Matrix<double, 12, 1> v;
  v << pose.x, pose.y, pose.theta, q, target;
  return v;
}

Vec2 fingertip_in_palm(double j1, double j2, double mount_x,
                       const SimConfig& cfg) {
  const double a1 = 0.5 * kPi + j1;
  const double a2 = a1 + j2;
  return Vec2(mount_x + cfg.link1 * std::cos(a1) + cfg.link2 * std::cos(a2),
              cfg.link1 * std::sin(a1) + cfg.link2 * std::sin(a2));
}

FkResult forward_kinematics(const Vec7& q, const SimConfig& cfg) {
  FkResult fk;
  fk.palm = {q[0], q[1]};
  fk.palm_rot = q[2];
  const Transform2 palm{q[2], fk.palm};
  fk.tip1 = palm.apply(fingertip_in_palm(q[3], q[4], cfg.palm_half_width, cfg));
  fk.tip2 =
      palm.apply(fingertip_in_palm(q[5], q[6], -cfg.palm_half_width, cfg));
  return fk;
}

bool grasp_check(const std::array<Contact, 2>& contacts,
                 double opposition_threshold) {
  return contacts[0].touching && contacts[1].touching &&
         contacts[0].normal.dot(contacts[1].normal) < opposition_threshold;
}

Env::Env(Polygon object, SimConfig cfg)
    : object_(std::move(object)), cfg_(cfg) {
  validate_polygon(object_);
}

const EnvState& Env::reset(uint64_t seed) {
  Rng rng(Rng::mix(seed, hash_string("env_reset")));
  state_ = EnvState{};
  state_.q.setZero();
  state_.q[0] = cfg_.home_palm.x();
  state_.q[1] = cfg_.home_palm.y();
  state_.pose.x =
      rng.uniform(cfg_.start_center.x() - cfg_.region_half,
                  cfg_.start_center.x() + cfg_.region_half);
  state_.pose.y =
      rng.uniform(cfg_.start_center.y() - cfg_.region_half,
                  cfg_.start_center.y() + cfg_.region_half);
  state_.pose.theta = wrap_angle(rng.uniform(-kPi, kPi));
  const Vec2 start(state_.pose.x, state_.pose.y);
  do {
    state_.target = {rng.uniform(cfg_.goal_center.x() - cfg_.region_half,
                                 cfg_.goal_center.x() + cfg_.region_half),
                     rng.uniform(cfg_.goal_center.y() - cfg_.region_half,
                                 cfg_.goal_center.y() + cfg_.region_half)};
  } while ((state_.target - start).norm() < cfg_.min_start_target_dist);
  cloud_ = sample_point_cloud(object_, cfg_.n_cloud_points, seed);
  return state_;
}

Polygon Env::world_polygon() const {
  return object_.transformed(state_.pose.transform());
}

std::array<Contact, 2> Env::contacts() const {
  const Polygon world = world_polygon();
  const FkResult fk = forward_kinematics(state_.q, cfg_);
  std::array<Contact, 2> out;
  const Vec2 tips[2] = {fk.tip1, fk.tip2};
  for (int i = 0; i < 2; ++i) {
    const BoundaryHit hit = nearest_boundary_point(world, tips[i]);
    out[i].point = hit.point;
    out[i].normal = hit.normal;
    out[i].signed_dist = hit.signed_dist;
    out[i].touching = hit.signed_dist <= cfg_.contact_tol;
  }
  return out;
}

bool Env::is_success() const {
  return (Vec2(state_.pose.x, state_.pose.y) - state_.target).norm() <=
         cfg_.success_radius;
}

Action Env::clip_action(const Action& dq) const {
  if (!dq.allFinite()) throw InvalidArgument("action has non-finite entries");
  return dq.cwiseMax(-cfg_.action_clip).cwiseMin(cfg_.action_clip);
}

void Env::apply_physics(const Action& dq) {
  state_.q += dq;
  state_.q[0] = clamp(state_.q[0], -cfg_.workspace, cfg_.workspace);
  state_.q[1] = clamp(state_.q[1], -cfg_.workspace, cfg_.workspace);
  state_.q[2] = wrap_angle(state_.q[2]);
  for (int i = 3; i < 7; ++i)
    state_.q[i] = clamp(state_.q[i], -0.5 * kPi, 0.5 * kPi);

  state_.just_engaged = false;
  const Transform2 palm{state_.q[2], {state_.q[0], state_.q[1]}};
  if (state_.grasped) {
    state_.pose = ObjectPose::from_transform(palm.compose(state_.rel));
    const auto cs = contacts();
    if (!cs[0].touching && !cs[1].touching) state_.grasped = false;
  } else {
    auto cs = contacts();
    Vec2 push = Vec2::Zero();
    for (const auto& c : cs)
      if (c.signed_dist < 0) push += -c.normal * (-c.signed_dist);
    const double norm = push.norm();
    if (norm > 0) {
      if (norm > cfg_.max_push) push *= cfg_.max_push / norm;
      state_.pose.x = clamp(state_.pose.x + push.x(), -cfg_.workspace,
                            cfg_.workspace);
      state_.pose.y = clamp(state_.pose.y + push.y(), -cfg_.workspace,
                            cfg_.workspace);
      cs = contacts();
    }
    if (grasp_check(cs, cfg_.opposition_threshold)) {
      state_.grasped = true;
      state_.just_engaged = true;
      state_.rel = palm.inverse().compose(state_.pose.transform());
    }
  }
}

double Env::reward(const EnvState& s, const Action& dq_clipped) const {
  double r = -cfg_.action_cost * dq_clipped.squaredNorm();
  const Vec2 obj(s.pose.x, s.pose.y);
  if (s.grasped) {
    if (s.just_engaged) r += cfg_.engage_bonus;
    r += cfg_.hold_bonus;
    r -= cfg_.carry_coef * (obj - s.target).norm();
  } else {
    const Vec2 palm(s.q[0], s.q[1]);
    r -= cfg_.reach_coef * (palm - obj).norm();
  }
  if ((obj - s.target).norm() <= cfg_.success_radius)
    r += cfg_.success_bonus;
  return clamp(r, cfg_.reward_min, cfg_.reward_max);
}

StepResult Env::step(const Action& dq) {
  if (state_.done) throw InvalidState("stepping a finished episode");
  const Action clipped = clip_action(dq);
  apply_physics(clipped);
  state_.step_count += 1;
  StepResult result;
  result.reward = reward(state_, clipped);
  state_.done = is_success() || state_.step_count >= cfg_.horizon;
  result.done = state_.done;
  result.obs = observe();
  return result;
}

void Env::advance(const Action& dq) { apply_physics(clip_action(dq)); }

Observation Env::observe() const {
  Observation obs;
  obs.cloud = cloud_;
  obs.pose = state_.pose;
  obs.q = state_.q;
  obs.target = state_.target;
  return obs;
}

std::string trace_record(const EnvState& state, double reward, bool done) {
  nlohmann::json rec;
  rec["q"] = std::vector<double>(state.q.data(), state.q.data() + 7);
  rec["pose"] = {state.pose.x, state.pose.y, state.pose.theta};
  rec["grasped"] = state.grasped;
  rec["reward"] = reward;
  rec["done"] = done;
  return rec.dump();
}

TraceWriter::TraceWriter(const std::string& path) : out_(path) {
  if (!out_) throw InvalidArgument("cannot open trace file: " + path);
}

void TraceWriter::append(const EnvState& state, double reward, bool done) {
  out_ << trace_record(state, reward, done) << "\n";
}

}  // namespace ilad
