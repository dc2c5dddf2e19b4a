#pragma once

#include <array>
#include <fstream>
#include <optional>

#include "ilad/shapes.hpp"

namespace ilad {

using Vec7 = Eigen::Matrix<double, 7, 1>;

// q layout: palm x, palm y, palm rotation, finger1 joints 1-2, finger2
// joints 1-2. Finger 1 is mounted at +palm_half_width, finger 2 at -.
struct SimConfig {
  double link1 = 0.12;
  double link2 = 0.10;
  double palm_half_width = 0.08;
  double contact_tol = 0.015;
  double opposition_threshold = -0.5;
  double max_push = 0.02;
  double action_clip = 0.05;
  int horizon = 200;
  double workspace = 1.5;
  double success_radius = 0.1;
  int n_cloud_points = 64;
  Vec2 start_center = {-0.5, 0.0};
  Vec2 goal_center = {0.5, 0.0};
  double region_half = 0.3;
  double min_start_target_dist = 0.5;
  Vec2 home_palm = {0.0, -0.8};
  double reach_coef = 0.1;
  double engage_bonus = 1.0;
  double hold_bonus = 0.0;  // per step while grasped
  double carry_coef = 0.5;
  double success_bonus = 10.0;
  double action_cost = 0.001;
  double reward_min = -2.0;
  double reward_max = 11.5;
};

struct ObjectPose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Transform2 transform() const { return {theta, {x, y}}; }
  static ObjectPose from_transform(const Transform2& tf) {
    return {tf.t.x(), tf.t.y(), wrap_angle(tf.theta)};
  }
};

struct EnvState {
  Vec7 q = Vec7::Zero();
  ObjectPose pose;
  bool grasped = false;
  Transform2 rel;  // object in palm frame, meaningful while grasped
  Vec2 target = Vec2::Zero();
  int step_count = 0;
  bool done = false;
  bool just_engaged = false;  // grasp engaged on the transition into this state
};

using Action = Vec7;

struct Observation {
  PointCloud cloud;
  ObjectPose pose;
  Vec7 q = Vec7::Zero();
  Vec2 target = Vec2::Zero();

  // pose(3) then q(7) then target(2)
  Eigen::Matrix<double, 12, 1> flat() const;
};

struct FkResult {
  Vec2 tip1 = Vec2::Zero();
  Vec2 tip2 = Vec2::Zero();
  Vec2 palm = Vec2::Zero();
  double palm_rot = 0.0;
};

FkResult forward_kinematics(const Vec7& q, const SimConfig& cfg = {});
// Fingertip in the palm frame for one finger mounted at mount_x.
Vec2 fingertip_in_palm(double j1, double j2, double mount_x,
                       const SimConfig& cfg = {});

struct Contact {
  bool touching = false;
  Vec2 point = Vec2::Zero();
  Vec2 normal = Vec2::Zero();  // outward boundary normal
  double signed_dist = 0.0;
};

bool grasp_check(const std::array<Contact, 2>& contacts,
                 double opposition_threshold = -0.5);

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
};

class Env {
 public:
  explicit Env(Polygon object, SimConfig cfg = {});

  const EnvState& reset(uint64_t seed);
  StepResult step(const Action& dq);
  // Physics-only transition for planner rollouts: no reward, no episode
  // bookkeeping, never throws on finished episodes.
  void advance(const Action& dq);

  const EnvState& state() const { return state_; }
  void set_state(const EnvState& s) { state_ = s; }
  Observation observe() const;
  const SimConfig& config() const { return cfg_; }
  const Polygon& object() const { return object_; }
  const PointCloud& cloud() const { return cloud_; }
  Polygon world_polygon() const;
  std::array<Contact, 2> contacts() const;
  bool is_success() const;
  double reward(const EnvState& state, const Action& dq_clipped) const;

 private:
  void apply_physics(const Action& dq_clipped);
  Action clip_action(const Action& dq) const;

  Polygon object_;
  SimConfig cfg_;
  EnvState state_;
  PointCloud cloud_;
};

std::string trace_record(const EnvState& state, double reward, bool done);

class TraceWriter {
 public:
  explicit TraceWriter(const std::string& path);
  void append(const EnvState& state, double reward, bool done);

 private:
  std::ofstream out_;
};

}  // namespace ilad
