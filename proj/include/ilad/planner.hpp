#pragma once

#include <functional>
#include <limits>
#include <optional>

#include "ilad/parallel.hpp"
#include "ilad/sim.hpp"

namespace ilad {

using VecX = Eigen::VectorXd;

struct GraspTarget {
  Vec7 jh = Vec7::Zero();
  Vec2 contact1 = Vec2::Zero();
  Vec2 contact2 = Vec2::Zero();
  Vec2 normal1 = Vec2::Zero();
  Vec2 normal2 = Vec2::Zero();
  double width = 0.0;
  // Reach-toward-the-object-only mode: jh and contacts carry no information
  // and the reaching cost uses the palm-to-object distance.
  bool palm_only = false;
};

struct CemConfig {
  int n_samples = 200;
  int n_elites = 10;
  int horizon = 5;
  int max_mpc_steps = 150;
  int cem_iters = 5;
  double init_sigma = 0.03;
  double delta = 0.06;
  double lambda_obj = 10.0;
};

struct Demonstration {
  int object_id = 0;
  std::vector<std::pair<Observation, Action>> pairs;
  double final_cost = 0.0;
  GraspTarget grasp;
};

struct Pose2 {
  Vec2 pos = Vec2::Zero();
  double angle = 0.0;
};

// Two-link planar IK, elbow-down branch; link1 points along mount.angle at
// j1 = 0. Throws Unreachable outside the annulus [|l1-l2|, l1+l2].
std::pair<double, double> inverse_kinematics(const Vec2& tip,
                                             const Pose2& mount, double l1,
                                             double l2);

inline constexpr double kMinGraspWidth = 0.05;
inline constexpr double kMaxGraspWidth = 0.35;
inline constexpr double kGraspDiversity = 0.05;
inline constexpr int kGraspPairSamples = 2000;
inline constexpr double kGraspAxisAlign = 0.5;
inline constexpr double kCemSigmaFloor = 1e-4;
inline constexpr double kLambdaObj = 10.0;

// Antipodal grasp targets on the posed polygon, clearance-ranked, pairwise
// palm positions at least kGraspDiversity apart. Throws NoGraspFound when no
// sampled pair is feasible.
std::vector<GraspTarget> synthesize_grasps(const Polygon& world_poly, int k,
                                           uint64_t seed,
                                           const SimConfig& sim = {});

double pose_diff_sq(const ObjectPose& a, const ObjectPose& b,
                    double object_radius);

// Cost of a rollout: squared reach error of the final hand configuration
// plus lambda times the squared displacement of the object from the start
// of the trajectory.
double planning_objective(const std::vector<EnvState>& traj,
                          const GraspTarget& grasp, double lambda_obj,
                          double object_radius);

struct CemState {
  VecX mu;
  VecX sigma;
  VecX best_seq;
  double best_cost = std::numeric_limits<double>::infinity();
};

CemState make_cem_state(const CemConfig& cfg, int action_dim = 7);

// One sample-score-refit round on an arbitrary sequence cost; keeps the
// best-so-far sequence across chained calls.
void cem_core_iterate(const std::function<double(const VecX&)>& cost,
                      int n_samples, int n_elites, double sigma_floor,
                      CemState& state, Rng& rng);

// One CEM refinement of horizon-length action sequences rolled out from
// snapshot; episode_start anchors the object-displacement term.
void cem_iterate(const Env& env, const EnvState& snapshot,
                 const EnvState& episode_start, const GraspTarget& grasp,
                 const CemConfig& cfg, CemState& state, Rng& rng);

// Receding-horizon execution on a freshly reset environment until the
// objective drops below delta; nullopt when the budget runs out.
std::optional<Demonstration> mpc_execute(Env& env, const GraspTarget& grasp,
                                         const CemConfig& cfg, uint64_t seed);

// Goal-biased joint-space RRT toward grasp.jh, replayed through the
// environment; final_cost may exceed goal_radius since the object is ignored
// during search.
std::optional<Demonstration> rrt_plan(Env& env, const GraspTarget& grasp,
                                      int nodes, double eps, double beta,
                                      double goal_radius, uint64_t seed);

struct DemoGenConfig {
  CemConfig cem;
  bool use_grasp_pose = true;
  bool use_rrt = false;
  int rrt_nodes = 10000;
  double rrt_eps = 0.01;
  double rrt_beta = 0.5;
  int grasp_candidates = 4;
  SimConfig sim;
};

struct DemoReportRow {
  int object_id = 0;
  int attempts = 0;
  int accepted = 0;
  double mean_cost = 0.0;
  double mean_displacement = 0.0;
};

struct DemoSet {
  std::vector<Demonstration> demos;
  std::vector<DemoReportRow> report;
};

// Per object: reset, synthesize, plan, retry up to 5x per_object attempts.
// Throws GenerationFailed when nothing is accepted across all objects.
DemoSet generate_demo_set(const std::vector<Polygon>& objects, int per_object,
                          const DemoGenConfig& cfg, uint64_t seed);

void save_demo_set(const std::string& path,
                   const std::vector<Demonstration>& demos);
std::vector<Demonstration> load_demo_set(const std::string& path);
void save_demo_report(const std::string& path,
                      const std::vector<DemoReportRow>& rows);

}  // namespace ilad
