#include "ilad/planner.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

namespace ilad {

using nlohmann::json;

std::pair<double, double> inverse_kinematics(const Vec2& tip,
                                             const Pose2& mount, double l1,
                                             double l2) {
  if (l1 <= 0.0 || l2 <= 0.0)
    throw InvalidArgument("inverse_kinematics: link lengths must be positive");
  const Vec2 w = tip - mount.pos;
  const double d = w.norm();
  if (d > l1 + l2 + 1e-12 || d < std::abs(l1 - l2) - 1e-12)
    throw Unreachable("inverse_kinematics: target outside reachable annulus");
  const double c =
      std::clamp((d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double j2 = std::acos(c);
  const double j1 =
      wrap_angle(std::atan2(w.y(), w.x()) -
                 std::atan2(l2 * std::sin(j2), l1 + l2 * c) - mount.angle);
  return {j1, j2};
}

std::vector<GraspTarget> synthesize_grasps(const Polygon& world_poly, int k,
                                           uint64_t seed,
                                           const SimConfig& sim) {
  if (k < 1) throw InvalidArgument("synthesize_grasps: k must be >= 1");
  const double total = perimeter(world_poly);
  const double reach = 0.8 * (sim.link1 + sim.link2);
  Rng rng(Rng::mix(seed, hash_string("grasp_synth")));

  struct Candidate {
    GraspTarget tgt;
    double clearance = 0.0;
  };
  std::vector<Candidate> cands;

  for (int i = 0; i < kGraspPairSamples; ++i) {
    const double s1 = rng.uniform() * total;
    const double s2 = rng.uniform() * total;
    const Vec2 p1 = boundary_point(world_poly, s1);
    const Vec2 p2 = boundary_point(world_poly, s2);
    const Vec2 n1 = boundary_normal_at(world_poly, s1);
    const Vec2 n2 = boundary_normal_at(world_poly, s2);
    if (n1.dot(n2) >= sim.opposition_threshold) continue;
    const double width = (p2 - p1).norm();
    if (width < kMinGraspWidth || width > kMaxGraspWidth) continue;

    const Vec2 mid = 0.5 * (p1 + p2);
    const Vec2 axis = (p2 - p1) / width;
    // each outward normal must oppose the grasp axis, not just the other
    // normal, or thin objects admit pairs that slide off under closure
    if (n1.dot(axis) > -kGraspAxisAlign || n2.dot(axis) < kGraspAxisAlign)
      continue;
    const double lateral = 0.5 * width - sim.palm_half_width;
    const double standoff2 = reach * reach - lateral * lateral;
    if (standoff2 <= 0.0) continue;
    const double standoff = std::sqrt(standoff2);

    // palm sits on whichever side of the contact line has more clearance
    double side = 1.0;
    double clearance = -std::numeric_limits<double>::infinity();
    for (const double s : {1.0, -1.0}) {
      const Vec2 approach(-s * axis.y(), s * axis.x());
      const Vec2 pos = mid - standoff * approach;
      const double c2 = nearest_boundary_point(world_poly, pos).signed_dist;
      if (c2 > clearance + 1e-12) {
        clearance = c2;
        side = s;
      }
    }
    const Vec2 u = side * axis;
    const Vec2 approach(-u.y(), u.x());
    const Vec2 palm_pos = mid - standoff * approach;
    const double phi = std::atan2(u.y(), u.x());
    const Vec2 c_plus = side > 0.0 ? p2 : p1;
    const Vec2 c_minus = side > 0.0 ? p1 : p2;
    const Vec2 n_plus = side > 0.0 ? n2 : n1;
    const Vec2 n_minus = side > 0.0 ? n1 : n2;

    const Transform2 palm_tf{phi, palm_pos};
    const double mount_angle = wrap_angle(phi + 0.5 * kPi);
    std::pair<double, double> f1, f2;
    try {
      f1 = inverse_kinematics(c_plus,
                              {palm_tf.apply({sim.palm_half_width, 0.0}),
                               mount_angle},
                              sim.link1, sim.link2);
      f2 = inverse_kinematics(c_minus,
                              {palm_tf.apply({-sim.palm_half_width, 0.0}),
                               mount_angle},
                              sim.link1, sim.link2);
    } catch (const Unreachable&) {
      continue;
    }
    const double limit = 0.5 * kPi;
    if (std::abs(f1.first) > limit || std::abs(f1.second) > limit ||
        std::abs(f2.first) > limit || std::abs(f2.second) > limit)
      continue;

    GraspTarget tgt;
    tgt.jh << palm_pos.x(), palm_pos.y(), wrap_angle(phi), f1.first, f1.second,
        f2.first, f2.second;
    tgt.contact1 = c_plus;
    tgt.contact2 = c_minus;
    tgt.normal1 = n_plus;
    tgt.normal2 = n_minus;
    tgt.width = width;
    const FkResult fk = forward_kinematics(tgt.jh, sim);
    if ((fk.tip1 - c_plus).norm() > 0.01 || (fk.tip2 - c_minus).norm() > 0.01)
      continue;
    cands.push_back({tgt, clearance});
  }
  if (cands.empty())
    throw NoGraspFound("synthesize_grasps: no feasible antipodal pair");

  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) {
                     return a.clearance > b.clearance;
                   });
  std::vector<GraspTarget> out;
  for (const Candidate& c : cands) {
    if (static_cast<int>(out.size()) == k) break;
    const Vec2 palm(c.tgt.jh[0], c.tgt.jh[1]);
    const bool distinct = std::all_of(
        out.begin(), out.end(), [&](const GraspTarget& g) {
          return (Vec2(g.jh[0], g.jh[1]) - palm).norm() >= kGraspDiversity;
        });
    if (distinct) out.push_back(c.tgt);
  }
  return out;
}

double pose_diff_sq(const ObjectPose& a, const ObjectPose& b,
                    double object_radius) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dth = wrap_angle(a.theta - b.theta) * object_radius;
  return dx * dx + dy * dy + dth * dth;
}

double planning_objective(const std::vector<EnvState>& traj,
                          const GraspTarget& grasp, double lambda_obj,
                          double object_radius) {
  if (traj.empty())
    throw InvalidArgument("planning_objective: empty trajectory");
  const EnvState& last = traj.back();
  double reach = 0.0;
  if (grasp.palm_only) {
    const Vec2 palm(last.q[0], last.q[1]);
    reach = (palm - Vec2(last.pose.x, last.pose.y)).squaredNorm();
  } else {
    Vec7 dq = last.q - grasp.jh;
    dq[2] = wrap_angle(dq[2]);
    reach = dq.squaredNorm();
  }
  return reach +
         lambda_obj * pose_diff_sq(last.pose, traj.front().pose, object_radius);
}

CemState make_cem_state(const CemConfig& cfg, int action_dim) {
  if (cfg.n_samples < 1 || cfg.n_elites < 1 ||
      cfg.n_elites > cfg.n_samples || cfg.horizon < 1 || cfg.cem_iters < 1 ||
      cfg.max_mpc_steps < 1 || cfg.init_sigma <= 0.0 || cfg.delta <= 0.0 ||
      cfg.lambda_obj < 0.0 || action_dim < 1)
    throw InvalidArgument("make_cem_state: invalid config");
  CemState st;
  st.mu = VecX::Zero(cfg.horizon * action_dim);
  st.sigma = VecX::Constant(cfg.horizon * action_dim, cfg.init_sigma);
  return st;
}

void cem_core_iterate(const std::function<double(const VecX&)>& cost,
                      int n_samples, int n_elites, double sigma_floor,
                      CemState& state, Rng& rng) {
  if (n_samples < 1 || n_elites < 1 || n_elites > n_samples)
    throw InvalidArgument("cem_core_iterate: need 1 <= n_elites <= n_samples");
  const Eigen::Index dim = state.mu.size();
  std::vector<VecX> samples(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    VecX x(dim);
    for (Eigen::Index d = 0; d < dim; ++d)
      x[d] = state.mu[d] + state.sigma[d] * rng.normal();
    samples[i] = std::move(x);
  }
  std::vector<double> costs(n_samples);
  par::for_each(static_cast<std::size_t>(n_samples),
                [&](std::size_t i) { costs[i] = cost(samples[i]); });

  std::vector<int> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return costs[a] < costs[b]; });
  if (costs[order[0]] < state.best_cost) {
    state.best_cost = costs[order[0]];
    state.best_seq = samples[order[0]];
  }

  VecX mean = VecX::Zero(dim);
  for (int e = 0; e < n_elites; ++e) mean += samples[order[e]];
  mean /= n_elites;
  VecX var = VecX::Zero(dim);
  for (int e = 0; e < n_elites; ++e) {
    const VecX d = samples[order[e]] - mean;
    var += d.cwiseProduct(d);
  }
  var /= n_elites;
  state.mu = mean;
  state.sigma = var.cwiseSqrt().cwiseMax(sigma_floor);
}

void cem_iterate(const Env& env, const EnvState& snapshot,
                 const EnvState& episode_start, const GraspTarget& grasp,
                 const CemConfig& cfg, CemState& state, Rng& rng) {
  const Eigen::Index dim = 7 * cfg.horizon;
  if (state.mu.size() != dim || state.sigma.size() != dim)
    throw InvalidArgument("cem_iterate: state dimension mismatch");
  const double radius = bounding_radius(env.object());
  const auto cost = [&](const VecX& seq) {
    Env rollout = env;
    rollout.set_state(snapshot);
    for (int t = 0; t < cfg.horizon; ++t) {
      const Vec7 a = seq.segment<7>(7 * t);
      rollout.advance(a);
    }
    return planning_objective({episode_start, rollout.state()}, grasp,
                              cfg.lambda_obj, radius);
  };
  cem_core_iterate(cost, cfg.n_samples, cfg.n_elites, kCemSigmaFloor, state,
                   rng);
}

std::optional<Demonstration> mpc_execute(Env& env, const GraspTarget& grasp,
                                         const CemConfig& cfg, uint64_t seed) {
  const double radius = bounding_radius(env.object());
  const EnvState episode_start = env.state();
  std::vector<EnvState> executed{episode_start};

  Demonstration demo;
  demo.object_id = env.object().instance_id;
  demo.grasp = grasp;
  double cost = planning_objective(executed, grasp, cfg.lambda_obj, radius);
  if (cost < cfg.delta) {
    demo.final_cost = cost;
    return demo;
  }

  Rng rng(Rng::mix(seed, hash_string("mpc")));
  VecX warm_mu = VecX::Zero(7 * cfg.horizon);
  for (int step = 0; step < cfg.max_mpc_steps; ++step) {
    CemState st = make_cem_state(cfg);
    st.mu = warm_mu;
    for (int it = 0; it < cfg.cem_iters; ++it)
      cem_iterate(env, env.state(), episode_start, grasp, cfg, st, rng);

    Vec7 a = st.best_seq.head<7>();
    const double clip = env.config().action_clip;
    a = a.cwiseMax(-clip).cwiseMin(clip);
    demo.pairs.emplace_back(env.observe(), a);
    env.advance(a);
    executed.push_back(env.state());

    cost = planning_objective(executed, grasp, cfg.lambda_obj, radius);
    if (cost < cfg.delta) {
      demo.final_cost = cost;
      return demo;
    }
    warm_mu.head(7 * (cfg.horizon - 1)) = st.best_seq.tail(7 * (cfg.horizon - 1));
    warm_mu.tail(7).setZero();
  }
  return std::nullopt;
}

namespace {

Vec7 joint_diff(const Vec7& a, const Vec7& b) {
  Vec7 d = a - b;
  d[2] = wrap_angle(d[2]);
  return d;
}

}  // namespace

std::optional<Demonstration> rrt_plan(Env& env, const GraspTarget& grasp,
                                      int nodes, double eps, double beta,
                                      double goal_radius, uint64_t seed) {
  if (nodes < 1 || eps <= 0.0 || beta < 0.0 || beta > 1.0 ||
      goal_radius <= 0.0)
    throw InvalidArgument("rrt_plan: invalid parameters");
  const double radius = bounding_radius(env.object());
  const EnvState start = env.state();
  const SimConfig& sc = env.config();

  std::vector<Vec7> tree{start.q};
  std::vector<int> parent{-1};
  int goal_node =
      joint_diff(start.q, grasp.jh).norm() <= goal_radius ? 0 : -1;

  Rng rng(Rng::mix(seed, hash_string("rrt")));
  while (goal_node < 0 && static_cast<int>(tree.size()) < nodes) {
    Vec7 target;
    if (rng.uniform() < beta) {
      target = grasp.jh;
    } else {
      target[0] = rng.uniform(-sc.workspace, sc.workspace);
      target[1] = rng.uniform(-sc.workspace, sc.workspace);
      target[2] = rng.uniform(-kPi, kPi);
      for (int j = 3; j < 7; ++j) target[j] = rng.uniform(-0.5 * kPi, 0.5 * kPi);
    }
    int nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < tree.size(); ++i) {
      const double d = joint_diff(target, tree[i]).norm();
      if (d < best) {
        best = d;
        nearest = static_cast<int>(i);
      }
    }
    if (best < 1e-12) continue;
    const Vec7 step = joint_diff(target, tree[nearest]);
    Vec7 qn = tree[nearest] + std::min(1.0, eps / best) * step;
    qn[0] = std::clamp(qn[0], -sc.workspace, sc.workspace);
    qn[1] = std::clamp(qn[1], -sc.workspace, sc.workspace);
    qn[2] = wrap_angle(qn[2]);
    for (int j = 3; j < 7; ++j) qn[j] = std::clamp(qn[j], -0.5 * kPi, 0.5 * kPi);
    tree.push_back(qn);
    parent.push_back(nearest);
    if (joint_diff(qn, grasp.jh).norm() <= goal_radius)
      goal_node = static_cast<int>(tree.size()) - 1;
  }
  if (goal_node < 0) return std::nullopt;

  std::vector<int> path;
  for (int i = goal_node; i >= 0; i = parent[i]) path.push_back(i);
  std::reverse(path.begin(), path.end());

  Demonstration demo;
  demo.object_id = env.object().instance_id;
  demo.grasp = grasp;
  std::vector<EnvState> executed{start};
  for (std::size_t i = 1; i < path.size(); ++i) {
    const Vec7 a = joint_diff(tree[path[i]], tree[path[i - 1]]);
    demo.pairs.emplace_back(env.observe(), a);
    env.advance(a);
    executed.push_back(env.state());
  }
  demo.final_cost = planning_objective(executed, grasp, kLambdaObj, radius);
  return demo;
}

DemoSet generate_demo_set(const std::vector<Polygon>& objects, int per_object,
                          const DemoGenConfig& cfg, uint64_t seed) {
  if (per_object < 1)
    throw InvalidArgument("generate_demo_set: per_object must be >= 1");
  if (cfg.use_rrt && !cfg.use_grasp_pose)
    throw InvalidArgument("generate_demo_set: rrt baseline needs grasp targets");
  if (cfg.grasp_candidates < 1)
    throw InvalidArgument("generate_demo_set: grasp_candidates must be >= 1");
  if (cfg.use_rrt && (cfg.rrt_nodes < 1 || cfg.rrt_eps <= 0.0 ||
                      cfg.rrt_beta < 0.0 || cfg.rrt_beta > 1.0))
    throw InvalidArgument("generate_demo_set: invalid rrt parameters");
  (void)make_cem_state(cfg.cem);
  for (const Polygon& p : objects) validate_polygon(p);

  const uint64_t base = Rng::mix(seed, hash_string("demo_gen"));
  const int budget = 5 * per_object;
  std::vector<std::vector<Demonstration>> accepted(objects.size());
  std::vector<DemoReportRow> report(objects.size());

  par::for_each(objects.size(), [&](std::size_t oi) {
    Env env(objects[oi], cfg.sim);
    DemoReportRow row;
    row.object_id = static_cast<int>(oi);
    double cost_sum = 0.0, disp_sum = 0.0;
    while (row.accepted < per_object && row.attempts < budget) {
      const uint64_t attempt_seed =
          Rng::mix(Rng::mix(base, oi), static_cast<uint64_t>(row.attempts));
      ++row.attempts;
      env.reset(attempt_seed);
      const ObjectPose start_pose = env.state().pose;

      GraspTarget grasp;
      if (cfg.use_grasp_pose) {
        try {
          grasp = synthesize_grasps(env.world_polygon(), cfg.grasp_candidates,
                                    attempt_seed, cfg.sim)
                      .front();
        } catch (const NoGraspFound&) {
          continue;
        }
      } else {
        grasp.palm_only = true;
      }

      std::optional<Demonstration> demo =
          cfg.use_rrt
              ? rrt_plan(env, grasp, cfg.rrt_nodes, cfg.rrt_eps, cfg.rrt_beta,
                         cfg.cem.delta, attempt_seed)
              : mpc_execute(env, grasp, cfg.cem, attempt_seed);
      if (!demo) continue;

      demo->object_id = static_cast<int>(oi);
      const ObjectPose end_pose = env.state().pose;
      disp_sum += std::hypot(end_pose.x - start_pose.x,
                             end_pose.y - start_pose.y);
      cost_sum += demo->final_cost;
      accepted[oi].push_back(std::move(*demo));
      ++row.accepted;
    }
    if (row.accepted > 0) {
      row.mean_cost = cost_sum / row.accepted;
      row.mean_displacement = disp_sum / row.accepted;
    }
    report[oi] = row;
  });

  DemoSet out;
  out.report = std::move(report);
  for (auto& v : accepted)
    for (auto& d : v) out.demos.push_back(std::move(d));
  if (out.demos.empty())
    throw GenerationFailed("generate_demo_set: no demonstrations accepted");
  return out;
}

namespace {

json vec7_json(const Vec7& v) {
  return std::vector<double>(v.data(), v.data() + 7);
}

Vec7 vec7_from(const json& a) {
  Vec7 v;
  for (int i = 0; i < 7; ++i) v[i] = a.at(i).get<double>();
  return v;
}

}  // namespace

void save_demo_set(const std::string& path,
                   const std::vector<Demonstration>& demos) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open: " + path);
  for (const Demonstration& d : demos) {
    json rec;
    rec["object_id"] = d.object_id;
    json grasp;
    grasp["jh"] = vec7_json(d.grasp.jh);
    grasp["contacts"] = json::array(
        {{{"point", {d.grasp.contact1.x(), d.grasp.contact1.y()}},
          {"normal", {d.grasp.normal1.x(), d.grasp.normal1.y()}}},
         {{"point", {d.grasp.contact2.x(), d.grasp.contact2.y()}},
          {"normal", {d.grasp.normal2.x(), d.grasp.normal2.y()}}}});
    grasp["width"] = d.grasp.width;
    grasp["palm_only"] = d.grasp.palm_only;
    rec["grasp"] = std::move(grasp);
    rec["final_cost"] = d.final_cost;
    json pairs = json::array();
    for (const auto& [obs, act] : d.pairs) {
      json cloud = json::array();
      for (const Vec2& p : obs.cloud.points) cloud.push_back({p.x(), p.y()});
      json o;
      o["cloud"] = std::move(cloud);
      o["pose"] = {obs.pose.x, obs.pose.y, obs.pose.theta};
      o["q"] = vec7_json(obs.q);
      o["target"] = {obs.target.x(), obs.target.y()};
      pairs.push_back({{"obs", std::move(o)}, {"act", vec7_json(act)}});
    }
    rec["pairs"] = std::move(pairs);
    out << rec.dump() << "\n";
  }
}

std::vector<Demonstration> load_demo_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open: " + path);
  std::vector<Demonstration> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    Demonstration d;
    d.object_id = rec.at("object_id").get<int>();
    const json& g = rec.at("grasp");
    d.grasp.jh = vec7_from(g.at("jh"));
    const json& contacts = g.at("contacts");
    const json& c1 = contacts.at(0);
    const json& c2 = contacts.at(1);
    d.grasp.contact1 = {c1.at("point").at(0).get<double>(),
                        c1.at("point").at(1).get<double>()};
    d.grasp.normal1 = {c1.at("normal").at(0).get<double>(),
                       c1.at("normal").at(1).get<double>()};
    d.grasp.contact2 = {c2.at("point").at(0).get<double>(),
                        c2.at("point").at(1).get<double>()};
    d.grasp.normal2 = {c2.at("normal").at(0).get<double>(),
                       c2.at("normal").at(1).get<double>()};
    d.grasp.width = g.at("width").get<double>();
    d.grasp.palm_only = g.at("palm_only").get<bool>();
    d.final_cost = rec.at("final_cost").get<double>();
    for (const json& pr : rec.at("pairs")) {
      const json& o = pr.at("obs");
      Observation obs;
      for (const json& p : o.at("cloud"))
        obs.cloud.points.emplace_back(p.at(0).get<double>(),
                                      p.at(1).get<double>());
      obs.cloud.n = static_cast<int>(obs.cloud.points.size());
      obs.pose = {o.at("pose").at(0).get<double>(),
                  o.at("pose").at(1).get<double>(),
                  o.at("pose").at(2).get<double>()};
      obs.q = vec7_from(o.at("q"));
      obs.target = {o.at("target").at(0).get<double>(),
                    o.at("target").at(1).get<double>()};
      d.pairs.emplace_back(std::move(obs), vec7_from(pr.at("act")));
    }
    out.push_back(std::move(d));
  }
  return out;
}

void save_demo_report(const std::string& path,
                      const std::vector<DemoReportRow>& rows) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open: " + path);
  out << "object_id,attempts,accepted,mean_cost,mean_displacement\n";
  for (const DemoReportRow& r : rows)
    out << r.object_id << ',' << r.attempts << ',' << r.accepted << ','
        << fmt_double(r.mean_cost) << ',' << fmt_double(r.mean_displacement)
        << "\n";
}

}  // namespace ilad
