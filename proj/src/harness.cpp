#include "ilad/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ilad/parallel.hpp"

namespace ilad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path);
  return out;
}

struct EpisodeOutcome {
  bool success = false;
  double final_dist = 0.0;
  double total_reward = 0.0;
  int steps = 0;
};

EpisodeOutcome run_policy_episode(const Policy& policy, const Polygon& object,
                                  const SimConfig& sim, uint64_t seed) {
  Env env(object, sim);
  env.reset(seed);
  Observation obs = env.observe();
  const VecX emb =
      policy.uses_encoder() ? policy.encode(obs.cloud) : VecX();
  EpisodeOutcome out;
  while (!env.state().done) {
    const DecEval e = policy.eval(emb, obs.flat());
    StepResult r = env.step(e.mean);
    out.total_reward += r.reward;
    ++out.steps;
    obs = std::move(r.obs);
  }
  out.success = env.is_success();
  const EnvState& s = env.state();
  out.final_dist =
      std::hypot(s.pose.x - s.target.x(), s.pose.y - s.target.y());
  return out;
}

void mean_and_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (xs.empty()) return;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  sd = std::sqrt(var / static_cast<double>(xs.size()));
}

std::string format_mean_std(const std::vector<double>& xs) {
  double m = 0.0, s = 0.0;
  mean_and_std(xs, m, s);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f ± %.3f", m, s);
  return buf;
}

}  // namespace

std::vector<int> distribute_trials(int total, int n_objects) {
  if (n_objects < 1)
    throw InvalidArgument("distribute_trials: n_objects must be >= 1");
  if (total < 1) throw InvalidArgument("distribute_trials: total must be >= 1");
  std::vector<int> out(n_objects, total / n_objects);
  for (int i = 0; i < total % n_objects; ++i) ++out[i];
  return out;
}

EvalReport evaluate_success(const Policy& policy,
                            const std::vector<Polygon>& objects,
                            const std::vector<int>& trials_per_object,
                            const std::vector<uint64_t>& seeds,
                            const SimConfig& sim) {
  if (objects.empty()) throw InvalidArgument("evaluate_success: no objects");
  if (seeds.empty()) throw InvalidArgument("evaluate_success: no seeds");
  if (trials_per_object.size() != objects.size())
    throw InvalidArgument(
        "evaluate_success: trial counts do not match the object list");
  int per_seed = 0;
  for (int t : trials_per_object) {
    if (t < 0) throw InvalidArgument("evaluate_success: negative trial count");
    per_seed += t;
  }
  if (per_seed < 1)
    throw InvalidArgument("evaluate_success: at least one trial required");

  std::vector<int> offset(objects.size() + 1, 0);
  for (std::size_t i = 0; i < objects.size(); ++i)
    offset[i + 1] = offset[i] + trials_per_object[i];

  EvalReport rep;
  rep.seeds = seeds;
  const std::size_t n_eps = seeds.size() * static_cast<std::size_t>(per_seed);
  rep.episodes.resize(n_eps);
  par::for_each(n_eps, [&](std::size_t i) {
    const std::size_t si = i / static_cast<std::size_t>(per_seed);
    const int r = static_cast<int>(i % static_cast<std::size_t>(per_seed));
    const std::size_t oi = static_cast<std::size_t>(
        std::upper_bound(offset.begin(), offset.end(), r) - offset.begin() - 1);
    const int trial = r - offset[oi];
    const uint64_t ep_seed =
        Rng::mix(Rng::mix(seeds[si], hash_string("eval")),
                 Rng::mix(oi, static_cast<uint64_t>(trial)));
    const EpisodeOutcome oc =
        run_policy_episode(policy, objects[oi], sim, ep_seed);
    EvalEpisode& ep = rep.episodes[i];
    ep.object_index = static_cast<int>(oi);
    ep.category = objects[oi].category;
    ep.instance_id = objects[oi].instance_id;
    ep.seed = seeds[si];
    ep.trial = trial;
    ep.success = oc.success;
    ep.final_dist = oc.final_dist;
    ep.total_reward = oc.total_reward;
    ep.steps = oc.steps;
  });

  rep.per_object.resize(objects.size());
  for (std::size_t i = 0; i < objects.size(); ++i) {
    rep.per_object[i].object_index = static_cast<int>(i);
    rep.per_object[i].category = objects[i].category;
    rep.per_object[i].instance_id = objects[i].instance_id;
  }
  for (const EvalEpisode& ep : rep.episodes) {
    EvalObjectCount& row = rep.per_object[ep.object_index];
    ++row.trials;
    row.successes += ep.success ? 1 : 0;
  }
  rep.per_seed_rates.resize(seeds.size());
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    int s = 0;
    for (int r = 0; r < per_seed; ++r)
      s += rep.episodes[si * per_seed + r].success ? 1 : 0;
    rep.per_seed_rates[si] = static_cast<double>(s) / per_seed;
    rep.successes += s;
  }
  rep.trials = static_cast<int>(n_eps);
  rep.success_rate = static_cast<double>(rep.successes) / rep.trials;
  mean_and_std(rep.per_seed_rates, rep.seed_mean, rep.seed_std);
  const VecX params = policy.params();
  rep.config_hash = Rng::mix(hash_doubles(params.data(), params.size()),
                             hash_string(sim_config_to_json(sim)));
  return rep;
}

EvalReport evaluate_success(const Policy& policy,
                            const std::vector<Polygon>& objects,
                            int trials_per_object,
                            const std::vector<uint64_t>& seeds,
                            const SimConfig& sim) {
  if (trials_per_object < 1)
    throw InvalidArgument("evaluate_success: trials_per_object must be >= 1");
  return evaluate_success(
      policy, objects, std::vector<int>(objects.size(), trials_per_object),
      seeds, sim);
}

void save_eval_episodes(const std::string& path, const EvalReport& report) {
  std::ofstream out = open_out(path);
  out << "object_index,category,instance_id,seed,trial,success,final_dist,"
         "total_reward,steps\n";
  for (const EvalEpisode& ep : report.episodes) {
    out << ep.object_index << ',' << to_string(ep.category) << ','
        << ep.instance_id << ',' << ep.seed << ',' << ep.trial << ','
        << (ep.success ? 1 : 0) << ',' << fmt_double(ep.final_dist) << ','
        << fmt_double(ep.total_reward) << ',' << ep.steps << '\n';
  }
}

void save_eval_summary(const std::string& path, const EvalReport& report) {
  json j;
  j["success_rate"] = report.success_rate;
  j["trials"] = report.trials;
  j["successes"] = report.successes;
  j["seeds"] = report.seeds;
  j["per_seed_rates"] = report.per_seed_rates;
  j["seed_mean"] = report.seed_mean;
  j["seed_std"] = report.seed_std;
  j["config_hash"] = report.config_hash;
  json rows = json::array();
  for (const EvalObjectCount& row : report.per_object) {
    json r;
    r["object_index"] = row.object_index;
    r["category"] = to_string(row.category);
    r["instance_id"] = row.instance_id;
    r["trials"] = row.trials;
    r["successes"] = row.successes;
    rows.push_back(r);
  }
  j["per_object"] = rows;
  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
}

namespace {

void drive_to(Env& env, const Vec7& target, int max_steps) {
  for (int i = 0; i < max_steps && !env.state().done; ++i) {
    Vec7 d = target - env.state().q;
    d[2] = wrap_angle(d[2]);
    if (d.cwiseAbs().maxCoeff() < 1e-7) return;
    env.step(d);
  }
}

std::pair<double, double> finger_ik(const Vec2& rel, double l1, double l2,
                                    double elbow) {
  double c2 = (rel.squaredNorm() - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  c2 = clamp(c2, -1.0, 1.0);
  const double j2 = elbow * std::acos(c2);
  const double j1 = std::atan2(rel.y(), rel.x()) -
                    std::atan2(l2 * std::sin(j2), l1 + l2 * std::cos(j2)) -
                    0.5 * kPi;
  return {j1, j2};
}

// Joint angles placing both tips at lateral offsets +-lat, forward tip_fwd
// in the palm frame; nullopt outside the annulus either arm can reach.
std::optional<std::array<double, 4>> grip_angles(const SimConfig& cfg,
                                                 double lat, double tip_fwd) {
  const Vec2 r1(lat - cfg.palm_half_width, tip_fwd);
  const Vec2 r2(-lat + cfg.palm_half_width, tip_fwd);
  const double lo = std::abs(cfg.link1 - cfg.link2) + 1e-6;
  const double hi = cfg.link1 + cfg.link2 - 1e-6;
  for (const Vec2& r : {r1, r2}) {
    const double d = r.norm();
    if (d < lo || d > hi) return std::nullopt;
  }
  const auto f1 = finger_ik(r1, cfg.link1, cfg.link2, 1.0);
  const auto f2 = finger_ik(r2, cfg.link1, cfg.link2, -1.0);
  return std::array<double, 4>{f1.first, f1.second, f2.first, f2.second};
}

// axis 0 approaches along the body y axis and grips across x; axis 1 is the
// quarter-turned alternative.
bool grasp_carry_plan(Env& env, uint64_t reset_seed, int axis) {
  env.reset(reset_seed);
  const SimConfig& cfg = env.config();
  const EnvState s0 = env.state();
  const Vec2 center(s0.pose.x, s0.pose.y);
  const Vec2 home(s0.q[0], s0.q[1]);

  double phi = wrap_angle(s0.pose.theta + axis * 0.5 * kPi);
  Vec2 fwd(-std::sin(phi), std::cos(phi));
  if (fwd.dot(center - home) < 0) {
    phi = wrap_angle(phi + kPi);
    fwd = -fwd;
  }

  // grip width measured through the centroid along the palm x direction
  const double rel_ang = phi - s0.pose.theta;
  const Vec2 lat_body(std::cos(rel_ang), std::sin(rel_ang));
  auto extent = [&](const Vec2& dir) {
    double t = 0.0;
    while (t < 0.6 && contains(env.object(), (t + 0.002) * dir)) t += 0.002;
    return t;
  };
  const double w_pos = extent(lat_body);
  const double w_neg = extent(-lat_body);
  const double open_lat = std::max(w_pos, w_neg) + 0.03;
  const double closed_lat = std::max(0.005, std::min(w_pos, w_neg) - 0.01);

  double tip_fwd = 0.86 * (cfg.link1 + cfg.link2);
  const double reach_hi = cfg.link1 + cfg.link2 - 0.005;
  const double lat_arm = open_lat - cfg.palm_half_width;
  if (lat_arm * lat_arm > reach_hi * reach_hi - tip_fwd * tip_fwd) {
    const double slack = reach_hi * reach_hi - lat_arm * lat_arm;
    if (slack < 0.03 * 0.03) return false;
    tip_fwd = std::sqrt(slack) - 0.002;
  }

  const auto open_f = grip_angles(cfg, open_lat, tip_fwd);
  const auto closed_f = grip_angles(cfg, closed_lat, tip_fwd);
  if (!open_f || !closed_f) return false;

  Vec7 pre;
  const Vec2 pre_palm = center - 0.5 * fwd;
  pre << pre_palm.x(), pre_palm.y(), phi, (*open_f)[0], (*open_f)[1],
      (*open_f)[2], (*open_f)[3];
  drive_to(env, pre, 120);

  Vec7 grasp_q = pre;
  const Vec2 grasp_palm = center - tip_fwd * fwd;
  grasp_q[0] = grasp_palm.x();
  grasp_q[1] = grasp_palm.y();
  drive_to(env, grasp_q, 30);

  Vec7 squeeze = grasp_q;
  squeeze[3] = (*closed_f)[0];
  squeeze[4] = (*closed_f)[1];
  squeeze[5] = (*closed_f)[2];
  squeeze[6] = (*closed_f)[3];
  drive_to(env, squeeze, 20);
  if (!env.state().grasped) return false;

  Vec7 carry = env.state().q;
  const Vec2 obj(env.state().pose.x, env.state().pose.y);
  carry[0] += env.state().target.x() - obj.x();
  carry[1] += env.state().target.y() - obj.y();
  drive_to(env, carry, 80);
  return env.is_success();
}

}  // namespace

bool scripted_relocate(Env& env, uint64_t reset_seed) {
  double half_x = 0.0, half_y = 0.0;
  for (const Vec2& v : env.object().vertices) {
    half_x = std::max(half_x, std::abs(v.x()));
    half_y = std::max(half_y, std::abs(v.y()));
  }
  const int first = half_x <= half_y ? 0 : 1;
  if (grasp_carry_plan(env, reset_seed, first)) return true;
  return grasp_carry_plan(env, reset_seed, 1 - first);
}

double scripted_success_rate(const std::vector<Polygon>& objects,
                             int trials_per_object, uint64_t seed,
                             const SimConfig& sim) {
  if (objects.empty())
    throw InvalidArgument("scripted_success_rate: no objects");
  if (trials_per_object < 1)
    throw InvalidArgument("scripted_success_rate: trials must be >= 1");
  const std::size_t n = objects.size() * static_cast<std::size_t>(trials_per_object);
  std::vector<char> hit(n, 0);
  const uint64_t base = Rng::mix(seed, hash_string("oracle"));
  par::for_each(n, [&](std::size_t i) {
    const std::size_t oi = i / static_cast<std::size_t>(trials_per_object);
    const uint64_t t = i % static_cast<std::size_t>(trials_per_object);
    Env env(objects[oi], sim);
    hit[i] = scripted_relocate(env, Rng::mix(base, Rng::mix(oi, t))) ? 1 : 0;
  });
  int s = 0;
  for (char h : hit) s += h;
  return static_cast<double>(s) / static_cast<double>(n);
}

std::vector<Demonstration> subset_demos(
    const std::vector<Demonstration>& demos, int count) {
  if (count <= 0 || count >= static_cast<int>(demos.size())) return demos;
  std::vector<int> order;
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    auto [it, fresh] = groups.try_emplace(demos[i].object_id);
    if (fresh) order.push_back(demos[i].object_id);
    it->second.push_back(i);
  }
  std::vector<Demonstration> out;
  out.reserve(count);
  for (std::size_t rank = 0; static_cast<int>(out.size()) < count; ++rank) {
    bool any = false;
    for (int oid : order) {
      const auto& g = groups[oid];
      if (rank < g.size()) {
        any = true;
        out.push_back(demos[g[rank]]);
        if (static_cast<int>(out.size()) == count) break;
      }
    }
    if (!any) break;
  }
  return out;
}

DemoGenConfig demo_variant_recipe(const std::string& variant,
                                  const SimConfig& sim) {
  DemoGenConfig g;
  g.sim = sim;
  if (variant == "cem_grasp_d006") {
    g.cem.delta = 0.06;
  } else if (variant == "cem_grasp_d010") {
    g.cem.delta = 0.10;
  } else if (variant == "cem_nograsp_d006") {
    g.cem.delta = 0.06;
    g.use_grasp_pose = false;
  } else if (variant == "rrt") {
    g.cem.delta = 0.06;
    g.use_rrt = true;
  } else {
    throw InvalidArgument("unknown demo variant: " + variant);
  }
  return g;
}

AblationSpec ablation_spec_from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.is_object())
    throw InvalidArgument("ablation spec must be a JSON object");
  AblationSpec s;
  s.objects_path = j.value("objects", std::string());
  if (s.objects_path.empty())
    throw InvalidArgument("ablation spec: objects path required");
  if (j.contains("demos"))
    for (const auto& [k, v] : j.at("demos").items())
      s.demo_files[k] = v.get<std::string>();
  if (j.contains("modes")) {
    s.modes.clear();
    for (const auto& m : j.at("modes"))
      s.modes.push_back(train_mode_from_string(m.get<std::string>()));
  }
  if (j.contains("T")) s.T_values = j.at("T").get<std::vector<int>>();
  if (j.contains("demo_counts"))
    s.demo_counts = j.at("demo_counts").get<std::vector<int>>();
  if (j.contains("demo_variants"))
    s.demo_variants = j.at("demo_variants").get<std::vector<std::string>>();
  if (j.contains("seeds"))
    s.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  s.eval_trials = j.value("eval_trials", s.eval_trials);
  s.demo_per_object = j.value("demo_per_object", s.demo_per_object);
  s.demo_seed = j.value("demo_seed", s.demo_seed);
  if (j.contains("config"))
    s.base = ilad_config_from_json(j.at("config").dump());
  if (s.modes.empty() || s.demo_counts.empty() || s.demo_variants.empty() ||
      s.seeds.empty())
    throw InvalidArgument("ablation spec: empty grid dimension");
  if (s.eval_trials < 1)
    throw InvalidArgument("ablation spec: eval_trials must be >= 1");
  return s;
}

namespace {

struct Cell {
  std::string name;
  TrainMode mode;
  int T;
  int demo_count;
  std::string variant;
};

std::string cell_name(TrainMode m, int T, int n, const std::string& v) {
  std::ostringstream ss;
  ss << to_string(m) << "_T" << T << "_n";
  if (n <= 0)
    ss << "all";
  else
    ss << n;
  ss << "_" << v;
  return ss.str();
}

}  // namespace

AblationTable run_ablation(const AblationSpec& spec,
                           const std::string& out_dir) {
  if (spec.modes.empty() || spec.demo_counts.empty() ||
      spec.demo_variants.empty() || spec.seeds.empty())
    throw InvalidArgument("run_ablation: empty grid dimension");
  if (spec.eval_trials < 1)
    throw InvalidArgument("run_ablation: eval_trials must be >= 1");
  fs::create_directories(out_dir);

  const auto all_objects = load_object_set(spec.objects_path);
  const auto train_objs = filter_split(all_objects, Split::train);
  const auto test_objs = filter_split(all_objects, Split::test);
  if (train_objs.empty())
    throw InvalidArgument("run_ablation: object set has no training split");
  if (test_objs.empty())
    throw InvalidArgument("run_ablation: object set has no test split");

  AblationTable table;
  for (int c = 0; c < kNumCategories; ++c) {
    const auto cat = static_cast<Category>(c);
    if (std::any_of(test_objs.begin(), test_objs.end(),
                    [&](const Polygon& p) { return p.category == cat; }))
      table.categories.push_back(to_string(cat));
  }

  const std::vector<int> T_vals =
      spec.T_values.empty() ? std::vector<int>{spec.base.T} : spec.T_values;

  std::map<std::string, std::vector<Demonstration>> pools;
  std::map<std::string, std::string> pool_errors;
  const bool needs_demos =
      std::any_of(spec.modes.begin(), spec.modes.end(),
                  [](TrainMode m) { return m != TrainMode::rl; });
  if (needs_demos) {
    for (const std::string& v : spec.demo_variants) {
      try {
        const auto it = spec.demo_files.find(v);
        if (it != spec.demo_files.end()) {
          pools[v] = load_demo_set(it->second);
        } else {
          const DemoGenConfig g = demo_variant_recipe(v, spec.base.sim);
          DemoSet set =
              generate_demo_set(train_objs, spec.demo_per_object, g,
                                spec.demo_seed);
          save_demo_set(out_dir + "/demos_" + v + ".jsonl", set.demos);
          save_demo_report(out_dir + "/demos_" + v + ".report.csv",
                           set.report);
          pools[v] = std::move(set.demos);
        }
      } catch (const std::exception& e) {
        pool_errors[v] = e.what();
      }
    }
  }

  std::vector<Cell> cells;
  for (TrainMode m : spec.modes)
    for (int T : T_vals)
      for (int n : spec.demo_counts)
        for (const std::string& v : spec.demo_variants)
          cells.push_back({cell_name(m, T, n, v), m, T, n, v});

  const std::size_t n_runs = cells.size() * spec.seeds.size();
  table.runs.resize(n_runs);
  par::for_each(n_runs, [&](std::size_t i) {
    const Cell& cell = cells[i / spec.seeds.size()];
    const uint64_t seed = spec.seeds[i % spec.seeds.size()];
    AblationRun& run = table.runs[i];
    run.cell = cell.name;
    run.mode = cell.mode;
    run.T = cell.T;
    run.demo_count = cell.demo_count;
    run.demo_variant = cell.variant;
    run.seed = seed;
    run.cat_successes.assign(table.categories.size(), 0);
    run.cat_trials.assign(table.categories.size(), 0);
    try {
      IladConfig cfg = spec.base;
      cfg.T = cell.T;
      cfg.seed = seed;
      std::vector<Demonstration> demos;
      if (cell.mode != TrainMode::rl) {
        if (const auto pe = pool_errors.find(cell.variant);
            pe != pool_errors.end())
          throw GenerationFailed("demo variant " + cell.variant + ": " +
                                 pe->second);
        demos = subset_demos(pools.at(cell.variant), cell.demo_count);
      }
      const std::string run_dir =
          out_dir + "/" + cell.name + "/seed_" + std::to_string(seed);
      TrainResult res = train(train_objs, demos, cfg, cell.mode, run_dir);
      const EvalReport rep = evaluate_success(
          res.policy, test_objs,
          distribute_trials(spec.eval_trials,
                            static_cast<int>(test_objs.size())),
          {seed}, cfg.sim);
      save_eval_episodes(run_dir + "/eval.csv", rep);
      save_eval_summary(run_dir + "/eval.summary.json", rep);
      run.success_rate = rep.success_rate;
      run.final_mean_return =
          res.metrics.empty() ? 0.0 : res.metrics.back().mean_return;
      for (const EvalObjectCount& row : rep.per_object) {
        const std::string cat = to_string(row.category);
        const auto it =
            std::find(table.categories.begin(), table.categories.end(), cat);
        const std::size_t ci = it - table.categories.begin();
        run.cat_trials[ci] += row.trials;
        run.cat_successes[ci] += row.successes;
      }
      run.ok = true;
    } catch (const std::exception& e) {
      run.ok = false;
      run.error = e.what();
    }
  });

  save_ablation_csv(out_dir + "/ablation.csv", table);
  save_ablation_markdown(out_dir + "/ablation.md", table);
  return table;
}

void save_ablation_csv(const std::string& path, const AblationTable& table) {
  std::ofstream out = open_out(path);
  out << "cell,mode,T,demo_count,demo_variant,seed,status,category,"
         "successes,trials,success_rate,final_mean_return,error\n";
  const auto sanitize = [](std::string s) {
    for (char& ch : s)
      if (ch == ',' || ch == '\n' || ch == '\r') ch = ' ';
    return s;
  };
  for (const AblationRun& r : table.runs) {
    const auto prefix = [&]() -> std::ofstream& {
      out << r.cell << ',' << to_string(r.mode) << ',' << r.T << ','
          << r.demo_count << ',' << r.demo_variant << ',' << r.seed << ','
          << (r.ok ? "ok" : "failed") << ',';
      return out;
    };
    if (!r.ok) {
      prefix() << "overall,0,0,,," << sanitize(r.error) << '\n';
      continue;
    }
    int successes = 0, trials = 0;
    for (std::size_t ci = 0; ci < table.categories.size(); ++ci) {
      successes += r.cat_successes[ci];
      trials += r.cat_trials[ci];
      prefix() << table.categories[ci] << ',' << r.cat_successes[ci] << ','
               << r.cat_trials[ci] << ',';
      if (r.cat_trials[ci] > 0)
        out << fmt_double(static_cast<double>(r.cat_successes[ci]) /
                          r.cat_trials[ci]);
      out << ",,\n";
    }
    prefix() << "overall," << successes << ',' << trials << ','
             << fmt_double(r.success_rate) << ','
             << fmt_double(r.final_mean_return) << ",\n";
  }
}

void save_ablation_markdown(const std::string& path,
                            const AblationTable& table) {
  std::vector<std::pair<std::string, std::vector<const AblationRun*>>> cells;
  for (const AblationRun& r : table.runs) {
    if (cells.empty() || cells.back().first != r.cell)
      cells.push_back({r.cell, {}});
    cells.back().second.push_back(&r);
  }

  std::ofstream out = open_out(path);
  out << "# Ablation results\n\n";
  out << "Success rate on the held-out split; mean ± population std across "
         "seeds.\n\n";
  out << "| mode | T | demos | variant |";
  for (const std::string& cat : table.categories) out << ' ' << cat << " |";
  out << " average |\n";
  out << "|---|---|---|---|";
  for (std::size_t i = 0; i < table.categories.size(); ++i) out << "---|";
  out << "---|\n";

  for (const auto& [name, runs] : cells) {
    const AblationRun& head = *runs.front();
    std::vector<const AblationRun*> ok;
    for (const AblationRun* r : runs)
      if (r->ok) ok.push_back(r);

    out << "| " << to_string(head.mode) << " | " << head.T << " | ";
    if (head.demo_count <= 0)
      out << "all";
    else
      out << head.demo_count;
    out << " | " << head.demo_variant << " |";

    if (ok.empty()) {
      for (std::size_t i = 0; i < table.categories.size() + 1; ++i)
        out << " failed |";
      out << '\n';
      continue;
    }
    for (std::size_t ci = 0; ci < table.categories.size(); ++ci) {
      std::vector<double> rates;
      for (const AblationRun* r : ok)
        if (r->cat_trials[ci] > 0)
          rates.push_back(static_cast<double>(r->cat_successes[ci]) /
                          r->cat_trials[ci]);
      out << ' ' << (rates.empty() ? "—" : format_mean_std(rates)) << " |";
    }
    std::vector<double> overall;
    for (const AblationRun* r : ok) overall.push_back(r->success_rate);
    out << ' ' << format_mean_std(overall);
    if (ok.size() < runs.size())
      out << " (" << ok.size() << "/" << runs.size() << " seeds)";
    out << " |\n";
  }

  int failed = 0;
  for (const AblationRun& r : table.runs)
    if (!r.ok) ++failed;
  if (failed > 0) {
    out << "\nFailed runs:\n\n";
    for (const AblationRun& r : table.runs)
      if (!r.ok)
        out << "- " << r.cell << " seed " << r.seed << ": " << r.error
            << '\n';
  }
}

ReportResult make_report(const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty())
    throw InvalidArgument("make_report: no run directories");
  ReportResult rep;
  std::map<std::string, std::vector<std::vector<double>>> by_method;
  for (const std::string& dir : run_dirs) {
    try {
      const json manifest = json::parse(read_text_file(dir + "/manifest.json"));
      const std::string method = manifest.at("mode").get<std::string>();
      const auto rows = load_metrics(dir + "/metrics.csv");
      if (rows.empty()) throw InvalidArgument("metrics.csv has no rows");
      std::vector<double> returns;
      returns.reserve(rows.size());
      for (const MetricsRow& r : rows) returns.push_back(r.mean_return);
      by_method[method].push_back(std::move(returns));
    } catch (const std::exception& e) {
      rep.warnings.push_back(dir + ": " + e.what());
    }
  }
  if (by_method.empty())
    throw InvalidArgument("make_report: no loadable runs");

  std::size_t shortest = std::numeric_limits<std::size_t>::max();
  bool mismatch = false;
  for (const auto& [m, runs] : by_method)
    for (const auto& r : runs) shortest = std::min(shortest, r.size());
  for (const auto& [m, runs] : by_method)
    for (const auto& r : runs)
      if (r.size() != shortest) mismatch = true;
  if (mismatch)
    rep.warnings.push_back("epoch counts differ; curves truncated to " +
                           std::to_string(shortest) + " epochs");
  rep.epochs = static_cast<int>(shortest);

  for (const auto& [method, runs] : by_method) {
    MethodCurve c;
    c.method = method;
    c.n_runs = static_cast<int>(runs.size());
    c.mean_return.resize(shortest);
    c.std_return.resize(shortest);
    for (std::size_t e = 0; e < shortest; ++e) {
      std::vector<double> xs;
      xs.reserve(runs.size());
      for (const auto& r : runs) xs.push_back(r[e]);
      mean_and_std(xs, c.mean_return[e], c.std_return[e]);
    }
    rep.curves.push_back(std::move(c));
  }

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const MethodCurve& c : rep.curves)
    for (double v : c.mean_return) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double range = hi - lo;
  for (MethodCurve& c : rep.curves) {
    c.norm_mean.resize(shortest);
    c.norm_std.resize(shortest);
    for (std::size_t e = 0; e < shortest; ++e) {
      c.norm_mean[e] = range > 0.0 ? (c.mean_return[e] - lo) / range : 0.0;
      c.norm_std[e] = range > 0.0 ? c.std_return[e] / range : 0.0;
    }
  }
  return rep;
}

void save_report_csv(const std::string& path, const ReportResult& report) {
  std::ofstream out = open_out(path);
  out << "method,epoch,mean_return,std_return,norm_mean,norm_std\n";
  for (const MethodCurve& c : report.curves)
    for (int e = 0; e < report.epochs; ++e)
      out << c.method << ',' << e << ',' << fmt_double(c.mean_return[e])
          << ',' << fmt_double(c.std_return[e]) << ','
          << fmt_double(c.norm_mean[e]) << ',' << fmt_double(c.norm_std[e])
          << '\n';
}

void save_report_markdown(const std::string& path,
                          const ReportResult& report) {
  std::ofstream out = open_out(path);
  out << "# Learning curves\n\n";
  out << "| method | runs | epochs | final return (mean ± std) | final "
         "normalized |\n";
  out << "|---|---|---|---|---|\n";
  for (const MethodCurve& c : report.curves) {
    const int last = report.epochs - 1;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f ± %.3f", c.mean_return[last],
                  c.std_return[last]);
    char nbuf[32];
    std::snprintf(nbuf, sizeof(nbuf), "%.3f", c.norm_mean[last]);
    out << "| " << c.method << " | " << c.n_runs << " | " << report.epochs
        << " | " << buf << " | " << nbuf << " |\n";
  }
  out << "\nPer-epoch curve data (raw and min-max normalized over all "
         "methods) is in the matching .csv file.\n";
  if (!report.warnings.empty()) {
    out << "\nWarnings:\n\n";
    for (const std::string& w : report.warnings) out << "- " << w << '\n';
  }
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"procedural grasp-and-relocate learning pipeline"};
  app.require_subcommand(1);

  std::string go_category = "all";
  int go_count = 10;
  double go_fraction = 0.5;
  uint64_t go_seed = 0;
  std::string go_out;
  auto* gen_objects =
      app.add_subcommand("gen-objects", "generate a procedural object set");
  gen_objects
      ->add_option("--category", go_category,
                   "bottle|mug|can|remote|camera|all")
      ->capture_default_str();
  gen_objects->add_option("--count", go_count, "instances per category")
      ->capture_default_str();
  gen_objects
      ->add_option("--test-fraction", go_fraction,
                   "fraction held out per category")
      ->capture_default_str();
  gen_objects->add_option("--seed", go_seed)->capture_default_str();
  gen_objects->add_option("--out", go_out, "object set JSON path")->required();

  std::string gd_objects, gd_out;
  std::string gd_planner = "cem";
  int gd_per_object = 20;
  double gd_delta = 0.06;
  bool gd_no_grasp = false;
  uint64_t gd_seed = 0;
  auto* gen_demos =
      app.add_subcommand("gen-demos", "plan demonstrations on the train split");
  gen_demos->add_option("--objects", gd_objects, "object set JSON path")
      ->required();
  gen_demos->add_option("--per-object", gd_per_object)->capture_default_str();
  gen_demos->add_option("--delta", gd_delta, "planning acceptance threshold")
      ->capture_default_str();
  gen_demos->add_flag("--no-grasp-pose", gd_no_grasp,
                      "reach the centroid instead of a grasp");
  gen_demos->add_option("--planner", gd_planner)
      ->check(CLI::IsMember({"cem", "rrt"}))
      ->capture_default_str();
  gen_demos->add_option("--seed", gd_seed)->capture_default_str();
  gen_demos->add_option("--out", gd_out, "demo JSONL path")->required();

  std::string tr_mode, tr_objects, tr_demos, tr_config, tr_out;
  uint64_t tr_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "train a policy");
  train_cmd->add_option("--mode", tr_mode, "rl|rl-pc|dapg-pc|ilad")
      ->required();
  train_cmd->add_option("--objects", tr_objects, "object set JSON path")
      ->required();
  train_cmd->add_option("--demos", tr_demos, "demo JSONL path");
  auto* tr_config_opt =
      train_cmd->add_option("--config", tr_config, "config JSON path");
  auto* tr_seed_opt = train_cmd->add_option(
      "--seed", tr_seed, "overrides the config file seed");
  train_cmd->add_option("--out", tr_out, "run output directory")->required();

  std::string ev_checkpoint, ev_objects, ev_out;
  std::string ev_split = "test";
  int ev_trials = 100;
  std::vector<uint64_t> ev_seeds{0};
  auto* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on held-out objects");
  eval_cmd->add_option("--checkpoint", ev_checkpoint)->required();
  eval_cmd->add_option("--objects", ev_objects, "object set JSON path")
      ->required();
  eval_cmd->add_option("--split", ev_split)
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  eval_cmd
      ->add_option("--trials", ev_trials,
                   "episodes per seed, spread over the split")
      ->capture_default_str();
  eval_cmd->add_option("--seeds", ev_seeds, "comma-separated seed list")
      ->delimiter(',');
  eval_cmd->add_option("--out", ev_out, "episode CSV path")->required();

  std::string ab_spec, ab_out;
  auto* ablate_cmd =
      app.add_subcommand("ablate", "train and evaluate a variant grid");
  ablate_cmd->add_option("--spec", ab_spec, "ablation spec JSON path")
      ->required();
  ablate_cmd->add_option("--out", ab_out, "sweep output directory")
      ->required();

  std::vector<std::string> rp_runs;
  std::string rp_out;
  auto* report_cmd =
      app.add_subcommand("report", "learning curves from run directories");
  report_cmd->add_option("--runs", rp_runs, "run directories")
      ->required()
      ->expected(-1);
  report_cmd->add_option("--out", rp_out, "report path stem")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen_objects->parsed()) {
      std::vector<Polygon> objs;
      if (go_category == "all") {
        objs = generate_object_set(go_count, go_fraction, go_seed);
      } else {
        const Category cat = category_from_string(go_category);
        auto instances = generate_category_instances(cat, go_count, go_seed);
        auto [tr, te] = train_test_split(instances, go_fraction, go_seed);
        objs = std::move(tr);
        objs.insert(objs.end(), te.begin(), te.end());
      }
      save_object_set(go_out, objs);
      int n_train = 0;
      for (const Polygon& p : objs)
        if (p.split == Split::train) ++n_train;
      std::cout << "wrote " << objs.size() << " objects (" << n_train
                << " train, " << objs.size() - n_train << " test) to "
                << go_out << "\n";
    } else if (gen_demos->parsed()) {
      const auto objects = load_object_set(gd_objects);
      const auto train_objs = filter_split(objects, Split::train);
      if (train_objs.empty())
        throw InvalidArgument("object set has no training split");
      DemoGenConfig g;
      g.cem.delta = gd_delta;
      g.use_grasp_pose = !gd_no_grasp;
      g.use_rrt = gd_planner == "rrt";
      DemoSet set = generate_demo_set(train_objs, gd_per_object, g, gd_seed);
      save_demo_set(gd_out, set.demos);
      const std::string report_path =
          fs::path(gd_out).replace_extension(".report.csv").string();
      save_demo_report(report_path, set.report);
      int attempts = 0;
      for (const DemoReportRow& row : set.report) attempts += row.attempts;
      std::cout << "accepted " << set.demos.size() << " demonstrations over "
                << attempts << " attempts; report at " << report_path << "\n";
    } else if (train_cmd->parsed()) {
      IladConfig cfg;
      if (tr_config_opt->count() > 0)
        cfg = ilad_config_from_json(read_text_file(tr_config));
      if (tr_seed_opt->count() > 0) cfg.seed = tr_seed;
      const TrainMode mode = train_mode_from_string(tr_mode);
      const auto objects = load_object_set(tr_objects);
      const auto train_objs = filter_split(objects, Split::train);
      if (train_objs.empty())
        throw InvalidArgument("object set has no training split");
      std::vector<Demonstration> demos;
      if (!tr_demos.empty()) demos = load_demo_set(tr_demos);
      if (mode != TrainMode::rl && demos.empty())
        throw InvalidArgument("mode " + tr_mode +
                              " needs a non-empty --demos file");
      TrainResult res = train(train_objs, demos, cfg, mode, tr_out);
      const MetricsRow last =
          res.metrics.empty() ? MetricsRow{} : res.metrics.back();
      std::cout << "trained " << res.metrics.size() << " epochs (mode "
                << to_string(mode) << "); final mean return "
                << fmt_double(last.mean_return) << ", train success "
                << fmt_double(last.success_rate_train) << "; artifacts in "
                << tr_out << "\n";
    } else if (eval_cmd->parsed()) {
      const LoadedCheckpoint ck = load_training_checkpoint(ev_checkpoint);
      const auto objects = load_object_set(ev_objects);
      const auto split_objs =
          filter_split(objects, split_from_string(ev_split));
      if (split_objs.empty())
        throw InvalidArgument("no objects in split " + ev_split);
      const EvalReport rep = evaluate_success(
          ck.policy, split_objs,
          distribute_trials(ev_trials, static_cast<int>(split_objs.size())),
          ev_seeds, ck.cfg.sim);
      save_eval_episodes(ev_out, rep);
      const std::string summary_path =
          fs::path(ev_out).replace_extension(".summary.json").string();
      save_eval_summary(summary_path, rep);
      std::cout << "success rate " << fmt_double(rep.success_rate) << " over "
                << rep.trials << " episodes ("
                << fmt_double(rep.seed_mean) << " ± "
                << fmt_double(rep.seed_std) << " across " << ev_seeds.size()
                << " seeds); episodes at " << ev_out << "\n";
    } else if (ablate_cmd->parsed()) {
      const AblationSpec spec =
          ablation_spec_from_json(read_text_file(ab_spec));
      const AblationTable table = run_ablation(spec, ab_out);
      int failed = 0;
      for (const AblationRun& r : table.runs)
        if (!r.ok) ++failed;
      std::cout << table.runs.size() << " runs (" << failed
                << " failed); table at " << ab_out << "/ablation.md\n";
    } else if (report_cmd->parsed()) {
      const ReportResult rep = make_report(rp_runs);
      const std::string csv_path =
          fs::path(rp_out).replace_extension(".csv").string();
      const std::string md_path =
          fs::path(rp_out).replace_extension(".md").string();
      save_report_csv(csv_path, rep);
      save_report_markdown(md_path, rep);
      for (const std::string& w : rep.warnings)
        std::cerr << "warning: " << w << "\n";
      std::cout << "wrote " << md_path << " and " << csv_path << " ("
                << rep.curves.size() << " methods, " << rep.epochs
                << " epochs)\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace ilad
