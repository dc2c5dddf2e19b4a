#include "ilad/imitation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ilad/parallel.hpp"

namespace ilad {

using nlohmann::json;

const char* to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::rl: return "rl";
    case TrainMode::rl_pc: return "rl_pc";
    case TrainMode::dapg_pc: return "dapg_pc";
    case TrainMode::ilad: return "ilad";
  }
  throw InvalidArgument("unknown train mode");
}

TrainMode train_mode_from_string(const std::string& s) {
  std::string t = s;
  std::replace(t.begin(), t.end(), '-', '_');
  if (t == "rl") return TrainMode::rl;
  if (t == "rl_pc") return TrainMode::rl_pc;
  if (t == "dapg_pc") return TrainMode::dapg_pc;
  if (t == "ilad") return TrainMode::ilad;
  throw InvalidArgument("train mode must be one of rl, rl-pc, dapg-pc, ilad");
}

namespace {

json vec2_to_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

Vec2 vec2_from_json(const json& j, Vec2 dflt) {
  if (j.is_null()) return dflt;
  if (!j.is_array() || j.size() != 2)
    throw InvalidArgument("expected a two-element array");
  return {j[0].get<double>(), j[1].get<double>()};
}

json sim_to_json(const SimConfig& c) {
  json j;
  j["link1"] = c.link1;
  j["link2"] = c.link2;
  j["palm_half_width"] = c.palm_half_width;
  j["contact_tol"] = c.contact_tol;
  j["opposition_threshold"] = c.opposition_threshold;
  j["max_push"] = c.max_push;
  j["action_clip"] = c.action_clip;
  j["horizon"] = c.horizon;
  j["workspace"] = c.workspace;
  j["success_radius"] = c.success_radius;
  j["n_cloud_points"] = c.n_cloud_points;
  j["start_center"] = vec2_to_json(c.start_center);
  j["goal_center"] = vec2_to_json(c.goal_center);
  j["region_half"] = c.region_half;
  j["min_start_target_dist"] = c.min_start_target_dist;
  j["home_palm"] = vec2_to_json(c.home_palm);
  j["reach_coef"] = c.reach_coef;
  j["engage_bonus"] = c.engage_bonus;
  j["hold_bonus"] = c.hold_bonus;
  j["carry_coef"] = c.carry_coef;
  j["success_bonus"] = c.success_bonus;
  j["action_cost"] = c.action_cost;
  j["reward_min"] = c.reward_min;
  j["reward_max"] = c.reward_max;
  return j;
}

SimConfig sim_from_json(const json& j, SimConfig c) {
  c.link1 = j.value("link1", c.link1);
  c.link2 = j.value("link2", c.link2);
  c.palm_half_width = j.value("palm_half_width", c.palm_half_width);
  c.contact_tol = j.value("contact_tol", c.contact_tol);
  c.opposition_threshold =
      j.value("opposition_threshold", c.opposition_threshold);
  c.max_push = j.value("max_push", c.max_push);
  c.action_clip = j.value("action_clip", c.action_clip);
  c.horizon = j.value("horizon", c.horizon);
  c.workspace = j.value("workspace", c.workspace);
  c.success_radius = j.value("success_radius", c.success_radius);
  c.n_cloud_points = j.value("n_cloud_points", c.n_cloud_points);
  c.start_center = vec2_from_json(j.value("start_center", json()), c.start_center);
  c.goal_center = vec2_from_json(j.value("goal_center", json()), c.goal_center);
  c.region_half = j.value("region_half", c.region_half);
  c.min_start_target_dist =
      j.value("min_start_target_dist", c.min_start_target_dist);
  c.home_palm = vec2_from_json(j.value("home_palm", json()), c.home_palm);
  c.reach_coef = j.value("reach_coef", c.reach_coef);
  c.engage_bonus = j.value("engage_bonus", c.engage_bonus);
  c.hold_bonus = j.value("hold_bonus", c.hold_bonus);
  c.carry_coef = j.value("carry_coef", c.carry_coef);
  c.success_bonus = j.value("success_bonus", c.success_bonus);
  c.action_cost = j.value("action_cost", c.action_cost);
  c.reward_min = j.value("reward_min", c.reward_min);
  c.reward_max = j.value("reward_max", c.reward_max);
  return c;
}

json policy_to_json(const PolicyConfig& c) {
  json j;
  j["use_encoder"] = c.use_encoder;
  j["enc_point_widths"] = c.enc_point_widths;
  j["enc_post_widths"] = c.enc_post_widths;
  j["embed_dim"] = c.embed_dim;
  j["mlp_widths"] = c.mlp_widths;
  j["flat_obs_dim"] = c.flat_obs_dim;
  j["action_dim"] = c.action_dim;
  j["init_log_std"] = c.init_log_std;
  return j;
}

PolicyConfig policy_from_json(const json& j, PolicyConfig c) {
  c.use_encoder = j.value("use_encoder", c.use_encoder);
  c.enc_point_widths = j.value("enc_point_widths", c.enc_point_widths);
  c.enc_post_widths = j.value("enc_post_widths", c.enc_post_widths);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.mlp_widths = j.value("mlp_widths", c.mlp_widths);
  c.flat_obs_dim = j.value("flat_obs_dim", c.flat_obs_dim);
  c.action_dim = j.value("action_dim", c.action_dim);
  c.init_log_std = j.value("init_log_std", c.init_log_std);
  return c;
}

json value_to_json(const ValueConfig& c) {
  json j;
  j["include_cloud"] = c.include_cloud;
  j["n_cloud_points"] = c.n_cloud_points;
  j["flat_obs_dim"] = c.flat_obs_dim;
  j["action_dim"] = c.action_dim;
  j["widths"] = c.widths;
  return j;
}

ValueConfig value_from_json(const json& j, ValueConfig c) {
  c.include_cloud = j.value("include_cloud", c.include_cloud);
  c.n_cloud_points = j.value("n_cloud_points", c.n_cloud_points);
  c.flat_obs_dim = j.value("flat_obs_dim", c.flat_obs_dim);
  c.action_dim = j.value("action_dim", c.action_dim);
  c.widths = j.value("widths", c.widths);
  return c;
}

json config_to_json_obj(const IladConfig& c) {
  json j;
  j["lambda0"] = c.lambda0;
  j["lambda1"] = c.lambda1;
  j["lambda0_prime"] = c.lambda0_prime;
  j["T"] = c.T;
  j["gamma"] = c.gamma;
  j["gae_lambda"] = c.gae_lambda;
  j["kl_limit"] = c.kl_limit;
  j["cg_iters"] = c.cg_iters;
  j["cg_damping"] = c.cg_damping;
  j["n_traj_per_epoch"] = c.n_traj_per_epoch;
  j["epochs"] = c.epochs;
  j["bc_lr"] = c.bc_lr;
  j["bc_minibatch"] = c.bc_minibatch;
  j["bc_epochs_per_update"] = c.bc_epochs_per_update;
  j["bc_joint_passes"] = c.bc_joint_passes;
  j["value_lr"] = c.value_lr;
  j["value_epochs"] = c.value_epochs;
  j["value_minibatch"] = c.value_minibatch;
  j["adv_clip"] = c.adv_clip;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["force_unit_weights"] = c.force_unit_weights;
  j["seed"] = c.seed;
  j["policy"] = policy_to_json(c.policy);
  j["value"] = value_to_json(c.value);
  j["sim"] = sim_to_json(c.sim);
  return j;
}

IladConfig config_from_json_obj(const json& j) {
  IladConfig c;
  c.lambda0 = j.value("lambda0", c.lambda0);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda0_prime = j.contains("lambda0_prime")
                        ? j.at("lambda0_prime").get<double>()
                        : 0.1 * c.lambda0;
  c.T = j.value("T", c.T);
  c.gamma = j.value("gamma", c.gamma);
  c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
  c.kl_limit = j.value("kl_limit", c.kl_limit);
  c.cg_iters = j.value("cg_iters", c.cg_iters);
  c.cg_damping = j.value("cg_damping", c.cg_damping);
  c.n_traj_per_epoch = j.value("n_traj_per_epoch", c.n_traj_per_epoch);
  c.epochs = j.value("epochs", c.epochs);
  c.bc_lr = j.value("bc_lr", c.bc_lr);
  c.bc_minibatch = j.value("bc_minibatch", c.bc_minibatch);
  c.bc_epochs_per_update =
      j.value("bc_epochs_per_update", c.bc_epochs_per_update);
  c.bc_joint_passes = j.value("bc_joint_passes", c.bc_joint_passes);
  c.value_lr = j.value("value_lr", c.value_lr);
  c.value_epochs = j.value("value_epochs", c.value_epochs);
  c.value_minibatch = j.value("value_minibatch", c.value_minibatch);
  c.adv_clip = j.value("adv_clip", c.adv_clip);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.force_unit_weights = j.value("force_unit_weights", c.force_unit_weights);
  c.seed = j.value("seed", c.seed);
  if (j.contains("policy")) c.policy = policy_from_json(j.at("policy"), c.policy);
  if (j.contains("value")) c.value = value_from_json(j.at("value"), c.value);
  if (j.contains("sim")) c.sim = sim_from_json(j.at("sim"), c.sim);
  return c;
}

}  // namespace

std::string ilad_config_to_json(const IladConfig& cfg) {
  return config_to_json_obj(cfg).dump(2) + "\n";
}

IladConfig ilad_config_from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  return config_from_json_obj(j);
}

std::string sim_config_to_json(const SimConfig& cfg) {
  return sim_to_json(cfg).dump();
}

int RolloutBatch::total_steps() const {
  int n = 0;
  for (const auto& t : trajectories) n += static_cast<int>(t.steps.size());
  return n;
}

RolloutBatch collect_rollouts(const Policy& policy,
                              const std::vector<Polygon>& objects,
                              const IladConfig& cfg, int epoch) {
  if (objects.empty())
    throw InvalidArgument("collect_rollouts: no training objects");
  if (cfg.n_traj_per_epoch < 1)
    throw InvalidArgument("collect_rollouts: n_traj_per_epoch must be >= 1");

  RolloutBatch batch;
  batch.epoch = epoch;
  batch.trajectories.resize(cfg.n_traj_per_epoch);
  const uint64_t base = Rng::mix(Rng::mix(cfg.seed, hash_string("rollout")),
                                 static_cast<uint64_t>(epoch));

  par::for_each(static_cast<std::size_t>(cfg.n_traj_per_epoch),
                [&](std::size_t i) {
    Rng rng(Rng::mix(base, i));
    const int oi = rng.uniform_int(static_cast<int>(objects.size()));
    Env env(objects[oi], cfg.sim);
    env.reset(rng.next_u64());

    Trajectory& traj = batch.trajectories[i];
    traj.object_index = oi;
    // The cloud is fixed for the whole episode, encode once.
    const VecX embedding = policy.encode(env.cloud());
    while (!env.state().done) {
      const Observation obs = env.observe();
      const DecEval e = policy.eval(embedding, obs.flat());
      const VecX a = policy.sample(e.mean, rng);
      const double lp = policy.log_prob(e, a);
      const StepResult sr = env.step(a);
      traj.steps.push_back({obs, Action(a), sr.reward, lp});
      traj.total_reward += sr.reward;
    }
    traj.success = env.is_success();
  });
  return batch;
}

std::vector<VecX> gae_advantages(const RolloutBatch& batch,
                                 const ValueNets& values, double gamma,
                                 double gae_lambda) {
  std::vector<VecX> adv(batch.trajectories.size());
  par::for_each(batch.trajectories.size(), [&](std::size_t ti) {
    const auto& steps = batch.trajectories[ti].steps;
    const int n = static_cast<int>(steps.size());
    if (n == 0) {
      adv[ti] = VecX();
      return;
    }
    MatX x(values.obs_dim(), n);
    for (int t = 0; t < n; ++t) x.col(t) = values.obs_input(steps[t].obs);
    const MatX v = values.v_net().forward(x);

    VecX a(n);
    double acc = 0.0;
    for (int t = n - 1; t >= 0; --t) {
      const double next_v = t + 1 < n ? v(0, t + 1) : 0.0;
      const double delta = steps[t].reward + gamma * next_v - v(0, t);
      acc = delta + gamma * gae_lambda * acc;
      a[t] = acc;
    }
    adv[ti] = a;
  });
  return adv;
}

void normalize_advantages(std::vector<VecX>& advantages) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& a : advantages) {
    sum += a.sum();
    n += a.size();
  }
  if (n == 0) throw InvalidArgument("normalize_advantages: no advantages");
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto& a : advantages) sq += (a.array() - mean).square().sum();
  const double std = std::sqrt(sq / static_cast<double>(n));
  for (auto& a : advantages) a = (a.array() - mean) / (std + 1e-8);
}

ValueFitResult fit_value_functions(ValueNets& values, const RolloutBatch& batch,
                                   const IladConfig& cfg) {
  const int total = batch.total_steps();
  if (total == 0) throw InvalidArgument("fit_value_functions: empty batch");
  if (cfg.value_minibatch < 1)
    throw InvalidArgument("fit_value_functions: value_minibatch must be >= 1");

  const int obs_dim = values.obs_dim();
  const int adim = values.config().action_dim;
  MatX xv(obs_dim, total);
  MatX xq(obs_dim + adim, total);
  Eigen::RowVectorXd y(total);

  std::vector<int> offsets(batch.trajectories.size());
  int at = 0;
  for (std::size_t ti = 0; ti < batch.trajectories.size(); ++ti) {
    offsets[ti] = at;
    at += static_cast<int>(batch.trajectories[ti].steps.size());
  }
  par::for_each(batch.trajectories.size(), [&](std::size_t ti) {
    const auto& steps = batch.trajectories[ti].steps;
    const int n = static_cast<int>(steps.size());
    double ret = 0.0;
    for (int t = n - 1; t >= 0; --t) {
      ret = steps[t].reward + cfg.gamma * ret;
      y[offsets[ti] + t] = ret;
    }
    for (int t = 0; t < n; ++t) {
      const int c = offsets[ti] + t;
      xv.col(c) = values.obs_input(steps[t].obs);
      xq.col(c).head(obs_dim) = xv.col(c);
      xq.col(c).tail(adim) = steps[t].act;
    }
  });

  const auto fit_one = [&](Mlp& net, const MatX& x, uint64_t stream,
                           std::vector<double>& losses) {
    Adam opt(cfg.value_lr);
    VecX p = net.params();
    Rng rng(stream);
    const int n = static_cast<int>(x.cols());
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int e = 0; e < cfg.value_epochs; ++e) {
      for (int i = n - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
      double sq = 0.0;
      for (int s = 0; s < n; s += cfg.value_minibatch) {
        const int m = std::min(n - s, cfg.value_minibatch);
        MatX xb(x.rows(), m);
        Eigen::RowVectorXd yb(m);
        for (int c = 0; c < m; ++c) {
          xb.col(c) = x.col(idx[s + c]);
          yb[c] = y[idx[s + c]];
        }
        MlpCache cache;
        const MatX out = net.forward(xb, &cache);
        const Eigen::RowVectorXd resid = out.row(0) - yb;
        sq += resid.squaredNorm();
        VecX grad = VecX::Zero(net.n_params());
        net.backward(cache, (2.0 / static_cast<double>(m)) * resid, grad);
        opt.step(p, grad);
        net.set_params(p);
      }
      losses.push_back(sq / static_cast<double>(n));
    }
  };

  ValueFitResult result;
  const uint64_t base = Rng::mix(Rng::mix(cfg.seed, hash_string("value_fit")),
                                 static_cast<uint64_t>(batch.epoch));
  par::for_each(2, [&](std::size_t which) {
    if (which == 0)
      fit_one(values.v_net(), xv, Rng::mix(base, 0), result.v_losses);
    else
      fit_one(values.q_net(), xq, Rng::mix(base, 1), result.q_losses);
  });
  return result;
}

double demo_advantage(const ValueNets& values, const Observation& obs,
                      const Action& act) {
  const VecX in = values.obs_input(obs);
  return values.q_value(in, act) - values.value(in);
}

double traj_neg_log_likelihood(const Policy& policy, const Demonstration& demo,
                               const VecX& embedding) {
  if (demo.pairs.empty())
    throw InvalidArgument("traj_neg_log_likelihood: empty demonstration");
  double sum = 0.0;
  for (const auto& [obs, act] : demo.pairs)
    sum += policy.log_prob(policy.eval(embedding, obs.flat()), act);
  return -sum / static_cast<double>(demo.pairs.size());
}

double traj_neg_log_likelihood(const Policy& policy,
                               const Demonstration& demo) {
  if (demo.pairs.empty())
    throw InvalidArgument("traj_neg_log_likelihood: empty demonstration");
  return traj_neg_log_likelihood(
      policy, demo, policy.encode(demo.pairs.front().first.cloud));
}

std::vector<VecX> demo_embeddings(const Policy& policy,
                                  const std::vector<Demonstration>& demos) {
  std::vector<VecX> embs(demos.size());
  if (!policy.uses_encoder()) return embs;
  par::for_each(demos.size(), [&](std::size_t i) {
    if (!demos[i].pairs.empty())
      embs[i] = policy.encode(demos[i].pairs.front().first.cloud);
  });
  return embs;
}

VecX normalized_weights(const VecX& losses) {
  if (losses.size() == 0) throw InvalidArgument("normalized_weights: empty");
  if (!losses.allFinite())
    throw InvalidArgument("normalized_weights: non-finite loss");
  const double lo = losses.minCoeff();
  const double hi = losses.maxCoeff();
  if (hi == lo) return VecX::Ones(losses.size());
  return ((losses.array() - lo) / (hi - lo)).matrix();
}

namespace {

std::vector<std::pair<int, int>> flatten_batch(const RolloutBatch& batch) {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(batch.total_steps());
  for (std::size_t ti = 0; ti < batch.trajectories.size(); ++ti)
    for (std::size_t t = 0; t < batch.trajectories[ti].steps.size(); ++t)
      pairs.emplace_back(static_cast<int>(ti), static_cast<int>(t));
  return pairs;
}

std::vector<VecX> batch_embeddings(const Policy& policy,
                                   const RolloutBatch& batch) {
  std::vector<VecX> embs(batch.trajectories.size());
  if (!policy.uses_encoder()) return embs;
  par::for_each(batch.trajectories.size(), [&](std::size_t i) {
    const auto& steps = batch.trajectories[i].steps;
    if (!steps.empty()) embs[i] = policy.encode(steps.front().obs.cloud);
  });
  return embs;
}

// Mean over batch steps of advantage-weighted score function gradients.
VecX batch_policy_term(const Policy& policy, const RolloutBatch& batch,
                       const std::vector<VecX>& advantages) {
  if (advantages.size() != batch.trajectories.size())
    throw InvalidArgument("advantage count does not match the batch");
  const auto pairs = flatten_batch(batch);
  if (pairs.empty()) throw InvalidArgument("policy gradient needs batch data");
  const auto embs = batch_embeddings(policy, batch);

  VecX g = par::ordered_sum(
      pairs.size(), policy.n_params(), [&](std::size_t i, VecX& acc) {
        const auto [ti, t] = pairs[i];
        const Transition& tr = batch.trajectories[ti].steps[t];
        const DecEval e = policy.eval(embs[ti], tr.obs.flat());
        VecX tmp = VecX::Zero(policy.n_params());
        policy.log_prob_grad(e, tr.act, GradScope::policy, tmp);
        acc += advantages[ti][t] * tmp;
      });
  return g / static_cast<double>(pairs.size());
}

// Mean over demonstration steps of coefficient-weighted score gradients.
VecX demo_term(const Policy& policy, const std::vector<Demonstration>& demos,
               const std::vector<VecX>& embeddings,
               const std::function<double(int, int)>& coef) {
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t d = 0; d < demos.size(); ++d)
    for (std::size_t p = 0; p < demos[d].pairs.size(); ++p)
      pairs.emplace_back(static_cast<int>(d), static_cast<int>(p));
  if (pairs.empty()) throw InvalidArgument("demo term needs demonstration data");

  static const VecX kNoEmbedding;
  VecX g = par::ordered_sum(
      pairs.size(), policy.n_params(), [&](std::size_t i, VecX& acc) {
        const auto [d, p] = pairs[i];
        const auto& [obs, act] = demos[d].pairs[p];
        const VecX& emb = embeddings.empty() ? kNoEmbedding : embeddings[d];
        const DecEval e = policy.eval(emb, obs.flat());
        VecX tmp = VecX::Zero(policy.n_params());
        policy.log_prob_grad(e, act, GradScope::policy, tmp);
        acc += coef(d, p) * tmp;
      });
  return g / static_cast<double>(pairs.size());
}

void check_demo_embeddings(const Policy& policy,
                           const std::vector<Demonstration>& demos,
                           const std::vector<VecX>& embeddings) {
  if (policy.uses_encoder() && embeddings.size() != demos.size())
    throw InvalidArgument("one embedding per demonstration is required");
}

}  // namespace

VecX dapg_gradient(const Policy& policy, const RolloutBatch& batch,
                   const std::vector<VecX>& advantages,
                   const std::vector<Demonstration>& demos,
                   const std::vector<VecX>& embeddings, const IladConfig& cfg,
                   int epoch, GradientDiagnostics* diag) {
  VecX g = batch_policy_term(policy, batch, advantages);
  GradientDiagnostics d{};
  if (!demos.empty()) {
    check_demo_embeddings(policy, demos, embeddings);
    const double c = cfg.lambda0 * std::pow(cfg.lambda1, epoch);
    const VecX dt = demo_term(policy, demos, embeddings,
                              [](int, int) { return 1.0; });
    g += c * dt;
    d.demo_term_norm = c * dt.norm();
    d.w_min = d.w_mean = d.w_max = 1.0;
  }
  if (diag) *diag = d;
  return g;
}

VecX ilad_gradient(const Policy& policy, const RolloutBatch& batch,
                   const std::vector<VecX>& advantages,
                   const std::vector<Demonstration>& demos,
                   const std::vector<VecX>& embeddings, const VecX& weights,
                   const ValueNets& values, const IladConfig& cfg, int epoch,
                   GradientDiagnostics* diag) {
  if (demos.empty()) throw InvalidArgument("ilad_gradient: no demonstrations");
  if (weights.size() != static_cast<Eigen::Index>(demos.size()))
    throw InvalidArgument("ilad_gradient: one weight per demonstration");
  check_demo_embeddings(policy, demos, embeddings);

  const VecX w = cfg.force_unit_weights ? VecX::Ones(weights.size()) : weights;
  GradientDiagnostics d{};
  d.w_min = w.minCoeff();
  d.w_max = w.maxCoeff();
  d.w_mean = w.mean();

  VecX g = batch_policy_term(policy, batch, advantages);

  const double decay = std::pow(cfg.lambda1, epoch);
  const double c1 = cfg.lambda0 * decay;
  const VecX dt1 =
      demo_term(policy, demos, embeddings, [&](int di, int) { return w[di]; });
  g += c1 * dt1;
  d.demo_term_norm = c1 * dt1.norm();

  const double c2 = cfg.lambda0_prime * (1.0 - decay);
  if (c2 != 0.0) {
    const VecX dt2 = demo_term(
        policy, demos, embeddings, [&](int di, int p) {
          const auto& [obs, act] = demos[di].pairs[p];
          return std::clamp(demo_advantage(values, obs, act), -cfg.adv_clip,
                            cfg.adv_clip);
        });
    g += c2 * dt2;
    d.adv_term_norm = c2 * dt2.norm();
  }
  if (diag) *diag = d;
  return g;
}

VecX conjugate_gradient(const std::function<VecX(const VecX&)>& apply,
                        const VecX& b, int iters, double tol) {
  VecX x = VecX::Zero(b.size());
  VecX r = b;
  VecX p = r;
  double rs = r.squaredNorm();
  for (int i = 0; i < iters && rs > tol; ++i) {
    const VecX ap = apply(p);
    const double pap = p.dot(ap);
    if (pap <= 0.0) break;
    const double alpha = rs / pap;
    x += alpha * p;
    r -= alpha * ap;
    const double rs_next = r.squaredNorm();
    p = r + (rs_next / rs) * p;
    rs = rs_next;
  }
  return x;
}

TrpoResult trpo_step(Policy& policy, const VecX& gradient,
                     const RolloutBatch& batch,
                     const std::vector<VecX>& advantages,
                     const IladConfig& cfg) {
  if (gradient.size() != policy.n_params())
    throw InvalidArgument("trpo_step: gradient size mismatch");
  if (advantages.size() != batch.trajectories.size())
    throw InvalidArgument("trpo_step: advantage count does not match");

  TrpoResult res;
  if (!gradient.allFinite()) {
    res.finite = false;
    return res;
  }

  const int adim = policy.config().action_dim;
  const int off = policy.dec_offset();
  const int dim = policy.dec_size() + adim;
  const VecX g = gradient.segment(off, dim);
  if (g.norm() == 0.0) return res;

  const auto pairs = flatten_batch(batch);
  const std::size_t m = pairs.size();
  if (m == 0) throw InvalidArgument("trpo_step: empty batch");
  const auto embs = batch_embeddings(policy, batch);

  std::vector<DecEval> evals(m);
  std::vector<double> old_lp(m);
  std::vector<double> pair_adv(m);
  par::for_each(m, [&](std::size_t i) {
    const auto [ti, t] = pairs[i];
    const Transition& tr = batch.trajectories[ti].steps[t];
    evals[i] = policy.eval(embs[ti], tr.obs.flat());
    old_lp[i] = policy.log_prob(evals[i], tr.act);
    pair_adv[i] = advantages[ti][t];
  });

  const VecX old_log_std = policy.log_std();
  const VecX inv_var = (-2.0 * old_log_std.array()).exp();

  const auto fvp = [&](const VecX& v) {
    VecX dir = VecX::Zero(policy.n_params());
    dir.segment(off, dim) = v;
    const VecX acc = par::ordered_sum(
        m, policy.n_params(), [&](std::size_t i, VecX& a) {
          const VecX jm = policy.mean_jvp(evals[i], dir);
          policy.mean_grad(evals[i], jm.cwiseProduct(inv_var), a);
        });
    VecX out = acc.segment(off, dim) / static_cast<double>(m);
    out.tail(adim) += 2.0 * v.tail(adim);
    out += cfg.cg_damping * v;
    return out;
  };

  const VecX d = conjugate_gradient(fvp, g, cfg.cg_iters);
  const double dfd = d.dot(fvp(d));
  if (!d.allFinite() || !(dfd > 0.0)) return res;
  const double beta = std::sqrt(2.0 * cfg.kl_limit / dfd);

  double adv_mean = 0.0;
  for (std::size_t i = 0; i < m; ++i) adv_mean += pair_adv[i];
  adv_mean /= static_cast<double>(m);

  const VecX theta0 = policy.params();
  for (int back = 0; back < 10; ++back) {
    const double scale = std::pow(0.5, back);
    VecX theta = theta0;
    theta.segment(off, dim) += scale * beta * d;
    policy.set_params(theta);
    const VecX& new_log_std = policy.log_std();

    const VecX sums = par::ordered_sum(m, 2, [&](std::size_t i, VecX& a) {
      const auto [ti, t] = pairs[i];
      const Transition& tr = batch.trajectories[ti].steps[t];
      const DecEval e = policy.eval(embs[ti], tr.obs.flat());
      a[0] += std::exp(policy.log_prob(e, tr.act) - old_lp[i]) * pair_adv[i];
      double kl = 0.0;
      for (int k = 0; k < adim; ++k) {
        const double lso = old_log_std[k];
        const double lsn = new_log_std[k];
        const double dm = e.mean[k] - evals[i].mean[k];
        kl += lsn - lso +
              0.5 * (std::exp(2.0 * lso) + dm * dm) * std::exp(-2.0 * lsn) -
              0.5;
      }
      a[1] += kl;
    });
    const double improvement = sums[0] / static_cast<double>(m) - adv_mean;
    const double kl = sums[1] / static_cast<double>(m);
    if (std::isfinite(improvement) && std::isfinite(kl) && improvement > 0.0 &&
        kl <= 1.5 * cfg.kl_limit) {
      res.accepted = true;
      res.kl = kl;
      res.improvement = improvement;
      res.step_scale = scale;
      return res;
    }
  }
  policy.set_params(theta0);
  return res;
}

std::vector<double> bc_update(Policy& policy, const std::vector<BcPair>& data,
                              const IladConfig& cfg, BcTarget target,
                              int passes, uint64_t seed) {
  if (data.empty()) throw InvalidArgument("bc_update: empty dataset");
  if (passes < 1) throw InvalidArgument("bc_update: passes must be >= 1");
  if (cfg.bc_minibatch < 1)
    throw InvalidArgument("bc_update: bc_minibatch must be >= 1");
  if (target == BcTarget::theta_pc_only && !policy.uses_encoder())
    throw InvalidArgument("bc_update: the flat policy has no encoder block");
  for (const BcPair& p : data)
    if (p.obs == nullptr || p.act == nullptr)
      throw InvalidArgument("bc_update: null pair");

  // Both targets are a prefix of the parameter vector: encoder alone, or
  // encoder plus decision block. log_std stays fixed.
  const int active =
      target == BcTarget::theta_pc_only ? policy.enc_size()
                                        : policy.logstd_offset();
  const int n = static_cast<int>(data.size());
  Adam opt(cfg.bc_lr);
  VecX params = policy.params();
  VecX seg = params.head(active);
  Rng rng(seed);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);

  std::vector<double> losses;
  losses.reserve(passes);
  for (int pass = 0; pass < passes; ++pass) {
    for (int i = n - 1; i > 0; --i)
      std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
    double sq = 0.0;
    for (int s = 0; s < n; s += cfg.bc_minibatch) {
      const int m = std::min(n - s, cfg.bc_minibatch);
      const VecX sums = par::ordered_sum(
          m, policy.n_params() + 1, [&](std::size_t c, VecX& acc) {
            const BcPair& pair = data[idx[s + static_cast<int>(c)]];
            const VecX flat = pair.obs->flat();
            VecX resid;
            auto grad = acc.head(policy.n_params());
            if (policy.uses_encoder()) {
              const FullEval e = policy.eval_full(pair.obs->cloud, flat);
              resid = e.dec.mean - *pair.act;
              const GradScope scope = target == BcTarget::theta_pc_only
                                          ? GradScope::encoder
                                          : GradScope::all;
              policy.mean_grad(e, (2.0 / m) * resid, scope, grad);
            } else {
              const DecEval e = policy.eval(VecX(), flat);
              resid = e.mean - *pair.act;
              policy.mean_grad(e, (2.0 / m) * resid, grad);
            }
            acc[policy.n_params()] += resid.squaredNorm();
          });
      sq += sums[policy.n_params()];
      opt.step(seg, sums.head(active));
      params.head(active) = seg;
      policy.set_params(params);
    }
    losses.push_back(sq / static_cast<double>(n));
  }
  return losses;
}

std::vector<double> bc_pretrain(Policy& policy,
                                const std::vector<Demonstration>& demos,
                                const IladConfig& cfg) {
  std::vector<BcPair> pairs;
  for (const Demonstration& d : demos)
    for (const auto& [obs, act] : d.pairs) pairs.push_back({&obs, &act});
  if (pairs.empty())
    throw InvalidArgument("bc_pretrain: no demonstration pairs");
  return bc_update(policy, pairs, cfg, BcTarget::all, cfg.bc_epochs_per_update,
                   Rng::mix(cfg.seed, hash_string("bc_pretrain")));
}

namespace {

constexpr const char* kMetricsHeader =
    "epoch,mean_return,success_rate_train,kl,bc_loss,w_min,w_mean,w_max,"
    "demo_term_norm,adv_term_norm,grad_hash";

}  // namespace

void save_metrics(const std::string& path,
                  const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path);
  out << kMetricsHeader << "\n";
  for (const MetricsRow& r : rows) {
    out << r.epoch << ',' << fmt_double(r.mean_return) << ','
        << fmt_double(r.success_rate_train) << ',' << fmt_double(r.kl) << ','
        << fmt_double(r.bc_loss) << ',' << fmt_double(r.w_min) << ','
        << fmt_double(r.w_mean) << ',' << fmt_double(r.w_max) << ','
        << fmt_double(r.demo_term_norm) << ',' << fmt_double(r.adv_term_norm)
        << ',' << r.grad_hash << '\n';
  }
}

std::vector<MetricsRow> load_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw InvalidArgument(path + ": not a metrics file");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    if (f.size() != 11) throw InvalidArgument(path + ": malformed row");
    MetricsRow r;
    r.epoch = std::stoi(f[0]);
    r.mean_return = std::stod(f[1]);
    r.success_rate_train = std::stod(f[2]);
    r.kl = std::stod(f[3]);
    r.bc_loss = std::stod(f[4]);
    r.w_min = std::stod(f[5]);
    r.w_mean = std::stod(f[6]);
    r.w_max = std::stod(f[7]);
    r.demo_term_norm = std::stod(f[8]);
    r.adv_term_norm = std::stod(f[9]);
    r.grad_hash = std::stoull(f[10]);
    rows.push_back(r);
  }
  return rows;
}

void save_training_checkpoint(const std::string& path, const Policy& policy,
                              const ValueNets& values, const IladConfig& cfg,
                              TrainMode mode, int epoch) {
  Checkpoint ck;
  json h;
  h["format"] = "ilad-checkpoint";
  h["mode"] = to_string(mode);
  h["epoch"] = epoch;
  h["config"] = config_to_json_obj(cfg);
  ck.header_json = h.dump();
  ck.blocks["policy"] = policy.params();
  ck.blocks["v"] = values.v_net().params();
  ck.blocks["q"] = values.q_net().params();
  ck.save(path);
}

LoadedCheckpoint load_training_checkpoint(const std::string& path) {
  const Checkpoint ck = Checkpoint::load(path);
  const json h = json::parse(ck.header_json);
  if (h.value("format", "") != std::string("ilad-checkpoint"))
    throw InvalidArgument(path + ": not a training checkpoint");

  LoadedCheckpoint lc;
  lc.cfg = config_from_json_obj(h.at("config"));
  lc.mode = train_mode_from_string(h.at("mode").get<std::string>());
  lc.epoch = h.at("epoch").get<int>();

  lc.policy = Policy(lc.cfg.policy, 0);
  const VecX& p = ck.blocks.at("policy");
  if (p.size() != lc.policy.n_params())
    throw InvalidArgument(path + ": policy block size mismatch");
  lc.policy.set_params(p);

  lc.values = ValueNets(lc.cfg.value, 0);
  const VecX& v = ck.blocks.at("v");
  const VecX& q = ck.blocks.at("q");
  if (v.size() != lc.values.v_net().n_params() ||
      q.size() != lc.values.q_net().n_params())
    throw InvalidArgument(path + ": value block size mismatch");
  lc.values.v_net().set_params(v);
  lc.values.q_net().set_params(q);
  return lc;
}

namespace {

std::vector<Demonstration> usable_demos(const std::vector<Demonstration>& in) {
  std::vector<Demonstration> out;
  for (const Demonstration& d : in)
    if (!d.pairs.empty()) out.push_back(d);
  return out;
}

void validate_train_config(const IladConfig& cfg) {
  if (cfg.epochs < 0) throw InvalidArgument("train: epochs must be >= 0");
  if (cfg.T < 1) throw InvalidArgument("train: T must be >= 1");
  if (cfg.n_traj_per_epoch < 1)
    throw InvalidArgument("train: n_traj_per_epoch must be >= 1");
  if (!(cfg.lambda1 > 0.0 && cfg.lambda1 <= 1.0))
    throw InvalidArgument("train: lambda1 must be in (0, 1]");
  if (!(cfg.kl_limit > 0.0)) throw InvalidArgument("train: kl_limit must be > 0");
  if (cfg.cg_iters < 1) throw InvalidArgument("train: cg_iters must be >= 1");
  if (cfg.value_epochs < 0)
    throw InvalidArgument("train: value_epochs must be >= 0");
  if (cfg.bc_minibatch < 1 || cfg.value_minibatch < 1)
    throw InvalidArgument("train: minibatch sizes must be >= 1");
  if (cfg.bc_joint_passes < 1)
    throw InvalidArgument("train: bc_joint_passes must be >= 1");
  if (cfg.bc_epochs_per_update < 1)
    throw InvalidArgument("train: bc_epochs_per_update must be >= 1");
}

}  // namespace

TrainResult train(const std::vector<Polygon>& objects,
                  const std::vector<Demonstration>& demos_in, IladConfig cfg,
                  TrainMode mode, const std::string& out_dir) {
  if (objects.empty()) throw InvalidArgument("train: no training objects");
  validate_train_config(cfg);

  cfg.policy.use_encoder = mode != TrainMode::rl;
  cfg.policy.flat_obs_dim = 12;
  cfg.policy.action_dim = 7;
  cfg.value.flat_obs_dim = 12;
  cfg.value.action_dim = 7;
  cfg.value.n_cloud_points = cfg.sim.n_cloud_points;

  const bool use_demos = mode == TrainMode::dapg_pc || mode == TrainMode::ilad;
  const std::vector<Demonstration> demos =
      use_demos ? usable_demos(demos_in) : std::vector<Demonstration>{};
  if (use_demos && demos.empty())
    throw InvalidArgument("train: this mode requires demonstrations");

  const bool persist = !out_dir.empty();
  if (persist) {
    std::filesystem::create_directories(out_dir);
    json manifest;
    manifest["format"] = "ilad-run";
    manifest["mode"] = to_string(mode);
    manifest["gradient_note"] = "all gradient sums are per-dataset means";
    manifest["config"] = config_to_json_obj(cfg);
    std::ofstream out(out_dir + "/manifest.json");
    if (!out) throw InvalidArgument("cannot write " + out_dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
  }

  Policy policy(cfg.policy, Rng::mix(cfg.seed, hash_string("policy_init")));
  ValueNets values(cfg.value, Rng::mix(cfg.seed, hash_string("value_init")));

  if (use_demos) bc_pretrain(policy, demos, cfg);
  std::vector<VecX> dembs = demo_embeddings(policy, demos);

  std::vector<MetricsRow> rows;
  rows.reserve(cfg.epochs);
  for (int k = 0; k < cfg.epochs; ++k) {
    RolloutBatch batch = collect_rollouts(policy, objects, cfg, k);

    double bc_loss = 0.0;
    if (policy.uses_encoder() && k % cfg.T == 0) {
      std::vector<BcPair> pairs;
      pairs.reserve(batch.total_steps());
      for (const Trajectory& traj : batch.trajectories)
        for (const Transition& tr : traj.steps)
          pairs.push_back({&tr.obs, &tr.act});
      const auto curve = bc_update(
          policy, pairs, cfg, BcTarget::theta_pc_only, cfg.bc_joint_passes,
          Rng::mix(Rng::mix(cfg.seed, hash_string("joint_bc")),
                   static_cast<uint64_t>(k)));
      bc_loss = curve.back();
      dembs = demo_embeddings(policy, demos);
    }

    fit_value_functions(values, batch, cfg);
    std::vector<VecX> adv =
        gae_advantages(batch, values, cfg.gamma, cfg.gae_lambda);
    normalize_advantages(adv);

    GradientDiagnostics diag;
    VecX grad;
    if (mode == TrainMode::ilad) {
      VecX losses(demos.size());
      par::for_each(demos.size(), [&](std::size_t i) {
        losses[i] = traj_neg_log_likelihood(policy, demos[i], dembs[i]);
      });
      const VecX w = normalized_weights(losses);
      grad = ilad_gradient(policy, batch, adv, demos, dembs, w, values, cfg, k,
                           &diag);
    } else if (mode == TrainMode::dapg_pc) {
      grad = dapg_gradient(policy, batch, adv, demos, dembs, cfg, k, &diag);
    } else {
      grad = dapg_gradient(policy, batch, adv, {}, {}, cfg, k, &diag);
    }

    const TrpoResult tr = trpo_step(policy, grad, batch, adv, cfg);

    MetricsRow row;
    row.epoch = k;
    double ret = 0.0;
    double succ = 0.0;
    for (const Trajectory& traj : batch.trajectories) {
      ret += traj.total_reward;
      succ += traj.success ? 1.0 : 0.0;
    }
    row.mean_return = ret / static_cast<double>(batch.trajectories.size());
    row.success_rate_train =
        succ / static_cast<double>(batch.trajectories.size());
    row.kl = tr.accepted ? tr.kl : 0.0;
    row.bc_loss = bc_loss;
    row.w_min = diag.w_min;
    row.w_mean = diag.w_mean;
    row.w_max = diag.w_max;
    row.demo_term_norm = diag.demo_term_norm;
    row.adv_term_norm = diag.adv_term_norm;
    row.grad_hash = hash_doubles(grad.data(), grad.size());
    rows.push_back(row);

    if (persist) {
      save_metrics(out_dir + "/metrics.csv", rows);
      if (cfg.checkpoint_interval > 0 && (k + 1) % cfg.checkpoint_interval == 0) {
        char name[32];
        std::snprintf(name, sizeof(name), "checkpoint_%04d.ckpt", k);
        save_training_checkpoint(out_dir + "/" + name, policy, values, cfg,
                                 mode, k);
      }
    }
  }

  if (persist) {
    save_metrics(out_dir + "/metrics.csv", rows);
    save_training_checkpoint(out_dir + "/checkpoint_final.ckpt", policy, values,
                             cfg, mode, cfg.epochs == 0 ? 0 : cfg.epochs - 1);
  }
  return {std::move(policy), std::move(values), std::move(rows)};
}

}  // namespace ilad
