#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ilad/nets.hpp"
#include "ilad/planner.hpp"

namespace ilad {

enum class TrainMode { rl, rl_pc, dapg_pc, ilad };

const char* to_string(TrainMode mode);
// Accepts both "dapg_pc" and "dapg-pc" spellings.
TrainMode train_mode_from_string(const std::string& s);

struct IladConfig {
  double lambda0 = 0.1;        // demo term base weight
  double lambda1 = 0.99;       // demo term decay per epoch
  double lambda0_prime = 0.01; // advantage-weighted demo term base weight
  int T = 50;                  // epochs between joint encoder refreshes
  double gamma = 0.995;
  double gae_lambda = 0.97;
  double kl_limit = 0.01;
  int cg_iters = 10;
  double cg_damping = 0.1;
  int n_traj_per_epoch = 200;
  int epochs = 100;
  double bc_lr = 1e-3;
  int bc_minibatch = 256;
  int bc_epochs_per_update = 20; // pretrain passes over the demo set
  int bc_joint_passes = 1;       // passes per joint encoder refresh
  double value_lr = 1e-3;
  int value_epochs = 10;
  int value_minibatch = 256;
  double adv_clip = 10.0;
  int checkpoint_interval = 0; // 0 keeps only the final checkpoint
  bool force_unit_weights = false;
  uint64_t seed = 0;
  PolicyConfig policy;
  ValueConfig value;
  SimConfig sim;
};

// Serialization used by config files, run manifests, and checkpoint headers.
// Parsing starts from defaults and overrides whatever keys are present;
// lambda0_prime falls back to 0.1 * lambda0 when absent.
std::string ilad_config_to_json(const IladConfig& cfg);
IladConfig ilad_config_from_json(const std::string& text);

// Compact JSON form of the simulation settings; hashed into evaluation
// reports so a report pins down the environment it was measured in.
std::string sim_config_to_json(const SimConfig& cfg);

struct Transition {
  Observation obs;
  Action act = Action::Zero();
  double reward = 0.0;
  double log_prob = 0.0; // under the policy that generated the action
};

struct Trajectory {
  std::vector<Transition> steps;
  int object_index = 0;
  double total_reward = 0.0;
  bool success = false;
};

struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  int epoch = 0;

  int total_steps() const;
};

// n_traj_per_epoch on-policy episodes over uniformly drawn objects.
// Deterministic for fixed (cfg.seed, epoch) regardless of thread count.
RolloutBatch collect_rollouts(const Policy& policy,
                              const std::vector<Polygon>& objects,
                              const IladConfig& cfg, int epoch);

// Raw GAE(gamma, lambda) per trajectory, terminal bootstrap zero.
std::vector<VecX> gae_advantages(const RolloutBatch& batch,
                                 const ValueNets& values, double gamma,
                                 double gae_lambda);
// Shifts and scales the pooled advantages to zero mean, unit variance.
void normalize_advantages(std::vector<VecX>& advantages);

struct ValueFitResult {
  std::vector<double> v_losses; // mean squared error per fitting epoch
  std::vector<double> q_losses;
};

// Regresses V and Q onto discounted returns from the batch.
ValueFitResult fit_value_functions(ValueNets& values, const RolloutBatch& batch,
                                   const IladConfig& cfg);

double demo_advantage(const ValueNets& values, const Observation& obs,
                      const Action& act);

// Mean negative log-likelihood of the demonstration's actions. The cloud is
// constant within a demonstration, so a precomputed embedding serves every
// step; the two-argument form computes it.
double traj_neg_log_likelihood(const Policy& policy, const Demonstration& demo);
double traj_neg_log_likelihood(const Policy& policy, const Demonstration& demo,
                               const VecX& embedding);

// Per-demonstration encoder embeddings; empty vectors for a flat policy.
std::vector<VecX> demo_embeddings(const Policy& policy,
                                  const std::vector<Demonstration>& demos);

// Min-max rescaling of per-demo losses to [0, 1]; all ones on a tie.
VecX normalized_weights(const VecX& losses);

struct GradientDiagnostics {
  double demo_term_norm = 0.0;
  double adv_term_norm = 0.0;
  double w_min = 0.0;
  double w_mean = 0.0;
  double w_max = 0.0;
};

// Policy-gradient ascent directions over the decision block and log std,
// zero elsewhere. Each sum is a mean over its own data set. Passing no
// demonstrations reduces dapg_gradient to the plain policy gradient.
VecX dapg_gradient(const Policy& policy, const RolloutBatch& batch,
                   const std::vector<VecX>& advantages,
                   const std::vector<Demonstration>& demos,
                   const std::vector<VecX>& embeddings, const IladConfig& cfg,
                   int epoch, GradientDiagnostics* diag = nullptr);

VecX ilad_gradient(const Policy& policy, const RolloutBatch& batch,
                   const std::vector<VecX>& advantages,
                   const std::vector<Demonstration>& demos,
                   const std::vector<VecX>& embeddings, const VecX& weights,
                   const ValueNets& values, const IladConfig& cfg, int epoch,
                   GradientDiagnostics* diag = nullptr);

VecX conjugate_gradient(const std::function<VecX(const VecX&)>& apply,
                        const VecX& b, int iters, double tol = 1e-10);

struct TrpoResult {
  bool accepted = false;
  bool finite = true;   // false when the gradient had NaN or infinity
  double kl = 0.0;
  double improvement = 0.0;
  double step_scale = 0.0; // line-search backoff, 0 when no step was taken
};

// Natural-gradient trust-region update of the decision block and log std.
// Encoder parameters never move. Zero gradient or a failed line search
// leaves the policy bit-identical.
TrpoResult trpo_step(Policy& policy, const VecX& gradient,
                     const RolloutBatch& batch,
                     const std::vector<VecX>& advantages,
                     const IladConfig& cfg);

enum class BcTarget { theta_pc_only, all };

struct BcPair {
  const Observation* obs = nullptr;
  const Action* act = nullptr;
};

// Adam on the mean squared error between the policy mean and the target
// action. theta_pc_only moves the encoder alone; all moves encoder plus
// decision block. log std never moves. Returns the per-pass loss curve.
std::vector<double> bc_update(Policy& policy, const std::vector<BcPair>& data,
                              const IladConfig& cfg, BcTarget target,
                              int passes, uint64_t seed);

std::vector<double> bc_pretrain(Policy& policy,
                                const std::vector<Demonstration>& demos,
                                const IladConfig& cfg);

struct MetricsRow {
  int epoch = 0;
  double mean_return = 0.0;
  double success_rate_train = 0.0;
  double kl = 0.0;
  double bc_loss = 0.0;
  double w_min = 0.0;
  double w_mean = 0.0;
  double w_max = 0.0;
  double demo_term_norm = 0.0;
  double adv_term_norm = 0.0;
  uint64_t grad_hash = 0;
};

void save_metrics(const std::string& path,
                  const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> load_metrics(const std::string& path);

void save_training_checkpoint(const std::string& path, const Policy& policy,
                              const ValueNets& values, const IladConfig& cfg,
                              TrainMode mode, int epoch);

struct LoadedCheckpoint {
  Policy policy;
  ValueNets values;
  IladConfig cfg;
  TrainMode mode = TrainMode::ilad;
  int epoch = 0;
};

LoadedCheckpoint load_training_checkpoint(const std::string& path);

struct TrainResult {
  Policy policy;
  ValueNets values;
  std::vector<MetricsRow> metrics;
};

// Full training loop. Writes manifest.json, metrics.csv, and checkpoints
// under out_dir; pass an empty out_dir to keep everything in memory.
TrainResult train(const std::vector<Polygon>& objects,
                  const std::vector<Demonstration>& demos, IladConfig cfg,
                  TrainMode mode, const std::string& out_dir);

}  // namespace ilad
