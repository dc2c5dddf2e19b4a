#pragma once

#include <functional>
#include <map>

#include "ilad/sim.hpp"

namespace ilad {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

struct MlpCache {
  std::vector<MatX> activations;  // input followed by each layer's output
};

// Fully-connected net, tanh on hidden layers, optional tanh on the output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(int input, std::vector<int> hidden, int output, bool tanh_output);

  void init(Rng& rng);
  int n_params() const { return n_params_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }

  VecX params() const;
  void set_params(Eigen::Ref<const VecX> p);

  MatX forward(const MatX& x, MlpCache* cache = nullptr) const;
  // Backpropagates dy, adds parameter gradients into grad (own layout),
  // returns dx.
  MatX backward(const MlpCache& cache, const MatX& dy,
                Eigen::Ref<VecX> grad) const;
  // Directional forward derivative along (dparams, dx).
  MatX jvp(const MlpCache& cache, Eigen::Ref<const VecX> dparams,
           const MatX& dx) const;

 private:
  struct Layer {
    MatX w;
    VecX b;
  };
  std::vector<Layer> layers_;
  std::vector<int> dims_;
  bool tanh_output_ = false;
  int n_params_ = 0;
};

MatX cloud_matrix(const PointCloud& cloud);

struct EncoderCache {
  MlpCache point_cache;
  MlpCache post_cache;
  std::vector<int> argmax;  // winning point per pooled feature
  int n_points = 0;
};

// Shared per-point layers, feature-wise max pool (ties to the lowest point
// index), then post-pool layers. Output dimension is the embedding size.
class PointEncoder {
 public:
  PointEncoder() = default;
  PointEncoder(std::vector<int> point_widths, std::vector<int> post_widths,
               int embed_dim);

  void init(Rng& rng);
  int n_params() const;
  int embed_dim() const { return post_.output_dim(); }
  VecX params() const;
  void set_params(Eigen::Ref<const VecX> p);

  VecX forward(const PointCloud& cloud, EncoderCache* cache = nullptr) const;
  void backward(const EncoderCache& cache, const VecX& dembedding,
                Eigen::Ref<VecX> grad) const;

 private:
  Mlp point_;
  Mlp post_;
};

enum class GradScope { policy, encoder, all };

struct PolicyConfig {
  bool use_encoder = true;
  std::vector<int> enc_point_widths = {64, 128};
  std::vector<int> enc_post_widths = {64};
  int embed_dim = 32;
  std::vector<int> mlp_widths = {32, 32};
  int flat_obs_dim = 12;
  int action_dim = 7;
  double init_log_std = 0.0;
};

struct DecEval {
  MlpCache cache;
  VecX input;
  VecX mean;
};

struct FullEval {
  EncoderCache enc_cache;
  VecX embedding;
  DecEval dec;
};

// Gaussian policy: decision MLP mean over [embedding ; flat obs], diagonal
// state-independent log std. Parameter layout: encoder, decision, log_std.
class Policy {
 public:
  explicit Policy(PolicyConfig cfg = {}, uint64_t seed = 0);

  const PolicyConfig& config() const { return cfg_; }
  bool uses_encoder() const { return cfg_.use_encoder; }
  int n_params() const;
  VecX params() const;
  void set_params(Eigen::Ref<const VecX> p);

  int enc_offset() const { return 0; }
  int enc_size() const { return cfg_.use_encoder ? enc_.n_params() : 0; }
  int dec_offset() const { return enc_size(); }
  int dec_size() const { return dec_.n_params(); }
  int logstd_offset() const { return enc_size() + dec_size(); }

  const VecX& log_std() const { return log_std_; }
  void set_log_std(const VecX& v) { log_std_ = v; }

  VecX encode(const PointCloud& cloud) const;
  DecEval eval(const VecX& embedding, const VecX& flat) const;
  FullEval eval_full(const PointCloud& cloud, const VecX& flat) const;
  VecX mean(const Observation& obs) const;

  double log_prob(const DecEval& e, const VecX& action) const;
  // Adds d log_prob / d params into grad for the blocks named by scope;
  // encoder blocks require a FullEval.
  double log_prob_grad(const DecEval& e, const VecX& action, GradScope scope,
                       Eigen::Ref<VecX> grad) const;
  double log_prob_grad(const FullEval& e, const VecX& action, GradScope scope,
                       Eigen::Ref<VecX> grad) const;

  // Adds (dL/dmean)ᵀ ∂mean/∂params into grad for the requested blocks.
  void mean_grad(const DecEval& e, const VecX& dmean, Eigen::Ref<VecX> grad)
      const;
  void mean_grad(const FullEval& e, const VecX& dmean, GradScope scope,
                 Eigen::Ref<VecX> grad) const;

  // Decision-block directional derivative of the mean; direction indexes the
  // full parameter vector, non-decision blocks ignored.
  VecX mean_jvp(const DecEval& e, Eigen::Ref<const VecX> direction) const;

  VecX sample(const VecX& mean, Rng& rng) const;

 private:
  void check_flat(const VecX& flat) const;

  PolicyConfig cfg_;
  PointEncoder enc_;
  Mlp dec_;
  VecX log_std_;
};

Action sample_action(const Policy& policy, const Observation& obs, Rng& rng);

struct ValueConfig {
  bool include_cloud = true;  // cloud ⊕ flat obs input; otherwise flat only
  int n_cloud_points = 64;
  int flat_obs_dim = 12;
  int action_dim = 7;
  std::vector<int> widths = {64, 64};
};

// Separate V(s) and Q(s, a) estimators.
class ValueNets {
 public:
  explicit ValueNets(ValueConfig cfg = {}, uint64_t seed = 0);

  const ValueConfig& config() const { return cfg_; }
  int obs_dim() const;
  VecX obs_input(const Observation& obs) const;

  double value(const VecX& obs_input) const;
  double q_value(const VecX& obs_input, const VecX& action) const;

  Mlp& v_net() { return v_; }
  Mlp& q_net() { return q_; }
  const Mlp& v_net() const { return v_; }
  const Mlp& q_net() const { return q_; }

 private:
  ValueConfig cfg_;
  Mlp v_;
  Mlp q_;
};

class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(VecX& params, const VecX& grad);
  void reset();

 private:
  double lr_, beta1_, beta2_, eps_;
  VecX m_, v_;
  int t_ = 0;
};

// Max over checked parameters of |analytic - central difference| divided by
// max(1, |analytic|, |numeric|). Checks every parameter when there are at
// most max_checks, otherwise a seeded random subsample of max_checks ≥ 200.
double finite_difference_check(const std::function<double(const VecX&)>& f,
                               const VecX& params, const VecX& analytic_grad,
                               double epsilon = 1e-5, int max_checks = 400,
                               uint64_t seed = 0);

// Named flat double blocks plus a free-form json header; bit-exact reload.
struct Checkpoint {
  std::string header_json;
  std::map<std::string, VecX> blocks;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace ilad
