#include "ilad/nets.hpp"

#include <cstring>
#include <fstream>

namespace ilad {

Mlp::Mlp(int input, std::vector<int> hidden, int output, bool tanh_output)
    : tanh_output_(tanh_output) {
  if (input < 1 || output < 1) throw InvalidArgument("bad mlp dims");
  dims_.push_back(input);
  for (int h : hidden) {
    if (h < 1) throw InvalidArgument("bad mlp dims");
    dims_.push_back(h);
  }
  dims_.push_back(output);
  for (size_t l = 1; l < dims_.size(); ++l) {
    Layer layer;
    layer.w = MatX::Zero(dims_[l], dims_[l - 1]);
    layer.b = VecX::Zero(dims_[l]);
    n_params_ += static_cast<int>(layer.w.size() + layer.b.size());
    layers_.push_back(std::move(layer));
  }
}

void Mlp::init(Rng& rng) {
  for (auto& layer : layers_) {
    const double s = 1.0 / std::sqrt(static_cast<double>(layer.w.cols()));
    for (Eigen::Index i = 0; i < layer.w.size(); ++i)
      layer.w.data()[i] = rng.uniform(-s, s);
    for (Eigen::Index i = 0; i < layer.b.size(); ++i)
      layer.b[i] = rng.uniform(-s, s);
  }
}

VecX Mlp::params() const {
  VecX p(n_params_);
  Eigen::Index at = 0;
  for (const auto& layer : layers_) {
    std::memcpy(p.data() + at, layer.w.data(), layer.w.size() * sizeof(double));
    at += layer.w.size();
    std::memcpy(p.data() + at, layer.b.data(), layer.b.size() * sizeof(double));
    at += layer.b.size();
  }
  return p;
}

void Mlp::set_params(Eigen::Ref<const VecX> p) {
  if (p.size() != n_params_) throw InvalidArgument("parameter size mismatch");
  Eigen::Index at = 0;
  for (auto& layer : layers_) {
    layer.w = Eigen::Map<const MatX>(p.data() + at, layer.w.rows(),
                                     layer.w.cols());
    at += layer.w.size();
    layer.b = Eigen::Map<const VecX>(p.data() + at, layer.b.size());
    at += layer.b.size();
  }
}

MatX Mlp::forward(const MatX& x, MlpCache* cache) const {
  if (x.rows() != dims_.front())
    throw InvalidArgument("mlp input dimension mismatch");
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(x);
  }
  MatX a = x;
  for (size_t l = 0; l < layers_.size(); ++l) {
    MatX z = (layers_[l].w * a).colwise() + layers_[l].b;
    if (l + 1 < layers_.size() || tanh_output_)
      a = z.array().tanh().matrix();
    else
      a = std::move(z);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

MatX Mlp::backward(const MlpCache& cache, const MatX& dy,
                   Eigen::Ref<VecX> grad) const {
  if (grad.size() != n_params_) throw InvalidArgument("grad size mismatch");
  std::vector<Eigen::Index> offsets(layers_.size());
  Eigen::Index at = 0;
  for (size_t l = 0; l < layers_.size(); ++l) {
    offsets[l] = at;
    at += layers_[l].w.size() + layers_[l].b.size();
  }
  MatX da = dy;
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const MatX& out = cache.activations[l + 1];
    MatX dz;
    if (static_cast<size_t>(l) + 1 < layers_.size() || tanh_output_)
      dz = (da.array() * (1.0 - out.array().square())).matrix();
    else
      dz = std::move(da);
    const MatX& in = cache.activations[l];
    Eigen::Map<MatX> dw(grad.data() + offsets[l], layers_[l].w.rows(),
                        layers_[l].w.cols());
    Eigen::Map<VecX> db(grad.data() + offsets[l] + layers_[l].w.size(),
                        layers_[l].b.size());
    dw.noalias() += dz * in.transpose();
    db += dz.rowwise().sum();
    da.noalias() = layers_[l].w.transpose() * dz;
  }
  return da;
}

MatX Mlp::jvp(const MlpCache& cache, Eigen::Ref<const VecX> dparams,
              const MatX& dx) const {
  if (dparams.size() != n_params_)
    throw InvalidArgument("direction size mismatch");
  MatX da = dx;
  Eigen::Index at = 0;
  for (size_t l = 0; l < layers_.size(); ++l) {
    const Eigen::Map<const MatX> dw(dparams.data() + at, layers_[l].w.rows(),
                                    layers_[l].w.cols());
    const Eigen::Map<const VecX> db(
        dparams.data() + at + layers_[l].w.size(), layers_[l].b.size());
    at += layers_[l].w.size() + layers_[l].b.size();
    const MatX& in = cache.activations[l];
    MatX dz = ((dw * in).colwise() + db).eval();
    dz.noalias() += layers_[l].w * da;
    const MatX& out = cache.activations[l + 1];
    if (l + 1 < layers_.size() || tanh_output_)
      da = (dz.array() * (1.0 - out.array().square())).matrix();
    else
      da = std::move(dz);
  }
  return da;
}

MatX cloud_matrix(const PointCloud& cloud) {
  MatX m(2, cloud.points.size());
  for (size_t i = 0; i < cloud.points.size(); ++i) m.col(i) = cloud.points[i];
  return m;
}

PointEncoder::PointEncoder(std::vector<int> point_widths,
                           std::vector<int> post_widths, int embed_dim) {
  if (point_widths.empty()) throw InvalidArgument("empty encoder widths");
  const int feat = point_widths.back();
  point_widths.pop_back();
  point_ = Mlp(2, point_widths, feat, true);
  post_ = Mlp(feat, post_widths, embed_dim, true);
}

void PointEncoder::init(Rng& rng) {
  point_.init(rng);
  post_.init(rng);
}

int PointEncoder::n_params() const {
  return point_.n_params() + post_.n_params();
}

VecX PointEncoder::params() const {
  VecX p(n_params());
  p.head(point_.n_params()) = point_.params();
  p.tail(post_.n_params()) = post_.params();
  return p;
}

void PointEncoder::set_params(Eigen::Ref<const VecX> p) {
  if (p.size() != n_params()) throw InvalidArgument("parameter size mismatch");
  point_.set_params(p.head(point_.n_params()));
  post_.set_params(p.tail(post_.n_params()));
}

VecX PointEncoder::forward(const PointCloud& cloud,
                           EncoderCache* cache) const {
  if (cloud.points.empty()) throw InvalidArgument("empty point cloud");
  const int n = static_cast<int>(cloud.points.size());
  MlpCache local_point;
  MlpCache* pc = cache ? &cache->point_cache : &local_point;
  const MatX feats = point_.forward(cloud_matrix(cloud), pc);
  const int f = static_cast<int>(feats.rows());
  VecX pooled(f);
  std::vector<int> argmax(f, 0);
  for (int r = 0; r < f; ++r) {
    double best = feats(r, 0);
    int best_j = 0;
    for (int j = 1; j < n; ++j) {
      if (feats(r, j) > best) {
        best = feats(r, j);
        best_j = j;
      }
    }
    pooled[r] = best;
    argmax[r] = best_j;
  }
  if (cache) {
    cache->argmax = std::move(argmax);
    cache->n_points = n;
  }
  MlpCache local_post;
  const MatX emb =
      post_.forward(pooled, cache ? &cache->post_cache : &local_post);
  return emb.col(0);
}

void PointEncoder::backward(const EncoderCache& cache, const VecX& dembedding,
                            Eigen::Ref<VecX> grad) const {
  if (grad.size() != n_params()) throw InvalidArgument("grad size mismatch");
  const MatX dpooled =
      post_.backward(cache.post_cache, dembedding,
                     grad.tail(post_.n_params()));
  MatX dfeats = MatX::Zero(dpooled.rows(), cache.n_points);
  for (Eigen::Index r = 0; r < dpooled.rows(); ++r)
    dfeats(r, cache.argmax[r]) = dpooled(r, 0);
  point_.backward(cache.point_cache, dfeats, grad.head(point_.n_params()));
}

Policy::Policy(PolicyConfig cfg, uint64_t seed) : cfg_(cfg) {
  const int input =
      (cfg_.use_encoder ? cfg_.embed_dim : 0) + cfg_.flat_obs_dim;
  if (cfg_.use_encoder)
    enc_ = PointEncoder(cfg_.enc_point_widths, cfg_.enc_post_widths,
                        cfg_.embed_dim);
  dec_ = Mlp(input, cfg_.mlp_widths, cfg_.action_dim, false);
  log_std_ = VecX::Constant(cfg_.action_dim, cfg_.init_log_std);
  Rng rng(Rng::mix(seed, hash_string("policy_init")));
  if (cfg_.use_encoder) enc_.init(rng);
  dec_.init(rng);
}

int Policy::n_params() const {
  return enc_size() + dec_.n_params() + static_cast<int>(log_std_.size());
}

VecX Policy::params() const {
  VecX p(n_params());
  if (cfg_.use_encoder) p.segment(enc_offset(), enc_size()) = enc_.params();
  p.segment(dec_offset(), dec_size()) = dec_.params();
  p.segment(logstd_offset(), log_std_.size()) = log_std_;
  return p;
}

void Policy::set_params(Eigen::Ref<const VecX> p) {
  if (p.size() != n_params()) throw InvalidArgument("parameter size mismatch");
  if (cfg_.use_encoder) enc_.set_params(p.segment(enc_offset(), enc_size()));
  dec_.set_params(p.segment(dec_offset(), dec_size()));
  log_std_ = p.segment(logstd_offset(), log_std_.size());
}

void Policy::check_flat(const VecX& flat) const {
  if (flat.size() != cfg_.flat_obs_dim)
    throw InvalidArgument("flat observation dimension mismatch");
}

VecX Policy::encode(const PointCloud& cloud) const {
  if (!cfg_.use_encoder) return VecX();
  return enc_.forward(cloud);
}

DecEval Policy::eval(const VecX& embedding, const VecX& flat) const {
  check_flat(flat);
  DecEval e;
  e.input.resize(dec_.input_dim());
  if (cfg_.use_encoder) {
    if (embedding.size() != cfg_.embed_dim)
      throw InvalidArgument("embedding dimension mismatch");
    e.input << embedding, flat;
  } else {
    e.input = flat;
  }
  e.mean = dec_.forward(e.input, &e.cache).col(0);
  return e;
}

FullEval Policy::eval_full(const PointCloud& cloud, const VecX& flat) const {
  if (!cfg_.use_encoder)
    throw InvalidState("full evaluation requires the encoder");
  FullEval e;
  e.embedding = enc_.forward(cloud, &e.enc_cache);
  e.dec = eval(e.embedding, flat);
  return e;
}

VecX Policy::mean(const Observation& obs) const {
  const VecX flat = obs.flat();
  if (cfg_.use_encoder) return eval(encode(obs.cloud), flat).mean;
  return eval(VecX(), flat).mean;
}

double Policy::log_prob(const DecEval& e, const VecX& action) const {
  if (action.size() != log_std_.size())
    throw InvalidArgument("action dimension mismatch");
  double lp = 0.0;
  for (Eigen::Index i = 0; i < action.size(); ++i) {
    const double z = (action[i] - e.mean[i]) * std::exp(-log_std_[i]);
    lp -= 0.5 * (z * z + 2.0 * log_std_[i] + std::log(2.0 * kPi));
  }
  return lp;
}

double Policy::log_prob_grad(const DecEval& e, const VecX& action,
                             GradScope scope, Eigen::Ref<VecX> grad) const {
  if (scope != GradScope::policy)
    throw InvalidArgument("encoder gradients need a full evaluation");
  if (grad.size() != n_params()) throw InvalidArgument("grad size mismatch");
  const double lp = log_prob(e, action);
  VecX dmean(action.size());
  for (Eigen::Index i = 0; i < action.size(); ++i) {
    const double inv_var = std::exp(-2.0 * log_std_[i]);
    const double diff = action[i] - e.mean[i];
    dmean[i] = diff * inv_var;
    grad[logstd_offset() + i] += diff * diff * inv_var - 1.0;
  }
  dec_.backward(e.cache, dmean, grad.segment(dec_offset(), dec_size()));
  return lp;
}

double Policy::log_prob_grad(const FullEval& e, const VecX& action,
                             GradScope scope, Eigen::Ref<VecX> grad) const {
  if (scope == GradScope::policy)
    return log_prob_grad(e.dec, action, scope, grad);
  if (grad.size() != n_params()) throw InvalidArgument("grad size mismatch");
  const double lp = log_prob(e.dec, action);
  VecX dmean(action.size());
  for (Eigen::Index i = 0; i < action.size(); ++i) {
    const double inv_var = std::exp(-2.0 * log_std_[i]);
    const double diff = action[i] - e.dec.mean[i];
    dmean[i] = diff * inv_var;
    if (scope == GradScope::all)
      grad[logstd_offset() + i] += diff * diff * inv_var - 1.0;
  }
  VecX dec_grad = VecX::Zero(dec_size());
  const MatX dinput = dec_.backward(e.dec.cache, dmean, dec_grad);
  if (scope == GradScope::all)
    grad.segment(dec_offset(), dec_size()) += dec_grad;
  enc_.backward(e.enc_cache, dinput.col(0).head(cfg_.embed_dim),
                grad.segment(enc_offset(), enc_size()));
  return lp;
}

void Policy::mean_grad(const DecEval& e, const VecX& dmean,
                       Eigen::Ref<VecX> grad) const {
  if (grad.size() != n_params()) throw InvalidArgument("grad size mismatch");
  dec_.backward(e.cache, dmean, grad.segment(dec_offset(), dec_size()));
}

void Policy::mean_grad(const FullEval& e, const VecX& dmean, GradScope scope,
                       Eigen::Ref<VecX> grad) const {
  if (scope == GradScope::policy) {
    mean_grad(e.dec, dmean, grad);
    return;
  }
  if (grad.size() != n_params()) throw InvalidArgument("grad size mismatch");
  VecX dec_grad = VecX::Zero(dec_size());
  const MatX dinput = dec_.backward(e.dec.cache, dmean, dec_grad);
  if (scope == GradScope::all)
    grad.segment(dec_offset(), dec_size()) += dec_grad;
  enc_.backward(e.enc_cache, dinput.col(0).head(cfg_.embed_dim),
                grad.segment(enc_offset(), enc_size()));
}

VecX Policy::mean_jvp(const DecEval& e, Eigen::Ref<const VecX> direction)
    const {
  if (direction.size() != n_params())
    throw InvalidArgument("direction size mismatch");
  const MatX dx = MatX::Zero(dec_.input_dim(), 1);
  return dec_.jvp(e.cache, direction.segment(dec_offset(), dec_size()), dx)
      .col(0);
}

VecX Policy::sample(const VecX& mean, Rng& rng) const {
  VecX a(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i)
    a[i] = mean[i] + std::exp(log_std_[i]) * rng.normal();
  return a;
}

Action sample_action(const Policy& policy, const Observation& obs, Rng& rng) {
  const VecX m = policy.mean(obs);
  const VecX a = policy.sample(m, rng);
  Action out;
  for (int i = 0; i < 7; ++i) out[i] = a[i];
  return out;
}

ValueNets::ValueNets(ValueConfig cfg, uint64_t seed) : cfg_(cfg) {
  const int in = obs_dim();
  v_ = Mlp(in, cfg_.widths, 1, false);
  q_ = Mlp(in + cfg_.action_dim, cfg_.widths, 1, false);
  Rng rng(Rng::mix(seed, hash_string("value_init")));
  v_.init(rng);
  q_.init(rng);
}

int ValueNets::obs_dim() const {
  return (cfg_.include_cloud ? 2 * cfg_.n_cloud_points : 0) +
         cfg_.flat_obs_dim;
}

VecX ValueNets::obs_input(const Observation& obs) const {
  VecX in(obs_dim());
  Eigen::Index at = 0;
  if (cfg_.include_cloud) {
    if (static_cast<int>(obs.cloud.points.size()) != cfg_.n_cloud_points)
      throw InvalidArgument("cloud size mismatch");
    for (const auto& p : obs.cloud.points) {
      in[at++] = p.x();
      in[at++] = p.y();
    }
  }
  in.segment(at, 12) = obs.flat();
  return in;
}

double ValueNets::value(const VecX& obs_input) const {
  return v_.forward(obs_input)(0, 0);
}

double ValueNets::q_value(const VecX& obs_input, const VecX& action) const {
  VecX in(obs_input.size() + action.size());
  in << obs_input, action;
  return q_.forward(in)(0, 0);
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::reset() {
  m_.resize(0);
  v_.resize(0);
  t_ = 0;
}

void Adam::step(VecX& params, const VecX& grad) {
  if (m_.size() != params.size()) {
    m_ = VecX::Zero(params.size());
    v_ = VecX::Zero(params.size());
    t_ = 0;
  }
  t_ += 1;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  params -= (lr_ / bc1) * m_.cwiseQuotient(
                              ((v_ / bc2).cwiseSqrt().array() + eps_).matrix());
}

double finite_difference_check(const std::function<double(const VecX&)>& f,
                               const VecX& params, const VecX& analytic_grad,
                               double epsilon, int max_checks, uint64_t seed) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
    throw InvalidArgument("epsilon outside [1e-7, 1e-3]");
  if (params.size() != analytic_grad.size())
    throw InvalidArgument("gradient size mismatch");
  max_checks = std::max(max_checks, 200);
  const Eigen::Index n = params.size();
  std::vector<Eigen::Index> idx;
  if (n <= max_checks) {
    idx.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) idx[i] = i;
  } else {
    Rng rng(Rng::mix(seed, hash_string("fd_check")));
    std::vector<bool> seen(n, false);
    while (static_cast<int>(idx.size()) < max_checks) {
      const auto i = static_cast<Eigen::Index>(rng.uniform_int(n));
      if (!seen[i]) {
        seen[i] = true;
        idx.push_back(i);
      }
    }
  }
  double worst = 0.0;
  VecX p = params;
  for (const Eigen::Index i : idx) {
    const double saved = p[i];
    p[i] = saved + epsilon;
    const double up = f(p);
    p[i] = saved - epsilon;
    const double down = f(p);
    p[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic_grad[i];
    const double rel = std::abs(a - numeric) /
                       std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, rel);
  }
  return worst;
}

namespace {

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ofstream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

uint64_t read_u64(std::ifstream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

constexpr char kCkptMagic[8] = {'I', 'L', 'A', 'D', 'C', 'K', 'P', 'T'};

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open for writing: " + path);
  out.write(kCkptMagic, sizeof(kCkptMagic));
  write_u32(out, 1);
  write_u32(out, static_cast<uint32_t>(header_json.size()));
  out.write(header_json.data(),
            static_cast<std::streamsize>(header_json.size()));
  write_u32(out, static_cast<uint32_t>(blocks.size()));
  for (const auto& [name, data] : blocks) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, static_cast<uint64_t>(data.size()));
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw InvalidState("checkpoint write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw InvalidArgument("not a checkpoint file: " + path);
  const uint32_t version = read_u32(in);
  if (version != 1) throw InvalidArgument("unsupported checkpoint version");
  Checkpoint ckpt;
  const uint32_t header_len = read_u32(in);
  ckpt.header_json.resize(header_len);
  in.read(ckpt.header_json.data(), header_len);
  const uint32_t n_blocks = read_u32(in);
  for (uint32_t b = 0; b < n_blocks; ++b) {
    const uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint64_t count = read_u64(in);
    VecX data(static_cast<Eigen::Index>(count));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    ckpt.blocks.emplace(std::move(name), std::move(data));
  }
  if (!in) throw InvalidArgument("truncated checkpoint: " + path);
  return ckpt;
}

}  // namespace ilad
