#include <algorithm>
#include <chrono>
#include <cstdio>
#include <vector>

#include "ilad/harness.hpp"
#include "ilad/parallel.hpp"

using namespace ilad;

namespace {

double time_ms(const std::function<void()>& fn, int reps = 3) {
  fn();
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

struct Workload {
  const char* name;
  std::size_t items;
  std::function<uint64_t()> run;
};

void bench(const Workload& w, int hw_threads) {
  par::set_max_threads(1);
  uint64_t serial_hash = 0;
  const double serial_ms = time_ms([&] { serial_hash = w.run(); });

  par::set_max_threads(hw_threads);
  uint64_t par_hash = 0;
  const double par_ms = time_ms([&] { par_hash = w.run(); });

  std::printf("%-22s %6zu  %9.1f  %9.1f  %6.2fx  %s\n", w.name, w.items,
              serial_ms, par_ms, serial_ms / par_ms,
              serial_hash == par_hash ? "identical" : "DIVERGED");
}

uint64_t hash_vec(const std::vector<double>& v) {
  return hash_doubles(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

int main() {
  const int hw = par::max_threads();
  std::printf("threads: 1 (serial reference) vs %d\n\n", hw);
  std::printf("%-22s %6s  %9s  %9s  %7s  %s\n", "workload", "items",
              "serial ms", "par ms", "speedup", "result");

  const auto cans = generate_category_instances(Category::can, 2, 3);

  SimConfig sim;
  sim.horizon = 100;
  const Policy policy(PolicyConfig{}, 1);

  // sample a batch of observations by stepping a noisy policy
  std::vector<PointCloud> clouds;
  std::vector<VecX> flats, actions;
  {
    Rng rng(5);
    for (const Polygon& p : cans) {
      Env env(p, sim);
      env.reset(2);
      Observation obs = env.observe();
      for (int t = 0; t < 128; ++t) {
        clouds.push_back(env.cloud());
        flats.push_back(obs.flat());
        VecX a = policy.sample(VecX::Zero(7), rng);
        actions.push_back(a);
        StepResult r = env.step(a);
        obs = std::move(r.obs);
        if (r.done) {
          env.reset(static_cast<uint64_t>(t) + 3);
          obs = env.observe();
        }
      }
    }
  }
  const std::size_t n_samples = clouds.size();

  const Workload gradient{
      "log-prob gradient sum", n_samples, [&]() -> uint64_t {
        const VecX g = par::ordered_sum(
            n_samples, policy.n_params(),
            [&](std::size_t i, Eigen::VectorXd& acc) {
              const FullEval e = policy.eval_full(clouds[i], flats[i]);
              policy.log_prob_grad(e, actions[i], GradScope::all, acc);
            });
        return hash_doubles(g.data(), g.size());
      }};

  const Workload episodes{"evaluation episodes", 24, [&]() -> uint64_t {
                            const EvalReport rep =
                                evaluate_success(policy, cans, 12, {0}, sim);
                            std::vector<double> sig;
                            for (const EvalEpisode& ep : rep.episodes) {
                              sig.push_back(ep.total_reward);
                              sig.push_back(ep.final_dist);
                            }
                            return hash_vec(sig);
                          }};

  const Workload planning{"demo planning", 4, [&]() -> uint64_t {
                            DemoGenConfig cfg;
                            cfg.sim = sim;
                            const DemoSet set =
                                generate_demo_set(cans, 2, cfg, 7);
                            std::vector<double> sig;
                            for (const Demonstration& d : set.demos) {
                              sig.push_back(d.final_cost);
                              for (const auto& pr : d.pairs)
                                for (int k = 0; k < pr.second.size(); ++k)
                                  sig.push_back(pr.second[k]);
                            }
                            return hash_vec(sig);
                          }};

  bench(gradient, hw);
  bench(episodes, hw);
  bench(planning, hw);

  par::set_max_threads(hw);
  return 0;
}
