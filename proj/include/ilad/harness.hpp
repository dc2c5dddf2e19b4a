#pragma once

#include <map>

#include "ilad/imitation.hpp"

namespace ilad {

struct EvalEpisode {
  int object_index = 0;  // position in the evaluated object list
  Category category = Category::bottle;
  int instance_id = 0;
  uint64_t seed = 0;
  int trial = 0;
  bool success = false;
  double final_dist = 0.0;
  double total_reward = 0.0;
  int steps = 0;
};

struct EvalObjectCount {
  int object_index = 0;
  Category category = Category::bottle;
  int instance_id = 0;
  int trials = 0;
  int successes = 0;
};

struct EvalReport {
  std::vector<EvalEpisode> episodes;     // fixed order: seed, object, trial
  std::vector<EvalObjectCount> per_object;
  std::vector<uint64_t> seeds;
  std::vector<double> per_seed_rates;
  int trials = 0;
  int successes = 0;
  double success_rate = 0.0;  // successes / trials, exact
  double seed_mean = 0.0;     // mean of per-seed rates
  double seed_std = 0.0;      // population std of per-seed rates
  uint64_t config_hash = 0;   // policy parameters + sim config
};

// Splits a trial budget over n objects as evenly as possible; the remainder
// goes to the lowest list positions.
std::vector<int> distribute_trials(int total, int n_objects);

// Deterministic episodes with the policy mean action, one per
// (seed, object, trial). Never mutates the policy.
EvalReport evaluate_success(const Policy& policy,
                            const std::vector<Polygon>& objects,
                            const std::vector<int>& trials_per_object,
                            const std::vector<uint64_t>& seeds,
                            const SimConfig& sim);
EvalReport evaluate_success(const Policy& policy,
                            const std::vector<Polygon>& objects,
                            int trials_per_object,
                            const std::vector<uint64_t>& seeds,
                            const SimConfig& sim);

// Per-episode log; every aggregate in the report is recomputable from it.
void save_eval_episodes(const std::string& path, const EvalReport& report);
void save_eval_summary(const std::string& path, const EvalReport& report);

// Scripted grasp-and-carry controller: drive the open hand behind the
// object, slide in, squeeze, then translate the palm straight to the
// target. Used as an environment-solvability oracle, so a trial may restart
// from the identical reset state and grip across the other body axis when
// the first plan fails.
bool scripted_relocate(Env& env, uint64_t reset_seed);
double scripted_success_rate(const std::vector<Polygon>& objects,
                             int trials_per_object, uint64_t seed,
                             const SimConfig& sim = {});

// Balanced subset: demonstrations are taken round-robin over objects in
// first-appearance order. count <= 0 or >= size keeps everything.
std::vector<Demonstration> subset_demos(
    const std::vector<Demonstration>& demos, int count);

inline constexpr const char* kDemoVariants[] = {
    "cem_grasp_d006", "cem_grasp_d010", "cem_nograsp_d006", "rrt"};

// Planner settings implied by a variant name. sim is copied from the caller.
DemoGenConfig demo_variant_recipe(const std::string& variant,
                                  const SimConfig& sim);

struct AblationSpec {
  std::string objects_path;
  std::map<std::string, std::string> demo_files;  // variant -> demo file
  std::vector<TrainMode> modes{TrainMode::ilad};
  std::vector<int> T_values;  // empty falls back to base.T
  std::vector<int> demo_counts{0};
  std::vector<std::string> demo_variants{kDemoVariants[0]};
  std::vector<uint64_t> seeds{0};
  int eval_trials = 20;     // per seed, spread over the test split
  int demo_per_object = 4;  // when a variant has no file and must be generated
  uint64_t demo_seed = 0;
  IladConfig base;
};

AblationSpec ablation_spec_from_json(const std::string& text);

struct AblationRun {
  std::string cell;
  TrainMode mode = TrainMode::ilad;
  int T = 0;
  int demo_count = 0;
  std::string demo_variant;
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double success_rate = 0.0;
  double final_mean_return = 0.0;
  std::vector<int> cat_successes;  // aligned with AblationTable::categories
  std::vector<int> cat_trials;
};

struct AblationTable {
  std::vector<std::string> categories;  // present in the test split
  std::vector<AblationRun> runs;        // cell-major, then seed
};

// Trains and evaluates every cell x seed under out_dir (one subdirectory
// per run), then writes ablation.csv and ablation.md. Crashed runs are
// recorded as failed rows; the sweep continues.
AblationTable run_ablation(const AblationSpec& spec,
                           const std::string& out_dir);

void save_ablation_csv(const std::string& path, const AblationTable& table);
void save_ablation_markdown(const std::string& path,
                            const AblationTable& table);

struct MethodCurve {
  std::string method;
  int n_runs = 0;
  std::vector<double> mean_return;  // per epoch, across runs
  std::vector<double> std_return;
  std::vector<double> norm_mean;  // min-max over all methods' mean curves
  std::vector<double> norm_std;
};

struct ReportResult {
  std::vector<MethodCurve> curves;  // sorted by method name
  int epochs = 0;                   // common length after truncation
  std::vector<std::string> warnings;
};

// Learning curves grouped by training mode from run directories that hold
// manifest.json and metrics.csv. Mismatched epoch counts truncate to the
// shortest with a warning.
ReportResult make_report(const std::vector<std::string>& run_dirs);

void save_report_csv(const std::string& path, const ReportResult& report);
void save_report_markdown(const std::string& path,
                          const ReportResult& report);

// Entry point behind the command-line binary; exposed so tests can drive
// the exact user-facing interface.
int cli_main(int argc, const char* const* argv);

}  // namespace ilad
