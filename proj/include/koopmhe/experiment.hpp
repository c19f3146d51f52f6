#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "koopmhe/config.hpp"
#include "koopmhe/dataset.hpp"
#include "koopmhe/koopman_model.hpp"
#include "koopmhe/mhe.hpp"
#include "koopmhe/process.hpp"
#include "koopmhe/training.hpp"

namespace koopmhe {

// Everything a pipeline run needs. Keys are grouped by prefix in the config
// file: dataset.*, train.*, mhe.*, estimate.*, plus top-level seeds,
// process_params and test_samples.
struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string process_params_path;  // empty: built-in constants
  ProcessParams params;
  DatasetConfig dataset;
  int test_samples = 2000;
  TrainConfig train;
  MheConfig mhe;
  int predict_horizon = 20;
  int estimate_samples = 400;  // samples per estimation run
  int estimate_runs = 1;       // estimation runs per seed
  double measurement_std = 0.0;  // K, Gaussian noise on each measured temperature
  bool paired = true;  // designs within a seed share noise realizations

  KeyValues source;  // keys as loaded, after overrides

  void validate() const;
  // 16 hex digits over the effective keys and the process constants.
  std::string hash() const;
  // Replaces the seed list (and the recorded key).
  void set_seeds(const std::vector<std::uint64_t>& s);

  static const std::vector<std::string>& keys();
  // Relative paths resolve against `base_dir`.
  static ExperimentConfig from_key_values(const KeyValues& kv, const std::string& base_dir = ".");
  static ExperimentConfig load(const std::string& path);
};

// Seeds for each randomised stage, derived from one master seed by name.
struct SeedPlan {
  std::uint64_t simulation, test, init, training, estimation, measurement;
  static SeedPlan from(std::uint64_t master);
};

struct SimulatedData {
  std::vector<Trajectory> runs;  // full training runs (training + validation samples)
  TrajectoryDataset dataset;
  Trajectory test;
  Scaler scaler;  // fit on dataset.train

  std::vector<Trajectory> scaled_train() const;
  std::vector<Trajectory> scaled_validation() const;
  std::vector<Trajectory> scaled_test() const;
};

SimulatedData simulate_data(const ExperimentConfig& cfg, std::uint64_t seed);

// Files: train.csv (train_<r>.csv for several runs), val.csv, test.csv, scaler.cfg.
void write_data(const SimulatedData& d, const std::string& dir, const std::vector<std::string>& comments);
SimulatedData read_data(const std::string& dir, const ExperimentConfig& cfg);

std::string scaler_to_text(const Scaler& s, const std::vector<std::string>& comments = {});
Scaler scaler_from_text(const std::string& text, const std::string& origin = "<scaler>");

PretrainResult pretrain(const ExperimentConfig& cfg, const SimulatedData& d, std::uint64_t seed);

// Trains from the pretrained noise net. Metadata records physics_enabled,
// seed and the scaled training-data bounds used for the default MHE box.
FitResult train_model(const ExperimentConfig& cfg, const SimulatedData& d, const KoopmanModel& pretrained,
                      bool physics, std::uint64_t seed);

// Box from the model's recorded training bounds widened by cfg.box_margin,
// unless cfg already sets one.
MheConfig resolve_mhe_config(const MheConfig& cfg, const KoopmanModel& model, MheDesign design);

// y = measured states + N(0, std^2), physical units.
Eigen::MatrixXd measure(const Trajectory& truth, const std::vector<int>& measured, double std_dev,
                        std::uint64_t seed);

// Estimation runs for one seed: truth trajectories and their noisy measurements.
struct EstimationCase {
  Trajectory truth;
  Eigen::MatrixXd measurements;
};
std::vector<EstimationCase> estimation_cases(const ExperimentConfig& cfg, std::uint64_t seed,
                                             const std::vector<int>& measured);

struct SeedResult {
  std::uint64_t seed = 0;
  double pi_test_mse = 0.0;
  double baseline_test_mse = 0.0;
  std::array<double, 3> design_mse{};  // mean over estimation runs
  int solves = 0;
  int unconverged = 0;
  double max_kkt = 0.0;
};

struct ComparisonReport {
  std::vector<SeedResult> seeds;

  double mean_design(int d) const;  // d = 1..3
  double mean_pi_test() const;
  double mean_baseline_test() const;
  // (a - b) / a with a the reference.
  static double reduction(double reference, double value);
  double median_test_improvement() const;

  // One row per seed and design.
  std::string to_csv(const std::vector<std::string>& comments = {}) const;
  // metric,value rows of aggregates and relative reductions.
  std::string summary_csv(const std::vector<std::string>& comments = {}) const;
};

struct CompareOptions {
  std::string out_dir;  // per-seed artefacts when non-empty
};

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const CompareOptions& opts = {});
ComparisonReport run_comparison(const ExperimentConfig& cfg, const CompareOptions& opts = {});

// `k,state,true,predicted` rows of non-overlapping H-step rollouts from
// k = 0, H, 2H, ... in physical units.
std::string prediction_traces_csv(const KoopmanModel& m, const Trajectory& run, int horizon,
                                  const std::vector<std::string>& comments = {});

// `epoch,nll,data_loss`.
std::string pretrain_report_csv(const PretrainReport& r, const std::vector<std::string>& comments = {});
// `metric,value`: overall MSE, then per state and per step.
std::string prediction_summary_csv(const PredictionReport& r, const std::vector<std::string>& comments = {});

// `config_hash=<hex>`, written as a comment line in every output file.
std::string hash_comment(const ExperimentConfig& cfg);

}  // namespace koopmhe
