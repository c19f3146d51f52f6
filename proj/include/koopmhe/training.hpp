#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "koopmhe/config.hpp"
#include "koopmhe/dataset.hpp"
#include "koopmhe/koopman_model.hpp"

namespace koopmhe {

struct PhysicsPrediction {
  Eigen::VectorXd values;    // covered components after one step
  Eigen::MatrixXd jacobian;  // d values / d x
};

// Known part of the dynamics: a one-step map of some state components, in
// physical units.
class PhysicsModel {
 public:
  virtual ~PhysicsModel() = default;
  virtual int state_dim() const = 0;
  virtual int input_dim() const = 0;
  virtual const std::vector<int>& indices() const = 0;
  virtual PhysicsPrediction step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const = 0;
};

// RK4 step over dt of selected reactor balances, other states frozen.
class ReactorPhysics final : public PhysicsModel {
 public:
  ReactorPhysics(ProcessParams params, double dt, std::vector<int> equations = {kT1, kT2, kT3});
  int state_dim() const override { return kStateDim; }
  int input_dim() const override { return kInputDim; }
  const std::vector<int>& indices() const override { return equations_; }
  PhysicsPrediction step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const override;

 private:
  ProcessParams params_;
  double dt_;
  std::vector<int> equations_;
};

// The physics map seen from scaled coordinates: unscale, step, rescale.
PhysicsPrediction scaled_physics_step(const PhysicsModel& fp, const Scaler& scaler,
                                      const Eigen::VectorXd& x_scaled,
                                      const Eigen::VectorXd& u_scaled);

// Contiguous block of windows in scaled coordinates. Window b owns state
// columns [b(H+1), (b+1)(H+1)) and input columns [bH, (b+1)H).
struct Batch {
  int horizon = 0;
  Eigen::MatrixXd states;
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd mu;  // n_g x MH, additive noise per step (columns as in inputs)

  Eigen::Index size() const { return horizon > 0 ? states.cols() / (horizon + 1) : 0; }
};

Batch make_batch(const std::vector<Trajectory>& scaled_runs, const std::vector<WindowRef>& windows,
                 int horizon, int n_g);

enum LossTerm : int { kLossX = 0, kLossZ = 1, kLossPx = 2, kLossPz = 3 };

struct LossValues {
  std::array<double, 4> terms{0.0, 0.0, 0.0, 0.0};
  double operator[](int i) const { return terms[static_cast<std::size_t>(i)]; }
};

// Gradients with respect to the trainable model parts (lifting net, A, B).
struct ModelGradients {
  MlpGradients lifting;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;

  static ModelGradients zeros_like(const KoopmanModel& m);
  Eigen::VectorXd pack() const;
};

// Flat view of lifting-net parameters followed by vec(A) and vec(B).
Eigen::VectorXd pack_trainable(const KoopmanModel& m);
void unpack_trainable(const Eigen::VectorXd& flat, KoopmanModel& m);

// Evaluates the four losses on a batch (physics terms only when fp is given).
// When `grads` is non-null it receives d(sum_i weights[i] * L_i)/d(theta, A, B),
// with mu treated as a constant.
LossValues evaluate_losses(const KoopmanModel& m, const Batch& batch, const PhysicsModel* fp,
                           const std::array<double, 4>& weights, ModelGradients* grads);

// Task-uncertainty weighting: effective weight s_i / (2 nu_i^2) with
// nu_i = exp(rho_i), plus beta * sum log(1 + nu_i) over active terms.
struct LossWeights {
  std::array<double, 4> rho{};
  std::array<double, 4> static_scale{10.0, 10.0, 1.0, 1.0};
  std::array<bool, 4> active{true, true, true, true};
  double beta = 0.5;

  // nu initialised to 1/sqrt(2) so the first effective weights equal the static scales.
  static LossWeights initial(bool physics, const std::array<double, 4>& static_scale, double beta);
  double nu(int i) const;
  double effective(int i) const;
  std::array<double, 4> effective_weights() const;
  double regularizer() const;
  double total(const LossValues& l) const;
  // d total / d rho_i for the active terms (zero otherwise).
  std::array<double, 4> rho_gradient(const LossValues& l) const;
};

Eigen::VectorXd sample_window_noise(const KoopmanModel& m, const Eigen::VectorXd& z0, Rng& rng);

struct TrainConfig {
  int horizon = 20;
  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double noise_learning_rate = 1e-3;
  double nu_learning_rate = 0.05;
  double beta = 0.5;
  std::array<double, 4> static_scale{10.0, 10.0, 1.0, 1.0};
  std::uint64_t seed = 1;
  bool physics_enabled = true;
  std::vector<int> physics_equations{kT1, kT2, kT3};  // 0-based state indices
  bool sample_noise = true;
  int pretrain_epochs = 30;
  bool init_from_pretrained = false;
  ModelShape shape;

  void validate() const;
  static const std::vector<std::string>& keys();
  static TrainConfig from_key_values(const KeyValues& kv);  // keys without prefix
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double test_mse = 0.0;
  std::array<double, 4> nu{};
  LossValues raw;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::array<double, 4> final_nu{};
  double wall_seconds = 0.0;

  std::string to_csv(const std::vector<std::string>& comments = {}) const;
};

struct PretrainReport {
  std::vector<double> nll;        // per epoch, mean over batches
  std::vector<double> data_loss;  // per epoch
  double wall_seconds = 0.0;
};

struct PretrainResult {
  KoopmanModel model;  // provisional theta/A/B and trained noise net
  PretrainReport report;
};

// Gaussian NLL of one window's residual sequence under variance j * sigma^2
// at step j (summed over steps and components; callers divide by N H).
// `residuals` holds one column per step j = 1..H.
double window_nll(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& log_sigma);
// d window_nll / d log_sigma.
Eigen::VectorXd window_nll_gradient(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& log_sigma);

// Trains the noise net on the NLL of detached multi-step residuals while the
// lifting net and operators fit the data loss.
PretrainResult pretrain_noise_net(const KoopmanModel& init, const std::vector<Trajectory>& scaled_train,
                                  const TrainConfig& cfg);

struct FitResult {
  KoopmanModel model;
  TrainReport report;
};

// Mini-batch Adam on the weighted loss. The noise net is left untouched. The
// returned model is the best-validation checkpoint.
FitResult fit(const KoopmanModel& init, const std::vector<Trajectory>& scaled_train,
              const std::vector<Trajectory>& scaled_val,
              const std::vector<Trajectory>& scaled_test, const PhysicsModel* fp,
              const TrainConfig& cfg);

struct PredictionReport {
  double mse = 0.0;                 // mean over windows, steps 1..H and states
  Eigen::VectorXd per_state_mse;    // n_x
  Eigen::VectorXd per_step_mse;     // H
  Eigen::Index windows = 0;
};

// Deterministic (mu = 0) H-step rollouts over every window of scaled runs.
PredictionReport evaluate_prediction(const KoopmanModel& m, const std::vector<Trajectory>& scaled_runs,
                                     int horizon);

// Rows `window,j,e_1..e_nx` of scaled residuals x_j - xhat_j, j = 1..H.
std::string prediction_residuals_csv(const KoopmanModel& m, const std::vector<Trajectory>& scaled_runs,
                                     int horizon);

}  // namespace koopmhe
