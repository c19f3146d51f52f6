#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "koopmhe/config.hpp"
#include "koopmhe/dataset.hpp"
#include "koopmhe/koopman_model.hpp"

namespace koopmhe {

// The linear part of a Koopman model as seen by the estimator.
struct MheModel {
  Eigen::MatrixXd A, B, D;
  int n_x = 0;

  int n_g() const { return static_cast<int>(A.rows()); }
  int n_u() const { return static_cast<int>(B.cols()); }
  int n_y() const { return static_cast<int>(D.rows()); }
  void validate() const;
  static MheModel from(const KoopmanModel& m);
};

// Stage weights: Q = diag(q), R dense.
struct MheWeights {
  Eigen::VectorXd q;
  Eigen::MatrixXd R;
  int clamped = 0;  // sigma entries capped by the noise network
};

// Q = diag(sigma(zbar)^2), R = D Q D^T + r_floor I. Entries of sigma below
// sigma_min are raised to it and counted in `clamped`. With `normalize`, Q is
// divided by the geometric mean of its diagonal before R is formed.
MheWeights self_tune_weights(const KoopmanModel& m, const Eigen::VectorXd& zbar, double r_floor,
                             double sigma_min = 0.0, bool normalize = false);
// Q = diag(q), R = D Q D^T + r_floor I.
MheWeights constant_weights(const MheModel& m, const Eigen::VectorXd& q, double r_floor);

// zbar = A z + B u (scaled input).
Eigen::VectorXd propagate_prior(const MheModel& m, const Eigen::VectorXd& z,
                                const Eigen::VectorXd& u);

// One estimation window in scaled coordinates. Bounds apply to C z_j and may
// hold +-infinity.
struct MheProblem {
  Eigen::VectorXd prior;    // n_g
  Eigen::MatrixXd y;        // n_y x (H + 1)
  Eigen::MatrixXd u;        // n_u x H
  MheWeights weights;
  Eigen::VectorXd lower, upper;  // n_x
  bool max_term = true;

  int horizon() const { return static_cast<int>(u.cols()); }
};

struct SolverOptions {
  double tolerance = 1e-8;
  int max_iterations = 200;
  bool dense = false;  // dense KKT factorization instead of the banded one
};

struct SolverInfo {
  int iterations = 0;
  double kkt_residual = 0.0;
  bool converged = false;
};

struct MheSolution {
  Eigen::MatrixXd z;   // n_g x (H + 1)
  Eigen::MatrixXd mu;  // n_g x H, mu_j = z_{j+1} - A z_j - B u_j
  Eigen::MatrixXd v;   // n_y x (H + 1), v_j = y_j - D z_j
  Eigen::VectorXd stage;  // l_j for j = 0..H-1
  double objective = 0.0;
  double t_star = 0.0;  // epigraph variable (max stage cost); 0 without the max term
  SolverInfo info;
};

// Stage cost l_j pairs the disturbance mu_j with the residual of the
// measurement it first affects, v_{j+1}.
Eigen::VectorXd stage_costs(const MheModel& m, const MheProblem& p, const Eigen::MatrixXd& z);
// |z_0 - prior|^2 + sum_j l_j (+ max_j l_j), boxes not included.
double mhe_objective(const MheModel& m, const MheProblem& p, const Eigen::MatrixXd& z);

struct ProgramSize {
  int variables = 0;  // z_0..z_H plus t
  int quadratic = 0;  // epigraph constraints l_j <= t
  int linear = 0;     // finite box rows
};
ProgramSize program_size(const MheModel& m, const MheProblem& p);

// Primal-dual interior point over (z_0..z_H, t). `warm` only seeds the
// starting point.
MheSolution solve_mhe(const MheModel& m, const MheProblem& p, const SolverOptions& opts = {},
                      const Eigen::MatrixXd* warm = nullptr);

enum class MheDesign { kSelfTuning = 1, kConstantWeights = 2, kBaselineConstant = 3 };

struct MheConfig {
  int horizon = 40;
  double tolerance = 1e-8;
  int max_iterations = 200;
  double r_floor = 1e-8;
  double sigma_min = 1e-6;
  // Self-tuned Q rescaled to unit geometric mean. The arrival term is
  // unweighted, so without this the absolute noise level sets how much the
  // prior counts.
  bool normalize_q = true;
  bool self_tuning = true;
  Eigen::VectorXd constant_q;  // empty: ones
  bool max_term = true;
  double initial_guess_factor = 1.2;
  // Scaled state box; empty means unbounded. See default_box.
  Eigen::VectorXd lower, upper;
  double box_margin = 3.0;
  bool warm_start = true;

  void validate() const;
  static const std::vector<std::string>& keys();
  static MheConfig from_key_values(const KeyValues& kv);  // keys without prefix
};

// [min - margin, max + margin] per state over scaled training runs.
void default_box(const std::vector<Trajectory>& scaled_runs, double margin, Eigen::VectorXd& lower,
                 Eigen::VectorXd& upper);

struct EstimateRecord {
  int k = 0;
  Eigen::VectorXd xhat;  // unscaled
  double objective = 0.0;
  double t_star = 0.0;
  SolverInfo info;
  int clamped = 0;
};

// Streams measurements through the moving window. Measurements and inputs are
// in physical units.
class MovingHorizonEstimator {
 public:
  MovingHorizonEstimator(const KoopmanModel& model, MheConfig cfg);

  // Drops the window; the first prior is lift(scale(factor * x0_guess)).
  void reset(const Eigen::VectorXd& x0_guess);
  // First call takes y_0 with an empty input; later calls y_k with u_{k-1}.
  // Returns an estimate once H_e + 1 measurements are buffered.
  std::optional<EstimateRecord> step(const Eigen::VectorXd& y, const Eigen::VectorXd& u_prev);

  int steps() const { return k_; }
  const MheSolution* last_solution() const { return last_ ? &*last_ : nullptr; }

 private:
  const KoopmanModel& model_;
  MheModel lin_;
  MheConfig cfg_;
  Eigen::VectorXd first_prior_;
  std::vector<Eigen::VectorXd> ys_;  // scaled, newest last
  std::vector<Eigen::VectorXd> us_;  // scaled, us_[i] drives ys_[i] -> ys_[i+1]
  std::optional<MheSolution> last_;
  Eigen::VectorXd dropped_u_;  // input leaving the window on the last shift
  int k_ = -1;
};

struct EstimationRun {
  std::vector<EstimateRecord> records;
  Eigen::MatrixXd truth;  // n_x x records, unscaled
  double mse = 0.0;       // scaled, elementwise over records and states
};

// Runs the estimator over a trajectory. `measurements` are n_y x N in physical
// units (already noisy if desired). The initial guess uses truth column 0.
EstimationRun run_estimator(const KoopmanModel& model, const Trajectory& truth,
                            const Eigen::MatrixXd& measurements, const MheConfig& cfg);

std::string estimates_to_csv(const EstimationRun& run, const std::vector<std::string>& comments);

}  // namespace koopmhe
