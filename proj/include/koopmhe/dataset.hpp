#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "koopmhe/config.hpp"
#include "koopmhe/process.hpp"
#include "koopmhe/rng.hpp"

namespace koopmhe {

// Sampled state/input sequence. Column k of `states` is x_k and column k of
// `inputs` is the input applied between x_k and x_{k+1}.
struct Trajectory {
  Eigen::MatrixXd states;  // n_x x N
  Eigen::MatrixXd inputs;  // n_u x (N - 1)
  double dt = 1e-3;

  Eigen::Index size() const { return states.cols(); }
  Eigen::Index state_dim() const { return states.rows(); }
  Eigen::Index input_dim() const { return inputs.rows(); }
  void validate() const;
  // Samples [first, first + count).
  Trajectory slice(Eigen::Index first, Eigen::Index count) const;
  bool operator==(const Trajectory& other) const;
};

// Additive process noise w_k: independent truncated Gaussians per state.
struct DisturbanceConfig {
  Eigen::VectorXd stddev;
  Eigen::VectorXd bound;
  std::uint64_t seed = 0;

  static DisturbanceConfig none(Eigen::Index n);
  bool is_zero() const { return stddev.size() == 0 || stddev.cwiseAbs().maxCoeff() == 0.0; }
  void validate(Eigen::Index n) const;
};

Eigen::VectorXd sample_disturbance(const DisturbanceConfig& dist, Rng& rng);

enum class DisturbanceSpace { kScaled, kRaw };

DisturbanceSpace parse_disturbance_space(const std::string& s);
std::string to_string(DisturbanceSpace s);

// Noise magnitudes for the reactor, separately for mass fractions and
// temperatures. In scaled space the magnitudes are multiplied per state by a
// reference spread of the noise-free run before use.
struct DisturbanceSpec {
  DisturbanceSpace space = DisturbanceSpace::kScaled;
  double composition_variance = 0.5;
  double composition_bound = 5.0;
  double temperature_variance = 10.0;
  double temperature_bound = 10.0;
  double gain = 0.003;  // multiplies both stddev and bound
};

// Spread of a noise-free run with the dataset's own input policy and initial
// range, drawn from a fixed stream so it depends only on the configuration.
Eigen::VectorXd disturbance_reference_scale(const struct DatasetConfig& cfg,
                                            const ProcessParams& p);

DisturbanceConfig resolve_disturbance(const DisturbanceSpec& spec,
                                      const Eigen::VectorXd& reference_scale,
                                      std::uint64_t seed);

// x_{k+1} = rk4_step(x_k, u_k) + w_k. When `applied` is non-null it receives
// the disturbance columns actually added.
Trajectory simulate(const StateVector& x0, const Eigen::MatrixXd& inputs,
                    const DisturbanceConfig& dist, const ProcessParams& p, double dt,
                    Eigen::MatrixXd* applied = nullptr);

struct InputPolicy {
  InputVector lower = InputVector(2.8e6, 0.9e6, 2.8e6);
  InputVector upper = InputVector(3.2e6, 1.9e6, 3.2e6);
  int dwell = 20;
  double noise_variance = 0.1;
  double noise_bound = 1.0;

  void validate() const;
};

// Piecewise-constant uniform levels with small bounded jitter, clipped to the box.
Eigen::MatrixXd generate_inputs(Eigen::Index steps, const InputPolicy& policy, Rng& rng);

struct DatasetConfig {
  int n_windows = 2000;
  int horizon = 20;
  int runs = 1;
  double train_fraction = 0.8;
  double dt = 1e-3;
  StateVector x0_low = steady_state();
  StateVector x0_high = 1.2 * steady_state();
  InputPolicy inputs;
  DisturbanceSpec disturbance;

  void validate() const;
  static DatasetConfig from_key_values(const KeyValues& kv);  // keys without prefix
  static const std::vector<std::string>& keys();
};

// Windows are every contiguous run of horizon + 1 samples in each trajectory.
struct TrajectoryDataset {
  std::vector<Trajectory> train;
  std::vector<Trajectory> validation;
  int horizon = 0;
  DisturbanceConfig disturbance;

  static Eigen::Index window_count(const std::vector<Trajectory>& runs, int horizon);
};

struct WindowRef {
  int run = 0;
  Eigen::Index start = 0;
};

std::vector<WindowRef> enumerate_windows(const std::vector<Trajectory>& runs, int horizon);

// Uses named sub-streams of `seed` for initial states, inputs and noise.
// Each run yields its share of windows, split chronologically into a training
// part and a validation part that share `horizon` boundary samples.
TrajectoryDataset generate_dataset(const DatasetConfig& cfg, const ProcessParams& p,
                                   std::uint64_t seed, std::vector<Eigen::MatrixXd>* applied = nullptr);

// Appends the training and validation parts of one full run to `ds`.
void split_run(const Trajectory& t, int horizon, double train_fraction, TrajectoryDataset& ds);

// One run of `samples` states drawn like a dataset run (used for test data).
Trajectory generate_run(const DatasetConfig& cfg, const ProcessParams& p, Eigen::Index samples,
                        std::uint64_t seed);

// Per-component affine standardization.
struct Scaler {
  Eigen::VectorXd state_mean, state_std;
  Eigen::VectorXd input_mean, input_std;

  Eigen::Index state_dim() const { return state_mean.size(); }
  Eigen::Index input_dim() const { return input_mean.size(); }

  Eigen::MatrixXd scale_states(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd unscale_states(const Eigen::MatrixXd& xs) const;
  Eigen::MatrixXd scale_inputs(const Eigen::MatrixXd& u) const;
  Eigen::MatrixXd unscale_inputs(const Eigen::MatrixXd& us) const;
  Trajectory scale(const Trajectory& t) const;
  Trajectory unscale(const Trajectory& t) const;
  void validate() const;
  bool operator==(const Scaler& other) const = default;
};

// Population mean/std over all samples of the given (training) runs.
Scaler fit_scaler(const std::vector<Trajectory>& runs);

std::vector<std::string> default_state_names(Eigen::Index n);
std::vector<std::string> default_input_names(Eigen::Index n);

// CSV: optional '#' comment lines, header `k,<states>,<inputs>`, one row per
// sample. The last row has empty input fields.
std::string trajectory_to_csv(const Trajectory& t, const std::vector<std::string>& comments = {});
Trajectory trajectory_from_csv(const std::string& text, Eigen::Index input_dim,
                               const std::string& origin = "<csv>");
void write_trajectory_csv(const std::string& path, const Trajectory& t,
                          const std::vector<std::string>& comments = {});
Trajectory read_trajectory_csv(const std::string& path, Eigen::Index input_dim = kInputDim);

}  // namespace koopmhe
