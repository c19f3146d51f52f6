#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "koopmhe/dataset.hpp"
#include "koopmhe/nn.hpp"

namespace koopmhe {

// Lifted linear model z+ = A z + B u + mu with z = [x; F(x)] in scaled
// coordinates. C = [I 0] recovers the state and D = Cbar C the measurements.
struct KoopmanModel {
  int n_x = 0;
  int n_u = 0;
  int n_l = 0;
  std::vector<int> measured;  // state indices selected by Cbar
  Eigen::MatrixXd A, B, C, D;
  Mlp lifting_net;  // n_x -> n_l (empty when n_l == 0)
  Mlp noise_net;    // n_g -> n_g (may be empty before pretraining)
  Scaler scaler;
  double sigma_max = 1e6;
  std::map<std::string, std::string> metadata;

  int n_g() const { return n_x + n_l; }
  int n_y() const { return static_cast<int>(measured.size()); }
  bool has_noise_net() const { return !noise_net.empty(); }
  void validate() const;
  bool operator==(const KoopmanModel& other) const;
};

struct ModelShape {
  int n_x = kStateDim;
  int n_u = kInputDim;
  int n_l = 13;
  std::vector<int> measured = {kT1, kT2, kT3};
  std::vector<int> lifting_hidden = {64, 64};
  std::vector<int> noise_hidden = {64};
  Activation activation = Activation::kRelu;
};

// Fresh model: Glorot networks, A = I, B = 0, structural C and D.
KoopmanModel make_model(const ModelShape& shape, const Scaler& scaler, std::uint64_t seed);

// Selector with a single unit entry per row at the given columns.
Eigen::MatrixXd selector_matrix(const std::vector<int>& indices, int n);
Eigen::MatrixXd build_D(const Eigen::MatrixXd& selector, int n_g);
Eigen::MatrixXd reconstruction_matrix(int n_x, int n_g);

Eigen::VectorXd lift(const KoopmanModel& m, const Eigen::VectorXd& x, bool already_scaled);
// Column-wise lift of scaled states.
Eigen::MatrixXd lift_batch(const KoopmanModel& m, const Eigen::MatrixXd& xs);

Eigen::VectorXd reconstruct_scaled(const KoopmanModel& m, const Eigen::VectorXd& z);
Eigen::VectorXd reconstruct_unscaled(const KoopmanModel& m, const Eigen::VectorXd& z);

// exp(noise_net(z)), each entry capped at sigma_max. `clamped` receives the
// number of capped entries.
Eigen::VectorXd noise_std(const KoopmanModel& m, const Eigen::VectorXd& z, int* clamped = nullptr);

struct RolloutResult {
  Eigen::MatrixXd z;  // n_g x (H + 1), column 0 is z0
  Eigen::MatrixXd x;  // n_x x (H + 1), scaled
};

// z_{j+1} = A z_j + B u_j + mu with the same mu at every step. `inputs` are
// scaled, one column per step.
RolloutResult rollout(const KoopmanModel& m, const Eigen::VectorXd& z0,
                      const Eigen::MatrixXd& inputs, const Eigen::VectorXd& mu);

void save_model(const KoopmanModel& m, const std::string& path);
KoopmanModel load_model(const std::string& path);
std::string serialize_model(const KoopmanModel& m);
KoopmanModel deserialize_model(const std::string& bytes, const std::string& origin = "<bytes>");

// Structured text dump of dimensions, matrices, networks and scaler.
std::string export_readable(const KoopmanModel& m);

}  // namespace koopmhe
