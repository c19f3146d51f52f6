#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace koopmhe {

enum class Activation { kRelu, kTanh, kElu, kIdentity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation act);

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Fully connected network. The activation is applied after every hidden layer;
// the output layer is always linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<DenseLayer> layers, Activation activation);

  bool empty() const { return layers_.empty(); }
  int input_dim() const;
  int output_dim() const;
  std::vector<int> layer_dims() const;
  Activation activation() const { return activation_; }
  std::size_t parameter_count() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Eigen::VectorXd pack() const;
  void unpack(const Eigen::VectorXd& flat);

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  std::vector<DenseLayer> layers_;
  Activation activation_ = Activation::kRelu;
};

// Per-layer activations recorded by mlp_forward for the backward pass.
struct MlpCache {
  const Mlp* owner = nullptr;
  std::vector<Eigen::VectorXd> layer_inputs;   // input to layer i
  std::vector<Eigen::VectorXd> pre_activation; // W_i a_i + b_i
};

// Gradients shaped like an Mlp's parameters.
struct MlpGradients {
  std::vector<DenseLayer> layers;

  static MlpGradients zeros_like(const Mlp& net);
  void set_zero();
  MlpGradients& operator+=(const MlpGradients& other);
  MlpGradients& operator*=(double s);
  Eigen::VectorXd pack() const;
  bool all_finite() const;
};

struct MlpOutput {
  Eigen::VectorXd output;
  MlpCache cache;
};

MlpOutput mlp_forward(const Mlp& net, const Eigen::VectorXd& input);

// Forward pass without a cache.
Eigen::VectorXd mlp_eval(const Mlp& net, const Eigen::VectorXd& input);

struct MlpBackward {
  MlpGradients param_grads;
  Eigen::VectorXd input_grad;
};

MlpBackward mlp_backward(const Mlp& net, const MlpCache& cache,
                         const Eigen::VectorXd& output_grad);

// Same as mlp_backward but adds parameter gradients into `acc`.
Eigen::VectorXd mlp_backward_accumulate(const Mlp& net, const MlpCache& cache,
                                        const Eigen::VectorXd& output_grad,
                                        MlpGradients& acc);

// Column-batched passes: each column of `inputs` is one sample. Parameter
// gradients are summed over columns into `acc`; the return value holds the
// per-column input gradients.
struct MlpBatchCache {
  const Mlp* owner = nullptr;
  std::vector<Eigen::MatrixXd> layer_inputs;
  std::vector<Eigen::MatrixXd> pre_activation;
};

Eigen::MatrixXd mlp_forward_batch(const Mlp& net, const Eigen::MatrixXd& inputs,
                                  MlpBatchCache* cache = nullptr);

Eigen::MatrixXd mlp_backward_batch(const Mlp& net, const MlpBatchCache& cache,
                                   const Eigen::MatrixXd& output_grads, MlpGradients& acc);

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
Mlp init_mlp(const std::vector<int>& layer_dims, std::uint64_t seed,
             Activation activation = Activation::kRelu);

struct AdamState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::int64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_size(Eigen::Index n, double learning_rate);
};

// One bias-corrected Adam update of `params` in place.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state);

}  // namespace koopmhe
