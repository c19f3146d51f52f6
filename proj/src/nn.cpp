#include "koopmhe/nn.hpp"

#include <cmath>

#include "koopmhe/error.hpp"
#include "koopmhe/rng.hpp"

namespace koopmhe {
namespace {

double activate(Activation act, double x) {
  switch (act) {
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kElu: return x > 0.0 ? x : std::expm1(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

double activate_derivative(Activation act, double pre) {
  switch (act) {
    case Activation::kRelu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::kElu: return pre > 0.0 ? 1.0 : std::exp(pre);
    case Activation::kIdentity: return 1.0;
  }
  return 1.0;
}

void check_cache(const Mlp& net, const MlpCache& cache) {
  const std::size_t n = net.layers().size();
  require(cache.owner == &net && cache.layer_inputs.size() == n &&
              cache.pre_activation.size() == n,
          ErrorCode::kContract, "MLP cache does not belong to this network");
  for (std::size_t i = 0; i < n; ++i) {
    require(cache.layer_inputs[i].size() == net.layers()[i].weight.cols() &&
                cache.pre_activation[i].size() == net.layers()[i].weight.rows(),
            ErrorCode::kContract, "MLP cache shape mismatch at layer " + std::to_string(i));
  }
}

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "elu") return Activation::kElu;
  if (name == "identity") return Activation::kIdentity;
  fail(ErrorCode::kConfiguration, "unknown activation '" + name + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kElu: return "elu";
    case Activation::kIdentity: return "identity";
  }
  return "relu";
}

Mlp::Mlp(std::vector<DenseLayer> layers, Activation activation)
    : layers_(std::move(layers)), activation_(activation) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    require(l.weight.rows() == l.bias.size(), ErrorCode::kInputShape,
            "layer " + std::to_string(i) + ": bias length does not match weight rows");
    if (i > 0) {
      require(l.weight.cols() == layers_[i - 1].weight.rows(), ErrorCode::kInputShape,
              "layer " + std::to_string(i) + ": input width does not match previous layer");
    }
  }
}

int Mlp::input_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}

int Mlp::output_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

std::vector<int> Mlp::layer_dims() const {
  std::vector<int> dims;
  if (layers_.empty()) return dims;
  dims.push_back(input_dim());
  for (const auto& l : layers_) dims.push_back(static_cast<int>(l.weight.rows()));
  return dims;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Eigen::VectorXd Mlp::pack() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index at = 0;
  for (const auto& l : layers_) {
    flat.segment(at, l.weight.size()) = l.weight.reshaped();
    at += l.weight.size();
    flat.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  }
  return flat;
}

void Mlp::unpack(const Eigen::VectorXd& flat) {
  require(flat.size() == static_cast<Eigen::Index>(parameter_count()), ErrorCode::kInputShape,
          "flat parameter vector has wrong length");
  Eigen::Index at = 0;
  for (auto& l : layers_) {
    l.weight.reshaped() = flat.segment(at, l.weight.size());
    at += l.weight.size();
    l.bias = flat.segment(at, l.bias.size());
    at += l.bias.size();
  }
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (a.activation_ != b.activation_ || a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& la = a.layers_[i];
    const auto& lb = b.layers_[i];
    if (la.weight.rows() != lb.weight.rows() || la.weight.cols() != lb.weight.cols() ||
        la.weight != lb.weight || la.bias != lb.bias) {
      return false;
    }
  }
  return true;
}

MlpGradients MlpGradients::zeros_like(const Mlp& net) {
  MlpGradients g;
  g.layers.reserve(net.layers().size());
  for (const auto& l : net.layers()) {
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
  }
  return g;
}

void MlpGradients::set_zero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
  require(layers.size() == other.layers.size(), ErrorCode::kContract,
          "gradient sets have different layer counts");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
  }
  return *this;
}

MlpGradients& MlpGradients::operator*=(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
  return *this;
}

Eigen::VectorXd MlpGradients::pack() const {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  Eigen::VectorXd flat(n);
  Eigen::Index at = 0;
  for (const auto& l : layers) {
    flat.segment(at, l.weight.size()) = l.weight.reshaped();
    at += l.weight.size();
    flat.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  }
  return flat;
}

bool MlpGradients::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

MlpOutput mlp_forward(const Mlp& net, const Eigen::VectorXd& input) {
  require(!net.empty(), ErrorCode::kContract, "forward pass through an empty network");
  require(input.size() == net.input_dim(), ErrorCode::kInputShape,
          "network expects input of length " + std::to_string(net.input_dim()) + ", got " +
              std::to_string(input.size()));
  MlpOutput out;
  out.cache.owner = &net;
  const auto& layers = net.layers();
  out.cache.layer_inputs.reserve(layers.size());
  out.cache.pre_activation.reserve(layers.size());
  Eigen::VectorXd a = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Eigen::VectorXd pre = layers[i].weight * a + layers[i].bias;
    out.cache.layer_inputs.push_back(std::move(a));
    if (i + 1 < layers.size()) {
      a = pre.unaryExpr([act = net.activation()](double v) { return activate(act, v); });
    } else {
      a = pre;
    }
    out.cache.pre_activation.push_back(std::move(pre));
  }
  out.output = std::move(a);
  return out;
}

Eigen::VectorXd mlp_eval(const Mlp& net, const Eigen::VectorXd& input) {
  require(!net.empty(), ErrorCode::kContract, "forward pass through an empty network");
  require(input.size() == net.input_dim(), ErrorCode::kInputShape,
          "network expects input of length " + std::to_string(net.input_dim()) + ", got " +
              std::to_string(input.size()));
  const auto& layers = net.layers();
  Eigen::VectorXd a = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Eigen::VectorXd pre = layers[i].weight * a + layers[i].bias;
    if (i + 1 < layers.size()) {
      a = pre.unaryExpr([act = net.activation()](double v) { return activate(act, v); });
    } else {
      a = std::move(pre);
    }
  }
  return a;
}

Eigen::VectorXd mlp_backward_accumulate(const Mlp& net, const MlpCache& cache,
                                        const Eigen::VectorXd& output_grad,
                                        MlpGradients& acc) {
  check_cache(net, cache);
  const auto& layers = net.layers();
  require(output_grad.size() == net.output_dim(), ErrorCode::kInputShape,
          "output gradient length does not match network output");
  require(acc.layers.size() == layers.size(), ErrorCode::kContract,
          "gradient accumulator does not match network");
  Eigen::VectorXd delta = output_grad;  // dL/d(pre-activation) of the current layer
  for (std::size_t i = layers.size(); i-- > 0;) {
    acc.layers[i].weight.noalias() += delta * cache.layer_inputs[i].transpose();
    acc.layers[i].bias += delta;
    Eigen::VectorXd upstream = layers[i].weight.transpose() * delta;
    if (i > 0) {
      const Eigen::VectorXd& pre = cache.pre_activation[i - 1];
      for (Eigen::Index k = 0; k < upstream.size(); ++k) {
        upstream[k] *= activate_derivative(net.activation(), pre[k]);
      }
    }
    delta = std::move(upstream);
  }
  return delta;
}

MlpBackward mlp_backward(const Mlp& net, const MlpCache& cache,
                         const Eigen::VectorXd& output_grad) {
  MlpBackward out;
  out.param_grads = MlpGradients::zeros_like(net);
  out.input_grad = mlp_backward_accumulate(net, cache, output_grad, out.param_grads);
  return out;
}

Eigen::MatrixXd mlp_forward_batch(const Mlp& net, const Eigen::MatrixXd& inputs,
                                  MlpBatchCache* cache) {
  require(!net.empty(), ErrorCode::kContract, "forward pass through an empty network");
  require(inputs.rows() == net.input_dim(), ErrorCode::kInputShape,
          "network expects inputs with " + std::to_string(net.input_dim()) + " rows, got " +
              std::to_string(inputs.rows()));
  const auto& layers = net.layers();
  if (cache) {
    cache->owner = &net;
    cache->layer_inputs.clear();
    cache->pre_activation.clear();
  }
  Eigen::MatrixXd a = inputs;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Eigen::MatrixXd pre = layers[i].weight * a;
    pre.colwise() += layers[i].bias;
    if (cache) cache->layer_inputs.push_back(std::move(a));
    if (i + 1 < layers.size()) {
      a = pre.unaryExpr([act = net.activation()](double v) { return activate(act, v); });
    } else {
      a = pre;
    }
    if (cache) cache->pre_activation.push_back(std::move(pre));
  }
  return a;
}

Eigen::MatrixXd mlp_backward_batch(const Mlp& net, const MlpBatchCache& cache,
                                   const Eigen::MatrixXd& output_grads, MlpGradients& acc) {
  const auto& layers = net.layers();
  require(cache.owner == &net && cache.layer_inputs.size() == layers.size() &&
              cache.pre_activation.size() == layers.size(),
          ErrorCode::kContract, "MLP batch cache does not belong to this network");
  require(output_grads.rows() == net.output_dim() &&
              output_grads.cols() == cache.layer_inputs.front().cols(),
          ErrorCode::kInputShape, "output gradient shape does not match the batch");
  require(acc.layers.size() == layers.size(), ErrorCode::kContract,
          "gradient accumulator does not match network");
  Eigen::MatrixXd delta = output_grads;
  for (std::size_t i = layers.size(); i-- > 0;) {
    acc.layers[i].weight.noalias() += delta * cache.layer_inputs[i].transpose();
    acc.layers[i].bias += delta.rowwise().sum();
    Eigen::MatrixXd upstream = layers[i].weight.transpose() * delta;
    if (i > 0) {
      upstream.array() *= cache.pre_activation[i - 1]
                              .unaryExpr([act = net.activation()](double v) {
                                return activate_derivative(act, v);
                              })
                              .array();
    }
    delta = std::move(upstream);
  }
  return delta;
}

Mlp init_mlp(const std::vector<int>& layer_dims, std::uint64_t seed, Activation activation) {
  require(layer_dims.size() >= 2, ErrorCode::kConfiguration,
          "an MLP needs at least an input and an output dimension");
  for (int d : layer_dims) {
    require(d > 0, ErrorCode::kConfiguration, "MLP layer dimensions must be positive");
  }
  Rng rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    const int fan_in = layer_dims[i];
    const int fan_out = layer_dims[i + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    DenseLayer l{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)};
    // Column-major fill order is part of the determinism contract.
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
        l.weight(r, c) = rng.uniform(-limit, limit);
      }
    }
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers), activation);
}

AdamState AdamState::for_size(Eigen::Index n, double learning_rate) {
  AdamState s;
  s.first_moment = Eigen::VectorXd::Zero(n);
  s.second_moment = Eigen::VectorXd::Zero(n);
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state) {
  require(params.size() == grads.size() && state.first_moment.size() == params.size() &&
              state.second_moment.size() == params.size(),
          ErrorCode::kInputShape, "Adam: parameter, gradient and moment shapes differ");
  require(grads.allFinite(), ErrorCode::kTrainingDiverged, "Adam: non-finite gradient");
  state.step_count += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  const double lr = state.learning_rate;
  const double eps = state.epsilon;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double m_hat = state.first_moment[i] / c1;
    const double v_hat = state.second_moment[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

}  // namespace koopmhe
